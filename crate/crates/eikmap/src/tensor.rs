//! Log-Euclidean parameterization of the conductivity tensor field.
//!
//! Each triangle carries an unconstrained vector d = (d1, d2, d3). The 2×2
//! tangent-plane tensor is D̃ = exp([[d1, d2], [d2, d3]]), always symmetric
//! positive definite, and is embedded into world coordinates with unit
//! normal eigenvalue. Velocities are square roots of D̃'s eigenvalues in
//! m/s (mm/ms), the fiber direction is the leading eigenvector.

use crate::frames::{rotate_to_world, FrameField};
use crate::{Error, Result};
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Relative eigenvalue gap under which a tensor is reported isotropic and
/// its fiber direction is conventional (the frame's v1).
pub const ISOTROPY_TIE_TOL: f64 = 1e-6;

/// Eigendecomposition of a symmetric 2×2 matrix [[a, b], [b, c]]:
/// eigenvalues in descending order with an orthonormal rotation
/// Q = [[cos, -sin], [sin, cos]] such that M = Q diag(λ) Qᵀ.
#[derive(Debug, Clone, Copy)]
pub struct SymEig2 {
    pub eigenvalues: [f64; 2],
    pub cos: f64,
    pub sin: f64,
}

impl SymEig2 {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        let half_tr = 0.5 * (a + c);
        let disc = (0.5 * (a - c)).hypot(b);
        let l1 = half_tr + disc;
        let l2 = half_tr - disc;
        // Leading eigenvector: (b, l1 - a) or (l1 - c, b), whichever is the
        // better-conditioned representation.
        let (mut ex, mut ey) = if (l1 - a).abs() > (l1 - c).abs() {
            (b, l1 - a)
        } else {
            (l1 - c, b)
        };
        let norm = ex.hypot(ey);
        if norm < f64::MIN_POSITIVE {
            ex = 1.0;
            ey = 0.0;
        } else {
            ex /= norm;
            ey /= norm;
        }
        SymEig2 {
            eigenvalues: [l1, l2],
            cos: ex,
            sin: ey,
        }
    }

    /// Reassemble Q f(diag) Qᵀ for eigenvalue map `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix2<f64> {
        let (c, s) = (self.cos, self.sin);
        let f1 = f(self.eigenvalues[0]);
        let f2 = f(self.eigenvalues[1]);
        Matrix2::new(
            f1 * c * c + f2 * s * s,
            (f1 - f2) * c * s,
            (f1 - f2) * c * s,
            f1 * s * s + f2 * c * c,
        )
    }
}

/// Matrix exponential of the symmetric matrix [[d1, d2], [d2, d3]], via
/// eigendecomposition. Total on finite inputs and always SPD.
pub fn exp2x2(d: [f64; 3]) -> Matrix2<f64> {
    SymEig2::new(d[0], d[1], d[2]).map(f64::exp)
}

/// Inverse of [`exp2x2`]: principal matrix logarithm of an SPD 2×2 matrix,
/// returned as (d1, d2, d3). Fails on non-SPD input.
pub fn log2x2(m: &Matrix2<f64>) -> Result<[f64; 3]> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymEig2::new(sym[(0, 0)], sym[(0, 1)], sym[(1, 1)]);
    if eig.eigenvalues[1] <= 0.0 {
        return Err(Error::NotSpd(format!(
            "eigenvalues {:?}",
            eig.eigenvalues
        )));
    }
    let log = eig.map(f64::ln);
    Ok([log[(0, 0)], log[(0, 1)], log[(1, 1)]])
}

/// exp(M) for symmetric M = [[s1, s2], [s2, s3]] together with the partial
/// derivatives ∂exp(M)/∂s_k (Daleckii–Krein through the eigenbasis).
pub fn exp2x2_with_partials(s: [f64; 3]) -> (Matrix2<f64>, [Matrix2<f64>; 3]) {
    let eig = SymEig2::new(s[0], s[1], s[2]);
    let [l1, l2] = eig.eigenvalues;
    let (c, sn) = (eig.cos, eig.sin);
    let e1 = l1.exp();
    let e2 = l2.exp();
    // Divided difference (e^l1 - e^l2)/(l1 - l2), stable near ties.
    let mean = 0.5 * (l1 + l2);
    let h = 0.5 * (l1 - l2);
    let sinhc = if h.abs() < 1e-8 {
        1.0 + h * h / 6.0
    } else {
        h.sinh() / h
    };
    let phi12 = mean.exp() * sinhc;

    let exp_m = Matrix2::new(
        e1 * c * c + e2 * sn * sn,
        (e1 - e2) * c * sn,
        (e1 - e2) * c * sn,
        e1 * sn * sn + e2 * c * c,
    );

    // Basis directions of the symmetric perturbation in the eigenbasis:
    // A_k = Qᵀ E_k Q, then dexp[E_k] = Q (Phi ∘ A_k) Qᵀ.
    let q = Matrix2::new(c, -sn, sn, c);
    let basis = [
        Matrix2::new(1.0, 0.0, 0.0, 0.0),
        Matrix2::new(0.0, 1.0, 1.0, 0.0),
        Matrix2::new(0.0, 0.0, 0.0, 1.0),
    ];
    let phi = Matrix2::new(e1, phi12, phi12, e2);
    let mut partials = [Matrix2::zeros(); 3];
    for (k, e) in basis.iter().enumerate() {
        let a = q.transpose() * e * q;
        let scaled = a.component_mul(&phi);
        partials[k] = q * scaled * q.transpose();
    }
    (exp_m, partials)
}

/// Unconstrained log-Euclidean parameters, one R³ vector per triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorParamField {
    values: Vec<[f64; 3]>,
}

impl TensorParamField {
    pub fn new(values: Vec<[f64; 3]>) -> Self {
        Self { values }
    }

    pub fn constant(num_triangles: usize, d: [f64; 3]) -> Self {
        Self {
            values: vec![d; num_triangles],
        }
    }

    /// Isotropic field with velocity `v` m/s on every triangle:
    /// D̃ = v² I, hence d = (2 ln v, 0, 2 ln v).
    pub fn isotropic(num_triangles: usize, v: f64) -> Self {
        Self::constant(num_triangles, [2.0 * v.ln(), 0.0, 2.0 * v.ln()])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, tri: usize) -> [f64; 3] {
        self.values[tri]
    }

    pub fn set(&mut self, tri: usize, d: [f64; 3]) {
        self.values[tri] = d;
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|x| x.is_finite())
    }
}

/// Fully assembled conductivity tensor on one triangle.
#[derive(Debug, Clone)]
pub struct ConductivityTensor {
    /// 2×2 tangent-plane tensor, (m/s)².
    pub d_tilde: Matrix2<f64>,
    /// 3×3 world tensor with unit normal eigenvalue.
    pub d_world: Matrix3<f64>,
    /// Unit fiber direction in world coordinates (tangent to the surface).
    pub fiber_dir: Vector3<f64>,
    pub v_fiber: f64,
    pub v_cross: f64,
    /// Eigenvalue tie: fiber direction is conventional, skip angle metrics.
    pub isotropic: bool,
}

/// Build the world tensor, fiber direction and velocities for one triangle.
pub fn assemble_world_tensor(
    d: [f64; 3],
    frames: &FrameField,
    tri: usize,
) -> ConductivityTensor {
    let d_tilde = exp2x2(d);
    let eig = SymEig2::new(d_tilde[(0, 0)], d_tilde[(0, 1)], d_tilde[(1, 1)]);
    let [l1, l2] = eig.eigenvalues;
    let isotropic = (l1 - l2).abs() / l1 < ISOTROPY_TIE_TOL;
    let fiber_dir = if isotropic {
        frames.v1(tri)
    } else {
        frames
            .from_tangent(tri, &Vector2::new(eig.cos, eig.sin))
            .normalize()
    };
    ConductivityTensor {
        d_tilde,
        d_world: rotate_to_world(frames, tri, &d_tilde),
        fiber_dir,
        v_fiber: l1.sqrt(),
        v_cross: l2.sqrt(),
        isotropic,
    }
}

/// Log-Euclidean parameters for a triangle whose fiber direction is the
/// world vector `fiber` (projected to the tangent plane) with velocities
/// `v_fiber`, `v_cross` m/s.
pub fn params_from_fiber(
    frames: &FrameField,
    tri: usize,
    fiber: &Vector3<f64>,
    v_fiber: f64,
    v_cross: f64,
) -> Result<[f64; 3]> {
    let n = frames.normal(tri);
    let t = fiber - n * n.dot(fiber);
    let norm = t.norm();
    if norm < 1e-12 {
        return Err(Error::Invalid(format!(
            "fiber direction is normal to triangle {tri}"
        )));
    }
    let t = t / norm;
    let phi = frames.v2(tri).dot(&t).atan2(frames.v1(tri).dot(&t));
    let (s, c) = phi.sin_cos();
    let (a, b) = (v_fiber * v_fiber, v_cross * v_cross);
    let d_tilde = Matrix2::new(
        a * c * c + b * s * s,
        (a - b) * s * c,
        (a - b) * s * c,
        a * s * s + b * c * c,
    );
    log2x2(&d_tilde)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frames::compute_frames;
    use crate::mesh::{build_geometry, grid_sheet, icosphere};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exp_of_zero_is_identity() {
        let m = exp2x2([0.0, 0.0, 0.0]);
        assert!((m - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn exp_diagonal_gives_squared_velocities() {
        // Fiber/cross velocities 0.6 and 0.4 m/s.
        let m = exp2x2([0.36f64.ln(), 0.0, 0.16f64.ln()]);
        assert!((m[(0, 0)] - 0.36).abs() < 1e-14);
        assert!((m[(1, 1)] - 0.16).abs() < 1e-14);
        assert_eq!(m[(0, 1)], 0.0);
    }

    #[test]
    fn exp_off_diagonal_matches_series_oracle() {
        // Oracle: partial sums of exp(M) = sum M^k / k! for M = [[0,1],[1,0]].
        let m = Matrix2::new(0.0, 1.0, 1.0, 0.0);
        let mut series = Matrix2::identity();
        let mut term = Matrix2::identity();
        for k in 1..40 {
            term = term * m / k as f64;
            series += term;
        }
        let got = exp2x2([0.0, 1.0, 0.0]);
        assert!((got - series).norm() < 1e-12);
        assert!((got[(0, 0)] - 1f64.cosh()).abs() < 1e-12);
        assert!((got[(0, 1)] - 1f64.sinh()).abs() < 1e-12);
    }

    #[test]
    fn log_of_identity_is_zero() {
        assert_eq!(log2x2(&Matrix2::identity()).unwrap(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn log_of_diagonal() {
        let d = log2x2(&Matrix2::new(4.0, 0.0, 0.0, 1.0)).unwrap();
        assert!((d[0] - 4f64.ln()).abs() < 1e-14);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn log_rejects_non_spd() {
        assert!(log2x2(&Matrix2::new(1.0, 2.0, 2.0, 1.0)).is_err());
        assert!(log2x2(&Matrix2::new(-1.0, 0.0, 0.0, 1.0)).is_err());
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(
            a in -2.0..2.0f64,
            b in -2.0..2.0f64,
            c in -2.0..2.0f64,
        ) {
            let m = exp2x2([a, b, c]);
            let d = log2x2(&m).unwrap();
            let back = exp2x2(d);
            prop_assert!((back - m).norm() < 1e-10 * m.norm().max(1.0));
        }

        #[test]
        fn exp_is_spd(a in -6.0..6.0f64, b in -6.0..6.0f64, c in -6.0..6.0f64) {
            let m = exp2x2([a, b, c]);
            let eig = SymEig2::new(m[(0,0)], m[(0,1)], m[(1,1)]);
            prop_assert!(eig.eigenvalues[1] > 0.0);
            prop_assert!((m[(0,1)] - m[(1,0)]).abs() < 1e-30);
        }
    }

    #[test]
    fn exp_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = [
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            ];
            let (_, partials) = exp2x2_with_partials(s);
            let h = 1e-6;
            for k in 0..3 {
                let mut sp = s;
                let mut sm = s;
                sp[k] += h;
                sm[k] -= h;
                let fd = (exp2x2(sp) - exp2x2(sm)) / (2.0 * h);
                assert!(
                    (partials[k] - fd).norm() < 1e-8 * (1.0 + fd.norm()),
                    "partial {k} mismatch: {:?} vs {:?}",
                    partials[k],
                    fd
                );
            }
        }
    }

    #[test]
    fn exp_partials_near_eigenvalue_tie() {
        // Nearly isotropic input exercises the divided-difference guard.
        let s = [0.3, 1e-10, 0.3 + 1e-10];
        let (m, partials) = exp2x2_with_partials(s);
        assert!(m.iter().all(|x| x.is_finite()));
        for p in partials {
            assert!(p.iter().all(|x| x.is_finite()));
        }
        let h = 1e-6;
        let mut sp = s;
        sp[1] += h;
        let mut sm = s;
        sm[1] -= h;
        let fd = (exp2x2(sp) - exp2x2(sm)) / (2.0 * h);
        assert!((partials[1] - fd).norm() < 1e-7);
    }

    #[test]
    fn parameter_map_is_smooth_second_order() {
        // Central differences of d ↦ exp2x2(d) converge at 2nd order.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let d = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let dir = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let (_, partials) = exp2x2_with_partials(d);
            let exact = partials[0] * dir[0] + partials[1] * dir[1] + partials[2] * dir[2];
            let err = |h: f64| {
                let dp = [d[0] + h * dir[0], d[1] + h * dir[1], d[2] + h * dir[2]];
                let dm = [d[0] - h * dir[0], d[1] - h * dir[1], d[2] - h * dir[2]];
                ((exp2x2(dp) - exp2x2(dm)) / (2.0 * h) - exact).norm()
            };
            let e1 = err(1e-3);
            let e2 = err(5e-4);
            // Ratio ≈ 4 for a 2nd-order scheme; allow slack for rounding.
            if e1 > 1e-12 {
                assert!(e1 / e2 > 2.5, "convergence ratio {}", e1 / e2);
            }
        }
    }

    #[test]
    fn assemble_identity_params() {
        let geom = build_geometry(icosphere(1, 2.0)).unwrap();
        let frames = compute_frames(&geom, 20, 1e-6);
        let t = assemble_world_tensor([0.0, 0.0, 0.0], &frames, 7);
        assert!((t.d_world - Matrix3::identity()).norm() < 1e-12);
        assert!((t.v_fiber - 1.0).abs() < 1e-12);
        assert!((t.v_cross - 1.0).abs() < 1e-12);
        assert!(t.isotropic);
        assert!((t.fiber_dir - frames.v1(7)).norm() < 1e-12);
    }

    #[test]
    fn assemble_paper_velocities_axis_aligned() {
        let geom = build_geometry(grid_sheet(1, 1, 1.0, 1.0)).unwrap();
        let frames = compute_frames(&geom, 5, 1e-6);
        let t = assemble_world_tensor([0.36f64.ln(), 0.0, 0.16f64.ln()], &frames, 0);
        assert!((t.v_fiber - 0.6).abs() < 1e-12);
        assert!((t.v_cross - 0.4).abs() < 1e-12);
        assert!(!t.isotropic);
        assert!((t.fiber_dir - frames.v1(0)).norm() < 1e-12);
        // √⟨D f, f⟩ = v_fiber.
        let v = (t.d_world * t.fiber_dir).dot(&t.fiber_dir).sqrt();
        assert!((v - t.v_fiber).abs() < 1e-9);
        assert!(t.fiber_dir.dot(&frames.normal(0)).abs() < 1e-9);
    }

    #[test]
    fn scar_parameters_are_isotropic() {
        let d = [0.04f64.ln(), 0.0, 0.04f64.ln()];
        let m = exp2x2(d);
        assert!((m - Matrix2::identity() * 0.04).norm() < 1e-15);
        let iso = TensorParamField::isotropic(1, 0.2);
        let mi = exp2x2(iso.get(0));
        assert!((mi - m).norm() < 1e-15);
    }

    #[test]
    fn params_from_fiber_round_trip() {
        let geom = build_geometry(icosphere(2, 8.0)).unwrap();
        let frames = compute_frames(&geom, 50, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let tri = rng.random_range(0..frames.len());
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let fiber = frames.v1(tri) * angle.cos() + frames.v2(tri) * angle.sin();
            let d = params_from_fiber(&frames, tri, &fiber, 0.6, 0.4).unwrap();
            let t = assemble_world_tensor(d, &frames, tri);
            assert!((t.v_fiber - 0.6).abs() < 1e-10);
            assert!((t.v_cross - 0.4).abs() < 1e-10);
            // Fiber direction recovered up to sign.
            assert!(t.fiber_dir.dot(&fiber).abs() > 1.0 - 1e-9);
        }
    }
}
