//! Text-format readers and writers: OFF and VTK legacy polydata meshes,
//! CSV tables for measurements, activation times, tensor parameters and
//! optimization traces.

pub mod off;
pub mod table;
pub mod vtk;

use crate::mesh::{MeshFormat, TriangleMesh};
use crate::{Error, Result};
use std::path::Path;

/// Load a mesh in the declared format.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    match format {
        MeshFormat::Off => off::read_off(path),
        MeshFormat::VtkLegacyAscii => vtk::read_vtk_polydata(path),
        MeshFormat::Generated => Err(Error::Invalid(
            "'generated' is not a file format".into(),
        )),
    }
}

/// Guess the format from the file extension (.off / .vtk).
pub fn format_from_extension(path: &Path) -> Result<MeshFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .as_deref()
    {
        Some("off") => Ok(MeshFormat::Off),
        Some("vtk") => Ok(MeshFormat::VtkLegacyAscii),
        other => Err(Error::Invalid(format!(
            "cannot infer mesh format from extension {other:?} of {}",
            path.display()
        ))),
    }
}
