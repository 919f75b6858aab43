//! Small binary formats: per-frame vertex files and blendshape bases.
//!
//! Vertex file: magic `VRT0`, u32 vertex count, then count×3 little-endian
//! f32. Rig file: magic `BSR0`, u32 basis count, u32 vertex count, then
//! basis · count × 3 little-endian f32.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;

const VRT_MAGIC: &[u8; 4] = b"VRT0";
const BSR_MAGIC: &[u8; 4] = b"BSR0";

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

fn f32_at(bytes: &[u8], offset: usize) -> f32 {
    f32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn write_vertices(path: &Path, vertices: &[Vec3]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + vertices.len() * 12);
    out.extend_from_slice(VRT_MAGIC);
    out.extend_from_slice(&(vertices.len() as u32).to_le_bytes());
    for v in vertices {
        for c in 0..3 {
            out.extend_from_slice(&(v[c] as f32).to_le_bytes());
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Read a vertex file, checking the count against `expected` when given.
pub fn read_vertices(path: &Path, expected: Option<usize>) -> Result<Vec<Vec3>> {
    let bytes = read_file(path)?;
    if bytes.len() < 8 || &bytes[..4] != VRT_MAGIC {
        return Err(Error::Schema(format!("{}: not a vertex file", path.display())));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + count * 12 {
        return Err(Error::Schema(format!(
            "{}: payload size does not match vertex count {count}",
            path.display()
        )));
    }
    if let Some(expected) = expected {
        if count != expected {
            return Err(Error::CountMismatch {
                path: path.display().to_string(),
                expected,
                actual: count,
            });
        }
    }
    let mut vertices = Vec::with_capacity(count);
    for i in 0..count {
        let o = 8 + i * 12;
        vertices.push(Vec3::new(
            f32_at(&bytes, o) as f64,
            f32_at(&bytes, o + 4) as f64,
            f32_at(&bytes, o + 8) as f64,
        ));
    }
    Ok(vertices)
}

pub fn write_basis(path: &Path, basis: &[Vec<Vec3>]) -> Result<()> {
    let vertex_count = basis.first().map_or(0, |b| b.len());
    let mut out = Vec::with_capacity(12 + basis.len() * vertex_count * 12);
    out.extend_from_slice(BSR_MAGIC);
    out.extend_from_slice(&(basis.len() as u32).to_le_bytes());
    out.extend_from_slice(&(vertex_count as u32).to_le_bytes());
    for shape in basis {
        for v in shape {
            for c in 0..3 {
                out.extend_from_slice(&(v[c] as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_basis(path: &Path, expected_vertices: usize) -> Result<Vec<Vec<Vec3>>> {
    let bytes = read_file(path)?;
    if bytes.len() < 12 || &bytes[..4] != BSR_MAGIC {
        return Err(Error::Schema(format!("{}: not a rig basis file", path.display())));
    }
    let basis_count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let vertex_count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if vertex_count != expected_vertices {
        return Err(Error::CountMismatch {
            path: path.display().to_string(),
            expected: expected_vertices,
            actual: vertex_count,
        });
    }
    if bytes.len() != 12 + basis_count * vertex_count * 12 {
        return Err(Error::Schema(format!(
            "{}: payload size does not match {basis_count}×{vertex_count} basis",
            path.display()
        )));
    }
    let mut basis = Vec::with_capacity(basis_count);
    for b in 0..basis_count {
        let mut shape = Vec::with_capacity(vertex_count);
        for v in 0..vertex_count {
            let o = 12 + (b * vertex_count + v) * 12;
            shape.push(Vec3::new(
                f32_at(&bytes, o) as f64,
                f32_at(&bytes, o + 4) as f64,
                f32_at(&bytes, o + 8) as f64,
            ));
        }
        basis.push(shape);
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vertices_roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vrt");
        let verts = vec![Vec3::new(0.5, -1.25, 3.0), Vec3::new(1e-3, 0.0, -7.5)];
        write_vertices(&path, &verts).unwrap();
        let bytes1 = std::fs::read(&path).unwrap();
        let back = read_vertices(&path, Some(2)).unwrap();
        write_vertices(&path, &back).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), bytes1);
    }

    #[test]
    fn wrong_count_is_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.vrt");
        write_vertices(&path, &[Vec3::zeros(); 4]).unwrap();
        let err = read_vertices(&path, Some(5)).unwrap_err();
        match err {
            Error::CountMismatch { expected, actual, .. } => {
                assert_eq!(expected, 5);
                assert_eq!(actual, 4);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn basis_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.bsr");
        let basis = vec![
            vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)],
            vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(2.0, 2.0, 2.0)],
        ];
        write_basis(&path, &basis).unwrap();
        assert_eq!(read_basis(&path, 2).unwrap(), basis);
        assert!(read_basis(&path, 3).is_err());
    }
}
