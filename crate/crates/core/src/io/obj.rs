//! Minimal ASCII OBJ reader/writer: `v` and `f` records only, triangles only.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::mesh_rig::Topology;

pub struct ObjMesh {
    pub vertices: Vec<Vec3>,
    pub topology: Topology,
}

pub fn read_obj(path: &Path) -> Result<ObjMesh> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .map(|p| {
                        p.parse::<f64>().map_err(|_| {
                            Error::Schema(format!(
                                "{}:{}: bad vertex coordinate {p:?}",
                                path.display(),
                                lineno + 1
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                if coords.len() != 3 {
                    return Err(Error::Schema(format!(
                        "{}:{}: vertex needs exactly 3 coordinates",
                        path.display(),
                        lineno + 1
                    )));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                // face corners may carry /vt/vn suffixes; only the vertex
                // index matters here, 1-based per OBJ convention
                let idx: Vec<u32> = parts
                    .map(|p| {
                        let v = p.split('/').next().unwrap_or("");
                        v.parse::<u32>().ok().and_then(|i| i.checked_sub(1)).ok_or_else(|| {
                            Error::Schema(format!(
                                "{}:{}: bad face index {p:?}",
                                path.display(),
                                lineno + 1
                            ))
                        })
                    })
                    .collect::<Result<_>>()?;
                if idx.len() != 3 {
                    return Err(Error::Schema(format!(
                        "{}:{}: only triangles are supported ({} corners)",
                        path.display(),
                        lineno + 1,
                        idx.len()
                    )));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            _ => {} // comments, empty lines, other records
        }
    }
    let topology = Topology::new(vertices.len(), triangles)?;
    Ok(ObjMesh {
        vertices,
        topology,
    })
}

pub fn write_obj(path: &Path, vertices: &[Vec3], topology: &Topology) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    for v in vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &topology.triangles {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}
