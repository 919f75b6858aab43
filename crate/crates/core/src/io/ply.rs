//! Checkpoint serialization as binary little-endian PLY.
//!
//! The canonical x/y/z properties hold each splat's world position at the
//! rest pose so any point-cloud viewer can open a checkpoint; the local
//! rigging parameters ride along as extra per-vertex properties and the
//! optimizer state as an opaque byte element.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh_rig::{all_frames, Topology};
use crate::splat_model::{to_global, RiggedAvatar, SplatSet, SH_DC, SH_REST};

/// Everything in a checkpoint besides the splats themselves.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckpointMeta {
    pub iteration: u64,
    pub topology_hash: String,
    /// Compact JSON echo of the training configuration.
    pub config_echo: String,
    /// Opaque optimizer-state blob (absent for inference-only checkpoints).
    pub opt_state: Option<Vec<u8>>,
}

fn float_props() -> Vec<String> {
    let mut names = vec!["x", "y", "z", "mu_0", "mu_1", "mu_2", "rot_0", "rot_1", "rot_2", "rot_3", "scale_0", "scale_1", "scale_2", "opacity"]
        .into_iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    for i in 0..SH_DC {
        names.push(format!("f_dc_{i}"));
    }
    for i in 0..SH_REST {
        names.push(format!("f_rest_{i}"));
    }
    names
}

/// Write `avatar` to `path`; `rest_vertices` give the pose used for the
/// viewable world-space x/y/z columns.
pub fn save_checkpoint(
    path: &Path,
    avatar: &RiggedAvatar,
    rest_vertices: &[crate::geometry::Vec3],
    meta: &CheckpointMeta,
) -> Result<()> {
    let frames = all_frames(rest_vertices, &avatar.topology)?;
    let n = avatar.splats.len();

    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str("comment splatrig_checkpoint 1\n");
    header.push_str(&format!("comment topology_hash {}\n", avatar.topology.content_hash()));
    header.push_str(&format!("comment iteration {}\n", meta.iteration));
    if !meta.config_echo.is_empty() {
        header.push_str(&format!("comment config {}\n", meta.config_echo));
    }
    header.push_str(&format!("element vertex {n}\n"));
    for name in float_props() {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("property uint parent_triangle\n");
    let blob = meta.opt_state.as_deref().unwrap_or(&[]);
    if !blob.is_empty() {
        header.push_str(&format!("element opt_state {}\n", blob.len()));
        header.push_str("property uchar data\n");
    }
    header.push_str("end_header\n");

    let mut out = header.into_bytes();
    out.reserve(n * 63 * 4 + blob.len());
    for i in 0..n {
        let g = avatar.splats.get(i);
        let world = to_global(&g, &frames[g.parent_triangle as usize]);
        let mut push = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        push(world.mu.x as f32);
        push(world.mu.y as f32);
        push(world.mu.z as f32);
        for c in 0..3 {
            push(g.mu_local[c]);
        }
        for c in 0..4 {
            push(g.rot_local[c]);
        }
        for c in 0..3 {
            push(g.log_scale[c]);
        }
        push(g.opacity_logit);
        for c in 0..SH_DC + SH_REST {
            push(g.sh[c]);
        }
        out.extend_from_slice(&g.parent_triangle.to_le_bytes());
    }
    out.extend_from_slice(blob);
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

struct PlyElement {
    name: String,
    count: usize,
    /// (type, name) pairs in declaration order.
    props: Vec<(String, String)>,
}

fn scalar_size(ty: &str) -> Result<usize> {
    match ty {
        "char" | "uchar" | "int8" | "uint8" => Ok(1),
        "short" | "ushort" | "int16" | "uint16" => Ok(2),
        "int" | "uint" | "float" | "int32" | "uint32" | "float32" => Ok(4),
        "double" | "float64" => Ok(8),
        other => Err(Error::Schema(format!("unsupported ply property type {other:?}"))),
    }
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<(Vec<PlyElement>, Vec<(String, String)>, usize)> {
    let marker = b"end_header\n";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::Schema(format!("{}: missing end_header", path.display())))?;
    let header = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Schema(format!("{}: header is not utf-8", path.display())))?;
    let body_start = end + marker.len();

    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::Schema(format!("{}: not a ply file", path.display())));
    }
    let mut elements: Vec<PlyElement> = Vec::new();
    let mut comments: Vec<(String, String)> = Vec::new();
    let mut format_seen = false;
    for line in lines {
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                let kind = parts.next().unwrap_or("");
                if kind != "binary_little_endian" {
                    return Err(Error::Schema(format!(
                        "{}: unsupported ply format {kind:?}",
                        path.display()
                    )));
                }
                format_seen = true;
            }
            Some("comment") => {
                let key = parts.next().unwrap_or("").to_string();
                let value = parts.collect::<Vec<_>>().join(" ");
                comments.push((key, value));
            }
            Some("element") => {
                let name = parts.next().unwrap_or("").to_string();
                let count: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::Schema(format!("{}: bad element count", path.display())))?;
                elements.push(PlyElement {
                    name,
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let ty = parts.next().unwrap_or("").to_string();
                if ty == "list" {
                    return Err(Error::Schema(format!(
                        "{}: list properties are not supported",
                        path.display()
                    )));
                }
                let name = parts.next().unwrap_or("").to_string();
                elements
                    .last_mut()
                    .ok_or_else(|| Error::Schema(format!("{}: property before element", path.display())))?
                    .props
                    .push((ty, name));
            }
            _ => {}
        }
    }
    if !format_seen {
        return Err(Error::Schema(format!("{}: missing format line", path.display())));
    }
    Ok((elements, comments, body_start))
}

/// Load a checkpoint, validating it against `topology`.
pub fn load_checkpoint(path: &Path, topology: Arc<Topology>) -> Result<(RiggedAvatar, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (elements, comments, body_start) = parse_header(&bytes, path)?;

    let mut meta = CheckpointMeta::default();
    for (key, value) in &comments {
        match key.as_str() {
            "topology_hash" => meta.topology_hash = value.clone(),
            "iteration" => {
                meta.iteration = value.parse().map_err(|_| {
                    Error::Schema(format!("{}: bad iteration comment {value:?}", path.display()))
                })?;
            }
            "config" => meta.config_echo = value.clone(),
            _ => {}
        }
    }
    let actual_hash = topology.content_hash();
    if meta.topology_hash != actual_hash {
        return Err(Error::HashMismatch {
            stored: meta.topology_hash.clone(),
            actual: actual_hash,
        });
    }

    // Strict schema: the vertex element must carry exactly the expected
    // properties (any order), nothing more, nothing missing.
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::Schema(format!("{}: no vertex element", path.display())))?;
    let mut expected: Vec<(String, String)> = float_props()
        .into_iter()
        .map(|n| ("float".to_string(), n))
        .collect();
    expected.push(("uint".to_string(), "parent_triangle".to_string()));
    for (ty, name) in &vertex.props {
        if !expected.iter().any(|(et, en)| et == ty && en == name) {
            return Err(Error::Schema(format!(
                "{}: unknown vertex property {ty} {name}",
                path.display()
            )));
        }
    }
    for (ty, name) in &expected {
        if !vertex.props.iter().any(|(et, en)| et == ty && en == name) {
            return Err(Error::Schema(format!(
                "{}: missing vertex property {ty} {name}",
                path.display()
            )));
        }
    }

    // Byte offsets of each property within a vertex record.
    let mut offsets = std::collections::HashMap::new();
    let mut stride = 0usize;
    for (ty, name) in &vertex.props {
        offsets.insert(name.clone(), (stride, ty.clone()));
        stride += scalar_size(ty)?;
    }

    // Elements appear in the body in declaration order.
    let mut cursor = body_start;
    let mut vertex_range = None;
    for e in &elements {
        let size: usize = e
            .props
            .iter()
            .map(|(ty, _)| scalar_size(ty))
            .sum::<Result<usize>>()?
            * e.count;
        if e.name == "vertex" {
            vertex_range = Some((cursor, size));
        } else if e.name == "opt_state" {
            if cursor + size > bytes.len() {
                return Err(Error::Schema(format!("{}: truncated opt_state", path.display())));
            }
            meta.opt_state = Some(bytes[cursor..cursor + size].to_vec());
        }
        cursor += size;
    }
    if cursor > bytes.len() {
        return Err(Error::Schema(format!("{}: truncated payload", path.display())));
    }
    let (vstart, vsize) = vertex_range.unwrap();
    if vstart + vsize > bytes.len() {
        return Err(Error::Schema(format!("{}: truncated vertex data", path.display())));
    }

    let read_f32 = |record: &[u8], name: &str| -> f32 {
        let (off, _) = offsets[name];
        f32::from_le_bytes(record[off..off + 4].try_into().unwrap())
    };

    let mut splats = SplatSet::with_capacity(vertex.count);
    for i in 0..vertex.count {
        let record = &bytes[vstart + i * stride..vstart + (i + 1) * stride];
        let mut g = crate::splat_model::BoundGaussian::at_rest(0);
        for c in 0..3 {
            g.mu_local[c] = read_f32(record, &format!("mu_{c}"));
        }
        for c in 0..4 {
            g.rot_local[c] = read_f32(record, &format!("rot_{c}"));
        }
        for c in 0..3 {
            g.log_scale[c] = read_f32(record, &format!("scale_{c}"));
        }
        g.opacity_logit = read_f32(record, "opacity");
        for c in 0..SH_DC {
            g.sh[c] = read_f32(record, &format!("f_dc_{c}"));
        }
        for c in 0..SH_REST {
            g.sh[SH_DC + c] = read_f32(record, &format!("f_rest_{c}"));
        }
        let (off, _) = offsets["parent_triangle"];
        let parent = u32::from_le_bytes(record[off..off + 4].try_into().unwrap());
        if parent as usize >= topology.triangle_count() {
            return Err(Error::Schema(format!(
                "{}: splat {i} parent_triangle {parent} out of range ({} triangles)",
                path.display(),
                topology.triangle_count()
            )));
        }
        g.parent_triangle = parent;
        splats.push(&g);
    }

    let mut avatar = RiggedAvatar {
        topology,
        splats,
        per_triangle_count: Vec::new(),
    };
    avatar.per_triangle_count = avatar.recount();
    Ok((avatar, meta))
}
