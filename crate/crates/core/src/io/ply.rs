use std::fs;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::tsdf::Mesh;

/// Binary little-endian PLY with float positions, uchar colors and
/// triangle faces.
pub fn encode_ply(mesh: &Mesh) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\n\
         property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .into_bytes();
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        for x in v.iter() {
            out.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        out.extend_from_slice(c);
    }
    for t in &mesh.triangles {
        out.push(3);
        for i in t {
            out.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    out
}

/// Reads meshes in the layout written by [`encode_ply`].
pub fn decode_ply(bytes: &[u8]) -> Result<Mesh> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("PLY header not terminated".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::Format("non-ASCII PLY header".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing PLY magic".into()));
    }
    let (mut nv, mut nf) = (None, None);
    for line in lines {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", f, _] if *f != "binary_little_endian" => {
                return Err(Error::Format(format!("unsupported PLY format {f}")));
            }
            ["element", "vertex", n] => nv = n.parse::<usize>().ok(),
            ["element", "face", n] => nf = n.parse::<usize>().ok(),
            _ => {}
        }
    }
    let (nv, nf) = nv.zip(nf).ok_or_else(|| Error::Format("PLY lacks vertex or face counts".into()))?;
    let body = &bytes[end + END.len()..];
    let truncated = || Error::Format("truncated PLY body".into());
    let vbytes = nv * 15;
    let verts = body.get(..vbytes).ok_or_else(truncated)?;
    let mut mesh = Mesh::default();
    for chunk in verts.chunks_exact(15) {
        let f = |o: usize| f32::from_le_bytes([chunk[o], chunk[o + 1], chunk[o + 2], chunk[o + 3]]) as f64;
        mesh.vertices.push(Vector3::new(f(0), f(4), f(8)));
        mesh.colors.push([chunk[12], chunk[13], chunk[14]]);
    }
    let faces = body.get(vbytes..vbytes + nf * 13).ok_or_else(truncated)?;
    for chunk in faces.chunks_exact(13) {
        if chunk[0] != 3 {
            return Err(Error::Format(format!("non-triangle PLY face with {} vertices", chunk[0])));
        }
        let idx = |o: usize| i32::from_le_bytes([chunk[o], chunk[o + 1], chunk[o + 2], chunk[o + 3]]);
        let t = [idx(1), idx(5), idx(9)];
        if t.iter().any(|i| *i < 0 || *i as usize >= nv) {
            return Err(Error::Format("PLY face index out of range".into()));
        }
        mesh.triangles.push(t.map(|i| i as u32));
    }
    Ok(mesh)
}

pub fn write_ply(path: &Path, mesh: &Mesh) -> Result<()> {
    fs::write(path, encode_ply(mesh))?;
    Ok(())
}

pub fn read_ply(path: &Path) -> Result<Mesh> {
    decode_ply(&fs::read(path)?)
}
