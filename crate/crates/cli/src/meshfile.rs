//! Lossless binary mesh files passed between pipeline stages.
//!
//! Layout, little-endian: magic `SCRBMESH`, `u32` version, `u64` vertex and
//! triangle counts, vertices and normals as `f64` triples, triangles as `u32`
//! triples, a `u8` UV flag followed by six `f64` per face when set, and a
//! length-prefixed UTF-8 atlas name (empty for none).

use std::io::{self, Read, Write};
use std::path::Path;

use scarab::geometry::Vec3;
use scarab::mesh::TexturedMesh;

const MAGIC: &[u8; 8] = b"SCRBMESH";
const VERSION: u32 = 1;

fn bad(msg: &str) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.to_string())
}

pub fn write_mesh(mesh: &TexturedMesh, w: &mut impl Write) -> io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(mesh.vertices.len() as u64).to_le_bytes())?;
    w.write_all(&(mesh.triangles.len() as u64).to_le_bytes())?;
    for list in [&mesh.vertices, &mesh.normals] {
        if list.len() != mesh.vertices.len() {
            return Err(bad("normal count differs from vertex count"));
        }
        for v in list.iter() {
            for c in [v.x, v.y, v.z] {
                w.write_all(&c.to_le_bytes())?;
            }
        }
    }
    for t in &mesh.triangles {
        for i in t {
            w.write_all(&i.to_le_bytes())?;
        }
    }
    match &mesh.uvs {
        Some(uvs) => {
            if uvs.len() != mesh.triangles.len() {
                return Err(bad("uv count differs from face count"));
            }
            w.write_all(&[1])?;
            for face in uvs {
                for uv in face {
                    w.write_all(&uv[0].to_le_bytes())?;
                    w.write_all(&uv[1].to_le_bytes())?;
                }
            }
        }
        None => w.write_all(&[0])?,
    }
    let name = mesh.atlas.as_deref().unwrap_or("");
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.inner.read_exact(&mut b)?;
        Ok(b)
    }
    fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn vec3(&mut self) -> io::Result<Vec3> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

pub fn read_mesh(r: &mut impl Read) -> io::Result<TexturedMesh> {
    let mut r = Reader { inner: r };
    if &r.bytes::<8>()? != MAGIC {
        return Err(bad("not a mesh file"));
    }
    if r.u32()? != VERSION {
        return Err(bad("unsupported mesh file version"));
    }
    let nv = r.u64()? as usize;
    let nt = r.u64()? as usize;
    let vertices = (0..nv).map(|_| r.vec3()).collect::<io::Result<Vec<_>>>()?;
    let normals = (0..nv).map(|_| r.vec3()).collect::<io::Result<Vec<_>>>()?;
    let triangles = (0..nt)
        .map(|_| Ok([r.u32()?, r.u32()?, r.u32()?]))
        .collect::<io::Result<Vec<_>>>()?;
    if triangles.iter().flatten().any(|&i| i as usize >= nv) {
        return Err(bad("triangle index out of range"));
    }
    let uvs = match r.bytes::<1>()?[0] {
        0 => None,
        1 => Some(
            (0..nt)
                .map(|_| Ok([[r.f64()?, r.f64()?], [r.f64()?, r.f64()?], [r.f64()?, r.f64()?]]))
                .collect::<io::Result<Vec<_>>>()?,
        ),
        _ => return Err(bad("bad uv flag")),
    };
    let len = r.u32()? as usize;
    let mut name = vec![0u8; len];
    r.inner.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| bad("atlas name is not UTF-8"))?;
    Ok(TexturedMesh {
        vertices,
        triangles,
        normals,
        uvs,
        atlas: (!name.is_empty()).then_some(name),
    })
}

pub fn save(mesh: &TexturedMesh, path: &Path) -> io::Result<()> {
    let mut w = io::BufWriter::new(std::fs::File::create(path)?);
    write_mesh(mesh, &mut w)?;
    w.flush()
}

pub fn load(path: &Path) -> io::Result<TexturedMesh> {
    read_mesh(&mut io::BufReader::new(std::fs::File::open(path)?))
}
