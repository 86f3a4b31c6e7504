//! Wavefront OBJ (`v`, `vt`, `f`) reading and writing. Indices are 1-based on
//! disk and 0-based in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::mesh::{Mesh, UvMap};
use super::GeometryError;

pub fn write_obj<W: Write>(mesh: &Mesh, mut out: W) -> std::io::Result<()> {
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
    }
    match &mesh.uv {
        Some(uv) => {
            for t in &uv.coords {
                writeln!(out, "vt {} {}", t[0], t[1])?;
            }
            for (f, t) in mesh.faces.iter().zip(&uv.faces) {
                writeln!(
                    out,
                    "f {}/{} {}/{} {}/{}",
                    f[0] + 1,
                    t[0] + 1,
                    f[1] + 1,
                    t[1] + 1,
                    f[2] + 1,
                    t[2] + 1
                )?;
            }
        }
        None => {
            for f in &mesh.faces {
                writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
            }
        }
    }
    Ok(())
}

pub fn export_obj(mesh: &Mesh, path: &Path) -> Result<(), GeometryError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_obj(mesh, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn import_obj(path: &Path) -> Result<Mesh, GeometryError> {
    parse_obj(File::open(path)?)
}

pub fn parse_obj<R: Read>(input: R) -> Result<Mesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut coords = Vec::new();
    let mut faces = Vec::new();
    let mut uv_faces = Vec::new();
    let mut any_without_uv = false;

    for (idx, line) in BufReader::new(input).lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let err = |message: String| GeometryError::Obj {
            line: line_no,
            message,
        };
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "v" => {
                if rest.len() < 3 {
                    return Err(err(format!("vertex needs 3 coordinates, got {}", rest.len())));
                }
                let mut v = [0.0; 3];
                for (slot, tok) in v.iter_mut().zip(&rest) {
                    *slot = tok.parse().map_err(|_| err(format!("bad number {tok:?}")))?;
                }
                vertices.push(v);
            }
            "vt" => {
                if rest.len() < 2 {
                    return Err(err(format!("texture coordinate needs 2 values, got {}", rest.len())));
                }
                let mut t = [0.0; 2];
                for (slot, tok) in t.iter_mut().zip(&rest) {
                    *slot = tok.parse().map_err(|_| err(format!("bad number {tok:?}")))?;
                }
                coords.push(t);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(err(format!("only triangles are supported, got {} indices", rest.len())));
                }
                let mut f = [0usize; 3];
                let mut t = [None; 3];
                for (i, tok) in rest.iter().enumerate() {
                    let mut parts = tok.split('/');
                    let vi = parse_index(parts.next(), vertices.len())
                        .ok_or_else(|| err(format!("bad vertex index {tok:?}")))?;
                    f[i] = vi;
                    if let Some(p) = parts.next().filter(|p| !p.is_empty()) {
                        t[i] = Some(
                            parse_index(Some(p), coords.len())
                                .ok_or_else(|| err(format!("bad texture index {tok:?}")))?,
                        );
                    }
                }
                faces.push(f);
                match t {
                    [Some(a), Some(b), Some(c)] => uv_faces.push([a, b, c]),
                    [None, None, None] => any_without_uv = true,
                    _ => return Err(err("mixed texture indices within a face".into())),
                }
            }
            _ => {}
        }
    }

    let mesh = Mesh::new(vertices, faces)?;
    if !uv_faces.is_empty() {
        if any_without_uv {
            return Err(GeometryError::Obj {
                line: 0,
                message: "some faces lack texture indices".into(),
            });
        }
        return mesh.with_uv(UvMap {
            coords,
            faces: uv_faces,
        });
    }
    Ok(mesh)
}

fn parse_index(tok: Option<&str>, len: usize) -> Option<usize> {
    let i: usize = tok?.parse().ok()?;
    (i >= 1 && i <= len).then(|| i - 1)
}
