//! OBJ (ASCII) and binary little-endian PLY reading and writing.
//!
//! Skin weights have no standard slot in either format. OBJ files written here
//! carry them as `# skin <joint> <weight> ...` comment lines, one per vertex in
//! order; files without them load with every vertex bound to joint 0.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::TemplateMesh;
use crate::error::{Error, Result};
use crate::math::{Vec2, Vec3};

pub fn load_mesh(path: impl AsRef<Path>) -> Result<TemplateMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    match extension(path).as_str() {
        "obj" => parse_obj(&String::from_utf8_lossy(&bytes)),
        "ply" => parse_ply(&bytes),
        other => Err(Error::invalid(format!("unsupported mesh extension `{other}`"))),
    }
}

/// Writes `mesh` connectivity and UVs with the given vertex positions.
pub fn save_mesh(mesh: &TemplateMesh, positions: &[Vec3], path: impl AsRef<Path>) -> Result<()> {
    if positions.len() != mesh.vertex_count() {
        return Err(Error::dim("positions", mesh.vertex_count(), positions.len()));
    }
    let path = path.as_ref();
    let uv = Some((mesh.uvs.as_slice(), mesh.face_uvs.as_slice()));
    match extension(path).as_str() {
        "obj" => write_obj(path, positions, &mesh.faces, uv, Some(&mesh.skin_weights)),
        "ply" => write_ply(path, positions, &mesh.faces, uv),
        other => Err(Error::invalid(format!("unsupported mesh extension `{other}`"))),
    }
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

type UvTable<'a> = (&'a [Vec2], &'a [[usize; 3]]);

pub fn write_obj(
    path: impl AsRef<Path>,
    positions: &[Vec3],
    faces: &[[usize; 3]],
    uv: Option<UvTable<'_>>,
    skin: Option<&super::SkinWeights>,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# surfalign mesh: {} vertices, {} faces", positions.len(), faces.len())?;
    for p in positions {
        writeln!(w, "v {} {} {}", p.x, p.y, p.z)?;
    }
    if let Some(skin) = skin {
        for ws in skin {
            write!(w, "# skin")?;
            for (j, x) in ws {
                write!(w, " {j} {x}")?;
            }
            writeln!(w)?;
        }
    }
    match uv {
        Some((uvs, fuv)) => {
            for t in uvs {
                writeln!(w, "vt {} {}", t.x, t.y)?;
            }
            for (f, t) in faces.iter().zip(fuv) {
                writeln!(
                    w,
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
            for f in faces {
                writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_obj(text: &str) -> Result<TemplateMesh> {
    let mut vertices = Vec::new();
    let mut uvs = Vec::new();
    let mut faces = Vec::new();
    let mut face_uvs = Vec::new();
    let mut skin: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut any_missing_uv = false;
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix("# skin") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() % 2 != 0 {
                return Err(err("skin line needs joint/weight pairs".into()));
            }
            let mut ws = Vec::new();
            for pair in toks.chunks(2) {
                let j: usize = pair[0].parse().map_err(|_| err(format!("bad joint `{}`", pair[0])))?;
                let x: f64 = pair[1].parse().map_err(|_| err(format!("bad weight `{}`", pair[1])))?;
                ws.push((j, x));
            }
            skin.push(ws);
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        let key = toks.next().unwrap_or("");
        let nums = |toks: std::str::SplitWhitespace<'_>, n: usize| -> Result<Vec<f64>> {
            let vals: Vec<f64> = toks
                .map(|t| t.parse::<f64>().map_err(|_| err(format!("bad number `{t}`"))))
                .collect::<Result<_>>()?;
            if vals.len() < n {
                return Err(err(format!("`{key}` needs {n} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        match key {
            "v" => {
                let v = nums(toks, 3)?;
                vertices.push(Vec3::new(v[0], v[1], v[2]));
            }
            "vt" => {
                let v = nums(toks, 2)?;
                uvs.push(Vec2::new(v[0], v[1]));
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in toks {
                    let mut parts = tok.split('/');
                    let vi = resolve_index(parts.next().unwrap_or(""), vertices.len())
                        .ok_or_else(|| err(format!("bad vertex reference `{tok}`")))?;
                    let ti = match parts.next() {
                        Some(s) if !s.is_empty() => Some(
                            resolve_index(s, uvs.len())
                                .ok_or_else(|| err(format!("bad uv reference `{tok}`")))?,
                        ),
                        Some(_) if tok.ends_with('/') => {
                            return Err(err(format!("incomplete corner `{tok}`")));
                        }
                        _ => None,
                    };
                    corners.push((vi, ti));
                }
                if corners.len() < 3 {
                    return Err(err(format!("face needs 3 corners, found {}", corners.len())));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    faces.push([tri[0].0, tri[1].0, tri[2].0]);
                    match (tri[0].1, tri[1].1, tri[2].1) {
                        (Some(a), Some(b), Some(c)) => face_uvs.push([a, b, c]),
                        _ => {
                            any_missing_uv = true;
                            face_uvs.push([0, 0, 0]);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if faces.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count(),
            msg: "no faces found (empty or truncated file)".into(),
        });
    }
    if any_missing_uv {
        return Err(Error::invalid("mesh faces must carry per-corner UVs (`f v/vt`)"));
    }
    let skin = if skin.is_empty() {
        vec![vec![(0, 1.0)]; vertices.len()]
    } else if skin.len() != vertices.len() {
        return Err(Error::dim("skin weight lines", vertices.len(), skin.len()));
    } else {
        skin
    };
    TemplateMesh::new(vertices, faces, uvs, face_uvs, skin)
}

/// 1-based (or negative, relative) OBJ index to 0-based.
fn resolve_index(s: &str, count: usize) -> Option<usize> {
    let i: i64 = s.parse().ok()?;
    let idx = if i > 0 { i - 1 } else { count as i64 + i };
    (idx >= 0 && (idx as usize) < count).then_some(idx as usize)
}

pub fn write_ply(
    path: impl AsRef<Path>,
    positions: &[Vec3],
    faces: &[[usize; 3]],
    uv: Option<UvTable<'_>>,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", positions.len())?;
    for c in ["x", "y", "z"] {
        writeln!(w, "property double {c}")?;
    }
    writeln!(w, "element face {}", faces.len())?;
    writeln!(w, "property list uchar int vertex_indices")?;
    if uv.is_some() {
        writeln!(w, "property list uchar float texcoord")?;
    }
    writeln!(w, "end_header")?;
    for p in positions {
        for c in [p.x, p.y, p.z] {
            w.write_all(&c.to_le_bytes())?;
        }
    }
    for (fi, f) in faces.iter().enumerate() {
        w.write_all(&[3u8])?;
        for &v in f {
            w.write_all(&(v as i32).to_le_bytes())?;
        }
        if let Some((uvs, fuv)) = uv {
            w.write_all(&[6u8])?;
            for &t in &fuv[fi] {
                w.write_all(&(uvs[t].x as f32).to_le_bytes())?;
                w.write_all(&(uvs[t].y as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    U8,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "uchar" | "uint8" | "char" | "int8" => Scalar::U8,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::U8 => 1,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Scalar::U8 => b[0] as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Prop {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Prop>,
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
    header_lines: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Parse {
                line: self.header_lines + 1,
                msg: format!("unexpected end of binary data while reading {what}"),
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn scalar(&mut self, t: Scalar, what: &str) -> Result<f64> {
        let b = self.take(t.size(), what)?;
        Ok(t.read(b))
    }
}

fn parse_ply(bytes: &[u8]) -> Result<TemplateMesh> {
    let mut elements: Vec<Element> = Vec::new();
    let mut pos = 0;
    let mut line_no = 0;
    let mut format_ok = false;
    loop {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Parse {
                line: line_no + 1,
                msg: "header is not terminated by end_header".into(),
            })?;
        let line = String::from_utf8_lossy(&bytes[pos..pos + end]).trim().to_string();
        pos += end + 1;
        line_no += 1;
        let err = |msg: String| Error::Parse { line: line_no, msg };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.first().copied() {
            Some("ply") if line_no == 1 => {}
            _ if line_no == 1 => return Err(err("missing `ply` magic".into())),
            Some("format") => {
                if toks.get(1) != Some(&"binary_little_endian") {
                    return Err(err(format!("unsupported format `{}`", toks[1..].join(" "))));
                }
                format_ok = true;
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let count = toks
                    .get(2)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| err("bad element count".into()))?;
                elements.push(Element {
                    name: toks.get(1).unwrap_or(&"").to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err("property before any element".into()))?;
                let prop = if toks.get(1) == Some(&"list") {
                    let (c, t, name) = match (toks.get(2), toks.get(3), toks.get(4)) {
                        (Some(c), Some(t), Some(n)) => (c, t, n),
                        _ => return Err(err("malformed list property".into())),
                    };
                    Prop::List(
                        name.to_string(),
                        Scalar::parse(c).ok_or_else(|| err(format!("unknown type `{c}`")))?,
                        Scalar::parse(t).ok_or_else(|| err(format!("unknown type `{t}`")))?,
                    )
                } else {
                    let (t, name) = match (toks.get(1), toks.get(2)) {
                        (Some(t), Some(n)) => (t, n),
                        _ => return Err(err("malformed property".into())),
                    };
                    Prop::Scalar(
                        name.to_string(),
                        Scalar::parse(t).ok_or_else(|| err(format!("unknown type `{t}`")))?,
                    )
                };
                el.props.push(prop);
            }
            Some("end_header") => break,
            _ => return Err(err(format!("unexpected header line `{line}`"))),
        }
    }
    if !format_ok {
        return Err(Error::Parse {
            line: line_no,
            msg: "missing format line".into(),
        });
    }
    let mut cur = Cursor {
        data: bytes,
        pos,
        header_lines: line_no,
    };
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut corner_uvs: Vec<[Vec2; 3]> = Vec::new();
    for el in &elements {
        for i in 0..el.count {
            let what = format!("{} {i}", el.name);
            let mut xyz = [0.0; 3];
            let mut idx: Vec<f64> = Vec::new();
            let mut tc: Vec<f64> = Vec::new();
            for p in &el.props {
                match p {
                    Prop::Scalar(name, t) => {
                        let v = cur.scalar(*t, &what)?;
                        match name.as_str() {
                            "x" => xyz[0] = v,
                            "y" => xyz[1] = v,
                            "z" => xyz[2] = v,
                            _ => {}
                        }
                    }
                    Prop::List(name, ct, t) => {
                        let n = cur.scalar(*ct, &what)? as usize;
                        let mut vals = Vec::with_capacity(n);
                        for _ in 0..n {
                            vals.push(cur.scalar(*t, &what)?);
                        }
                        match name.as_str() {
                            "vertex_indices" | "vertex_index" => idx = vals,
                            "texcoord" => tc = vals,
                            _ => {}
                        }
                    }
                }
            }
            match el.name.as_str() {
                "vertex" => vertices.push(Vec3::new(xyz[0], xyz[1], xyz[2])),
                "face" => {
                    if idx.len() != 3 {
                        return Err(Error::invalid(format!("face {i} is not a triangle")));
                    }
                    if tc.len() != 6 {
                        return Err(Error::invalid(format!("face {i} has no per-corner texcoords")));
                    }
                    faces.push([idx[0] as usize, idx[1] as usize, idx[2] as usize]);
                    corner_uvs.push([
                        Vec2::new(tc[0], tc[1]),
                        Vec2::new(tc[2], tc[3]),
                        Vec2::new(tc[4], tc[5]),
                    ]);
                }
                _ => {}
            }
        }
    }
    if cur.pos != bytes.len() {
        log::warn!("{} trailing bytes after PLY body", bytes.len() - cur.pos);
    }
    // identical UV values share one index so seams show up as index divergence
    let mut table: HashMap<(u64, u64), usize> = HashMap::new();
    let mut uvs = Vec::new();
    let face_uvs = corner_uvs
        .iter()
        .map(|c| {
            let mut out = [0; 3];
            for k in 0..3 {
                let key = (c[k].x.to_bits(), c[k].y.to_bits());
                out[k] = *table.entry(key).or_insert_with(|| {
                    uvs.push(c[k]);
                    uvs.len() - 1
                });
            }
            out
        })
        .collect();
    let n = vertices.len();
    TemplateMesh::new(vertices, faces, uvs, face_uvs, vec![vec![(0, 1.0)]; n])
}

/// Reads only vertex positions from a PLY or OBJ file.
pub fn load_positions(path: impl AsRef<Path>) -> Result<Vec<Vec3>> {
    Ok(load_mesh(path)?.vertices)
}
