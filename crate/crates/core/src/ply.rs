//! Minimal PLY support for point clouds.
//!
//! Reads `ascii` and `binary_little_endian` files. Only the `vertex` element
//! is kept (properties `x`, `y`, `z`, and optionally `region_id` and
//! `gt_label`); other elements, list properties included, are skipped.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => {
                let mut a = [0u8; 8];
                a.copy_from_slice(&b[..8]);
                f64::from_le_bytes(a)
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::malformed("ply", detail)
}

fn parse_header(bytes: &[u8]) -> Result<(PlyFormat, Vec<Element>, usize)> {
    const END: &[u8] = b"end_header";
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    let mut pos = 0;
    let mut first = true;
    loop {
        let nl = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by end_header"))?;
        let raw = &bytes[pos..pos + nl];
        pos += nl + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| bad("header is not valid UTF-8"))?
            .trim_end_matches('\r')
            .trim();
        if first {
            if line != "ply" {
                return Err(bad("missing 'ply' magic line"));
            }
            first = false;
            continue;
        }
        if line.as_bytes() == END {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                format = Some(match tok.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    other => return Err(bad(format!("unsupported format {other:?}"))),
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tok.next().ok_or_else(|| bad("element without name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| bad(format!("element {name} has no valid count")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| bad("property before any element"))?;
                let ty = tok.next().ok_or_else(|| bad("property without type"))?;
                let prop = if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    match (count, item) {
                        (Some(count), Some(item)) => Property::List { count, item },
                        _ => return Err(bad("malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| bad(format!("unknown type {ty}")))?;
                    let name = tok.next().ok_or_else(|| bad("property without name"))?;
                    Property::Scalar {
                        name: name.to_string(),
                        ty,
                    }
                };
                el.properties.push(prop);
            }
            Some(other) => return Err(bad(format!("unexpected header keyword {other}"))),
        }
    }
    let format = format.ok_or_else(|| bad("missing format line"))?;
    Ok((format, elements, pos))
}

struct VertexLayout {
    x: usize,
    y: usize,
    z: usize,
    region: Option<usize>,
    label: Option<usize>,
}

fn vertex_layout(el: &Element) -> Result<VertexLayout> {
    let find = |want: &str| {
        el.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == want))
    };
    if el
        .properties
        .iter()
        .any(|p| matches!(p, Property::List { .. }))
    {
        return Err(bad("list properties on vertex are not supported"));
    }
    Ok(VertexLayout {
        x: find("x").ok_or_else(|| bad("vertex has no x"))?,
        y: find("y").ok_or_else(|| bad("vertex has no y"))?,
        z: find("z").ok_or_else(|| bad("vertex has no z"))?,
        region: find("region_id"),
        label: find("gt_label"),
    })
}

fn as_label(v: f64, what: &str) -> Result<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(bad(format!("{what} value {v} is not an integer")));
    }
    Ok(v as i64)
}

struct Columns {
    positions: Vec<[f64; 3]>,
    region: Option<Vec<i64>>,
    label: Option<Vec<i64>>,
}

impl Columns {
    fn new(n: usize, layout: &VertexLayout) -> Self {
        Self {
            positions: Vec::with_capacity(n.min(1 << 16)),
            region: layout.region.map(|_| Vec::with_capacity(n.min(1 << 16))),
            label: layout.label.map(|_| Vec::with_capacity(n.min(1 << 16))),
        }
    }

    fn push(&mut self, layout: &VertexLayout, row: &[f64]) -> Result<()> {
        self.positions
            .push([row[layout.x], row[layout.y], row[layout.z]]);
        if let (Some(i), Some(col)) = (layout.region, &mut self.region) {
            col.push(as_label(row[i], "region_id")?);
        }
        if let (Some(i), Some(col)) = (layout.label, &mut self.label) {
            col.push(as_label(row[i], "gt_label")?);
        }
        Ok(())
    }

    fn finish(self) -> Result<PointCloud> {
        PointCloud::with_attributes(self.positions, self.region, self.label)
    }
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let (format, elements, body_start) = parse_header(bytes)?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| bad("no vertex element"))?;
    let layout = vertex_layout(&elements[vi])?;
    let body = &bytes[body_start..];
    match format {
        PlyFormat::Ascii => parse_ascii(body, &elements, vi, &layout),
        PlyFormat::BinaryLittleEndian => parse_binary(body, &elements, vi, &layout),
    }
}

fn parse_ascii(
    body: &[u8],
    elements: &[Element],
    vi: usize,
    layout: &VertexLayout,
) -> Result<PointCloud> {
    let text = std::str::from_utf8(body).map_err(|_| bad("ascii body is not UTF-8"))?;
    let mut tokens = text.split_ascii_whitespace();
    let mut next = |what: &str| -> Result<f64> {
        let t = tokens
            .next()
            .ok_or_else(|| bad(format!("unexpected end of data reading {what}")))?;
        t.parse::<f64>()
            .map_err(|_| bad(format!("bad number {t:?} in {what}")))
    };
    for el in &elements[..vi] {
        for _ in 0..el.count {
            for p in &el.properties {
                match p {
                    Property::Scalar { .. } => {
                        next(&el.name)?;
                    }
                    Property::List { .. } => {
                        let n = next(&el.name)?;
                        for _ in 0..(n as usize) {
                            next(&el.name)?;
                        }
                    }
                }
            }
        }
    }
    let el = &elements[vi];
    let mut cols = Columns::new(el.count, layout);
    let mut row = vec![0.0; el.properties.len()];
    for _ in 0..el.count {
        for v in row.iter_mut() {
            *v = next("vertex")?;
        }
        cols.push(layout, &row)?;
    }
    cols.finish()
}

fn parse_binary(
    body: &[u8],
    elements: &[Element],
    vi: usize,
    layout: &VertexLayout,
) -> Result<PointCloud> {
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| take_bytes(body, pos, n);
    for el in &elements[..vi] {
        for _ in 0..el.count {
            for p in &el.properties {
                match *p {
                    Property::Scalar { ty, .. } => {
                        take(&mut pos, ty.size())?;
                    }
                    Property::List { count, item } => {
                        let n = count.read_le(take(&mut pos, count.size())?);
                        let bytes = (n as usize)
                            .checked_mul(item.size())
                            .ok_or_else(|| bad("list length overflow"))?;
                        take(&mut pos, bytes)?;
                    }
                }
            }
        }
    }
    let el = &elements[vi];
    let stride: usize = el
        .properties
        .iter()
        .map(|p| match p {
            Property::Scalar { ty, .. } => ty.size(),
            Property::List { .. } => 0,
        })
        .sum();
    let needed = el
        .count
        .checked_mul(stride)
        .ok_or_else(|| bad("vertex count overflow"))?;
    if body.len().saturating_sub(pos) < needed {
        return Err(bad(format!(
            "vertex data needs {needed} bytes, {} remain",
            body.len().saturating_sub(pos)
        )));
    }
    let mut cols = Columns::new(el.count, layout);
    let mut row = vec![0.0; el.properties.len()];
    for _ in 0..el.count {
        for (slot, p) in row.iter_mut().zip(&el.properties) {
            if let Property::Scalar { ty, .. } = *p {
                *slot = ty.read_le(take(&mut pos, ty.size())?);
            }
        }
        cols.push(layout, &row)?;
    }
    cols.finish()
}

fn take_bytes<'a>(body: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let end = pos
        .checked_add(n)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| bad("binary body ends early"))?;
    let s = &body[*pos..end];
    *pos = end;
    Ok(s)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

/// Writes `x,y,z` as doubles and the optional attributes as `int`.
pub fn encode_ply(cloud: &PointCloud, format: PlyFormat) -> Result<Vec<u8>> {
    let to_i32 = |v: i64, what: &str| {
        i32::try_from(v).map_err(|_| bad(format!("{what} {v} does not fit a PLY int")))
    };
    let mut out = Vec::new();
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {fmt} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    )
    .unwrap();
    if cloud.region_id().is_some() {
        out.extend_from_slice(b"property int region_id\n");
    }
    if cloud.gt_label().is_some() {
        out.extend_from_slice(b"property int gt_label\n");
    }
    out.extend_from_slice(b"end_header\n");
    for (i, p) in cloud.positions().iter().enumerate() {
        let region = cloud.region_id().map(|r| r[i]);
        let label = cloud.gt_label().map(|l| l[i]);
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", p[0], p[1], p[2]).unwrap();
                for v in [region, label].into_iter().flatten() {
                    write!(out, " {}", to_i32(v, "attribute")?).unwrap();
                }
                out.push(b'\n');
            }
            PlyFormat::BinaryLittleEndian => {
                for c in p {
                    out.extend_from_slice(&c.to_le_bytes());
                }
                for v in [region, label].into_iter().flatten() {
                    out.extend_from_slice(&to_i32(v, "attribute")?.to_le_bytes());
                }
            }
        }
    }
    Ok(out)
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_ply(cloud, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
