//! Minimal PLY reader and writer for vertex positions.
//!
//! Reads `ascii` and `binary_little_endian` files; only the `x`, `y`, `z`
//! properties of the `vertex` element are kept.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::cloud::{QuantizedCloud, RawCloud};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("unsupported property type or layout: {0}")]
    Unsupported(String),
    #[error("vertex payload truncated: header declares {expected} vertices, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("malformed vertex {index}: {reason}")]
    Body { index: usize, reason: String },
    #[error("refusing to write an empty cloud")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<ScalarType> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    // None marks a list property
    props: Vec<(String, Option<ScalarType>)>,
}

#[derive(Debug)]
struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Header, PlyError> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<(), PlyError> {
        line.clear();
        if reader.read_line(line)? == 0 {
            return Err(PlyError::Header("unexpected end of file".into()));
        }
        Ok(())
    };
    next_line(&mut line)?;
    if line.trim_end() != "ply" {
        return Err(PlyError::Header("missing 'ply' magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(&mut line)?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("format") => {
                format = Some(match words.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(PlyError::Unsupported(format!("format {other}")));
                    }
                    None => return Err(PlyError::Header("empty format line".into())),
                });
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = words
                    .next()
                    .ok_or_else(|| PlyError::Header("element without name".into()))?;
                let count = words
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| PlyError::Header(format!("bad count for element {name}")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| PlyError::Header("property before any element".into()))?;
                let ty = words
                    .next()
                    .ok_or_else(|| PlyError::Header("property without type".into()))?;
                if ty == "list" {
                    let name = words.nth(2).unwrap_or("").to_string();
                    element.props.push((name, None));
                } else {
                    let scalar = ScalarType::parse(ty)
                        .ok_or_else(|| PlyError::Unsupported(format!("property type {ty}")))?;
                    let name = words
                        .next()
                        .ok_or_else(|| PlyError::Header("property without name".into()))?;
                    element.props.push((name.to_string(), Some(scalar)));
                }
            }
            Some("end_header") => break,
            Some(other) => return Err(PlyError::Header(format!("unknown keyword {other}"))),
        }
    }
    let format = format.ok_or_else(|| PlyError::Header("missing format line".into()))?;
    Ok(Header { format, elements })
}

struct VertexLayout {
    count: usize,
    // (byte offset, type) for x, y, z in binary; property index in ascii
    xyz: [(usize, usize, ScalarType); 3],
    stride: usize,
    props: usize,
}

fn vertex_layout(header: &Header) -> Result<(usize, VertexLayout), PlyError> {
    let pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| PlyError::Header("no vertex element".into()))?;
    let vertex = &header.elements[pos];
    let mut found: [Option<(usize, usize, ScalarType)>; 3] = [None; 3];
    let mut offset = 0;
    for (i, (name, ty)) in vertex.props.iter().enumerate() {
        let ty = ty.ok_or_else(|| {
            PlyError::Unsupported(format!("list property '{name}' in vertex element"))
        })?;
        let axis = match name.as_str() {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        if let Some(a) = axis {
            found[a] = Some((offset, i, ty));
        }
        offset += ty.size();
    }
    let [Some(x), Some(y), Some(z)] = found else {
        return Err(PlyError::Header("vertex element lacks x, y or z".into()));
    };
    Ok((
        pos,
        VertexLayout {
            count: vertex.count,
            xyz: [x, y, z],
            stride: offset,
            props: vertex.props.len(),
        },
    ))
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<RawCloud, PlyError> {
    let file = File::open(path)?;
    read_ply_from(&mut BufReader::new(file))
}

pub fn read_ply_from<R: BufRead>(reader: &mut R) -> Result<RawCloud, PlyError> {
    let header = parse_header(reader)?;
    let (vertex_pos, layout) = vertex_layout(&header)?;
    match header.format {
        PlyFormat::Ascii => {
            // skip lines of any elements that precede the vertices
            let skip: usize = header.elements[..vertex_pos].iter().map(|e| e.count).sum();
            let mut line = String::new();
            for _ in 0..skip {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    return Err(PlyError::Truncated {
                        expected: layout.count,
                        found: 0,
                    });
                }
            }
            let mut points = Vec::with_capacity(layout.count);
            let mut values = Vec::with_capacity(layout.props);
            while points.len() < layout.count {
                line.clear();
                if reader.read_line(&mut line)? == 0 {
                    break;
                }
                if line.trim().is_empty() {
                    continue;
                }
                values.clear();
                for word in line.split_whitespace() {
                    let v: f64 = word.parse().map_err(|_| PlyError::Body {
                        index: points.len(),
                        reason: format!("cannot parse '{word}'"),
                    })?;
                    values.push(v);
                }
                if values.len() < layout.props {
                    return Err(PlyError::Body {
                        index: points.len(),
                        reason: format!("{} values, expected {}", values.len(), layout.props),
                    });
                }
                points.push(layout.xyz.map(|(_, i, _)| values[i]));
            }
            if points.len() < layout.count {
                return Err(PlyError::Truncated {
                    expected: layout.count,
                    found: points.len(),
                });
            }
            Ok(RawCloud::new(points))
        }
        PlyFormat::BinaryLittleEndian => {
            for e in &header.elements[..vertex_pos] {
                let mut stride = 0;
                for (name, ty) in &e.props {
                    stride += ty
                        .ok_or_else(|| {
                            PlyError::Unsupported(format!(
                                "list property '{name}' before vertex element"
                            ))
                        })?
                        .size();
                }
                io::copy(&mut reader.take((stride * e.count) as u64), &mut io::sink())?;
            }
            let mut points = Vec::with_capacity(layout.count);
            let mut record = vec![0u8; layout.stride];
            for _ in 0..layout.count {
                if let Err(e) = reader.read_exact(&mut record) {
                    if e.kind() == io::ErrorKind::UnexpectedEof {
                        return Err(PlyError::Truncated {
                            expected: layout.count,
                            found: points.len(),
                        });
                    }
                    return Err(e.into());
                }
                points.push(layout.xyz.map(|(off, _, ty)| ty.read_le(&record[off..])));
            }
            Ok(RawCloud::new(points))
        }
    }
}

/// Writes `x y z` as doubles.
pub fn write_raw_ply<W: Write>(cloud: &RawCloud, out: W, format: PlyFormat) -> Result<(), PlyError> {
    let mut out = BufWriter::new(out);
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    write!(
        out,
        "ply\nformat {name} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    )?;
    for p in &cloud.points {
        match format {
            PlyFormat::Ascii => writeln!(out, "{} {} {}", p[0], p[1], p[2])?,
            PlyFormat::BinaryLittleEndian => {
                for v in p {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Writes voxel corners (`origin + step * c`) so that quantizing the file with
/// the same grid reproduces the voxel set.
pub fn write_ply(cloud: &QuantizedCloud, path: impl AsRef<Path>) -> Result<(), PlyError> {
    write_ply_with(cloud, path, PlyFormat::BinaryLittleEndian)
}

pub fn write_ply_with(
    cloud: &QuantizedCloud,
    path: impl AsRef<Path>,
    format: PlyFormat,
) -> Result<(), PlyError> {
    if cloud.is_empty() {
        return Err(PlyError::Empty);
    }
    let file = File::create(path)?;
    write_raw_ply(&cloud.dequantize(), file, format)
}
