//! NPY v1.0 reader and writer.
//!
//! Only little-endian, C-order `float32` / `float64` arrays are accepted.
//! Writing always produces `<f4` with the header padded to a 64-byte
//! boundary, the same layout numpy emits.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;
const FMT: &str = "npy";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F4 => 4,
            Dtype::F8 => 8,
        }
    }
}

pub fn read_npy(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < PREAMBLE_LEN || &bytes[..6] != MAGIC {
        return Err(Error::format(FMT, "magic", "missing \\x93NUMPY prefix"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::format(
            FMT,
            "version",
            format!("unsupported version {}.{}, only 1.0", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(Error::format(FMT, "header", "truncated header"));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|_| Error::format(FMT, "header", "header is not ASCII"))?;
    let (dtype, shape) = parse_header(header)?;

    let count: usize = shape.iter().product();
    let payload = &bytes[data_start..];
    let expected = count * dtype.size();
    if payload.len() != expected {
        return Err(Error::format(
            FMT,
            "data",
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let data: Vec<f32> = match dtype {
        Dtype::F4 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect(),
        Dtype::F8 => payload
            .chunks_exact(8)
            .map(|c| {
                let mut b = [0u8; 8];
                b.copy_from_slice(c);
                f64::from_le_bytes(b) as f32
            })
            .collect(),
    };
    Tensor::new(shape, data).map_err(|e| Error::format(FMT, "shape", e.to_string()))
}

pub fn write_npy(tensor: &Tensor<f32>) -> Vec<u8> {
    let shape = match tensor.shape() {
        [d] => format!("({d},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut dict = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    dict.extend(std::iter::repeat_n(' ', total - unpadded));
    dict.push('\n');

    let mut out = Vec::with_capacity(total + tensor.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(dict.len() as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    for v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Header value grammar: the subset of Python literals numpy writes.
#[derive(Debug)]
enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

fn parse_header(header: &str) -> Result<(Dtype, Vec<usize>)> {
    let mut p = Parser {
        s: header.trim_end().as_bytes(),
        pos: 0,
    };
    let entries = p.dict()?;

    let mut descr = None;
    let mut fortran = None;
    let mut shape = None;
    for (key, value) in entries {
        match (key.as_str(), value) {
            ("descr", Value::Str(s)) => descr = Some(s),
            ("fortran_order", Value::Bool(b)) => fortran = Some(b),
            ("shape", Value::Tuple(t)) => shape = Some(t),
            (k @ ("descr" | "fortran_order" | "shape"), v) => {
                return Err(Error::format(FMT, k, format!("unexpected value {v:?}")))
            }
            (k, _) => return Err(Error::format(FMT, k, "unknown header key")),
        }
    }
    let descr = descr.ok_or_else(|| Error::format(FMT, "descr", "missing"))?;
    let dtype = match descr.as_str() {
        "<f4" => Dtype::F4,
        "<f8" => Dtype::F8,
        other => {
            return Err(Error::format(
                FMT,
                "descr",
                format!("unsupported dtype '{other}', expected '<f4' or '<f8'"),
            ))
        }
    };
    match fortran {
        Some(false) => {}
        Some(true) => {
            return Err(Error::format(
                FMT,
                "fortran_order",
                "Fortran-order arrays are not supported",
            ))
        }
        None => return Err(Error::format(FMT, "fortran_order", "missing")),
    }
    let shape = shape.ok_or_else(|| Error::format(FMT, "shape", "missing"))?;
    if shape.is_empty() || shape.len() > crate::tensor::MAX_RANK {
        return Err(Error::format(
            FMT,
            "shape",
            format!("rank {} outside 1..=4", shape.len()),
        ));
    }
    Ok((dtype, shape))
}

struct Parser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, message: &str) -> Error {
        Error::format(FMT, "header", format!("{message} at byte {}", self.pos))
    }

    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", c as char)))
        }
    }

    fn dict(&mut self) -> Result<Vec<(String, Value)>> {
        self.expect(b'{')?;
        let mut entries = Vec::new();
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            let value = self.value()?;
            entries.push((key, value));
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        if self.peek().is_some() {
            return Err(self.err("trailing characters"));
        }
        Ok(entries)
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return Err(self.err("unterminated string"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn value(&mut self) -> Result<Value> {
        match self.peek() {
            Some(b'\'' | b'"') => Ok(Value::Str(self.string()?)),
            Some(b'(') => self.tuple(),
            Some(_) => {
                let rest = &self.s[self.pos..];
                if rest.starts_with(b"True") {
                    self.pos += 4;
                    Ok(Value::Bool(true))
                } else if rest.starts_with(b"False") {
                    self.pos += 5;
                    Ok(Value::Bool(false))
                } else {
                    Err(self.err("unsupported value"))
                }
            }
            None => Err(self.err("unexpected end")),
        }
    }

    fn tuple(&mut self) -> Result<Value> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            match self.peek() {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(Value::Tuple(dims));
                }
                Some(c) if c.is_ascii_digit() => {
                    let start = self.pos;
                    while self.pos < self.s.len() && self.s[self.pos].is_ascii_digit() {
                        self.pos += 1;
                    }
                    let text = std::str::from_utf8(&self.s[start..self.pos]).unwrap_or("");
                    let dim = text
                        .parse()
                        .map_err(|_| Error::format(FMT, "shape", format!("bad dimension {text}")))?;
                    dims.push(dim);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(self.err("expected ',' or ')'")),
                    }
                }
                _ => return Err(Error::format(FMT, "shape", "expected dimension")),
            }
        }
    }
}
