//! Minimal Level-5 MAT-file support for real numeric arrays.
//!
//! The reader accepts every numeric class, either byte order, small data
//! elements, and `miCOMPRESSED` (zlib) elements. The writer always emits
//! uncompressed little-endian `mxDOUBLE_CLASS` matrices.

use std::collections::HashSet;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::ZlibDecoder;
use thiserror::Error;

const HEADER_LEN: usize = 128;
const HEADER_TEXT: &str = "MATLAB 5.0 MAT-file, written by leafhsi";

// Data element types.
const MI_INT8: u32 = 1;
const MI_UINT8: u32 = 2;
const MI_INT16: u32 = 3;
const MI_UINT16: u32 = 4;
const MI_INT32: u32 = 5;
const MI_UINT32: u32 = 6;
const MI_SINGLE: u32 = 7;
const MI_DOUBLE: u32 = 9;
const MI_INT64: u32 = 12;
const MI_UINT64: u32 = 13;
const MI_MATRIX: u32 = 14;
const MI_COMPRESSED: u32 = 15;

// Array classes.
const MX_CELL: u8 = 1;
const MX_STRUCT: u8 = 2;
const MX_OBJECT: u8 = 3;
const MX_CHAR: u8 = 4;
const MX_SPARSE: u8 = 5;
const MX_DOUBLE: u8 = 6;
const MX_UINT64: u8 = 15;

const FLAG_COMPLEX: u32 = 0x0800;
const FLAG_LOGICAL: u32 = 0x0200;

#[derive(Debug, Error)]
pub enum MatError {
    #[error("not a Level-5 MAT file: {0}")]
    BadMagic(String),
    #[error("variable `{name}` not found; file contains {available:?}")]
    VariableNotFound {
        name: String,
        available: Vec<String>,
    },
    #[error("variable `{name}` has unsupported class: {class}")]
    UnsupportedClass { name: String, class: String },
    #[error("duplicate variable name `{0}`")]
    DuplicateName(String),
    #[error("invalid variable name `{0}`")]
    InvalidName(String),
    #[error("array `{name}`: dims {dims:?} do not match {len} values")]
    DimsMismatch {
        name: String,
        dims: Vec<usize>,
        len: usize,
    },
    #[error("nothing to write")]
    Empty,
    #[error("corrupt MAT data: {0}")]
    Corrupt(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// A named real array with column-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct MatArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f64>,
}

impl MatArray {
    pub fn new(
        name: impl Into<String>,
        dims: Vec<usize>,
        values: Vec<f64>,
    ) -> Result<Self, MatError> {
        let name = name.into();
        if !is_valid_name(&name) {
            return Err(MatError::InvalidName(name));
        }
        if dims.is_empty() || dims.contains(&0) || dims.iter().product::<usize>() != values.len() {
            return Err(MatError::DimsMismatch {
                name,
                dims,
                len: values.len(),
            });
        }
        Ok(Self { name, dims, values })
    }

    /// A `1 x n` row vector.
    pub fn row_vector(name: impl Into<String>, values: Vec<f64>) -> Result<Self, MatError> {
        let n = values.len();
        Self::new(name, vec![1, n], values)
    }

    /// Value at a multi-index, column-major.
    pub fn get(&self, index: &[usize]) -> f64 {
        assert_eq!(index.len(), self.dims.len());
        let mut offset = 0;
        let mut stride = 1;
        for (i, d) in index.iter().zip(&self.dims) {
            assert!(i < d);
            offset += i * stride;
            stride *= d;
        }
        self.values[offset]
    }
}

/// MATLAB identifiers: a letter, then letters, digits or underscores; at most 63 chars.
pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && name.len() <= 63
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Endian {
    Little,
    Big,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    endian: Endian,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8], endian: Endian) -> Self {
        Self {
            buf,
            pos: 0,
            endian,
        }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MatError> {
        if self.remaining() < n {
            return Err(MatError::Corrupt(format!(
                "need {n} bytes at offset {}, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, MatError> {
        let b: [u8; 4] = self.take(4)?.try_into().unwrap();
        Ok(match self.endian {
            Endian::Little => u32::from_le_bytes(b),
            Endian::Big => u32::from_be_bytes(b),
        })
    }

    /// Read one tagged element, returning `(type, payload)` and skipping padding.
    fn element(&mut self) -> Result<(u32, &'a [u8]), MatError> {
        let first = self.u32()?;
        if first >> 16 != 0 {
            // Small data element: 2-byte size, 2-byte type, 4 bytes of data.
            let ty = first & 0xffff;
            let n = (first >> 16) as usize;
            if n > 4 {
                return Err(MatError::Corrupt(format!("small element of {n} bytes")));
            }
            let data = self.take(4)?;
            return Ok((ty, &data[..n]));
        }
        let n = self.u32()? as usize;
        let data = self.take(n)?;
        if first != MI_COMPRESSED {
            let pad = (8 - n % 8) % 8;
            let pad = pad.min(self.remaining());
            self.take(pad)?;
        }
        Ok((first, data))
    }
}

fn decode_numeric(ty: u32, data: &[u8], endian: Endian) -> Result<Vec<f64>, MatError> {
    macro_rules! conv {
        ($t:ty) => {{
            const W: usize = std::mem::size_of::<$t>();
            if !data.len().is_multiple_of(W) {
                return Err(MatError::Corrupt(format!(
                    "{} bytes is not a multiple of element width {W}",
                    data.len()
                )));
            }
            data.chunks_exact(W)
                .map(|c| {
                    let a: [u8; W] = c.try_into().unwrap();
                    match endian {
                        Endian::Little => <$t>::from_le_bytes(a) as f64,
                        Endian::Big => <$t>::from_be_bytes(a) as f64,
                    }
                })
                .collect()
        }};
    }
    Ok(match ty {
        MI_INT8 => conv!(i8),
        MI_UINT8 => conv!(u8),
        MI_INT16 => conv!(i16),
        MI_UINT16 => conv!(u16),
        MI_INT32 => conv!(i32),
        MI_UINT32 => conv!(u32),
        MI_SINGLE => conv!(f32),
        MI_DOUBLE => conv!(f64),
        MI_INT64 => conv!(i64),
        MI_UINT64 => conv!(u64),
        other => {
            return Err(MatError::Corrupt(format!(
                "unexpected numeric type {other}"
            )))
        }
    })
}

fn class_name(class: u8) -> &'static str {
    match class {
        MX_CELL => "cell",
        MX_STRUCT => "struct",
        MX_OBJECT => "object",
        MX_CHAR => "char",
        MX_SPARSE => "sparse",
        _ => "unknown",
    }
}

/// Outcome of parsing one top-level variable.
enum Variable {
    Numeric(MatArray),
    Unsupported { name: String, class: String },
}

fn parse_matrix(payload: &[u8], endian: Endian) -> Result<Variable, MatError> {
    let mut cur = Cursor::new(payload, endian);
    let (ty, flags) = cur.element()?;
    if ty != MI_UINT32 || flags.len() != 8 {
        return Err(MatError::Corrupt("bad array flags subelement".into()));
    }
    let flag_word = decode_numeric(MI_UINT32, &flags[..4], endian)?[0] as u32;
    let class = (flag_word & 0xff) as u8;

    let (ty, dims_raw) = cur.element()?;
    if ty != MI_INT32 {
        return Err(MatError::Corrupt("bad dimensions subelement".into()));
    }
    let dims: Vec<usize> = decode_numeric(MI_INT32, dims_raw, endian)?
        .into_iter()
        .map(|d| d as usize)
        .collect();

    let (ty, name_raw) = cur.element()?;
    if ty != MI_INT8 && ty != MI_UINT8 {
        return Err(MatError::Corrupt("bad array name subelement".into()));
    }
    let name = String::from_utf8_lossy(name_raw).into_owned();

    let unsupported = if !(MX_DOUBLE..=MX_UINT64).contains(&class) {
        Some(class_name(class).to_string())
    } else if flag_word & FLAG_COMPLEX != 0 {
        Some("complex".to_string())
    } else if flag_word & FLAG_LOGICAL != 0 {
        Some("logical".to_string())
    } else {
        None
    };
    if let Some(class) = unsupported {
        return Ok(Variable::Unsupported { name, class });
    }

    let (ty, real) = cur.element()?;
    let values = decode_numeric(ty, real, endian)?;
    let expected: usize = dims.iter().product();
    if values.len() != expected {
        return Err(MatError::Corrupt(format!(
            "`{name}`: {} values for dims {dims:?}",
            values.len()
        )));
    }
    Ok(Variable::Numeric(MatArray { name, dims, values }))
}

fn parse_header(bytes: &[u8]) -> Result<Endian, MatError> {
    if bytes.len() < HEADER_LEN {
        return Err(MatError::BadMagic(format!(
            "{} bytes, header needs 128",
            bytes.len()
        )));
    }
    if bytes[..4].contains(&0) {
        // v4 files start with a binary type word.
        return Err(MatError::BadMagic("header text missing".into()));
    }
    let endian = match &bytes[126..128] {
        b"IM" => Endian::Little,
        b"MI" => Endian::Big,
        other => {
            return Err(MatError::BadMagic(format!(
                "endian indicator {:?}",
                String::from_utf8_lossy(other)
            )))
        }
    };
    let v = [bytes[124], bytes[125]];
    let version = match endian {
        Endian::Little => u16::from_le_bytes(v),
        Endian::Big => u16::from_be_bytes(v),
    };
    if version != 0x0100 {
        return Err(MatError::BadMagic(format!("version {version:#06x}")));
    }
    Ok(endian)
}

fn parse_variables(bytes: &[u8]) -> Result<Vec<Variable>, MatError> {
    let endian = parse_header(bytes)?;
    let mut cur = Cursor::new(&bytes[HEADER_LEN..], endian);
    let mut vars = Vec::new();
    while cur.remaining() >= 8 {
        let (ty, payload) = cur.element()?;
        match ty {
            MI_MATRIX => vars.push(parse_matrix(payload, endian)?),
            MI_COMPRESSED => {
                let mut inflated = Vec::new();
                ZlibDecoder::new(payload)
                    .read_to_end(&mut inflated)
                    .map_err(|e| MatError::Corrupt(format!("inflate: {e}")))?;
                let mut inner = Cursor::new(&inflated, endian);
                while inner.remaining() >= 8 {
                    let (ty, payload) = inner.element()?;
                    if ty == MI_MATRIX {
                        vars.push(parse_matrix(payload, endian)?);
                    }
                }
            }
            // Anything else at top level (e.g. subsystem data) is skipped.
            _ => {}
        }
    }
    Ok(vars)
}

fn read_file(path: &Path) -> Result<Vec<u8>, MatError> {
    fs::read(path).map_err(|source| MatError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Names of all top-level variables, in file order.
pub fn list_variables(path: &Path) -> Result<Vec<String>, MatError> {
    Ok(parse_variables(&read_file(path)?)?
        .into_iter()
        .map(|v| match v {
            Variable::Numeric(a) => a.name,
            Variable::Unsupported { name, .. } => name,
        })
        .collect())
}

fn select(vars: Vec<Variable>, name: &str, sole_fallback: bool) -> Result<MatArray, MatError> {
    let available: Vec<String> = vars
        .iter()
        .map(|v| match v {
            Variable::Numeric(a) => a.name.clone(),
            Variable::Unsupported { name, .. } => name.clone(),
        })
        .collect();
    let idx = match available.iter().position(|n| n == name) {
        Some(i) => i,
        None if sole_fallback && vars.len() == 1 => 0,
        None => {
            return Err(MatError::VariableNotFound {
                name: name.to_string(),
                available,
            })
        }
    };
    match vars.into_iter().nth(idx).unwrap() {
        Variable::Numeric(a) => Ok(a),
        Variable::Unsupported { name, class } => Err(MatError::UnsupportedClass { name, class }),
    }
}

/// Read the variable called `name`.
pub fn read_mat_array(path: &Path, name: &str) -> Result<MatArray, MatError> {
    select(parse_variables(&read_file(path)?)?, name, false)
}

/// Read `name`, or the only variable in the file when `name` is absent.
pub fn read_mat_array_or_sole(path: &Path, name: &str) -> Result<MatArray, MatError> {
    select(parse_variables(&read_file(path)?)?, name, true)
}

/// Read every numeric variable from an in-memory MAT file.
pub fn parse_mat(bytes: &[u8]) -> Result<Vec<MatArray>, MatError> {
    parse_variables(bytes)?
        .into_iter()
        .map(|v| match v {
            Variable::Numeric(a) => Ok(a),
            Variable::Unsupported { name, class } => {
                Err(MatError::UnsupportedClass { name, class })
            }
        })
        .collect()
}

fn push_tag(out: &mut Vec<u8>, ty: u32, len: usize) {
    out.extend_from_slice(&ty.to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
}

fn pad8(out: &mut Vec<u8>) {
    while !out.len().is_multiple_of(8) {
        out.push(0);
    }
}

fn encode_matrix(a: &MatArray) -> Vec<u8> {
    let mut body = Vec::new();
    // Array flags.
    push_tag(&mut body, MI_UINT32, 8);
    body.extend_from_slice(&(MX_DOUBLE as u32).to_le_bytes());
    body.extend_from_slice(&0u32.to_le_bytes());
    // Dimensions; MAT needs at least two, so vectors become columns.
    let mut dims = a.dims.clone();
    if dims.len() == 1 {
        dims.push(1);
    }
    push_tag(&mut body, MI_INT32, dims.len() * 4);
    for &d in &dims {
        body.extend_from_slice(&(d as i32).to_le_bytes());
    }
    pad8(&mut body);
    // Name.
    push_tag(&mut body, MI_INT8, a.name.len());
    body.extend_from_slice(a.name.as_bytes());
    pad8(&mut body);
    // Real part.
    push_tag(&mut body, MI_DOUBLE, a.values.len() * 8);
    for v in &a.values {
        body.extend_from_slice(&v.to_le_bytes());
    }

    let mut out = Vec::with_capacity(body.len() + 8);
    push_tag(&mut out, MI_MATRIX, body.len());
    out.extend_from_slice(&body);
    out
}

/// Serialize arrays into an uncompressed Level-5 MAT image.
pub fn encode_mat(arrays: &[MatArray]) -> Result<Vec<u8>, MatError> {
    if arrays.is_empty() {
        return Err(MatError::Empty);
    }
    let mut seen = HashSet::new();
    for a in arrays {
        if !is_valid_name(&a.name) {
            return Err(MatError::InvalidName(a.name.clone()));
        }
        if !seen.insert(a.name.as_str()) {
            return Err(MatError::DuplicateName(a.name.clone()));
        }
        if a.dims.is_empty() || a.dims.iter().product::<usize>() != a.values.len() {
            return Err(MatError::DimsMismatch {
                name: a.name.clone(),
                dims: a.dims.clone(),
                len: a.values.len(),
            });
        }
    }
    let mut out = Vec::new();
    let mut text = HEADER_TEXT.as_bytes().to_vec();
    text.resize(116, b' ');
    out.extend_from_slice(&text);
    out.extend_from_slice(&[0u8; 8]);
    out.extend_from_slice(&0x0100u16.to_le_bytes());
    out.extend_from_slice(b"IM");
    for a in arrays {
        out.extend(encode_matrix(a));
    }
    Ok(out)
}

/// Write arrays to `path` as an uncompressed Level-5 MAT file.
pub fn write_mat(path: &Path, arrays: &[MatArray]) -> Result<(), MatError> {
    let bytes = encode_mat(arrays)?;
    fs::write(path, bytes).map_err(|source| MatError::Io {
        path: path.to_path_buf(),
        source,
    })
}
