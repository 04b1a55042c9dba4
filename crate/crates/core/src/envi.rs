//! ENVI `.hdr` / `.img` reading and writing.
//!
//! Headers are line-oriented `key = value` text starting with the literal
//! `ENVI`. Brace-delimited values may span several lines. Keys that are not
//! interpreted here are kept verbatim, in order, and written back out.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::hypercube::{CubeShapeError, Hypercube};

#[derive(Debug, Error)]
pub enum EnviError {
    #[error("not an ENVI header: first non-blank line must be `ENVI`")]
    NotEnviHeader,
    #[error("header is missing required key `{0}`")]
    MissingRequiredKey(&'static str),
    #[error("malformed value for `{key}`: {reason} (got `{value}`)")]
    MalformedValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("unsupported ENVI data type code {0}")]
    UnsupportedDataType(i64),
    #[error("{}: binary is {actual} bytes, header implies {expected}", path.display())]
    FileSizeMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("no binary found next to {} (tried .img and extensionless)", header.display())]
    MissingBinary { header: PathBuf },
    #[error("{}: non-finite value {value} at byte offset {offset}", path.display())]
    NonFinite {
        path: PathBuf,
        offset: u64,
        value: f64,
    },
    #[error("value {value} cannot be stored as {data_type} without clipping")]
    UnrepresentableValue { value: f64, data_type: DataType },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Shape(#[from] CubeShapeError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnviError + '_ {
    move |source| EnviError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Interleave {
    Bsq,
    Bil,
    Bip,
}

impl Interleave {
    pub const ALL: [Interleave; 3] = [Interleave::Bsq, Interleave::Bil, Interleave::Bip];

    /// File offset (in elements) of `(line, sample, band)`.
    #[inline]
    fn index(self, dims: (usize, usize, usize), line: usize, sample: usize, band: usize) -> usize {
        let (lines, samples, bands) = dims;
        match self {
            Interleave::Bsq => (band * lines + line) * samples + sample,
            Interleave::Bil => (line * bands + band) * samples + sample,
            Interleave::Bip => (line * samples + sample) * bands + band,
        }
    }
}

impl fmt::Display for Interleave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Interleave::Bsq => "bsq",
            Interleave::Bil => "bil",
            Interleave::Bip => "bip",
        })
    }
}

impl FromStr for Interleave {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bsq" => Ok(Interleave::Bsq),
            "bil" => Ok(Interleave::Bil),
            "bip" => Ok(Interleave::Bip),
            other => Err(format!("unknown interleave `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ByteOrder {
    #[default]
    Little,
    Big,
}

impl ByteOrder {
    pub fn code(self) -> u8 {
        match self {
            ByteOrder::Little => 0,
            ByteOrder::Big => 1,
        }
    }
}

/// Supported ENVI numeric type codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataType {
    U8,
    I16,
    I32,
    F32,
    F64,
    U16,
    U32,
}

impl DataType {
    pub const ALL: [DataType; 7] = [
        DataType::U8,
        DataType::I16,
        DataType::I32,
        DataType::F32,
        DataType::F64,
        DataType::U16,
        DataType::U32,
    ];

    pub fn code(self) -> u8 {
        match self {
            DataType::U8 => 1,
            DataType::I16 => 2,
            DataType::I32 => 3,
            DataType::F32 => 4,
            DataType::F64 => 5,
            DataType::U16 => 12,
            DataType::U32 => 13,
        }
    }

    pub fn from_code(code: i64) -> Result<Self, EnviError> {
        Ok(match code {
            1 => DataType::U8,
            2 => DataType::I16,
            3 => DataType::I32,
            4 => DataType::F32,
            5 => DataType::F64,
            12 => DataType::U16,
            13 => DataType::U32,
            other => return Err(EnviError::UnsupportedDataType(other)),
        })
    }

    pub fn size(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::I32 | DataType::U32 | DataType::F32 => 4,
            DataType::F64 => 8,
        }
    }

    pub fn is_float(self) -> bool {
        matches!(self, DataType::F32 | DataType::F64)
    }

    /// Inclusive value range for integer types.
    fn int_range(self) -> Option<(f64, f64)> {
        match self {
            DataType::U8 => Some((0.0, u8::MAX as f64)),
            DataType::I16 => Some((i16::MIN as f64, i16::MAX as f64)),
            DataType::I32 => Some((i32::MIN as f64, i32::MAX as f64)),
            DataType::U16 => Some((0.0, u16::MAX as f64)),
            DataType::U32 => Some((0.0, u32::MAX as f64)),
            DataType::F32 | DataType::F64 => None,
        }
    }

    fn decode(self, bytes: &[u8], order: ByteOrder) -> f64 {
        macro_rules! num {
            ($t:ty) => {{
                let arr = bytes.try_into().expect("element width");
                match order {
                    ByteOrder::Little => <$t>::from_le_bytes(arr) as f64,
                    ByteOrder::Big => <$t>::from_be_bytes(arr) as f64,
                }
            }};
        }
        match self {
            DataType::U8 => bytes[0] as f64,
            DataType::I16 => num!(i16),
            DataType::I32 => num!(i32),
            DataType::F32 => num!(f32),
            DataType::F64 => num!(f64),
            DataType::U16 => num!(u16),
            DataType::U32 => num!(u32),
        }
    }

    /// Append the encoding of `v`; `v` must already be representable.
    fn encode(self, v: f64, order: ByteOrder, out: &mut Vec<u8>) {
        macro_rules! num {
            ($t:ty) => {{
                let x = v as $t;
                match order {
                    ByteOrder::Little => out.extend_from_slice(&x.to_le_bytes()),
                    ByteOrder::Big => out.extend_from_slice(&x.to_be_bytes()),
                }
            }};
        }
        match self {
            DataType::U8 => out.push(v as u8),
            DataType::I16 => num!(i16),
            DataType::I32 => num!(i32),
            DataType::F32 => num!(f32),
            DataType::F64 => num!(f64),
            DataType::U16 => num!(u16),
            DataType::U32 => num!(u32),
        }
    }

    /// Check (or, with `allow_clip`, coerce) a value for storage.
    fn narrow(self, v: f64, allow_clip: bool) -> Result<f64, EnviError> {
        let err = || EnviError::UnrepresentableValue {
            value: v,
            data_type: self,
        };
        match self.int_range() {
            Some((lo, hi)) => {
                if v.fract() == 0.0 && v >= lo && v <= hi {
                    Ok(v)
                } else if allow_clip {
                    Ok(v.round().clamp(lo, hi))
                } else {
                    Err(err())
                }
            }
            None if self == DataType::F32 => {
                let max = f32::MAX as f64;
                if v.abs() <= max {
                    Ok(v)
                } else if allow_clip {
                    Ok(v.clamp(-max, max))
                } else {
                    Err(err())
                }
            }
            None => Ok(v),
        }
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataType::U8 => "uint8",
            DataType::I16 => "int16",
            DataType::I32 => "int32",
            DataType::F32 => "float32",
            DataType::F64 => "float64",
            DataType::U16 => "uint16",
            DataType::U32 => "uint32",
        })
    }
}

/// Parsed contents of an ENVI `.hdr` file.
#[derive(Clone, Debug, PartialEq)]
pub struct EnviHeader {
    pub samples: usize,
    pub lines: usize,
    pub bands: usize,
    pub interleave: Interleave,
    pub data_type: DataType,
    pub byte_order: ByteOrder,
    pub header_offset: u64,
    pub wavelengths: Option<Vec<f64>>,
    pub description: Option<String>,
    /// Uninterpreted `key = value` pairs in file order. Values are raw text,
    /// braces included.
    pub extra_fields: Vec<(String, String)>,
}

impl EnviHeader {
    pub fn new(
        lines: usize,
        samples: usize,
        bands: usize,
        interleave: Interleave,
        data_type: DataType,
    ) -> Self {
        Self {
            samples,
            lines,
            bands,
            interleave,
            data_type,
            byte_order: ByteOrder::Little,
            header_offset: 0,
            wavelengths: None,
            description: None,
            extra_fields: Vec::new(),
        }
    }

    /// Number of bytes of pixel data following the header offset.
    pub fn data_bytes(&self) -> u64 {
        (self.samples * self.lines * self.bands * self.data_type.size()) as u64
    }

    /// Render as header text. `parse_header(h.to_text())` reproduces `h`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("ENVI\n");
        if let Some(d) = &self.description {
            s.push_str(&format!("description = {{{d}}}\n"));
        }
        s.push_str(&format!("samples = {}\n", self.samples));
        s.push_str(&format!("lines = {}\n", self.lines));
        s.push_str(&format!("bands = {}\n", self.bands));
        s.push_str(&format!("header offset = {}\n", self.header_offset));
        s.push_str(&format!("data type = {}\n", self.data_type.code()));
        s.push_str(&format!("interleave = {}\n", self.interleave));
        s.push_str(&format!("byte order = {}\n", self.byte_order.code()));
        for (k, v) in &self.extra_fields {
            s.push_str(&format!("{k} = {v}\n"));
        }
        if let Some(wl) = &self.wavelengths {
            let list: Vec<String> = wl.iter().map(|w| format!("{w:?}")).collect();
            s.push_str(&format!("wavelength = {{{}}}\n", list.join(", ")));
        }
        s
    }
}

fn normalize_key(key: &str) -> String {
    key.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_ascii_lowercase()
}

fn strip_braces(value: &str) -> &str {
    let v = value.trim();
    let v = v.strip_prefix('{').unwrap_or(v);
    let v = v.strip_suffix('}').unwrap_or(v);
    v.trim()
}

fn malformed(key: &str, value: &str, reason: impl Into<String>) -> EnviError {
    EnviError::MalformedValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.into(),
    }
}

fn parse_int<T: FromStr>(key: &str, value: &str) -> Result<T, EnviError> {
    value
        .trim()
        .parse()
        .map_err(|_| malformed(key, value, "expected an integer"))
}

fn parse_positive(key: &str, value: &str) -> Result<usize, EnviError> {
    let n: usize = parse_int(key, value)?;
    if n == 0 {
        return Err(malformed(key, value, "must be >= 1"));
    }
    Ok(n)
}

/// Parse ENVI header text.
pub fn parse_header(text: &str) -> Result<EnviHeader, EnviError> {
    let mut lines = text.lines();
    match lines.by_ref().find(|l| !l.trim().is_empty()) {
        Some(first) if first.trim() == "ENVI" => {}
        _ => return Err(EnviError::NotEnviHeader),
    }

    // Gather (key, value) pairs, folding brace blocks that span lines.
    let mut entries: Vec<(String, String)> = Vec::new();
    while let Some(line) = lines.next() {
        let Some((key, value)) = line.split_once('=') else {
            continue;
        };
        let mut value = value.trim().to_string();
        if value.starts_with('{') && !value.contains('}') {
            for cont in lines.by_ref() {
                value.push('\n');
                value.push_str(cont.trim_end());
                if cont.contains('}') {
                    break;
                }
            }
        }
        entries.push((key.trim().to_string(), value));
    }

    let mut samples = None;
    let mut n_lines = None;
    let mut bands = None;
    let mut data_type = None;
    let mut interleave = None;
    let mut byte_order = ByteOrder::Little;
    let mut header_offset = 0u64;
    let mut wavelength_raw: Option<String> = None;
    let mut description = None;
    let mut extra_fields = Vec::new();

    for (key, value) in entries {
        match normalize_key(&key).as_str() {
            "samples" => samples = Some(parse_positive("samples", &value)?),
            "lines" => n_lines = Some(parse_positive("lines", &value)?),
            "bands" => bands = Some(parse_positive("bands", &value)?),
            "data type" => {
                let code: i64 = parse_int("data type", &value)?;
                data_type = Some(DataType::from_code(code)?);
            }
            "interleave" => {
                interleave = Some(
                    value
                        .parse::<Interleave>()
                        .map_err(|e| malformed("interleave", &value, e))?,
                )
            }
            "byte order" => {
                byte_order = match parse_int::<u8>("byte order", &value)? {
                    0 => ByteOrder::Little,
                    1 => ByteOrder::Big,
                    _ => return Err(malformed("byte order", &value, "expected 0 or 1")),
                }
            }
            "header offset" => header_offset = parse_int("header offset", &value)?,
            "wavelength" => wavelength_raw = Some(value),
            "description" => description = Some(strip_braces(&value).to_string()),
            _ => extra_fields.push((key, value)),
        }
    }

    let samples = samples.ok_or(EnviError::MissingRequiredKey("samples"))?;
    let lines = n_lines.ok_or(EnviError::MissingRequiredKey("lines"))?;
    let bands = bands.ok_or(EnviError::MissingRequiredKey("bands"))?;
    let data_type = data_type.ok_or(EnviError::MissingRequiredKey("data type"))?;
    let interleave = interleave.ok_or(EnviError::MissingRequiredKey("interleave"))?;

    let wavelengths = match wavelength_raw {
        None => None,
        Some(raw) => {
            let mut wl = Vec::with_capacity(bands);
            for tok in strip_braces(&raw).split(',') {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                let w: f64 = tok
                    .parse()
                    .map_err(|_| malformed("wavelength", tok, "expected a number"))?;
                if !w.is_finite() {
                    return Err(malformed("wavelength", tok, "must be finite"));
                }
                wl.push(w);
            }
            if wl.len() != bands {
                return Err(malformed(
                    "wavelength",
                    &raw,
                    format!("{} entries for {bands} bands", wl.len()),
                ));
            }
            Some(wl)
        }
    };

    Ok(EnviHeader {
        samples,
        lines,
        bands,
        interleave,
        data_type,
        byte_order,
        header_offset,
        wavelengths,
        description,
        extra_fields,
    })
}

/// Split a user-supplied path into its base (without `.hdr`).
fn base_of(path: &Path) -> PathBuf {
    match path.extension() {
        Some(ext) if ext.eq_ignore_ascii_case("hdr") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Path of the `.hdr` belonging to `path` (which may be a base or a header).
pub fn header_path(path: &Path) -> PathBuf {
    with_suffix(&base_of(path), ".hdr")
}

/// Locate the binary for a header: `<base>.img`, then `<base>`.
pub fn companion_binary(header: &Path) -> Option<PathBuf> {
    let base = base_of(header);
    let img = with_suffix(&base, ".img");
    if img.is_file() {
        return Some(img);
    }
    if base.is_file() && base != header {
        return Some(base);
    }
    None
}

/// Read the header file and its binary.
pub fn read_envi(path: &Path) -> Result<(EnviHeader, Hypercube), EnviError> {
    let hdr_path = header_path(path);
    let text = fs::read_to_string(&hdr_path).map_err(io_err(&hdr_path))?;
    let header = parse_header(&text)?;
    let bin = companion_binary(&hdr_path).ok_or_else(|| EnviError::MissingBinary {
        header: hdr_path.clone(),
    })?;
    let bytes = fs::read(&bin).map_err(io_err(&bin))?;
    let cube = decode_cube(&header, &bytes, &bin)?;
    let stem = base_of(&hdr_path)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned());
    let mut cube = cube;
    cube.set_source_stem(stem);
    Ok((header, cube))
}

/// Read an ENVI cube given its header path (or base path).
pub fn read_cube(path: &Path) -> Result<Hypercube, EnviError> {
    read_envi(path).map(|(_, cube)| cube)
}

/// Decode a binary image body according to `header`.
pub fn decode_cube(header: &EnviHeader, bytes: &[u8], path: &Path) -> Result<Hypercube, EnviError> {
    let expected = header.header_offset + header.data_bytes();
    if bytes.len() as u64 != expected {
        return Err(EnviError::FileSizeMismatch {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let dims = (header.lines, header.samples, header.bands);
    let width = header.data_type.size();
    let body = &bytes[header.header_offset as usize..];
    let mut data = vec![0.0; header.lines * header.samples * header.bands];
    let mut dst = 0;
    for b in 0..header.bands {
        for i in 0..header.lines {
            for j in 0..header.samples {
                let at = header.interleave.index(dims, i, j, b) * width;
                let v = header
                    .data_type
                    .decode(&body[at..at + width], header.byte_order);
                if !v.is_finite() {
                    return Err(EnviError::NonFinite {
                        path: path.to_path_buf(),
                        offset: header.header_offset + at as u64,
                        value: v,
                    });
                }
                data[dst] = v;
                dst += 1;
            }
        }
    }
    let mut cube = Hypercube::from_bsq(header.lines, header.samples, header.bands, data)?;
    if let Some(wl) = &header.wavelengths {
        cube.set_wavelengths(Some(wl.clone()))?;
    }
    Ok(cube)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WriteOptions {
    pub interleave: Interleave,
    pub data_type: DataType,
    pub byte_order: ByteOrder,
    /// Round and saturate values that do not fit `data_type` instead of failing.
    pub allow_clip: bool,
}

impl WriteOptions {
    pub fn new(interleave: Interleave, data_type: DataType) -> Self {
        Self {
            interleave,
            data_type,
            byte_order: ByteOrder::Little,
            allow_clip: false,
        }
    }

    pub fn byte_order(mut self, order: ByteOrder) -> Self {
        self.byte_order = order;
        self
    }

    pub fn allow_clip(mut self, allow: bool) -> Self {
        self.allow_clip = allow;
        self
    }
}

/// Encode a cube body in the requested layout.
pub fn encode_cube(cube: &Hypercube, opts: &WriteOptions) -> Result<Vec<u8>, EnviError> {
    let dims = cube.dims();
    let (lines, samples, bands) = dims;
    let mut file_order = vec![0.0; lines * samples * bands];
    for b in 0..bands {
        let band = cube.band(b);
        for i in 0..lines {
            for j in 0..samples {
                let v = opts
                    .data_type
                    .narrow(band[i * samples + j], opts.allow_clip)?;
                file_order[opts.interleave.index(dims, i, j, b)] = v;
            }
        }
    }
    let mut out = Vec::with_capacity(file_order.len() * opts.data_type.size());
    for v in file_order {
        opts.data_type.encode(v, opts.byte_order, &mut out);
    }
    Ok(out)
}

/// Header describing `cube` as it would be written with `opts`.
pub fn header_for(cube: &Hypercube, opts: &WriteOptions) -> EnviHeader {
    let (lines, samples, bands) = cube.dims();
    let mut h = EnviHeader::new(lines, samples, bands, opts.interleave, opts.data_type);
    h.byte_order = opts.byte_order;
    h.wavelengths = cube.wavelengths().map(<[f64]>::to_vec);
    h.extra_fields
        .push(("file type".to_string(), "ENVI Standard".to_string()));
    if cube.wavelengths().is_some() {
        h.extra_fields
            .push(("wavelength units".to_string(), "Nanometers".to_string()));
    }
    h
}

/// Write `<base>.hdr` and `<base>.img`, returning both paths.
pub fn write_cube_with(
    cube: &Hypercube,
    base: &Path,
    opts: &WriteOptions,
) -> Result<(PathBuf, PathBuf), EnviError> {
    let body = encode_cube(cube, opts)?;
    let base = base_of(base);
    let hdr = with_suffix(&base, ".hdr");
    let img = with_suffix(&base, ".img");
    fs::write(&hdr, header_for(cube, opts).to_text()).map_err(io_err(&hdr))?;
    fs::write(&img, body).map_err(io_err(&img))?;
    Ok((hdr, img))
}

/// Write a little-endian cube without clipping.
pub fn write_cube(
    cube: &Hypercube,
    base: &Path,
    interleave: Interleave,
    data_type: DataType,
) -> Result<(PathBuf, PathBuf), EnviError> {
    write_cube_with(cube, base, &WriteOptions::new(interleave, data_type))
}

/// Headers in `folder` that have a companion binary, in lexicographic order.
#[derive(Debug, Default)]
pub struct FolderScan {
    pub headers: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn scan_folder(folder: &Path) -> Result<FolderScan, EnviError> {
    let mut hdrs: Vec<PathBuf> = fs::read_dir(folder)
        .map_err(io_err(folder))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("hdr")))
        .collect();
    hdrs.sort();
    let mut scan = FolderScan::default();
    for h in hdrs {
        if companion_binary(&h).is_some() {
            scan.headers.push(h);
        } else {
            scan.warnings
                .push(format!("{}: no companion binary, skipped", h.display()));
        }
    }
    Ok(scan)
}

/// File name of a header without its `.hdr` extension.
pub fn stem_of(header: &Path) -> String {
    base_of(header)
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
