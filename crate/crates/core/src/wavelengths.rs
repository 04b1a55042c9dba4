//! Wavelength vectors from `.mat` or one-column `.csv` files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::matio::{self, MatError};

/// Variable name looked up in wavelength MAT files.
pub const WAVELENGTH_VAR: &str = "wavelength";

#[derive(Debug, Error)]
pub enum WavelengthError {
    #[error("{}: line {line}: cannot parse `{text}` as a number", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        text: String,
    },
    #[error("{}: wavelengths must be strictly increasing (index {index}: {prev} then {next})", path.display())]
    NotMonotonic {
        path: PathBuf,
        index: usize,
        prev: f64,
        next: f64,
    },
    #[error("{}: non-finite wavelength at index {index}", path.display())]
    NonFinite { path: PathBuf, index: usize },
    #[error("{}: no wavelengths found", path.display())]
    Empty { path: PathBuf },
    #[error("{}: unsupported wavelength file extension (expected .mat or .csv)", path.display())]
    UnsupportedExtension { path: PathBuf },
    #[error(transparent)]
    Mat(#[from] MatError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parse one-column CSV text. A non-numeric first line is treated as a header.
pub fn parse_wavelength_csv(text: &str, path: &Path) -> Result<Vec<f64>, WavelengthError> {
    let mut out = Vec::new();
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let field = line.split(',').next().unwrap_or("").trim();
        if field.is_empty() {
            continue;
        }
        match field.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if first => {}
            Err(_) => {
                return Err(WavelengthError::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    text: field.to_string(),
                })
            }
        }
        first = false;
    }
    Ok(out)
}

fn validate(values: Vec<f64>, path: &Path) -> Result<Vec<f64>, WavelengthError> {
    if values.is_empty() {
        return Err(WavelengthError::Empty {
            path: path.to_path_buf(),
        });
    }
    if let Some(index) = values.iter().position(|v| !v.is_finite()) {
        return Err(WavelengthError::NonFinite {
            path: path.to_path_buf(),
            index,
        });
    }
    if let Some(i) = values.windows(2).position(|w| w[1] <= w[0]) {
        return Err(WavelengthError::NotMonotonic {
            path: path.to_path_buf(),
            index: i + 1,
            prev: values[i],
            next: values[i + 1],
        });
    }
    Ok(values)
}

/// Load a strictly increasing wavelength vector (nm).
///
/// `.mat` files are searched for a `wavelength` variable, falling back to the
/// only variable present. `.csv` files hold one value per line.
pub fn load_wavelengths(path: &Path) -> Result<Vec<f64>, WavelengthError> {
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().to_ascii_lowercase());
    let values = match ext.as_deref() {
        Some("mat") => matio::read_mat_array_or_sole(path, WAVELENGTH_VAR)?.values,
        Some("csv") => {
            let text = fs::read_to_string(path).map_err(|source| WavelengthError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            parse_wavelength_csv(&text, path)?
        }
        _ => {
            return Err(WavelengthError::UnsupportedExtension {
                path: path.to_path_buf(),
            })
        }
    };
    validate(values, path)
}
