//! The in-memory hypercube shared by every pipeline stage.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CubeShapeError {
    #[error("cube dimensions must be >= 1, got {lines}x{samples}x{bands}")]
    EmptyDimension {
        lines: usize,
        samples: usize,
        bands: usize,
    },
    #[error("data length {actual} does not match {lines}x{samples}x{bands} = {expected}")]
    DataLength {
        lines: usize,
        samples: usize,
        bands: usize,
        expected: usize,
        actual: usize,
    },
    #[error("wavelength vector has {actual} entries, cube has {bands} bands")]
    WavelengthCount { bands: usize, actual: usize },
    #[error("non-finite value {value} at (line {line}, sample {sample}, band {band})")]
    NonFinite {
        line: usize,
        sample: usize,
        band: usize,
        value: f64,
    },
}

/// A `lines x samples x bands` volume of real values.
///
/// Data is always held band-sequential: band `b` occupies the contiguous
/// slice `[b * lines * samples, (b + 1) * lines * samples)` and within a band
/// values run row-major (line, then sample).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypercube {
    lines: usize,
    samples: usize,
    bands: usize,
    data: Vec<f64>,
    wavelengths: Option<Vec<f64>>,
    source_stem: Option<String>,
}

impl Hypercube {
    /// Build a cube from band-sequential data.
    pub fn from_bsq(
        lines: usize,
        samples: usize,
        bands: usize,
        data: Vec<f64>,
    ) -> Result<Self, CubeShapeError> {
        if lines == 0 || samples == 0 || bands == 0 {
            return Err(CubeShapeError::EmptyDimension {
                lines,
                samples,
                bands,
            });
        }
        let expected = lines * samples * bands;
        if data.len() != expected {
            return Err(CubeShapeError::DataLength {
                lines,
                samples,
                bands,
                expected,
                actual: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let plane = lines * samples;
            return Err(CubeShapeError::NonFinite {
                line: (pos % plane) / samples,
                sample: pos % samples,
                band: pos / plane,
                value: data[pos],
            });
        }
        Ok(Self {
            lines,
            samples,
            bands,
            data,
            wavelengths: None,
            source_stem: None,
        })
    }

    /// Build a cube by evaluating `f(line, sample, band)` at every position.
    pub fn from_fn(
        lines: usize,
        samples: usize,
        bands: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self, CubeShapeError> {
        let mut data = Vec::with_capacity(lines * samples * bands);
        for b in 0..bands {
            for i in 0..lines {
                for j in 0..samples {
                    data.push(f(i, j, b));
                }
            }
        }
        Self::from_bsq(lines, samples, bands, data)
    }

    /// A cube with every element set to `value`.
    pub fn filled(
        lines: usize,
        samples: usize,
        bands: usize,
        value: f64,
    ) -> Result<Self, CubeShapeError> {
        Self::from_bsq(lines, samples, bands, vec![value; lines * samples * bands])
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self, CubeShapeError> {
        self.set_wavelengths(Some(wavelengths))?;
        Ok(self)
    }

    pub fn set_wavelengths(&mut self, wavelengths: Option<Vec<f64>>) -> Result<(), CubeShapeError> {
        if let Some(wl) = &wavelengths {
            if wl.len() != self.bands {
                return Err(CubeShapeError::WavelengthCount {
                    bands: self.bands,
                    actual: wl.len(),
                });
            }
        }
        self.wavelengths = wavelengths;
        Ok(())
    }

    pub fn with_source_stem(mut self, stem: impl Into<String>) -> Self {
        self.source_stem = Some(stem.into());
        self
    }

    pub fn set_source_stem(&mut self, stem: Option<String>) {
        self.source_stem = stem;
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    /// `(lines, samples, bands)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.lines, self.samples, self.bands)
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn source_stem(&self) -> Option<&str> {
        self.source_stem.as_deref()
    }

    /// Raw band-sequential storage.
    pub fn as_bsq(&self) -> &[f64] {
        &self.data
    }

    pub fn into_bsq(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn offset(&self, line: usize, sample: usize, band: usize) -> usize {
        (band * self.lines + line) * self.samples + sample
    }

    /// Value at `(line, sample, band)`. Panics when out of range.
    #[inline]
    pub fn get(&self, line: usize, sample: usize, band: usize) -> f64 {
        assert!(line < self.lines && sample < self.samples && band < self.bands);
        self.data[self.offset(line, sample, band)]
    }

    /// One band as a row-major `lines x samples` slice.
    pub fn band(&self, band: usize) -> &[f64] {
        let plane = self.lines * self.samples;
        &self.data[band * plane..(band + 1) * plane]
    }

    /// Spectrum of one pixel (strided read across bands).
    pub fn spectrum(&self, line: usize, sample: usize) -> Vec<f64> {
        assert!(line < self.lines && sample < self.samples);
        let plane = self.lines * self.samples;
        let base = line * self.samples + sample;
        (0..self.bands)
            .map(|b| self.data[b * plane + base])
            .collect()
    }

    /// Copy of the sub-volume covering lines `[line0, line0 + n_lines)` and
    /// samples `[sample0, sample0 + n_samples)`, all bands.
    pub fn crop(&self, line0: usize, sample0: usize, n_lines: usize, n_samples: usize) -> Self {
        assert!(n_lines >= 1 && n_samples >= 1);
        assert!(line0 + n_lines <= self.lines && sample0 + n_samples <= self.samples);
        let mut data = Vec::with_capacity(n_lines * n_samples * self.bands);
        for b in 0..self.bands {
            let band = self.band(b);
            for i in line0..line0 + n_lines {
                let row = i * self.samples;
                data.extend_from_slice(&band[row + sample0..row + sample0 + n_samples]);
            }
        }
        Self {
            lines: n_lines,
            samples: n_samples,
            bands: self.bands,
            data,
            wavelengths: self.wavelengths.clone(),
            source_stem: self.source_stem.clone(),
        }
    }

    /// Apply `f` to every value, keeping shape and metadata.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self, CubeShapeError> {
        let mut out = Self::from_bsq(
            self.lines,
            self.samples,
            self.bands,
            self.data.iter().map(|&v| f(v)).collect(),
        )?;
        out.wavelengths = self.wavelengths.clone();
        out.source_stem = self.source_stem.clone();
        Ok(out)
    }

    /// Same dims, wavelengths and stem, new data. Used by kernels that have
    /// already guaranteed finiteness.
    pub(crate) fn with_data_like(
        &self,
        lines: usize,
        samples: usize,
        bands: usize,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), lines * samples * bands);
        Self {
            lines,
            samples,
            bands,
            data,
            wavelengths: None,
            source_stem: self.source_stem.clone(),
        }
    }

    pub(crate) fn set_wavelengths_unchecked(&mut self, wavelengths: Option<Vec<f64>>) {
        debug_assert!(wavelengths.as_ref().is_none_or(|w| w.len() == self.bands));
        self.wavelengths = wavelengths;
    }
}
