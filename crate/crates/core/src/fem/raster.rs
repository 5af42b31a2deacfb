use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cellwise constant field, cell `(i, j)` stored at `j * nx + i` (bottom row first).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldRaster {
    nx: usize,
    ny: usize,
    values: Vec<f64>,
}

impl FieldRaster {
    pub fn from_values(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(Error::RasterSizeMismatch { expected: nx * ny, got: values.len() });
        }
        Ok(Self { nx, ny, values })
    }

    pub fn constant(nx: usize, ny: usize, value: f64) -> Self {
        Self { nx, ny, values: vec![value; nx * ny] }
    }

    /// Parses `ny` lines of `nx` comma separated values, top row first.
    pub fn from_csv_str(text: &str, nx: usize, ny: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::InvalidArgument(format!("raster value {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        let got: usize = rows.iter().map(Vec::len).sum();
        if rows.len() != ny || rows.iter().any(|r| r.len() != nx) {
            return Err(Error::RasterSizeMismatch { expected: nx * ny, got });
        }
        let mut values = vec![0.0; nx * ny];
        for (r, row) in rows.iter().enumerate() {
            let j = ny - 1 - r;
            values[j * nx..(j + 1) * nx].copy_from_slice(row);
        }
        Self::from_values(nx, ny, values)
    }

    pub fn from_csv_file(path: &Path, nx: usize, ny: usize) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?, nx, ny)
    }

    /// Layered random field: one log-uniform level per row plus a mild per-cell jitter.
    pub fn synthetic_layered(nx: usize, ny: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<f64> = (0..ny).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let mut values = Vec::with_capacity(nx * ny);
        for layer in &layers {
            for _ in 0..nx {
                let jitter: f64 = rng.gen_range(-0.25..0.25);
                values.push(10f64.powf((layer + jitter).clamp(-3.0, 0.0)));
            }
        }
        Self { nx, ny, values }
    }

    /// Affine rescaling of `[min, max]` onto `[lo, hi]`; a constant field maps to `hi`.
    pub fn rescaled(&self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && lo < hi) {
            return Err(Error::InvalidArgument(format!("rescale bounds ({lo}, {hi}) must satisfy 0 < lo < hi")));
        }
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let values = if max > min {
            self.values.iter().map(|v| lo + (hi - lo) * (v - min) / (max - min)).collect()
        } else {
            vec![hi; self.values.len()]
        };
        Ok(Self { nx: self.nx, ny: self.ny, values })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }
}
