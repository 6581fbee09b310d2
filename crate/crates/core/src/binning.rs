//! Density-driven quantization of distances and angles.
//!
//! A lookup table is built by smoothing the training values with a Gaussian
//! KDE and cutting the density at its local minima, so that values clustered
//! around the same local mode share a bin.

use std::f64::consts::PI;

use thiserror::Error;

/// Number of grid points the density is evaluated on.
pub const GRID_POINTS: usize = 1024;
pub const MAX_DISTANCE_BINS: usize = 255;
/// Angle bins feed a 7-bit field in the descriptor.
pub const MAX_ANGLE_BINS: usize = 127;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BinningError {
    #[error("degenerate samples: need at least two distinct finite values")]
    DegenerateSamples,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("bin boundaries must be finite and strictly ascending")]
    UnsortedBoundaries,
    #[error("{kind} table would have {bins} bins, limit is {limit}")]
    TooManyBins { kind: ValueKind, bins: usize, limit: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ValueKind {
    Distance,
    Angle,
}

impl ValueKind {
    pub fn max_bins(self) -> usize {
        match self {
            ValueKind::Distance => MAX_DISTANCE_BINS,
            ValueKind::Angle => MAX_ANGLE_BINS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ValueKind::Distance => "distance",
            ValueKind::Angle => "angle",
        }
    }
}

impl std::fmt::Display for ValueKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Silverman's rule of thumb, `1.06 σ̂ n^(-1/5)`, with the unbiased sample
/// standard deviation.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, BinningError> {
    let n = samples.len();
    if n < 2 || samples.iter().any(|v| !v.is_finite()) {
        return Err(BinningError::DegenerateSamples);
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sigma = var.sqrt();
    if sigma.is_nan() || sigma <= 0.0 {
        return Err(BinningError::DegenerateSamples);
    }
    Ok(1.06 * sigma * (n as f64).powf(-0.2))
}

/// Gaussian kernel density estimate over a fixed sample.
#[derive(Debug, Clone)]
pub struct KdeModel {
    samples: Vec<f64>,
    bandwidth: f64,
}

impl KdeModel {
    pub fn new(samples: Vec<f64>, bandwidth: f64) -> Result<Self, BinningError> {
        if samples.is_empty() || samples.iter().any(|v| !v.is_finite()) {
            return Err(BinningError::DegenerateSamples);
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(BinningError::InvalidBandwidth(bandwidth));
        }
        Ok(Self { samples, bandwidth })
    }

    /// Bandwidth chosen by [`silverman_bandwidth`].
    pub fn with_silverman(samples: Vec<f64>) -> Result<Self, BinningError> {
        let h = silverman_bandwidth(&samples)?;
        Self::new(samples, h)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / ((2.0 * PI).sqrt() * h * self.samples.len() as f64);
        norm * self.samples.iter().map(|xi| (-0.5 * ((x - xi) / h).powi(2)).exp()).sum::<f64>()
    }
}

/// Interior bin boundaries for one value population.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    kind: ValueKind,
    boundaries: Vec<f64>,
}

impl LookupTable {
    pub fn from_boundaries(kind: ValueKind, boundaries: Vec<f64>) -> Result<Self, BinningError> {
        if boundaries.iter().any(|b| !b.is_finite()) || boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BinningError::UnsortedBoundaries);
        }
        let bins = boundaries.len() + 1;
        if bins > kind.max_bins() {
            return Err(BinningError::TooManyBins { kind, bins, limit: kind.max_bins() });
        }
        Ok(Self { kind, boundaries })
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn boundaries(&self) -> &[f64] {
        &self.boundaries
    }

    pub fn bin_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Bin `i` holds `boundaries[i-1] <= x < boundaries[i]`, so a value equal
    /// to a boundary lands in the upper bin. Values outside the trained range
    /// clamp to the edge bins.
    pub fn quantize(&self, x: f64) -> u8 {
        // bin_count <= 255 so the index always fits
        self.boundaries.partition_point(|&b| b <= x) as u8
    }
}

pub fn quantize(table: &LookupTable, x: f64) -> u8 {
    table.quantize(x)
}

/// Builds a table by splitting the KDE of `values` at its local minima.
///
/// The density is sampled on [`GRID_POINTS`] points spanning
/// `[min - h, max + h]`. If there are more minima than the kind allows, the
/// shallowest ones are merged away first.
pub fn build_lookup_table(values: &[f64], kind: ValueKind) -> Result<LookupTable, BinningError> {
    let model = KdeModel::with_silverman(values.to_vec())?;
    let h = model.bandwidth();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let start = lo - h;
    let step = (hi - lo + 2.0 * h) / (GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..GRID_POINTS).map(|i| start + step * i as f64).collect();
    let density: Vec<f64> = grid.iter().map(|&x| model.evaluate(x)).collect();

    let mut boundaries = split_at_minima(&grid, &density, kind.max_bins());
    boundaries.dedup();
    LookupTable::from_boundaries(kind, boundaries)
}

/// Grid positions of the density minima kept under a `max_bins` cap, rounded
/// to file precision.
fn split_at_minima(grid: &[f64], density: &[f64], max_bins: usize) -> Vec<f64> {
    let mut minima = local_minima(density);
    while minima.len() + 1 > max_bins {
        let shallowest = shallowest_minimum(density, &minima);
        minima.remove(shallowest);
    }
    minima.iter().map(|&i| round_significant(grid[i])).collect()
}

/// Interior grid indices that are local minima. A flat run counts once, at its
/// leftmost point, if the density rises on both sides of it.
fn local_minima(density: &[f64]) -> Vec<usize> {
    let mut minima = Vec::new();
    let n = density.len();
    let mut i = 1;
    while i + 1 < n {
        if density[i] < density[i - 1] {
            let mut j = i;
            while j + 1 < n && density[j + 1] == density[i] {
                j += 1;
            }
            if j + 1 < n && density[j + 1] > density[i] {
                minima.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    minima
}

/// Position (in `minima`) of the minimum with the smallest rise to the
/// density peak on either side; ties resolve to the leftmost.
fn shallowest_minimum(density: &[f64], minima: &[usize]) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (pos, &m) in minima.iter().enumerate() {
        let left_start = if pos == 0 { 0 } else { minima[pos - 1] };
        let right_end = minima.get(pos + 1).copied().unwrap_or(density.len() - 1);
        let left_peak = density[left_start..=m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let right_peak = density[m..=right_end].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let depth = (left_peak - density[m]).min(right_peak - density[m]);
        if depth < best.0 {
            best = (depth, pos);
        }
    }
    best.1
}

/// Rounds to 12 significant decimal digits, the precision used in files.
pub fn round_significant(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}
