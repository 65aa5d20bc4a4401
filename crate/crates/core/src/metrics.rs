//! Band energies, the Spectral Suppression Ratio and spectral trajectories.
//!
//! The frequency grid is split at a radius threshold into a low band
//! (`r <= r_thresh`) and a high band (`r > r_thresh`). The default threshold
//! is the median of the distinct radii, taking the lower middle element when
//! their count is even.
//!
//! SSR compares high-band energy at the first and last checkpoint of a series:
//! `(E_init − E_final) / E_init`. Zero means unchanged, negative means the
//! high band grew during training.

use std::fmt;
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spectrum::{center_distance_sq, layer_spectrum, radius_classes, RadiusClasses};
use crate::tensor_store::{read_container, CheckpointSeries, F32Tensor, LayerPattern};

/// Low/high band boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Boundary at an exact radius class, keyed by its squared radius.
    Class { r_sq: u64 },
    Radius(f64),
}

impl Threshold {
    pub fn radius(&self) -> f64 {
        match *self {
            Threshold::Class { r_sq } => (r_sq as f64).sqrt(),
            Threshold::Radius(r) => r,
        }
    }

    /// Whether a bin at squared distance `d_sq` falls in the low band.
    pub fn is_low(&self, d_sq: u64) -> bool {
        match *self {
            Threshold::Class { r_sq } => d_sq <= r_sq,
            Threshold::Radius(r) => {
                // d_sq <= r² evaluated exactly: r·r = p + e with e recovered by fma.
                let p = r * r;
                let e = r.mul_add(r, -p);
                (d_sq as f64 - p) <= e
            }
        }
    }
}

/// How a threshold is chosen for a kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ThresholdMode {
    #[default]
    Median,
    Explicit(f64),
}

impl ThresholdMode {
    pub fn resolve(&self, classes: &RadiusClasses) -> Result<Threshold> {
        match *self {
            ThresholdMode::Median => default_threshold(classes),
            ThresholdMode::Explicit(r) => Ok(Threshold::Radius(r)),
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("median") {
            return Ok(ThresholdMode::Median);
        }
        match s.parse::<f64>() {
            Ok(r) if r.is_finite() && r >= 0.0 => Ok(ThresholdMode::Explicit(r)),
            _ => Err(Error::InvalidInput(format!(
                "threshold must be \"median\" or a non-negative real, got {s:?}"
            ))),
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Median => f.write_str("median"),
            ThresholdMode::Explicit(r) => write!(f, "{r}"),
        }
    }
}

/// Median of the distinct radii; lower middle for an even count.
pub fn default_threshold(classes: &RadiusClasses) -> Result<Threshold> {
    if classes.classes.len() < 2 {
        return Err(Error::DegenerateKernel(classes.size));
    }
    let middle = &classes.classes[(classes.classes.len() - 1) / 2];
    Ok(Threshold::Class { r_sq: middle.r_sq })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandEnergy {
    pub r_thresh: f64,
    pub e_low: f64,
    pub e_high: f64,
}

impl BandEnergy {
    pub fn total(&self) -> f64 {
        self.e_low + self.e_high
    }
}

/// Sums a center-shifted PSD grid on either side of `thresh`.
pub fn band_energies(psd: ArrayView2<f64>, thresh: Threshold) -> Result<BandEnergy> {
    let (rows, cols) = psd.dim();
    if rows != cols || rows == 0 {
        return Err(Error::InvalidInput(format!(
            "psd grid must be square, got {rows}x{cols}"
        )));
    }
    let (mut e_low, mut e_high) = (0.0, 0.0);
    for ((u, v), &p) in psd.indexed_iter() {
        if thresh.is_low(center_distance_sq(rows, u, v)) {
            e_low += p;
        } else {
            e_high += p;
        }
    }
    Ok(BandEnergy {
        r_thresh: thresh.radius(),
        e_low,
        e_high,
    })
}

/// `(e_high_init − e_high_final) / e_high_init`.
pub fn ssr(e_high_init: f64, e_high_final: f64) -> Result<f64> {
    if !(e_high_init.is_finite() && e_high_init > 0.0) {
        return Err(Error::DegenerateInitialization);
    }
    if !(e_high_final.is_finite() && e_high_final >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "final high-band energy must be finite and non-negative, got {e_high_final}"
        )));
    }
    Ok((e_high_init - e_high_final) / e_high_init)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsrReport {
    pub layer: String,
    pub r_thresh: f64,
    pub e_high_init: f64,
    pub e_high_final: f64,
    pub ssr: f64,
    /// `(initial epoch, final epoch)`.
    pub epochs: (u64, u64),
}

/// Resolves a pattern to exactly one tensor.
pub fn select_layer<'a>(tensors: &'a [F32Tensor], pattern: &LayerPattern) -> Result<&'a F32Tensor> {
    match pattern.select(tensors).as_slice() {
        [] => Err(Error::NoMatch(pattern.as_str().to_string())),
        [one] => Ok(one),
        many => Err(Error::AmbiguousLayer {
            pattern: pattern.as_str().to_string(),
            names: many.iter().map(|t| t.name().to_string()).collect(),
        }),
    }
}

fn load_layer(path: &std::path::Path, name: &str) -> Result<F32Tensor> {
    read_container(path)?
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| Error::LayerMissing {
            layer: name.to_string(),
            path: path.to_path_buf(),
        })
}

fn require_two(series: &CheckpointSeries) -> Result<()> {
    if series.entries.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 checkpoints, manifest lists {}",
            series.entries.len()
        )));
    }
    Ok(())
}

/// Name of the single tensor the series' pattern selects in its first checkpoint.
pub fn series_layer(series: &CheckpointSeries) -> Result<String> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidInput("empty checkpoint series".into()))?;
    let tensors = read_container(&first.path)?;
    Ok(select_layer(&tensors, &series.layer_pattern)?.name().to_string())
}

/// SSR of the layer selected by the series' pattern, first vs last checkpoint.
pub fn layer_ssr(series: &CheckpointSeries, mode: ThresholdMode) -> Result<SsrReport> {
    require_two(series)?;
    let name = series_layer(series)?;
    layer_ssr_for(series, &name, mode)
}

/// SSR for an explicitly named layer.
pub fn layer_ssr_for(series: &CheckpointSeries, layer: &str, mode: ThresholdMode) -> Result<SsrReport> {
    require_two(series)?;
    let (first, last) = (series.first().unwrap(), series.last().unwrap());
    let init = load_layer(&first.path, layer)?;
    let fin = load_layer(&last.path, layer)?;
    if init.shape() != fin.shape() {
        return Err(Error::ShapeMismatch(format!(
            "{layer:?} is {:?} at epoch {} but {:?} at epoch {}",
            init.shape(),
            first.epoch,
            fin.shape(),
            last.epoch
        )));
    }
    let init = layer_spectrum(&init)?;
    let fin = layer_spectrum(&fin)?;
    let thresh = mode.resolve(&radius_classes(init.size))?;
    let e_init = band_energies(init.sum_psd.view(), thresh)?;
    let e_final = band_energies(fin.sum_psd.view(), thresh)?;
    Ok(SsrReport {
        layer: layer.to_string(),
        r_thresh: thresh.radius(),
        e_high_init: e_init.e_high,
        e_high_final: e_final.e_high,
        ssr: ssr(e_init.e_high, e_final.e_high)?,
        epochs: (first.epoch, last.epoch),
    })
}

/// Layer-mean radial profile per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralTrajectory {
    pub layer: String,
    pub r_sq: Vec<u64>,
    pub radii: Vec<f64>,
    /// Bins per radius class.
    pub counts: Vec<usize>,
    /// Kernels aggregated per row (`C_out · C_in`).
    pub kernels: usize,
    pub epochs: Vec<u64>,
    /// `values[epoch][radius]` = mean PSD.
    pub values: Vec<Vec<f64>>,
}

impl SpectralTrajectory {
    /// Layer-summed high-band energy of one row.
    pub fn high_band_energy(&self, row: usize, thresh: Threshold) -> f64 {
        self.r_sq
            .iter()
            .zip(&self.counts)
            .zip(&self.values[row])
            .filter(|((&r_sq, _), _)| !thresh.is_low(r_sq))
            .map(|((_, &count), &mean)| count as f64 * mean)
            .sum::<f64>()
            * self.kernels as f64
    }
}

pub fn trajectory(series: &CheckpointSeries) -> Result<SpectralTrajectory> {
    let name = series_layer(series)?;
    trajectory_for(series, &name)
}

/// Rows are computed concurrently and assembled in epoch order.
pub fn trajectory_for(series: &CheckpointSeries, layer: &str) -> Result<SpectralTrajectory> {
    if series.entries.is_empty() {
        return Err(Error::InvalidInput("empty checkpoint series".into()));
    }
    let layers: Vec<F32Tensor> = series
        .entries
        .par_iter()
        .map(|c| load_layer(&c.path, layer))
        .collect::<Result<_>>()?;
    let shape = layers[0].shape().to_vec();
    for (t, c) in layers.iter().zip(&series.entries).skip(1) {
        if t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "{layer:?} is {shape:?} at epoch {} but {:?} at epoch {}",
                series.entries[0].epoch,
                t.shape(),
                c.epoch
            )));
        }
    }
    let spectra = layers
        .par_iter()
        .map(layer_spectrum)
        .collect::<Result<Vec<_>>>()?;
    let profiles: Vec<_> = spectra.iter().map(|s| s.profile()).collect();

    let head = &profiles[0];
    Ok(SpectralTrajectory {
        layer: layer.to_string(),
        r_sq: head.entries.iter().map(|e| e.r_sq).collect(),
        radii: head.entries.iter().map(|e| e.radius).collect(),
        counts: head.entries.iter().map(|e| e.count).collect(),
        kernels: spectra[0].kernels,
        epochs: series.epochs(),
        values: profiles.iter().map(|p| p.mean_psd()).collect(),
    })
}
