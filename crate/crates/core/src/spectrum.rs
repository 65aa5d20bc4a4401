//! Power spectra of small square kernels and their discrete radial profiles.
//!
//! Kernels are tiny (3×3 in most CNNs, rarely above 11×11), so the transform
//! is the direct double sum rather than an FFT. Twiddles are indexed by the
//! integer phase `(u·x + v·y) mod K`, which keeps the angle argument exact.
//!
//! Radial profiling groups the bins of a center-shifted spectrum by their
//! exact squared integer distance from the center. On a 3×3 grid that yields
//! the three classes `{0, 1, √2}`; no continuous binning is involved.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor_store::F32Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpectrum {
    size: usize,
    coeffs: Array2<Complex64>,
    psd: Array2<f64>,
    shifted: bool,
}

impl KernelSpectrum {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_shifted(&self) -> bool {
        self.shifted
    }

    pub fn coeffs(&self) -> &Array2<Complex64> {
        &self.coeffs
    }

    pub fn psd(&self) -> &Array2<f64> {
        &self.psd
    }

    pub fn total_energy(&self) -> f64 {
        self.psd.iter().sum()
    }
}

fn check_square(kernel: &ArrayView2<f64>) -> Result<usize> {
    let (rows, cols) = kernel.dim();
    if rows != cols || rows == 0 {
        return Err(Error::InvalidInput(format!(
            "kernel must be square and non-empty, got {rows}x{cols}"
        )));
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("kernel has non-finite entries".into()));
    }
    Ok(rows)
}

/// Unnormalized forward 2D DFT, `F[u,v] = Σ_x Σ_y W[x,y]·exp(−2πi(ux + vy)/K)`.
///
/// The twiddles of every bin except (0,0) sum to zero, so those bins are
/// computed from `W − m` with `m` the midrange of `W`. The result is the same
/// transform, but a constant offset (in particular a constant kernel) leaves
/// no rounding residue outside the DC bin.
pub fn dft2(kernel: ArrayView2<f64>) -> Result<KernelSpectrum> {
    let k = check_square(&kernel)?;
    let twiddle: Vec<Complex64> = (0..k)
        .map(|m| Complex64::from_polar(1.0, -TAU * m as f64 / k as f64))
        .collect();
    let (lo, hi) = kernel
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &w| (lo.min(w), hi.max(w)));
    let offset = 0.5 * lo + 0.5 * hi;

    let coeffs = Array2::from_shape_fn((k, k), |(u, v)| {
        if u == 0 && v == 0 {
            return Complex64::new(kernel.sum(), 0.0);
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for x in 0..k {
            for y in 0..k {
                let phase = (u * x + v * y) % k;
                acc += twiddle[phase] * (kernel[[x, y]] - offset);
            }
        }
        acc
    });
    let psd = coeffs.mapv(|c| c.norm_sqr());
    Ok(KernelSpectrum {
        size: k,
        coeffs,
        psd,
        shifted: false,
    })
}

/// Index offset that moves bin (0,0) to `(K/2, K/2)`.
fn shift_offset(size: usize) -> usize {
    size / 2
}

fn roll<T: Clone>(grid: &Array2<T>, offset: usize) -> Array2<T> {
    let k = grid.nrows();
    Array2::from_shape_fn((k, k), |(u, v)| {
        grid[[(u + k - offset) % k, (v + k - offset) % k]].clone()
    })
}

/// Moves the zero-frequency bin to `(⌊K/2⌋, ⌊K/2⌋)`.
pub fn center_shift(spectrum: &KernelSpectrum) -> Result<KernelSpectrum> {
    if spectrum.shifted {
        return Err(Error::AlreadyShifted);
    }
    let offset = shift_offset(spectrum.size);
    Ok(KernelSpectrum {
        size: spectrum.size,
        coeffs: roll(&spectrum.coeffs, offset),
        psd: roll(&spectrum.psd, offset),
        shifted: true,
    })
}

/// Inverse of [`center_shift`].
pub fn inverse_shift(spectrum: &KernelSpectrum) -> Result<KernelSpectrum> {
    if !spectrum.shifted {
        return Err(Error::NotShifted);
    }
    let k = spectrum.size;
    let offset = k - shift_offset(k);
    Ok(KernelSpectrum {
        size: k,
        coeffs: roll(&spectrum.coeffs, offset % k),
        psd: roll(&spectrum.psd, offset % k),
        shifted: false,
    })
}

/// `dft2` followed by `center_shift`.
pub fn shifted_spectrum(kernel: ArrayView2<f64>) -> Result<KernelSpectrum> {
    center_shift(&dft2(kernel)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusClass {
    /// Exact squared distance from the center; the grouping key.
    pub r_sq: u64,
    pub radius: f64,
    /// Coordinates in the shifted layout, ascending.
    pub members: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadiusClasses {
    pub size: usize,
    pub classes: Vec<RadiusClass>,
}

impl RadiusClasses {
    pub fn radii(&self) -> Vec<f64> {
        self.classes.iter().map(|c| c.radius).collect()
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Squared distance of shifted coordinate `(u, v)` from the center of a K×K grid.
pub fn center_distance_sq(size: usize, u: usize, v: usize) -> u64 {
    let c = shift_offset(size) as i64;
    let (du, dv) = (u as i64 - c, v as i64 - c);
    (du * du + dv * dv) as u64
}

pub fn radius_classes(size: usize) -> RadiusClasses {
    assert!(size >= 1, "kernel size must be positive");
    let mut groups: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for u in 0..size {
        for v in 0..size {
            groups
                .entry(center_distance_sq(size, u, v))
                .or_default()
                .push((u, v));
        }
    }
    RadiusClasses {
        size,
        classes: groups
            .into_iter()
            .map(|(r_sq, members)| RadiusClass {
                r_sq,
                radius: (r_sq as f64).sqrt(),
                members,
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileEntry {
    pub r_sq: u64,
    pub radius: f64,
    pub count: usize,
    pub mean_psd: f64,
}

/// Mean PSD per exact radius class, ascending radius.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub size: usize,
    pub entries: Vec<ProfileEntry>,
}

impl RadialProfile {
    /// `Σ count · mean_psd`, i.e. the total energy of the profiled grid.
    pub fn total_energy(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.count as f64 * e.mean_psd)
            .sum()
    }

    pub fn mean_psd(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.mean_psd).collect()
    }
}

/// Radial profile of a shifted PSD grid.
pub fn profile_psd(psd: ArrayView2<f64>) -> Result<RadialProfile> {
    let (rows, cols) = psd.dim();
    if rows != cols || rows == 0 {
        return Err(Error::InvalidInput(format!(
            "psd grid must be square, got {rows}x{cols}"
        )));
    }
    let classes = radius_classes(rows);
    let entries = classes
        .classes
        .iter()
        .map(|class| {
            let sum: f64 = class.members.iter().map(|&(u, v)| psd[[u, v]]).sum();
            ProfileEntry {
                r_sq: class.r_sq,
                radius: class.radius,
                count: class.members.len(),
                mean_psd: sum / class.members.len() as f64,
            }
        })
        .collect();
    Ok(RadialProfile {
        size: rows,
        entries,
    })
}

pub fn radial_profile(spectrum: &KernelSpectrum) -> Result<RadialProfile> {
    if !spectrum.shifted {
        return Err(Error::NotShifted);
    }
    profile_psd(spectrum.psd.view())
}

/// Shifted PSD aggregated over every spatial kernel of a conv weight.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpectrum {
    pub size: usize,
    pub kernels: usize,
    /// Element-wise sum of the shifted per-kernel PSDs.
    pub sum_psd: Array2<f64>,
}

impl LayerSpectrum {
    pub fn mean_psd(&self) -> Array2<f64> {
        &self.sum_psd / self.kernels as f64
    }

    pub fn profile(&self) -> RadialProfile {
        profile_psd(self.mean_psd().view()).expect("square grid")
    }
}

/// Splits a `[C_out, C_in, K, K]` weight into its spatial kernel size and count.
pub fn conv_geometry(weights: &F32Tensor) -> Result<(usize, usize)> {
    let shape = weights.shape();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "{:?}: expected [C_out, C_in, K, K], got {shape:?}",
            weights.name()
        )));
    }
    if shape[2] != shape[3] {
        return Err(Error::ShapeMismatch(format!(
            "{:?}: spatial dims {}x{} are not square",
            weights.name(),
            shape[2],
            shape[3]
        )));
    }
    if shape[2] < 2 {
        return Err(Error::DegenerateKernel(shape[2]));
    }
    Ok((shape[2], shape[0] * shape[1]))
}

/// Per-kernel PSDs are computed in parallel; the sum runs sequentially in
/// kernel order so the result does not depend on the worker count.
pub fn layer_spectrum(weights: &F32Tensor) -> Result<LayerSpectrum> {
    let (k, kernels) = conv_geometry(weights)?;
    let area = k * k;
    let spectra: Vec<Array2<f64>> = weights
        .data()
        .par_chunks(area)
        .map(|chunk| {
            let kernel = Array2::from_shape_fn((k, k), |(x, y)| chunk[x * k + y] as f64);
            shifted_spectrum(kernel.view()).map(|s| s.psd)
        })
        .collect::<Result<_>>()?;

    let mut sum_psd = Array2::zeros((k, k));
    for psd in &spectra {
        sum_psd += psd;
    }
    Ok(LayerSpectrum {
        size: k,
        kernels,
        sum_psd,
    })
}

/// Radial profile of the mean PSD over all `C_out · C_in` kernels.
pub fn layer_mean_profile(weights: &F32Tensor) -> Result<RadialProfile> {
    Ok(layer_spectrum(weights)?.profile())
}
