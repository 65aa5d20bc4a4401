//! Input perturbations with known spectral signatures.
//!
//! Additive white Gaussian noise spreads energy evenly over every frequency
//! bin. Resolution degradation (block average, then nearest-neighbor
//! replication) is the orthogonal projection onto block-constant images and
//! removes the content above the coarse grid's Nyquist limit.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::{band_energies, BandEnergy, Threshold};
use crate::spectrum::shifted_spectrum;
use crate::tensor_store::F32Tensor;

/// `[C, H, W]` image in f64.
pub type ImageTensor = Array3<f64>;

pub fn image_from_tensor(tensor: &F32Tensor) -> Result<ImageTensor> {
    let shape = tensor.shape();
    if shape.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "{:?}: expected [C, H, W], got {shape:?}",
            tensor.name()
        )));
    }
    let data = tensor.data().iter().map(|&v| v as f64).collect();
    Ok(Array3::from_shape_vec((shape[0], shape[1], shape[2]), data).expect("shape checked"))
}

pub fn image_to_tensor(name: &str, image: ArrayView3<f64>) -> F32Tensor {
    let (c, h, w) = image.dim();
    let data = image.iter().map(|&v| v as f32).collect();
    F32Tensor::new(name, vec![c, h, w], data).expect("consistent shape")
}

/// `image + ε` with `ε ~ N(0, sigma²)` drawn per element in row-major order.
pub fn add_gaussian_noise(image: ArrayView3<f64>, sigma: f64, seed: u64) -> Result<ImageTensor> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "noise sigma must be finite and non-negative, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(image.to_owned());
    }
    let normal = Normal::new(0.0, sigma).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = image.to_owned();
    out.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    Ok(out)
}

/// Averages non-overlapping `factor × factor` blocks and replicates each mean back over its block.
pub fn degrade_resolution(image: ArrayView3<f64>, factor: usize) -> Result<ImageTensor> {
    let (channels, height, width) = image.dim();
    if factor < 2 {
        return Err(Error::InvalidInput(format!(
            "resolution factor must be at least 2, got {factor}"
        )));
    }
    if height % factor != 0 || width % factor != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{height}x{width} image is not divisible by factor {factor}"
        )));
    }
    let area = (factor * factor) as f64;
    let mut out = Array3::zeros((channels, height, width));
    for c in 0..channels {
        for by in (0..height).step_by(factor) {
            for bx in (0..width).step_by(factor) {
                let mut sum = 0.0;
                for y in by..by + factor {
                    for x in bx..bx + factor {
                        sum += image[[c, y, x]];
                    }
                }
                let mean = sum / area;
                for y in by..by + factor {
                    for x in bx..bx + factor {
                        out[[c, y, x]] = mean;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Largest center distance on an `n × n` shifted grid.
pub fn max_radius(n: usize) -> f64 {
    (n / 2) as f64 * std::f64::consts::SQRT_2
}

/// PSD energy of a square image at radius `<= split · r_max` (low) and above it (high).
pub fn band_energy_ratio(image: ArrayView2<f64>, split: f64) -> Result<BandEnergy> {
    let (h, w) = image.dim();
    if h != w {
        return Err(Error::ShapeMismatch(format!(
            "band energies need a square image, got {h}x{w}"
        )));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split must lie in (0, 1), got {split}"
        )));
    }
    let spectrum = shifted_spectrum(image)?;
    band_energies(
        spectrum.psd().view(),
        Threshold::Radius(split * max_radius(h)),
    )
}

/// Summed band energies over every channel of an image.
pub fn image_band_energy(image: ArrayView3<f64>, split: f64) -> Result<BandEnergy> {
    let mut total = BandEnergy {
        r_thresh: split * max_radius(image.dim().1),
        e_low: 0.0,
        e_high: 0.0,
    };
    for channel in image.outer_iter() {
        let b = band_energy_ratio(channel, split)?;
        total.e_low += b.e_low;
        total.e_high += b.e_high;
    }
    Ok(total)
}

/// `±1` pattern alternating along both axes, the Nyquist frequency of the grid.
pub fn checkerboard(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(y, x)| if (x + y) % 2 == 0 { 1.0 } else { -1.0 })
}
