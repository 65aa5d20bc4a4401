#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use speclens::tensor_store::{write_container, write_manifest, Checkpoint, CheckpointSeries, F32Tensor, LayerPattern};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_kernel(rng: &mut ChaCha8Rng, k: usize) -> Array2<f64> {
    Array2::from_shape_fn((k, k), |_| rng.random_range(-1.0..1.0))
}

pub fn random_f32(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

/// Textbook double sum with the phase evaluated as a real angle.
pub fn brute_force_dft(w: &Array2<f64>) -> Array2<Complex64> {
    let k = w.nrows();
    let kf = k as f64;
    Array2::from_shape_fn((k, k), |(u, v)| {
        let mut acc = Complex64::new(0.0, 0.0);
        for x in 0..k {
            for y in 0..k {
                let angle = -2.0 * PI * (u as f64 * x as f64 / kf + v as f64 * y as f64 / kf);
                acc += Complex64::new(angle.cos(), angle.sin()) * w[[x, y]];
            }
        }
        acc
    })
}

/// Brute-force fftshift: output index (u, v) reads input ((u - K/2) mod K, (v - K/2) mod K).
pub fn brute_force_shift(p: &Array2<f64>) -> Array2<f64> {
    let k = p.nrows();
    let c = k / 2;
    let mut out = Array2::zeros((k, k));
    for u in 0..k {
        for v in 0..k {
            out[[(u + c) % k, (v + c) % k]] = p[[u, v]];
        }
    }
    out
}

/// Sort every (d², psd) pair and average runs of equal d².
pub fn sorted_grouping_profile(shifted_psd: &Array2<f64>) -> Vec<(u64, usize, f64)> {
    let k = shifted_psd.nrows() as i64;
    let c = k / 2;
    let mut pairs: Vec<(u64, f64)> = Vec::new();
    for u in 0..k {
        for v in 0..k {
            let d2 = ((u - c) * (u - c) + (v - c) * (v - c)) as u64;
            pairs.push((d2, shifted_psd[[u as usize, v as usize]]));
        }
    }
    pairs.sort_by_key(|p| p.0);
    let mut out: Vec<(u64, usize, f64)> = Vec::new();
    for (d2, p) in pairs {
        match out.last_mut() {
            Some(last) if last.0 == d2 => {
                last.1 += 1;
                last.2 += p;
            }
            _ => out.push((d2, 1, p)),
        }
    }
    out.into_iter().map(|(d, n, s)| (d, n, s / n as f64)).collect()
}

pub fn max_rel_err(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let scale = b.iter().map(|c| c.norm()).fold(0.0, f64::max).max(1e-300);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
        / scale
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Writes one container per epoch holding `name` and a manifest referencing them by relative path.
pub fn write_series(dir: &Path, name: &str, shape: &[usize], epochs: &[(u64, Vec<f32>)]) -> PathBuf {
    let mut entries = Vec::new();
    for (epoch, data) in epochs {
        let file = format!("e{epoch}.safetensors");
        let t = F32Tensor::new(name, shape.to_vec(), data.clone()).unwrap();
        write_container(&[t], dir.join(&file)).unwrap();
        entries.push(Checkpoint {
            epoch: *epoch,
            path: PathBuf::from(file),
        });
    }
    let series = CheckpointSeries::new(LayerPattern::new(name), entries).unwrap();
    let manifest = dir.join("manifest.json");
    write_manifest(&series, &manifest).unwrap();
    manifest
}

pub fn scaled(data: &[f32], s: f32) -> Vec<f32> {
    data.iter().map(|v| v * s).collect()
}

use speclens::freq_lab::{loss_and_grad, MlpParams};

/// Plain-loop forward pass returning predictions and the sign pattern of every pre-activation.
#[allow(clippy::needless_range_loop)]
pub fn loop_forward(p: &MlpParams, xs: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let h = p.hidden();
    let mut pattern = Vec::new();
    let mut out = Vec::new();
    for &x in xs {
        let mut a1 = vec![0.0; h];
        for j in 0..h {
            let z = x * p.layers[0].weight[[0, j]] + p.layers[0].bias[j];
            pattern.push(z > 0.0);
            a1[j] = z.max(0.0);
        }
        let mut a2 = vec![0.0; h];
        for j in 0..h {
            let mut z = p.layers[1].bias[j];
            for i in 0..h {
                z += a1[i] * p.layers[1].weight[[i, j]];
            }
            pattern.push(z > 0.0);
            a2[j] = z.max(0.0);
        }
        let mut y = p.layers[2].bias[0];
        for i in 0..h {
            y += a2[i] * p.layers[2].weight[[i, 0]];
        }
        out.push(y);
    }
    (out, pattern)
}

pub fn loop_loss(p: &MlpParams, xs: &[f64], ys: &[f64], lambda: f64) -> f64 {
    let (pred, _) = loop_forward(p, xs);
    let mse = pred.iter().zip(ys).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / xs.len() as f64;
    mse + lambda * p.weight_norm_sq()
}

pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1e-2)`, i.e. relative error with a 1e-8 absolute floor at tolerance 1e-6.
    pub max_err: f64,
    pub checked: usize,
    /// Coordinates skipped because the probe step flipped a ReLU.
    pub skipped: usize,
}

/// Central differences against `loss_and_grad` on random small networks, batches and penalties.
/// The loss is quadratic in any single parameter between ReLU kinks, so the central
/// difference is exact up to rounding whenever the activation pattern is unchanged.
pub fn gradient_check(seed: u64, triples: usize) -> GradCheck {
    let mut r = rng(seed);
    let step = 1e-4;
    let mut result = GradCheck { max_err: 0.0, checked: 0, skipped: 0 };
    for _ in 0..triples {
        let hidden = r.random_range(2..7);
        let mut params = MlpParams::zeros(hidden);
        for v in params.values_mut() {
            *v = r.random_range(-1.0..1.0);
        }
        let n = r.random_range(1..6);
        let xs: Vec<f64> = (0..n).map(|_| r.random_range(0.0..std::f64::consts::TAU)).collect();
        let ys: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let lambda = if r.random_bool(0.25) { 0.0 } else { r.random_range(0.0..0.1) };

        let (_, grad) = loss_and_grad(&params, &xs, &ys, lambda);
        let analytic: Vec<f64> = grad.values().copied().collect();
        let (_, base_pattern) = loop_forward(&params, &xs);
        for (i, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            *plus.values_mut().nth(i).unwrap() += step;
            let mut minus = params.clone();
            *minus.values_mut().nth(i).unwrap() -= step;
            if loop_forward(&plus, &xs).1 != base_pattern || loop_forward(&minus, &xs).1 != base_pattern {
                result.skipped += 1;
                continue;
            }
            let numeric = (loop_loss(&plus, &xs, &ys, lambda) - loop_loss(&minus, &xs, &ys, lambda)) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            result.max_err = result.max_err.max(err);
            result.checked += 1;
        }
    }
    result
}

use std::process::{Command, Output};

pub fn speclens(args: &[&str], threads: usize) -> Output {
    Command::new(env!("CARGO_BIN_EXE_speclens"))
        .args(args)
        .env("SPECLENS_THREADS", threads.to_string())
        .output()
        .expect("spawn speclens")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Checkpoint series, conv container and image container used by the CLI checks.
pub struct CliFixture {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub conv: PathBuf,
    pub image: PathBuf,
}

pub fn cli_fixture() -> CliFixture {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(31);
    let shape = [6, 3, 3, 3];
    let epochs: Vec<(u64, Vec<f32>)> = (0..4u64)
        .map(|e| (e * 10, random_f32(&mut r, 162)))
        .collect();
    let manifest = write_series(dir.path(), "block.conv.weight", &shape, &epochs);

    let conv = dir.path().join("conv.safetensors");
    let a = F32Tensor::new("a.weight", vec![4, 2, 3, 3], random_f32(&mut r, 72)).unwrap();
    let b = F32Tensor::new("b.weight", vec![2, 2, 5, 5], random_f32(&mut r, 100)).unwrap();
    let bias = F32Tensor::new("a.bias", vec![4], random_f32(&mut r, 4)).unwrap();
    write_container(&[a, bias, b], &conv).unwrap();

    let image = dir.path().join("image.safetensors");
    let img = F32Tensor::new("img", vec![2, 16, 16], random_f32(&mut r, 512)).unwrap();
    write_container(&[img], &image).unwrap();
    CliFixture { dir, manifest, conv, image }
}

/// Runs every subcommand into `out` with the given worker count.
pub fn run_all_commands(fx: &CliFixture, out: &Path, threads: usize) {
    let o = path_str(out);
    let runs: Vec<Vec<&str>> = vec![
        vec!["analyze", path_str(&fx.conv), "--out", o],
        vec!["track", path_str(&fx.manifest), "--out", o],
        vec!["ssr", path_str(&fx.manifest), "--out", o],
        vec!["ssr", path_str(&fx.manifest), "--thresh", "1.0", "--out", o],
        vec![
            "lab", "--lambda", "0", "--lambda", "0.01", "--seed", "3", "--steps", "60", "--hidden", "16",
            "--record-every", "20", "--out", o,
        ],
    ];
    for args in runs {
        let output = speclens(&args, threads);
        assert!(output.status.success(), "{args:?}: {}", String::from_utf8_lossy(&output.stderr));
    }
    let perturbed = out.join("perturbed.safetensors");
    let args = [
        "perturb", path_str(&fx.image), "--tensor", "img", "--sigma", "0.2", "--factor", "2", "--seed", "5",
        "--out", path_str(&perturbed),
    ];
    let output = speclens(&args, threads);
    assert!(output.status.success(), "{}", String::from_utf8_lossy(&output.stderr));
}

/// Every regular file in `dir` with its bytes, sorted by name.
pub fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// High-band energy of a `[C_out, C_in, 3, 3]` layer computed without the library: direct DFT,
/// explicit fftshift, and the `r² > 1` corner bins.
pub fn hand_high_energy(data: &[f32]) -> f64 {
    let mut total = Array2::<f64>::zeros((3, 3));
    for chunk in data.chunks(9) {
        let w = Array2::from_shape_fn((3, 3), |(x, y)| chunk[x * 3 + y] as f64);
        let psd = brute_force_dft(&w).mapv(|c| c.norm_sqr());
        total += &brute_force_shift(&psd);
    }
    [(0, 0), (0, 2), (2, 0), (2, 2)].iter().map(|&ix| total[ix]).sum()
}
