//! Command implementations behind the `speclens` binary.
//!
//! Every command writes its CSVs into an output directory and returns a
//! [`ReportBundle`] naming what it wrote. CSV floats use the shortest
//! representation that round-trips; radii get an extra 10-significant-digit
//! column next to the exact integer `r²`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::freq_lab::{self, LabConfig, LabResult, BANDS};
use crate::metrics::{self, SpectralTrajectory, SsrReport, ThresholdMode};
use crate::perturb;
use crate::spectrum::{self, RadialProfile};
use crate::tensor_store::{self, load_manifest, read_container, F32Tensor, LayerPattern};

pub const THREADS_ENV: &str = "SPECLENS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "speclens", version, about = "Weight-spectrum diagnostics for small convolution kernels")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Radial power profile of every matching conv weight in a container.
    Analyze {
        container: PathBuf,
        /// Tensor name, or a prefix ending in `*`.
        #[arg(long, default_value = "*")]
        layer: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Per-epoch radial profiles across a checkpoint manifest, plus a heatmap.
    Track {
        manifest: PathBuf,
        /// Overrides the manifest's layer pattern.
        #[arg(long)]
        layer: Option<String>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Spectral Suppression Ratio between the first and last checkpoint.
    Ssr {
        manifest: PathBuf,
        #[arg(long)]
        layer: Option<String>,
        /// `median` or an explicit radius.
        #[arg(long, default_value = "median")]
        thresh: String,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Synthetic three-sinusoid fitting experiment.
    Lab(LabArgs),
    /// Gaussian noise and/or resolution loss applied to a [C, H, W] tensor.
    Perturb {
        container: PathBuf,
        #[arg(long)]
        tensor: String,
        #[arg(long, default_value_t = 0.0)]
        sigma: f64,
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Band split as a fraction of the maximal radius.
        #[arg(long, default_value_t = 0.5)]
        split: f64,
        /// Output container path.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct LabArgs {
    /// L2 strength; repeat to run several conditions side by side.
    #[arg(long = "lambda", required = true)]
    pub lambdas: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000)]
    pub steps: usize,
    #[arg(long, default_value_t = 256)]
    pub hidden: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 256)]
    pub train_points: usize,
    #[arg(long, default_value_t = 2048)]
    pub eval_grid: usize,
    #[arg(long, default_value_t = 50)]
    pub record_every: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

impl LabArgs {
    fn config(&self, lambda_l2: f64) -> LabConfig {
        LabConfig {
            lambda_l2,
            seed: self.seed,
            hidden: self.hidden,
            steps: self.steps,
            train_points: self.train_points,
            eval_grid: self.eval_grid,
            learning_rate: self.lr,
            record_every: self.record_every,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Profile,
    Trajectory,
    Ssr,
    Lab,
    Perturb,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub kind: ReportKind,
    pub csv_paths: Vec<PathBuf>,
    pub image_paths: Vec<PathBuf>,
    pub summary: String,
}

impl ReportBundle {
    fn new(kind: ReportKind) -> Self {
        ReportBundle {
            kind,
            csv_paths: Vec::new(),
            image_paths: Vec::new(),
            summary: String::new(),
        }
    }
}

/// Worker count from `SPECLENS_THREADS`, else the number of processors.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

pub fn run(cli: Cli) -> Result<ReportBundle> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count())
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| match cli.command {
        Command::Analyze {
            container,
            layer,
            out,
        } => cmd_analyze(&container, &LayerPattern::new(layer), &out),
        Command::Track {
            manifest,
            layer,
            out,
        } => cmd_track(&manifest, layer.map(LayerPattern::new), &out),
        Command::Ssr {
            manifest,
            layer,
            thresh,
            out,
        } => cmd_ssr(&manifest, layer.map(LayerPattern::new), thresh.parse()?, &out),
        Command::Lab(args) => cmd_lab(&args),
        Command::Perturb {
            container,
            tensor,
            sigma,
            factor,
            seed,
            split,
            out,
        } => cmd_perturb(&container, &tensor, sigma, factor, seed, split, &out),
    })
}

/// Shortest decimal that parses back to the same f64.
pub fn fmt_float(v: f64) -> String {
    format!("{v:?}")
}

/// Fixed-point rendering with 10 significant digits.
pub fn fmt_sig10(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let magnitude = v.abs().log10().floor() as i32;
    let decimals = (9 - magnitude).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Layer name made safe for use in a file name.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn profile_csv(profile: &RadialProfile) -> String {
    let mut csv = String::from("r_squared,radius,count,mean_psd\n");
    for e in &profile.entries {
        writeln!(
            csv,
            "{},{},{},{}",
            e.r_sq,
            fmt_sig10(e.radius),
            e.count,
            fmt_float(e.mean_psd)
        )
        .unwrap();
    }
    csv
}

fn conv_layers<'a>(tensors: &'a [F32Tensor], pattern: &LayerPattern) -> Result<Vec<&'a F32Tensor>> {
    let layers: Vec<_> = pattern
        .select(tensors)
        .into_iter()
        .filter(|t| t.shape().len() == 4)
        .collect();
    if layers.is_empty() {
        return Err(Error::NoMatch(pattern.as_str().to_string()));
    }
    Ok(layers)
}

pub fn cmd_analyze(container: &Path, pattern: &LayerPattern, out: &Path) -> Result<ReportBundle> {
    let tensors = read_container(container)?;
    let layers = conv_layers(&tensors, pattern)?;
    let profiles = layers
        .par_iter()
        .map(|t| spectrum::layer_mean_profile(t))
        .collect::<Result<Vec<_>>>()?;

    ensure_dir(out)?;
    let mut bundle = ReportBundle::new(ReportKind::Profile);
    for (layer, profile) in layers.iter().zip(&profiles) {
        let path = out.join(format!("profile_{}.csv", file_stem(layer.name())));
        write_file(&path, profile_csv(profile))?;
        writeln!(
            bundle.summary,
            "{} {:?}: {} radius classes, mean kernel energy {}",
            layer.name(),
            layer.shape(),
            profile.entries.len(),
            fmt_float(profile.total_energy())
        )
        .unwrap();
        bundle.csv_paths.push(path);
    }
    Ok(bundle)
}

fn series_with_override(
    manifest: &Path,
    layer: Option<LayerPattern>,
) -> Result<tensor_store::CheckpointSeries> {
    let mut series = load_manifest(manifest)?;
    if let Some(pattern) = layer {
        series.layer_pattern = pattern;
    }
    Ok(series)
}

fn series_layers(series: &tensor_store::CheckpointSeries) -> Result<Vec<String>> {
    let first = series
        .first()
        .ok_or_else(|| Error::InvalidInput("manifest lists no checkpoints".into()))?;
    let tensors = read_container(&first.path)?;
    Ok(conv_layers(&tensors, &series.layer_pattern)?
        .into_iter()
        .map(|t| t.name().to_string())
        .collect())
}

pub fn trajectory_csv(traj: &SpectralTrajectory) -> String {
    let mut csv = String::from("epoch");
    for r_sq in &traj.r_sq {
        write!(csv, ",r2={r_sq}").unwrap();
    }
    csv.push('\n');
    for (epoch, row) in traj.epochs.iter().zip(&traj.values) {
        write!(csv, "{epoch}").unwrap();
        for &v in row {
            write!(csv, ",{}", fmt_float(v)).unwrap();
        }
        csv.push('\n');
    }
    csv
}

/// Binary PGM (P5, maxval 255): one column per epoch, one row per radius with
/// the lowest radius at the bottom. Intensity is `log10(S + 1e-12)` mapped
/// affinely onto `[0, 255]` over the whole image.
pub fn heatmap_pgm(traj: &SpectralTrajectory) -> Vec<u8> {
    let width = traj.epochs.len();
    let height = traj.radii.len();
    let logs: Vec<Vec<f64>> = traj
        .values
        .iter()
        .map(|row| row.iter().map(|&v| (v + 1e-12).log10()).collect())
        .collect();
    let (lo, hi) = logs
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;

    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    for radius in (0..height).rev() {
        for row in &logs {
            let level = if span > 0.0 {
                (255.0 * (row[radius] - lo) / span).round() as u8
            } else {
                0
            };
            out.push(level);
        }
    }
    out
}

pub fn cmd_track(manifest: &Path, layer: Option<LayerPattern>, out: &Path) -> Result<ReportBundle> {
    let series = series_with_override(manifest, layer)?;
    let names = series_layers(&series)?;
    ensure_dir(out)?;
    let mut bundle = ReportBundle::new(ReportKind::Trajectory);
    for name in names {
        let traj = metrics::trajectory_for(&series, &name)?;
        let stem = file_stem(&name);
        let csv = out.join(format!("trajectory_{stem}.csv"));
        let pgm = out.join(format!("trajectory_{stem}.pgm"));
        write_file(&csv, trajectory_csv(&traj))?;
        write_file(&pgm, heatmap_pgm(&traj))?;
        writeln!(
            bundle.summary,
            "{name}: {} epochs x {} radius classes",
            traj.epochs.len(),
            traj.radii.len()
        )
        .unwrap();
        bundle.csv_paths.push(csv);
        bundle.image_paths.push(pgm);
    }
    Ok(bundle)
}

pub fn ssr_csv(report: &SsrReport) -> String {
    format!(
        "layer,epoch_init,epoch_final,r_thresh,e_high_init,e_high_final,ssr\n{},{},{},{},{},{},{}\n",
        report.layer,
        report.epochs.0,
        report.epochs.1,
        fmt_float(report.r_thresh),
        fmt_float(report.e_high_init),
        fmt_float(report.e_high_final),
        fmt_float(report.ssr)
    )
}

pub fn ssr_text(report: &SsrReport) -> String {
    format!(
        "layer {}\nepochs {} -> {}\nr_thresh {:.6}\ne_high_init {:.5e}\ne_high_final {:.5e}\nssr {:.6}\n",
        report.layer,
        report.epochs.0,
        report.epochs.1,
        report.r_thresh,
        report.e_high_init,
        report.e_high_final,
        report.ssr
    )
}

pub fn cmd_ssr(
    manifest: &Path,
    layer: Option<LayerPattern>,
    mode: ThresholdMode,
    out: &Path,
) -> Result<ReportBundle> {
    let series = series_with_override(manifest, layer)?;
    let names = series_layers(&series)?;
    ensure_dir(out)?;
    let mut bundle = ReportBundle::new(ReportKind::Ssr);
    for name in names {
        let report = metrics::layer_ssr_for(&series, &name, mode)?;
        let stem = file_stem(&name);
        let csv = out.join(format!("ssr_{stem}.csv"));
        let txt = out.join(format!("ssr_{stem}.txt"));
        let text = ssr_text(&report);
        write_file(&csv, ssr_csv(&report))?;
        write_file(&txt, &text)?;
        bundle.summary.push_str(&text);
        bundle.csv_paths.push(csv);
    }
    Ok(bundle)
}

fn lambda_tag(lambda: f64) -> String {
    format!("{lambda}")
}

pub fn ev_curve_csv(result: &LabResult) -> String {
    let mut csv = String::from("step");
    for k in BANDS {
        write!(csv, ",ev_k{k}").unwrap();
    }
    csv.push('\n');
    for i in 0..result.curves[0].len() {
        write!(csv, "{}", result.curves[0][i].step).unwrap();
        for curve in &result.curves {
            write!(csv, ",{}", fmt_float(curve[i].ev)).unwrap();
        }
        csv.push('\n');
    }
    csv
}

pub fn loss_curve_csv(result: &LabResult) -> String {
    let mut csv = String::from("step,mse\n");
    for &(step, mse) in &result.train_loss_curve {
        writeln!(csv, "{step},{}", fmt_float(mse)).unwrap();
    }
    csv
}

/// Final EV per band and condition; later columns carry their relative change against the first.
pub fn lab_table(results: &[LabResult]) -> String {
    const NAMES: [&str; 3] = ["Low", "Mid", "High"];
    let mut text = format!("{:<16}", "Metric");
    for r in results {
        write!(text, "  {:<22}", format!("lambda={}", lambda_tag(r.config.lambda_l2))).unwrap();
    }
    text.push('\n');
    for (band, (name, k)) in NAMES.iter().zip(BANDS).enumerate() {
        write!(text, "{:<16}", format!("{name} (k={k})")).unwrap();
        let base = results[0].ev_final[band];
        for (i, r) in results.iter().enumerate() {
            let ev = r.ev_final[band];
            let cell = if i == 0 || base == 0.0 {
                format!("{ev:.4}")
            } else {
                format!("{ev:.4} ({:+.2}%)", 100.0 * (ev - base) / base)
            };
            write!(text, "  {cell:<22}").unwrap();
        }
        text.push('\n');
    }
    text
}

pub fn lab_final_csv(results: &[LabResult]) -> String {
    let mut csv = String::from("lambda,seed,steps,ev_k5,ev_k20,ev_k50,weight_norm_sq\n");
    for r in results {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            lambda_tag(r.config.lambda_l2),
            r.config.seed,
            r.config.steps,
            fmt_float(r.ev_final[0]),
            fmt_float(r.ev_final[1]),
            fmt_float(r.ev_final[2]),
            fmt_float(r.weight_norm_sq)
        )
        .unwrap();
    }
    csv
}

pub fn cmd_lab(args: &LabArgs) -> Result<ReportBundle> {
    let configs: Vec<LabConfig> = args.lambdas.iter().map(|&l| args.config(l)).collect();
    for c in &configs {
        c.validate()?;
    }
    let results = configs
        .par_iter()
        .map(freq_lab::train)
        .collect::<Result<Vec<_>>>()?;

    ensure_dir(&args.out)?;
    let mut bundle = ReportBundle::new(ReportKind::Lab);
    for r in &results {
        let tag = lambda_tag(r.config.lambda_l2);
        let ev = args.out.join(format!("ev_curve_lambda={tag}.csv"));
        let loss = args.out.join(format!("loss_curve_lambda={tag}.csv"));
        write_file(&ev, ev_curve_csv(r))?;
        write_file(&loss, loss_curve_csv(r))?;
        bundle.csv_paths.push(ev);
        bundle.csv_paths.push(loss);
    }
    let final_csv = args.out.join("lab_final.csv");
    write_file(&final_csv, lab_final_csv(&results))?;
    bundle.csv_paths.push(final_csv);

    bundle.summary = lab_table(&results);
    write_file(&args.out.join("lab_summary.txt"), &bundle.summary)?;
    Ok(bundle)
}

fn band_csv_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "perturbed".into());
    out.with_file_name(format!("{stem}.bands.csv"))
}

pub fn cmd_perturb(
    container: &Path,
    tensor: &str,
    sigma: f64,
    factor: Option<usize>,
    seed: u64,
    split: f64,
    out: &Path,
) -> Result<ReportBundle> {
    let mut tensors = read_container(container)?;
    let index = tensors
        .iter()
        .position(|t| t.name() == tensor)
        .ok_or_else(|| Error::NoMatch(tensor.to_string()))?;
    let image = perturb::image_from_tensor(&tensors[index])?;

    let mut perturbed = perturb::add_gaussian_noise(image.view(), sigma, seed)?;
    if let Some(factor) = factor {
        perturbed = perturb::degrade_resolution(perturbed.view(), factor)?;
    }
    if sigma != 0.0 || factor.is_some() {
        tensors[index] = perturb::image_to_tensor(tensor, perturbed.view());
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ensure_dir(dir)?;
    }
    tensor_store::write_container(&tensors, out)?;

    let mut bundle = ReportBundle::new(ReportKind::Perturb);
    let (_, h, w) = image.dim();
    if h == w {
        let before = perturb::image_band_energy(image.view(), split)?;
        let after = perturb::image_band_energy(perturbed.view(), split)?;
        let share = |b: &metrics::BandEnergy| {
            if b.total() > 0.0 {
                b.e_high / b.total()
            } else {
                0.0
            }
        };
        let mut csv = String::from("stage,e_low,e_high,high_share\n");
        for (stage, b) in [("input", &before), ("output", &after)] {
            writeln!(
                csv,
                "{stage},{},{},{}",
                fmt_float(b.e_low),
                fmt_float(b.e_high),
                fmt_float(share(b))
            )
            .unwrap();
        }
        let path = band_csv_path(out);
        write_file(&path, csv)?;
        bundle.csv_paths.push(path);
        bundle.summary = format!(
            "{tensor}: high-band share {:.6} -> {:.6} (split {split} of r_max)\n",
            share(&before),
            share(&after)
        );
    } else {
        bundle.summary = format!("{tensor}: {h}x{w} is not square, band energies skipped\n");
    }
    Ok(bundle)
}
