// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use tchain::conv::{rank_grid_search, ConvKernel, GridSearchConfig, RankGrid};
use tchain::decompose::{
    als_fit, fit_with_ss_control, fit_with_ss_control_masked, init_model, masked_als_fit, SolverConfig,
};
use tchain::io::{load_model, load_tensor, save_model};
use tchain::stabilize::{intensity_correct, ssc_correct, ssc_correct_masked};
use tchain::{relative_error, DecompositionReport, DenseTensor, MaskTensor, TcModel};
use tchain_bench::experiment::{load_image, load_suite, run_suite};
use tchain_bench::image::{image_fit_experiment, write_image_csv};

#[derive(Parser)]
#[command(name = "tc", version, about = "Tensor chain decomposition with sensitivity control")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Als,
    Ssctrl,
}

#[derive(Clone, Copy, ValueEnum)]
enum PenaltyArg {
    Sensitivity,
    Intensity,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit a chain model to a tensor.
    Decompose {
        tensor: PathBuf,
        /// Bond dimensions, e.g. 3,3,3.
        #[arg(long, value_delimiter = ',', required = true)]
        bonds: Vec<usize>,
        #[arg(long, value_enum, default_value = "ssctrl")]
        solver: SolverArg,
        /// JSON with `fit` and `correction` sections.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed of the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also save the fitted model.
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Lower the sensitivity (or intensity) of a model within an error bound.
    Correct {
        tensor: PathBuf,
        model: PathBuf,
        /// `auto` keeps the current error; a number is a relative error bound.
        #[arg(long, default_value = "auto")]
        delta: String,
        #[arg(long, value_enum, default_value = "sensitivity")]
        penalty: PenaltyArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run an experiment suite.
    Bench {
        suite: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank search for a convolution kernel stored as an order-4 tensor.
    Conv {
        kernel: PathBuf,
        /// Candidate ranks as `R1 list:R2 list:R3 list`, e.g. 2,4:2,4:2,4.
        #[arg(long)]
        grid: String,
        #[arg(long, default_value_t = f64::INFINITY)]
        flops_budget: f64,
        #[arg(long, default_value_t = f64::INFINITY)]
        err_threshold: f64,
        /// JSON with `stride` and `padding`; defaults to `<kernel>.json` if present.
        #[arg(long)]
        sidecar: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit an image with bonds (R1, R2, R1), with and without sensitivity control.
    Image {
        image: PathBuf,
        /// Candidate ranks as `R1 list:R2 list`, e.g. 2,4,6:4,8,16.
        #[arg(long)]
        grid: String,
        /// Largest parameter count; defaults to the number of pixel values.
        #[arg(long)]
        param_bound: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config(path: Option<&Path>) -> Result<SolverConfig> {
    let Some(path) = path else {
        return Ok(SolverConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: SolverConfig =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.fit.validate()?;
    cfg.correction.validate()?;
    Ok(cfg)
}

/// NaN entries become zeros plus a mask marking them missing.
fn split_missing(y: DenseTensor) -> Result<(DenseTensor, Option<MaskTensor>)> {
    if !y.data().iter().any(|v| v.is_nan()) {
        return Ok((y, None));
    }
    let observed: Vec<bool> = y.data().iter().map(|v| !v.is_nan()).collect();
    let mask = MaskTensor::new(y.dims().to_vec(), observed)?;
    let mut y = y;
    for v in y.data_mut() {
        if v.is_nan() {
            *v = 0.0;
        }
    }
    Ok((y, Some(mask)))
}

fn load_data(path: &Path, masked: bool) -> Result<(DenseTensor, Option<MaskTensor>)> {
    let y = load_tensor(path).with_context(|| format!("loading {}", path.display()))?;
    if masked {
        split_missing(y)
    } else {
        if y.data().iter().any(|v| !v.is_finite()) {
            bail!("{} has non-finite entries; set fit.masked to treat NaN as missing", path.display());
        }
        Ok((y, None))
    }
}

#[derive(Serialize)]
struct RunOutput<'a> {
    final_error: f64,
    /// Error on every entry; absent when entries are missing.
    #[serde(skip_serializing_if = "Option::is_none")]
    full_error: Option<f64>,
    sensitivity: f64,
    intensity: f64,
    report: &'a DecompositionReport,
}

fn write_report(
    path: &Path,
    y: &DenseTensor,
    mask: Option<&MaskTensor>,
    m: &TcModel,
    report: &DecompositionReport,
) -> Result<()> {
    let stab = m.sensitivity();
    let out = RunOutput {
        final_error: report.final_error().unwrap_or(f64::NAN),
        full_error: match mask {
            None => Some(relative_error(y, &m.reconstruct())?),
            Some(_) => None,
        },
        sensitivity: stab.sensitivity,
        intensity: stab.intensity,
        report,
    };
    fs::write(path, serde_json::to_string_pretty(&out)?).with_context(|| format!("writing {}", path.display()))
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| t.trim().parse::<usize>().with_context(|| format!("bad rank {t:?}")))
        .collect()
}

fn parse_grid(s: &str, parts: usize) -> Result<Vec<Vec<usize>>> {
    let lists: Vec<Vec<usize>> = s.split(':').map(parse_list).collect::<Result<_>>()?;
    if lists.len() != parts || lists.iter().any(|l| l.is_empty() || l.contains(&0)) {
        bail!("grid {s:?} needs {parts} non-empty ':'-separated lists of positive ranks");
    }
    Ok(lists)
}

#[derive(serde::Deserialize)]
struct Sidecar {
    #[serde(default = "one")]
    stride: usize,
    #[serde(default)]
    padding: usize,
}

fn one() -> usize {
    1
}

fn decompose(
    tensor: &Path,
    bonds: &[usize],
    solver: SolverArg,
    config: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
    model_out: Option<&Path>,
) -> Result<()> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.fit.seed = s;
    }
    let (y, mask) = load_data(tensor, cfg.fit.masked)?;
    let m0 = init_model(y.dims(), bonds, cfg.fit.seed, cfg.fit.init_scheme, Some(y.frobenius_norm()))?;
    let (m, report) = match (solver, &mask) {
        (SolverArg::Als, None) => als_fit(&y, &m0, &cfg.fit)?,
        (SolverArg::Als, Some(w)) => masked_als_fit(&y, w, &m0, &cfg.fit)?,
        (SolverArg::Ssctrl, None) => fit_with_ss_control(&y, &m0, &cfg.fit, &cfg.correction)?,
        (SolverArg::Ssctrl, Some(w)) => fit_with_ss_control_masked(&y, w, &m0, &cfg.fit, &cfg.correction)?,
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_report(out, &y, mask.as_ref(), &m, &report)?;
    if let Some(p) = model_out {
        save_model(p, &m)?;
    }
    println!(
        "relative error {:.3e}, sensitivity {:.3e}, {} iterations",
        report.final_error().unwrap_or(f64::NAN),
        report.final_sensitivity().unwrap_or(f64::NAN),
        report.iterations()
    );
    Ok(())
}

fn correct(
    tensor: &Path,
    model: &Path,
    delta: &str,
    penalty: PenaltyArg,
    config: Option<&Path>,
    out: &Path,
    report_path: Option<&Path>,
) -> Result<()> {
    let cfg = read_config(config)?;
    let (y, mask) = load_data(tensor, cfg.fit.masked)?;
    let m0 = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    let norm = match &mask {
        None => y.frobenius_norm(),
        Some(w) => y.data().iter().zip(w.data()).filter(|(_, &o)| o).map(|(v, _)| v * v).sum::<f64>().sqrt(),
    };
    let delta = match delta {
        "auto" => None,
        s => Some(s.parse::<f64>().with_context(|| format!("bad delta {s:?}"))? * norm),
    };
    let (m, report) = match (penalty, &mask) {
        (PenaltyArg::Sensitivity, None) => ssc_correct(&y, &m0, delta, &cfg.correction)?,
        (PenaltyArg::Sensitivity, Some(w)) => ssc_correct_masked(&y, w, &m0, delta, &cfg.correction)?,
        (PenaltyArg::Intensity, w) => intensity_correct(&y, w.as_ref(), &m0, delta, &cfg.correction)?,
    };
    save_model(out, &m)?;
    if let Some(p) = report_path {
        write_report(p, &y, mask.as_ref(), &m, &report)?;
    }
    println!(
        "sensitivity {:.3e} -> {:.3e}, relative error {:.3e} -> {:.3e}",
        report.sensitivity.first().copied().unwrap_or(f64::NAN),
        report.final_sensitivity().unwrap_or(f64::NAN),
        report.relative_error.first().copied().unwrap_or(f64::NAN),
        report.final_error().unwrap_or(f64::NAN),
    );
    Ok(())
}

fn bench(suite: &Path, out: &Path) -> Result<()> {
    let suite = load_suite(suite)?;
    for s in run_suite(&suite, out)? {
        println!(
            "{}: success {}/{} ({:.1}%), median error {:.3e}, median ss {:.3e}, failed runs {}",
            s.name,
            s.successes,
            s.records.len(),
            100.0 * s.success_rate,
            s.error.median,
            s.ss.median,
            s.failed_runs
        );
    }
    Ok(())
}

fn conv(
    kernel: &Path,
    grid: &str,
    flops_budget: f64,
    err_threshold: f64,
    sidecar: Option<&Path>,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let weights = load_tensor(kernel).with_context(|| format!("loading {}", kernel.display()))?;
    let side_path = sidecar.map(Path::to_path_buf).or_else(|| {
        let p = kernel.with_extension("json");
        p.exists().then_some(p)
    });
    let side = match side_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => Sidecar { stride: 1, padding: 0 },
    };
    let k = ConvKernel::new(weights, side.stride, side.padding)?;
    let lists = parse_grid(grid, 3)?;
    let grid = RankGrid { r1: lists[0].clone(), r2: lists[1].clone(), r3: lists[2].clone() };
    let solver = match config {
        Some(p) => read_config(Some(p))?,
        None => {
            let g = GridSearchConfig::default();
            SolverConfig { fit: g.fit, correction: g.correction }
        }
    };
    let cfg = GridSearchConfig {
        flops_budget,
        err_threshold,
        fit: solver.fit,
        correction: solver.correction,
        ..GridSearchConfig::default()
    };
    let res = rank_grid_search(&k, &grid, &cfg)?;
    if res.entries.is_empty() {
        eprintln!(
            "no feasible ranks: {} over the FLOPs budget, {} above the error threshold",
            res.over_budget, res.above_threshold
        );
    }
    let sink: Box<dyn std::io::Write> = match out {
        Some(p) => Box::new(fs::File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(std::io::stdout()),
    };
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["R1", "R2", "R3", "rel_err", "flops", "params"])?;
    for e in &res.entries {
        w.write_record([
            e.r1.to_string(),
            e.r2.to_string(),
            e.r3.to_string(),
            format!("{:e}", e.rel_err),
            e.flops.to_string(),
            e.params.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn image(
    path: &Path,
    grid: &str,
    param_bound: Option<usize>,
    seed: u64,
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let img = load_image(path)?;
    let lists = parse_grid(grid, 2)?;
    let points: Vec<(usize, usize)> =
        lists[0].iter().flat_map(|&a| lists[1].iter().map(move |&b| (a, b))).collect();
    let cfg = read_config(config)?;
    let bound = param_bound.unwrap_or(img.len());
    let res = image_fit_experiment(&img, &points, Some(bound), seed, &cfg.fit, &cfg.correction)?;
    for (r1, r2) in &res.pruned {
        eprintln!("skipped ({r1}, {r2}, {r1}): more than {bound} parameters");
    }
    match out {
        Some(p) => write_image_csv(p, &res.rows)?,
        None => {
            println!("R1,R2,seed,rel_err_als,rel_err_ssc,params");
            for r in &res.rows {
                println!("{},{},{},{:e},{:e},{}", r.r1, r.r2, r.seed, r.rel_err_als, r.rel_err_ssc, r.params);
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Decompose { tensor, bonds, solver, config, seed, out, model_out } => {
            decompose(&tensor, &bonds, solver, config.as_deref(), seed, &out, model_out.as_deref())
        }
        Cmd::Correct { tensor, model, delta, penalty, config, out, report } => correct(
            &tensor,
            &model,
            &delta,
            penalty,
            config.as_deref(),
            &out,
            report.as_deref(),
        ),
        Cmd::Bench { suite, out } => bench(&suite, &out),
        Cmd::Conv { kernel, grid, flops_budget, err_threshold, sidecar, config, out } => conv(
            &kernel,
            &grid,
            flops_budget,
            err_threshold,
            sidecar.as_deref(),
            config.as_deref(),
            out.as_deref(),
        ),
        Cmd::Image { image: path, grid, param_bound, seed, config, out } => {
            image(&path, &grid, param_bound, seed, config.as_deref(), out.as_deref())
        }
    }
}
