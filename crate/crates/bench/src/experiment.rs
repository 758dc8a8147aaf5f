//! Seeded multi-run experiments: generate data, fit it many times, and
//! aggregate success rates and error/sensitivity statistics.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tchain::decompose::{
    als_fit, fit_with_ss_control, fit_with_ss_control_masked, init_model, masked_als_fit,
};
use tchain::{
    relative_error, CorrectionConfig, DecompositionReport, DenseTensor, FitConfig, MaskTensor, TcModel,
};

use crate::generate::{gen_collinear, gen_synthetic, mix_seed, random_mask};
use crate::image::read_ppm;

/// Relative error at or below which a run counts as a success.
pub const SUCCESS_TOL: f64 = 1e-6;

/// Seed streams; instance data, masks and initial models never share one.
const DATA_STREAM: u64 = 1;
const MASK_STREAM: u64 = 2;
const INIT_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Exact chain with Gaussian cores.
    Synthetic,
    /// Exact chain with highly collinear core columns, unit norm.
    Collinear,
    /// Exact Gaussian chain with a fraction of entries missing.
    Masked,
    /// A fixed image (`image` path), refitted from several starts.
    Image,
    /// Exact chain over `(C_out, C_in, D²)`, a low-rank convolution kernel.
    Kernel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Als,
    SsControl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub name: String,
    pub family: Family,
    pub dims: Vec<usize>,
    pub bonds: Vec<usize>,
    pub n_instances: usize,
    pub n_inits: usize,
    /// Range of pairwise column cosines for [`Family::Collinear`].
    pub collinearity: (f64, f64),
    /// Fraction of missing entries for [`Family::Masked`].
    pub missing_fraction: f64,
    /// Image file for [`Family::Image`] (PPM or TCT1).
    pub image: Option<PathBuf>,
    pub solver: Solver,
    pub fit: FitConfig,
    pub correction: CorrectionConfig,
    pub seed: u64,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            family: Family::Synthetic,
            dims: vec![7, 7, 7],
            bonds: vec![3, 3, 3],
            n_instances: 1,
            n_inits: 1,
            collinearity: (0.97, 0.99),
            missing_fraction: 0.5,
            image: None,
            solver: Solver::SsControl,
            fit: FitConfig::default(),
            correction: CorrectionConfig::default(),
            seed: 0,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.n_instances == 0 || self.n_inits == 0 {
            bail!("{}: n_instances and n_inits must be positive", self.name);
        }
        if self.family != Family::Image && (self.dims.len() < 3 || self.dims.len() != self.bonds.len()) {
            bail!("{}: need at least 3 dims and one bond per dim", self.name);
        }
        if self.family == Family::Image && self.bonds.len() != 3 {
            bail!("{}: an image fit needs 3 bonds", self.name);
        }
        let (lo, hi) = self.collinearity;
        if self.family == Family::Collinear && !(0.0 < hi && lo <= hi && hi < 1.0 && lo >= 0.0) {
            bail!("{}: collinearity range must lie in (0, 1)", self.name);
        }
        if self.family == Family::Masked && !(0.0..1.0).contains(&self.missing_fraction) {
            bail!("{}: missing_fraction must be in [0, 1)", self.name);
        }
        if self.family == Family::Kernel {
            let d2 = self.dims[2];
            let d = (d2 as f64).sqrt().round() as usize;
            if self.dims.len() != 3 || d * d != d2 {
                bail!("{}: kernel dims are (C_out, C_in, D²)", self.name);
            }
        }
        if self.family == Family::Image && self.image.is_none() {
            bail!("{}: the image family needs an image path", self.name);
        }
        self.fit.validate()?;
        self.correction.validate()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub instance: usize,
    pub init: usize,
    pub init_seed: u64,
    /// Relative error on the fitted entries (observed entries when masked).
    pub final_err: f64,
    /// Relative error on all entries.
    pub full_err: f64,
    pub ss: f64,
    pub intensity: f64,
    pub iters: usize,
    pub events: usize,
    pub termination: String,
    pub wall_time: f64,
    pub error: Option<String>,
    #[serde(skip)]
    pub report: Option<DecompositionReport>,
}

impl RunRecord {
    pub fn succeeded(&self) -> bool {
        self.error.is_none() && self.final_err <= SUCCESS_TOL
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linear-interpolation quantiles; NaN for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return Self { min: f64::NAN, q25: f64::NAN, median: f64::NAN, q75: f64::NAN, max: f64::NAN };
        }
        v.sort_by(f64::total_cmp);
        let at = |p: f64| {
            let x = p * (v.len() - 1) as f64;
            let (i, f) = (x.floor() as usize, x - x.floor());
            if i + 1 < v.len() { v[i] * (1.0 - f) + v[i + 1] * f } else { v[i] }
        };
        Self { min: v[0], q25: at(0.25), median: at(0.5), q75: at(0.75), max: v[v.len() - 1] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessSummary {
    pub name: String,
    pub solver: Solver,
    pub success_rate: f64,
    pub successes: usize,
    pub failed_runs: usize,
    pub error: Quantiles,
    pub ss: Quantiles,
    pub intensity: Quantiles,
    /// Correction events whose error grew beyond the configured bound.
    pub unsafe_events: usize,
    pub records: Vec<RunRecord>,
}

/// Data of one problem instance.
pub struct Instance {
    pub y: DenseTensor,
    pub mask: Option<MaskTensor>,
    pub truth: Option<TcModel>,
}

pub fn make_instance(spec: &ExperimentSpec, instance: usize) -> anyhow::Result<Instance> {
    let seed = mix_seed(mix_seed(spec.seed, DATA_STREAM), instance as u64);
    let exact = |(y, truth): (DenseTensor, TcModel)| Instance { y, mask: None, truth: Some(truth) };
    Ok(match spec.family {
        Family::Synthetic | Family::Kernel => exact(gen_synthetic(&spec.dims, &spec.bonds, seed)?),
        Family::Collinear => exact(gen_collinear(&spec.dims, &spec.bonds, spec.collinearity, seed)?),
        Family::Masked => {
            let mut inst = exact(gen_synthetic(&spec.dims, &spec.bonds, seed)?);
            let mseed = mix_seed(mix_seed(spec.seed, MASK_STREAM), instance as u64);
            inst.mask = Some(random_mask(&spec.dims, spec.missing_fraction, mseed)?);
            inst
        }
        Family::Image => {
            let path = spec.image.as_ref().context("image path missing")?;
            Instance { y: load_image(path)?, mask: None, truth: None }
        }
    })
}

/// PPM (P6) or TCT1 image, as an `H x W x C` tensor.
pub fn load_image(path: &Path) -> anyhow::Result<DenseTensor> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"P6") {
        Ok(read_ppm(&mut bytes.as_slice())?)
    } else {
        Ok(tchain::io::read_tensor(&mut bytes.as_slice())?)
    }
}

pub fn init_seed(spec: &ExperimentSpec, instance: usize, init: usize) -> u64 {
    mix_seed(mix_seed(spec.seed, INIT_STREAM), (instance * spec.n_inits + init) as u64)
}

/// One fit of one instance. Failures become records with `error` set.
pub fn run_one(spec: &ExperimentSpec, inst: &Instance, instance: usize, init: usize) -> RunRecord {
    let seed = init_seed(spec, instance, init);
    let mut rec = RunRecord {
        instance,
        init,
        init_seed: seed,
        final_err: f64::NAN,
        full_err: f64::NAN,
        ss: f64::NAN,
        intensity: f64::NAN,
        iters: 0,
        events: 0,
        termination: String::new(),
        wall_time: 0.0,
        error: None,
        report: None,
    };
    let dims = inst.y.dims().to_vec();
    let fitted = init_model(&dims, &spec.bonds, seed, spec.fit.init_scheme, Some(inst.y.frobenius_norm()))
        .and_then(|m0| match (spec.solver, &inst.mask) {
            (Solver::Als, None) => als_fit(&inst.y, &m0, &spec.fit),
            (Solver::Als, Some(w)) => masked_als_fit(&inst.y, w, &m0, &spec.fit),
            (Solver::SsControl, None) => fit_with_ss_control(&inst.y, &m0, &spec.fit, &spec.correction),
            (Solver::SsControl, Some(w)) => {
                fit_with_ss_control_masked(&inst.y, w, &m0, &spec.fit, &spec.correction)
            }
        });
    match fitted {
        Ok((m, report)) => {
            rec.final_err = report.final_error().unwrap_or(f64::NAN);
            rec.full_err = relative_error(&inst.y, &m.reconstruct()).unwrap_or(f64::NAN);
            rec.ss = report.final_sensitivity().unwrap_or(f64::NAN);
            rec.intensity = report.intensity.last().copied().unwrap_or(f64::NAN);
            rec.iters = report.iterations();
            rec.events = report.correction_events.len();
            rec.termination = report
                .termination
                .map(|t| format!("{t:?}").to_lowercase())
                .unwrap_or_default();
            rec.wall_time = report.wall_time;
            rec.report = Some(report);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Events whose error exceeds `delta_factor` times the error before them.
fn unsafe_events(report: &DecompositionReport, delta_factor: f64) -> usize {
    report
        .correction_events
        .iter()
        .filter(|e| e.error_after > e.error_before * delta_factor * (1.0 + 1e-9) + 1e-15)
        .count()
}

/// Worker pool honoring `TC_THREADS`.
pub fn thread_pool() -> anyhow::Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("TC_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        b = b.num_threads(n.max(1));
    }
    Ok(b.build()?)
}

/// Runs `n_instances x n_inits` fits in parallel and aggregates them. The
/// outcome does not depend on the number of threads.
pub fn run_experiment(spec: &ExperimentSpec) -> anyhow::Result<SuccessSummary> {
    spec.validate()?;
    let pool = thread_pool()?;
    let instances: Vec<Instance> = (0..spec.n_instances)
        .map(|i| make_instance(spec, i))
        .collect::<anyhow::Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..spec.n_instances)
        .flat_map(|i| (0..spec.n_inits).map(move |k| (i, k)))
        .collect();
    let records: Vec<RunRecord> =
        pool.install(|| jobs.par_iter().map(|&(i, k)| run_one(spec, &instances[i], i, k)).collect());
    Ok(summarize(spec, records))
}

pub fn summarize(spec: &ExperimentSpec, records: Vec<RunRecord>) -> SuccessSummary {
    let ok: Vec<&RunRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let successes = records.iter().filter(|r| r.succeeded()).count();
    let pick = |f: fn(&RunRecord) -> f64| ok.iter().map(|r| f(r)).collect::<Vec<_>>();
    let unsafe_count = records
        .iter()
        .filter_map(|r| r.report.as_ref())
        .map(|rep| unsafe_events(rep, spec.correction.delta_factor))
        .sum();
    SuccessSummary {
        name: spec.name.clone(),
        solver: spec.solver,
        success_rate: successes as f64 / records.len().max(1) as f64,
        successes,
        failed_runs: records.len() - ok.len(),
        error: Quantiles::of(&pick(|r| r.final_err)),
        ss: Quantiles::of(&pick(|r| r.ss)),
        intensity: Quantiles::of(&pick(|r| r.intensity)),
        unsafe_events: unsafe_count,
        records,
    }
}

/// A list of experiments run back to back.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Suite {
    pub name: String,
    pub experiments: Vec<ExperimentSpec>,
    /// Write per-run error/sensitivity/intensity trajectories as CSV.
    pub dump_trajectories: bool,
}

pub fn write_records_csv(path: &Path, records: &[RunRecord]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "instance", "init", "init_seed", "final_err", "full_err", "ss", "intensity", "iters", "events",
        "termination", "wall_time", "error",
    ])?;
    for r in records {
        w.write_record([
            r.instance.to_string(),
            r.init.to_string(),
            r.init_seed.to_string(),
            format!("{:e}", r.final_err),
            format!("{:e}", r.full_err),
            format!("{:e}", r.ss),
            format!("{:e}", r.intensity),
            r.iters.to_string(),
            r.events.to_string(),
            r.termination.clone(),
            format!("{:.6}", r.wall_time),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_csv(path: &Path, report: &DecompositionReport) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "relative_error", "sensitivity", "intensity"])?;
    for (k, ((e, s), a)) in report
        .relative_error
        .iter()
        .zip(&report.sensitivity)
        .zip(&report.intensity)
        .enumerate()
    {
        w.write_record([k.to_string(), format!("{e:e}"), format!("{s:e}"), format!("{a:e}")])?;
    }
    w.flush()?;
    Ok(())
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
}

/// Runs every experiment of a suite and writes `<name>.csv` per experiment
/// and `summary.json` (without per-run records) to `out`.
pub fn run_suite(suite: &Suite, out: &Path) -> anyhow::Result<Vec<SuccessSummary>> {
    for spec in &suite.experiments {
        spec.validate()?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut summaries = Vec::new();
    for spec in &suite.experiments {
        let summary = run_experiment(spec)?;
        let stem = file_stem(&spec.name);
        write_records_csv(&out.join(format!("{stem}.csv")), &summary.records)?;
        if suite.dump_trajectories {
            let dir = out.join("trajectories");
            fs::create_dir_all(&dir)?;
            for r in &summary.records {
                if let Some(rep) = &r.report {
                    write_trajectory_csv(&dir.join(format!("{stem}_{}_{}.csv", r.instance, r.init)), rep)?;
                }
            }
        }
        summaries.push(summary);
    }
    let light: Vec<SuccessSummary> = summaries
        .iter()
        .map(|s| SuccessSummary { records: Vec::new(), ..s.clone() })
        .collect();
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&light)?)?;
    Ok(summaries)
}

pub fn load_suite(path: &Path) -> anyhow::Result<Suite> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0, 5.0]);
        assert_eq!((q.min, q.q25, q.median, q.q75, q.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert_eq!(Quantiles::of(&[1.0, 2.0]).median, 1.5);
        assert!(Quantiles::of(&[]).median.is_nan());
    }

    #[test]
    fn spec_validation() {
        let mut s = ExperimentSpec::default();
        assert!(s.validate().is_ok());
        s.n_inits = 0;
        assert!(s.validate().is_err());
        let s = ExperimentSpec { family: Family::Kernel, dims: vec![4, 4, 8], ..Default::default() };
        assert!(s.validate().is_err());
        let s = ExperimentSpec { family: Family::Image, ..Default::default() };
        assert!(s.validate().is_err());
    }
}
