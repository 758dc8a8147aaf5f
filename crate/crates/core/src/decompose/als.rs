use std::time::Instant;

use nalgebra::DMatrix;

use super::FitConfig;
use crate::error::{invalid, Result};
use crate::linalg::solve_right_spd;
use crate::model::TcModel;
use crate::report::{DecompositionReport, Termination};
use crate::target::Target;
use crate::tensor::{DenseTensor, MaskTensor};

pub(crate) struct StepOutcome {
    pub model: TcModel,
    /// Squared residual after the update, evaluated explicitly.
    pub residual_sq: f64,
    pub ridged: usize,
}

/// Least-squares update of core `n`: minimizes `‖W ∘ (Y_(n) − X Zᵀ)‖` over
/// the core unfolding `X`, row by row when a mask is present.
pub(crate) fn update(target: &Target, m: &TcModel, n: usize) -> Result<StepOutcome> {
    let z = m.subchain_matrix(n);
    let yu = &target.unfoldings[n];
    let (x, ridged) = match &target.weights {
        None => {
            let g = z.transpose() * &z;
            let f = yu * &z;
            let (x, r) = solve_right_spd(&g, &f);
            (x, usize::from(r))
        }
        Some(ws) => {
            let w = &ws[n];
            let k = z.ncols();
            let mut x = DMatrix::zeros(yu.nrows(), k);
            let mut ridged = 0;
            for i in 0..yu.nrows() {
                let mut g = DMatrix::zeros(k, k);
                let mut f = DMatrix::zeros(1, k);
                for j in 0..z.nrows() {
                    if w[(i, j)] == 0.0 {
                        continue;
                    }
                    let zj = z.row(j);
                    g += zj.transpose() * zj;
                    f += zj * yu[(i, j)];
                }
                let (xi, r) = solve_right_spd(&g, &f);
                ridged += usize::from(r);
                x.set_row(i, &xi.row(0));
            }
            (x, ridged)
        }
    };
    let resid = yu - &x * z.transpose();
    let residual_sq = match &target.weights {
        None => resid.norm_squared(),
        Some(ws) => resid.component_mul(&ws[n]).norm_squared(),
    };
    let mut model = m.clone();
    model.set_core_matrix(n, &x)?;
    Ok(StepOutcome { model, residual_sq, ridged })
}

fn check_dims(y: &DenseTensor, m: &TcModel) -> Result<()> {
    if y.dims() != m.mode_dims().as_slice() {
        return invalid(format!(
            "data dims {:?} do not match model dims {:?}",
            y.dims(),
            m.mode_dims()
        ));
    }
    Ok(())
}

/// Replaces core `n` by its least-squares optimum with the others fixed.
pub fn als_step(y: &DenseTensor, m: &TcModel, n: usize) -> Result<TcModel> {
    check_dims(y, m)?;
    if n >= m.order() {
        return invalid(format!("core index {n} out of range"));
    }
    Ok(update(&Target::new(y, None)?, m, n)?.model)
}

/// As [`als_step`], fitting only the observed entries.
pub fn masked_als_step(y: &DenseTensor, mask: &MaskTensor, m: &TcModel, n: usize) -> Result<TcModel> {
    check_dims(y, m)?;
    if n >= m.order() {
        return invalid(format!("core index {n} out of range"));
    }
    let mask = (!mask.is_full()).then_some(mask);
    Ok(update(&Target::new(y, mask)?, m, n)?.model)
}

/// State shared by the plain and the controlled fitting loops.
pub(crate) struct Fitter<'a> {
    pub target: Target<'a>,
    pub model: TcModel,
    pub report: DecompositionReport,
    pub start: Instant,
}

impl<'a> Fitter<'a> {
    pub fn new(y: &'a DenseTensor, mask: Option<&'a MaskTensor>, m0: &TcModel) -> Result<Self> {
        check_dims(y, m0)?;
        let mask = mask.filter(|w| !w.is_full());
        let target = Target::new(y, mask)?;
        let mut report = DecompositionReport::default();
        if let Some(w) = mask {
            report.warnings.extend(sparse_slice_warnings(w, m0));
        }
        let err = target.error(m0) / target.norm;
        let ss = m0.sensitivity().sensitivity;
        report.push(err, ss, m0.core_norms().iter().product());
        Ok(Self { target, model: m0.clone(), report, start: Instant::now() })
    }

    /// One sweep over all cores; records and returns the relative error.
    pub fn sweep(&mut self) -> Result<f64> {
        let mut residual_sq = 0.0;
        for n in 0..self.model.order() {
            let out = update(&self.target, &self.model, n)?;
            self.model = out.model;
            self.report.ridge_fallbacks += out.ridged;
            residual_sq = out.residual_sq;
        }
        let err = residual_sq.max(0.0).sqrt() / self.target.norm;
        let ss = self.model.sensitivity().sensitivity;
        self.report.push(err, ss, self.model.core_norms().iter().product());
        Ok(err)
    }

    /// Relative error decrease over the last `window` sweeps is below `tol`.
    pub fn stalled(&self, window: usize, tol: f64, since: usize) -> bool {
        let e = &self.report.relative_error;
        let t = e.len() - 1;
        if t < since + window {
            return false;
        }
        let old = e[t - window];
        let new = e[t];
        old <= 0.0 || (old - new) / old < tol
    }

    pub fn finish(mut self, termination: Termination) -> (TcModel, DecompositionReport) {
        self.report.termination = Some(termination);
        self.report.wall_time = self.start.elapsed().as_secs_f64();
        (self.model, self.report)
    }
}

/// Mode slices with fewer observed entries than the core row has unknowns.
fn sparse_slice_warnings(mask: &MaskTensor, m: &TcModel) -> Vec<String> {
    let dims = mask.dims();
    let order = dims.len();
    let bonds = m.bond_dims();
    let mut counts: Vec<Vec<usize>> = dims.iter().map(|&d| vec![0; d]).collect();
    let mut idx = vec![0usize; order];
    for &obs in mask.data() {
        if obs {
            for (k, &i) in idx.iter().enumerate() {
                counts[k][i] += 1;
            }
        }
        crate::tensor::increment(&mut idx, dims);
    }
    let mut out = Vec::new();
    for n in 0..order {
        let need = bonds[n] * bonds[(n + 1) % order];
        let thin = counts[n].iter().filter(|&&c| c < need).count();
        if thin > 0 {
            out.push(format!(
                "mode {n}: {thin} slice(s) have fewer than {need} observed entries; their least-squares problems are underdetermined"
            ));
        }
    }
    out
}

fn run(y: &DenseTensor, mask: Option<&MaskTensor>, m0: &TcModel, cfg: &FitConfig) -> Result<(TcModel, DecompositionReport)> {
    cfg.validate()?;
    let mut fit = Fitter::new(y, mask, m0)?;
    for _ in 0..cfg.max_iters {
        let err = fit.sweep()?;
        if err <= cfg.rel_err_tol {
            return Ok(fit.finish(Termination::Converged));
        }
        if fit.stalled(cfg.stall_window, cfg.stall_tol, 0) {
            return Ok(fit.finish(Termination::Stalled));
        }
    }
    Ok(fit.finish(Termination::MaxIters))
}

/// Alternating least squares over the cores in cyclic order.
pub fn als_fit(y: &DenseTensor, m0: &TcModel, cfg: &FitConfig) -> Result<(TcModel, DecompositionReport)> {
    run(y, None, m0, cfg)
}

/// Alternating least squares on the observed entries only. A fully observed
/// mask reduces to [`als_fit`].
pub fn masked_als_fit(
    y: &DenseTensor,
    mask: &MaskTensor,
    m0: &TcModel,
    cfg: &FitConfig,
) -> Result<(TcModel, DecompositionReport)> {
    run(y, Some(mask), m0, cfg)
}
