use super::als::Fitter;
use super::{CorrectionSchedule, FitConfig};
use crate::error::Result;
use crate::model::TcModel;
use crate::report::{CorrectionEvent, CorrectionKind, DecompositionReport, Termination};
use crate::stabilize::{intensity_correct, ssc_correct, ssc_correct_masked, CorrectionConfig};
use crate::tensor::{DenseTensor, MaskTensor};

/// Sensitivity correction at the current error level; with
/// `intensity_first`, intensity correction runs before it and the combined
/// result is kept only if it ends below the starting sensitivity.
fn correct_once(
    fit: &mut Fitter,
    iteration: usize,
    corr: &CorrectionConfig,
) -> Result<()> {
    let y = fit.target.y;
    let mask = fit.target.mask;
    let norm = fit.target.norm;
    let start = fit.model.clone();
    let err_abs = fit.target.error(&start);
    let delta = err_abs * corr.delta_factor;
    let ss_before = start.sensitivity().sensitivity;
    let err_before = err_abs / norm;

    let ssc = |m: &TcModel| match mask {
        None => ssc_correct(y, m, Some(delta), corr),
        Some(w) => ssc_correct_masked(y, w, m, Some(delta), corr),
    };

    let mut kind = CorrectionKind::Sensitivity;
    let mut out = None;
    if corr.intensity_first {
        let (mi, _) = intensity_correct(y, mask, &start, Some(delta), corr)?;
        let (ms, _) = ssc(&mi)?;
        if ms.sensitivity().sensitivity <= ss_before {
            kind = CorrectionKind::Intensity;
            out = Some(ms);
        }
    }
    let out = match out {
        Some(m) => m,
        None => ssc(&start)?.0,
    };
    let ss_after = out.sensitivity().sensitivity;
    let err_after = fit.target.error(&out) / norm;
    fit.report.correction_events.push(CorrectionEvent {
        iteration,
        kind,
        ss_before,
        ss_after,
        error_before: err_before,
        error_after: err_after,
    });
    fit.model = out;
    Ok(())
}

fn run(
    y: &DenseTensor,
    mask: Option<&MaskTensor>,
    m0: &TcModel,
    cfg: &FitConfig,
    corr: &CorrectionConfig,
) -> Result<(TcModel, DecompositionReport)> {
    cfg.validate()?;
    corr.validate()?;
    let mut fit = Fitter::new(y, mask, m0)?;
    let mut last_correction = 0;
    let mut corrections = 0;
    for it in 1..=cfg.max_iters {
        let err = fit.sweep()?;
        if err <= cfg.rel_err_tol {
            return Ok(fit.finish(Termination::Converged));
        }
        let stalled = fit.stalled(cfg.stall_window, cfg.stall_tol, last_correction);
        let ss = fit.model.sensitivity().sensitivity;
        let (due, more_scheduled) = match &cfg.correction_schedule {
            CorrectionSchedule::At(list) => (list.contains(&it), list.iter().any(|&k| k > it)),
            CorrectionSchedule::Trigger(_) => {
                let cooled = corrections == 0 || it - last_correction >= cfg.stall_window;
                let can = corrections < cfg.max_corrections && cooled;
                (can && (ss >= cfg.ss_max || stalled), corrections < cfg.max_corrections)
            }
        };
        if due {
            correct_once(&mut fit, it, corr)?;
            last_correction = it;
            corrections += 1;
            continue;
        }
        if stalled && !more_scheduled {
            return Ok(fit.finish(Termination::Stalled));
        }
    }
    Ok(fit.finish(Termination::MaxIters))
}

/// Alternating least squares interleaved with sensitivity correction at the
/// current error level, either on a fixed schedule or when the sensitivity
/// reaches `ss_max` / the error stalls.
pub fn fit_with_ss_control(
    y: &DenseTensor,
    m0: &TcModel,
    cfg: &FitConfig,
    corr: &CorrectionConfig,
) -> Result<(TcModel, DecompositionReport)> {
    run(y, None, m0, cfg, corr)
}

pub fn fit_with_ss_control_masked(
    y: &DenseTensor,
    mask: &MaskTensor,
    m0: &TcModel,
    cfg: &FitConfig,
    corr: &CorrectionConfig,
) -> Result<(TcModel, DecompositionReport)> {
    run(y, Some(mask), m0, cfg, corr)
}
