//! Training objective: a dead-zoned squared confidence loss plus a
//! target-gated start-end loss, summed over all grid cells.
//!
//! Both terms are exactly zero inside their dead zones (|pc - tc| < 0.25
//! for the confidence term, ss < 0.15 for the start-end term), so a
//! sufficiently close prediction reaches loss 0 exactly.

use crate::error::{Error, Result};
use crate::grid_codec::{PredictionGrid, TargetGrid};
use crate::signal_io::WaveClass;

/// Confidence-loss dead-zone half-width.
pub const CONF_DEAD_ZONE: f64 = 0.25;
/// Start-end squared-error dead zone.
pub const SS_DEAD_ZONE: f64 = 0.15;

/// Per-cell loss terms: confidence loss, start-end loss, and the squared
/// start-end error the gate is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellLossBreakdown {
    pub cl: f64,
    pub sel: f64,
    pub ss: f64,
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} is not finite: {v}")))
    }
}

/// Confidence loss: 0 when |pc - tc| < 0.25, else (pc - tc)^2.
///
/// The zero branch is strict, so at exactly 0.25 the squared branch
/// applies.
pub fn confidence_loss(pc: f64, tc: f64) -> Result<f64> {
    check_finite("pc", pc)?;
    check_finite("tc", tc)?;
    let d = pc - tc;
    Ok(if d.abs() < CONF_DEAD_ZONE { 0.0 } else { d * d })
}

/// Derivative of [`confidence_loss`] in `pc`; the active branch's
/// derivative applies at the threshold itself.
pub fn confidence_loss_grad(pc: f64, tc: f64) -> f64 {
    let d = pc - tc;
    if d.abs() < CONF_DEAD_ZONE {
        0.0
    } else {
        2.0 * d
    }
}

/// Start-end loss: ss = (ps-ts)^2 + (pe-te)^2; sel = 0 when ss < 0.15,
/// else ss * tc. Returns (ss, sel).
pub fn start_end_loss(ps: f64, pe: f64, ts: f64, te: f64, tc: f64) -> Result<(f64, f64)> {
    for (name, v) in [("ps", ps), ("pe", pe), ("ts", ts), ("te", te), ("tc", tc)] {
        check_finite(name, v)?;
    }
    let ss = (ps - ts).powi(2) + (pe - te).powi(2);
    let sel = if ss < SS_DEAD_ZONE { 0.0 } else { ss * tc };
    Ok((ss, sel))
}

/// Derivatives of the start-end loss in (ps, pe).
pub fn start_end_loss_grad(ps: f64, pe: f64, ts: f64, te: f64, tc: f64) -> (f64, f64) {
    let ss = (ps - ts).powi(2) + (pe - te).powi(2);
    if ss < SS_DEAD_ZONE {
        (0.0, 0.0)
    } else {
        (2.0 * tc * (ps - ts), 2.0 * tc * (pe - te))
    }
}

/// Total loss over a grid: sum of CL + SEL over every interval and class,
/// with masked classes contributing zero. Summation runs in fixed
/// interval-major order for reproducibility.
pub fn grid_loss(
    prediction: &PredictionGrid,
    target: &TargetGrid,
) -> Result<(f64, Vec<CellLossBreakdown>)> {
    if prediction.n_intervals != target.n_intervals {
        return Err(Error::config(format!(
            "prediction has {} intervals, target has {}",
            prediction.n_intervals, target.n_intervals
        )));
    }
    let mut total = 0.0;
    let mut breakdown = Vec::with_capacity(prediction.n_intervals * 3);
    for i in 0..prediction.n_intervals {
        for class in WaveClass::ALL {
            if !target.class_mask[class.index()] {
                breakdown.push(CellLossBreakdown::default());
                continue;
            }
            let p = prediction.cell(i, class);
            let t = target.cell(i, class);
            let cl = confidence_loss(p.confidence, t.confidence)?;
            let (ss, sel) = start_end_loss(
                p.start_frac,
                p.end_frac,
                t.start_frac,
                t.end_frac,
                t.confidence,
            )?;
            total += cl + sel;
            breakdown.push(CellLossBreakdown { cl, sel, ss });
        }
    }
    Ok((total, breakdown))
}

/// Gradient of [`grid_loss`] in the prediction: per cell
/// (d/d confidence, d/d start_frac, d/d end_frac), in the same
/// interval-major order as the breakdown.
pub fn grid_loss_grad(prediction: &PredictionGrid, target: &TargetGrid) -> Result<Vec<[f64; 3]>> {
    if prediction.n_intervals != target.n_intervals {
        return Err(Error::config("grid shape mismatch"));
    }
    let mut grads = Vec::with_capacity(prediction.n_intervals * 3);
    for i in 0..prediction.n_intervals {
        for class in WaveClass::ALL {
            if !target.class_mask[class.index()] {
                grads.push([0.0; 3]);
                continue;
            }
            let p = prediction.cell(i, class);
            let t = target.cell(i, class);
            let dc = confidence_loss_grad(p.confidence, t.confidence);
            let (ds, de) = start_end_loss_grad(
                p.start_frac,
                p.end_frac,
                t.start_frac,
                t.end_frac,
                t.confidence,
            );
            grads.push([dc, ds, de]);
        }
    }
    Ok(grads)
}
