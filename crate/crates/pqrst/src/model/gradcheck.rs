//! Finite-difference verification of the analytic gradient.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::FeatureTensor;
use crate::error::{Error, Result};
use crate::grid_codec::TargetGrid;
use crate::loss::{grid_loss, grid_loss_grad, CONF_DEAD_ZONE, SS_DEAD_ZONE};
use crate::model::{net, ModelParams};
use crate::signal_io::WaveClass;

/// Margin keeping the sample away from the loss threshold bands, where
/// the loss is not differentiable.
const THRESHOLD_MARGIN: f64 = 0.02;

/// Compares the analytic gradient of loss(forward(params, sample)) against
/// central finite differences on `n_coords` randomly chosen parameter
/// coordinates. Returns the maximum relative deviation.
///
/// Coordinates whose perturbation flips a ReLU activation pattern are
/// skipped: across such a kink the numerical quotient does not estimate
/// the one-sided derivative the backward pass computes. The sample itself
/// must keep every cell clear of the loss threshold bands.
pub fn gradient_check(
    params: &ModelParams,
    features: &FeatureTensor,
    target: &TargetGrid,
    epsilon: f64,
    n_coords: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon must be positive"));
    }
    let input = net::Tensor {
        c: features.n_leads,
        h: features.n_mel,
        w: features.n_frames,
        data: features.data.clone(),
    };
    let (pred, cache) = net::forward_full(params, &input);

    // Reject samples near the non-differentiable threshold bands.
    for i in 0..pred.n_intervals {
        for class in WaveClass::ALL {
            if !target.class_mask[class.index()] {
                continue;
            }
            let p = pred.cell(i, class);
            let t = target.cell(i, class);
            let conf_dist = ((p.confidence - t.confidence).abs() - CONF_DEAD_ZONE).abs();
            let ss = (p.start_frac - t.start_frac).powi(2) + (p.end_frac - t.end_frac).powi(2);
            let ss_dist = (ss - SS_DEAD_ZONE).abs();
            if conf_dist < THRESHOLD_MARGIN || ss_dist < THRESHOLD_MARGIN {
                return Err(Error::invalid(format!(
                    "cell ({i}, {class}) sits within {THRESHOLD_MARGIN} of a loss threshold; \
                     pick a different sample"
                )));
            }
        }
    }

    let cell_grads = grid_loss_grad(&pred, target)?;
    let analytic = net::backward(params, &cache, &cell_grads);

    let eval = |data: &mut Vec<f64>, idx: usize, delta: f64| -> Result<(f64, u64)> {
        let original = data[idx];
        data[idx] = original + delta;
        let probe = ModelParams {
            config: params.config.clone(),
            data: std::mem::take(data),
        };
        let (p, c) = net::forward_full(&probe, &input);
        *data = probe.data;
        data[idx] = original;
        let (loss, _) = grid_loss(&p, target)?;
        Ok((loss, c.activation_pattern()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = params.data.clone();
    let mut max_deviation: f64 = 0.0;
    let mut checked = 0usize;
    let mut attempts = 0usize;
    while checked < n_coords && attempts < 20 * n_coords {
        attempts += 1;
        let idx = rng.random_range(0..data.len());
        let (loss_plus, pat_plus) = eval(&mut data, idx, epsilon)?;
        let (loss_minus, pat_minus) = eval(&mut data, idx, -epsilon)?;
        if pat_plus != pat_minus {
            continue;
        }
        let numeric = (loss_plus - loss_minus) / (2.0 * epsilon);
        let a = analytic[idx];
        let deviation = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
        max_deviation = max_deviation.max(deviation);
        checked += 1;
    }
    if checked < n_coords {
        return Err(Error::invalid(format!(
            "only {checked} of {n_coords} coordinates were checkable without crossing a kink"
        )));
    }
    Ok(max_deviation)
}
