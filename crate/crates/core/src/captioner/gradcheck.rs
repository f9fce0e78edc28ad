use super::{CaptionerError, EncodedSample, ModelState, Net};

/// Below this combined magnitude the error is effectively absolute. Some
/// gradients are exactly zero (attention key biases cancel in the softmax),
/// where the finite difference is pure rounding noise of order 1e-12/ε.
pub const DENOM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest `|g_a − g_n| / max(DENOM_FLOOR, |g_a| + |g_n|)` over all
    /// parameters.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub n_params: usize,
}

fn mean_loss(net: Net<'_>, sample: &EncodedSample, grads: Option<&mut [f64]>) -> Result<f64, CaptionerError> {
    let mask = sample.mask.as_deref();
    let mut scratch;
    let grads = match grads {
        Some(g) => g,
        None => {
            scratch = vec![0.0; net.params.len()];
            &mut scratch[..]
        }
    };
    // Count first so the accumulated gradient is that of the mean.
    let count = match mask {
        Some(m) => m.iter().filter(|&&b| b).count(),
        None => sample.alt_ids.len() + 1,
    };
    if count == 0 {
        return Err(CaptionerError::EmptyMask);
    }
    let (nll, n) = net.accumulate_grad::<rand_chacha::ChaCha8Rng>(
        Some(&sample.embedding),
        &sample.tweet_ids,
        &sample.alt_ids,
        mask,
        1.0 / count as f64,
        grads,
        None,
    )?;
    Ok(nll / n as f64)
}

/// Compares the analytic gradient of the mean masked NLL of `sample` with
/// central finite differences for every mapper and decoder parameter.
///
/// Cost is two forward passes per parameter; intended for toy configurations.
pub fn grad_check(state: &ModelState, sample: &EncodedSample, epsilon: f64) -> Result<GradCheck, CaptionerError> {
    let mut analytic = vec![0.0; state.num_params()];
    mean_loss(state.net(), sample, Some(&mut analytic))?;

    let mut params = state.params.clone();
    let mut worst = (0.0f64, 0usize);
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + epsilon;
        let up = mean_loss(net_over(state, &params), sample, None)?;
        params[i] = orig - epsilon;
        let down = mean_loss(net_over(state, &params), sample, None)?;
        params[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(DENOM_FLOOR);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradCheck {
        max_rel_error: worst.0,
        worst_param: worst.1,
        n_params: params.len(),
    })
}

fn net_over<'a>(state: &'a ModelState, params: &'a [f64]) -> Net<'a> {
    Net {
        cfg: &state.config,
        layout: &state.layout,
        params,
    }
}
