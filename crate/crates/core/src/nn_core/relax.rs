//! Differentiable sampling devices: Gumbel-softmax for categorical outputs
//! and the Gaussian reparameterization for latent codes.

use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::tape::{self, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

/// Standard Gumbel draw, `-ln(-ln u)` with `u` strictly inside (0, 1).
pub fn gumbel<R: Rng>(rng: &mut R) -> f64 {
    let u = ((rng.gen::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
    -(-u.ln()).ln()
}

pub fn gumbel_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| gumbel(rng))
}

pub fn normal_noise<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn check_temperature(temperature: f64) -> Result<()> {
    if temperature > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )))
    }
}

/// Relaxed one-hot sample: `softmax((logits + G) / temperature)` per group
/// of `group` logits.
pub fn gumbel_softmax(logits: &[f64], group: usize, temperature: f64, seed: u64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    if group == 0 || logits.len() % group != 0 {
        return Err(Error::ShapeMismatch {
            context: "gumbel_softmax",
            expected: format!("a multiple of {group} logits"),
            actual: format!("{}", logits.len()),
        });
    }
    let mut r = rng::stream(seed);
    let perturbed = Array2::from_shape_fn((1, logits.len()), |(_, j)| {
        (logits[j] + gumbel(&mut r)) / temperature
    });
    Ok(tape::softmax_groups(&perturbed, group).into_raw_vec_and_offset().0)
}

/// Taped Gumbel-softmax over a `batch × (groups·group)` logit matrix; the
/// noise is a constant so gradients flow into the logits only.
pub fn gumbel_softmax_taped<R: Rng>(
    tape: &mut Tape,
    logits: Var,
    group: usize,
    temperature: f64,
    rng: &mut R,
) -> Result<Var> {
    check_temperature(temperature)?;
    let (rows, cols) = tape.shape(logits);
    let noise = tape.constant(gumbel_noise(rows, cols, rng));
    let perturbed = tape.add(logits, noise);
    let scaled = tape.scale(perturbed, 1.0 / temperature);
    Ok(tape.softmax_groups(scaled, group))
}

/// `mu + exp(log_var / 2) * eps` with `eps ~ N(0, I)`.
pub fn gaussian_reparameterize(mu: &[f64], log_var: &[f64], seed: u64) -> Result<Vec<f64>> {
    if mu.len() != log_var.len() {
        return Err(Error::ShapeMismatch {
            context: "gaussian_reparameterize",
            expected: format!("{}", mu.len()),
            actual: format!("{}", log_var.len()),
        });
    }
    let mut r = rng::stream(seed);
    Ok(mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let eps: f64 = r.sample(StandardNormal);
            m + (0.5 * lv).exp() * eps
        })
        .collect())
}

pub fn gaussian_reparameterize_taped<R: Rng>(
    tape: &mut Tape,
    mu: Var,
    log_var: Var,
    rng: &mut R,
) -> Result<Var> {
    if tape.shape(mu) != tape.shape(log_var) {
        return Err(Error::ShapeMismatch {
            context: "gaussian_reparameterize",
            expected: format!("{:?}", tape.shape(mu)),
            actual: format!("{:?}", tape.shape(log_var)),
        });
    }
    let (rows, cols) = tape.shape(mu);
    let eps = tape.constant(normal_noise(rows, cols, rng));
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let noise = tape.mul(std, eps);
    Ok(tape.add(mu, noise))
}
