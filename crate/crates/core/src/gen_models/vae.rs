//! Variational autoencoder over one-hot link-state rows.
//!
//! The encoder outputs `[mu, log_var]` of a diagonal Gaussian posterior,
//! the decoder maps a latent code to per-column category logits. The loss
//! is a weighted reconstruction cross-entropy plus the KL divergence of the
//! posterior from `N(0, I)`.

use ndarray::{s, Array2, Axis};
use rand::seq::SliceRandom;

use super::{batch_sizes, check_training_data, EpochStats, TableEncoding, TrainingConfig, TrainingOutcome, Tracker};
use crate::channel_markov::TraceDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricCurve;
use crate::nn_core::{gaussian_reparameterize_taped, normal_noise, Activation, AdamState, Network, Tape};
use crate::rng;

const GROUP: usize = TableEncoding::GROUP;
const SAMPLE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub encoder: Network,
    pub decoder: Network,
    pub latent_dim: usize,
    pub encoding: TableEncoding,
    pub config: TrainingConfig,
}

/// `KL(N(mu, exp(log_var)) || N(0, I))` summed over dimensions.
pub fn gaussian_kl(mu: &[f64], log_var: &[f64]) -> Result<f64> {
    if mu.len() != log_var.len() {
        return Err(Error::ShapeMismatch {
            context: "gaussian_kl",
            expected: format!("{}", mu.len()),
            actual: format!("{}", log_var.len()),
        });
    }
    Ok(mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| 0.5 * (m * m + lv.exp() - lv - 1.0))
        .sum())
}

fn mlp_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

pub fn train_vae(data: &TraceDataset, config: &TrainingConfig) -> Result<TrainingOutcome<VaeModel>> {
    train_vae_with_holdout(data, config, None)
}

pub fn train_vae_with_holdout(
    data: &TraceDataset,
    config: &TrainingConfig,
    holdout: Option<&TraceDataset>,
) -> Result<TrainingOutcome<VaeModel>> {
    config.validate()?;
    check_training_data(data)?;
    let encoding = TableEncoding::new(data.angles().to_vec());
    let width = encoding.width();
    let arch = &config.vae;
    let latent = arch.latent_dim;
    let tracker = Tracker::new(config, data, holdout)?;

    let mut init = rng::substream(config.seed, "vae-init", 0);
    let encoder = Network::mlp(
        &mlp_dims(width, &arch.hidden, 2 * latent),
        Activation::Relu,
        Activation::Identity,
        &mut init,
    );
    let decoder = Network::mlp(
        &mlp_dims(latent, &arch.hidden, width),
        Activation::Relu,
        Activation::Identity,
        &mut init,
    );
    let mut model = VaeModel {
        encoder,
        decoder,
        latent_dim: latent,
        encoding,
        config: config.clone(),
    };
    let n_enc = model.encoder.param_count();
    let mut opt = AdamState::new(n_enc + model.decoder.param_count(), config.learning_rate)?;
    let x_all = model.encoding.encode(data)?;
    let mut rng = rng::substream(config.seed, "vae-train", 0);
    let mut order: Vec<usize> = (0..data.rows()).collect();

    let mut curve = MetricCurve::default();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut kl_total = 0.0;
        let mut batches = 0usize;
        let mut recon = vec![[0u64; 2]; model.encoding.n_columns()];
        for (bi, (start, end)) in batch_sizes(data.rows(), config.batch_size).enumerate() {
            let b = end - start;
            let x = x_all.select(Axis(0), &order[start..end]);

            let mut tape = Tape::new();
            let enc = model.encoder.bind(&mut tape, true);
            let dec = model.decoder.bind(&mut tape, true);
            let xv = tape.constant(x);
            let h = enc.forward(&mut tape, xv)?;
            let mu = tape.slice_cols(h, 0, latent);
            let log_var = tape.slice_cols(h, latent, 2 * latent);
            let z = gaussian_reparameterize_taped(&mut tape, mu, log_var, &mut rng)?;
            let logits = dec.forward(&mut tape, z)?;

            let log_probs = tape.log_softmax_groups(logits, GROUP);
            let picked = tape.mul(log_probs, xv);
            let picked = tape.sum(picked);
            let ce = tape.scale(picked, -arch.reconstruction_weight / b as f64);
            // 0.5 * sum(mu^2 + exp(lv) - lv - 1) / b
            let mu2 = tape.square(mu);
            let var = tape.exp(log_var);
            let t = tape.add(mu2, var);
            let t = tape.sub(t, log_var);
            let t = tape.offset(t, -1.0);
            let t = tape.sum(t);
            let kl = tape.scale(t, 0.5 / b as f64);
            let loss = tape.add(ce, kl);

            let loss_value = tape.scalar(loss);
            if !loss_value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi + 1 });
            }
            for row in tape.value(logits).rows() {
                for (c, counts) in recon.iter_mut().enumerate() {
                    counts[usize::from(row[GROUP * c + 1] > row[GROUP * c])] += 1;
                }
            }

            let grads = tape.backward(loss)?;
            let mut g = enc.flat_gradients(&grads);
            g.extend(dec.flat_gradients(&grads));
            let mut params = model.encoder.flat_params();
            params.extend(model.decoder.flat_params());
            opt.step(&mut params, &g).map_err(|e| match e {
                Error::NonFiniteGradient => Error::NonFiniteLoss { epoch, batch: bi + 1 },
                other => other,
            })?;
            model.encoder.set_flat_params(&params[..n_enc])?;
            model.decoder.set_flat_params(&params[n_enc..])?;

            total += loss_value;
            kl_total += tape.scalar(kl);
            batches += 1;
        }
        let category_frequencies = recon
            .iter()
            .map(|c| {
                let n = (c[0] + c[1]).max(1) as f64;
                [c[0] as f64 / n, c[1] as f64 / n]
            })
            .collect::<Vec<_>>();
        log::info!(
            "vae epoch {epoch}: loss={:.5} kl={:.5}",
            total / batches as f64,
            kl_total / batches as f64
        );
        history.push(EpochStats {
            epoch,
            loss: total / batches as f64,
            aux_loss: kl_total / batches as f64,
            category_frequencies,
        });
        if let Some(t) = &tracker {
            t.record(epoch, &model, &mut curve)?;
        }
    }
    Ok(TrainingOutcome {
        model,
        curve,
        history,
    })
}

impl VaeModel {
    /// Decode `z ~ N(0, I)` and take the most likely category per column.
    pub fn sample(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        let mut r = rng::stream(seed);
        let width = self.encoding.width();
        let mut scores = Array2::zeros((n, width));
        for (start, end) in batch_sizes(n, SAMPLE_CHUNK) {
            let z = normal_noise(end - start, self.latent_dim, &mut r);
            let logits = self.decoder.forward_batch(&z)?;
            scores.slice_mut(s![start..end, ..]).assign(&logits);
        }
        self.encoding.decode(&scores)
    }

    /// Encode rows to their posterior means and decode them back.
    pub fn reconstruct(&self, data: &TraceDataset) -> Result<TraceDataset> {
        let x = self.encoding.encode(data)?;
        let h = self.encoder.forward_batch(&x)?;
        let mu = h.slice(s![.., ..self.latent_dim]).to_owned();
        self.encoding.decode(&self.decoder.forward_batch(&mu)?)
    }
}
