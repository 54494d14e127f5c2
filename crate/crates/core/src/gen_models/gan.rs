//! Conditional tabular GAN.
//!
//! The generator maps `[noise, condition]` to per-column category logits.
//! The condition is a one-hot over all `(column, category)` pairs. During
//! training every sample picks a pair uniformly among the pairs present in
//! the data and the real batch is drawn from rows carrying that category,
//! so rare states get as much attention as common ones. The discriminator
//! scores `[row, condition]` with a non-saturating logistic loss; the
//! generator also pays a cross-entropy penalty when its output for the
//! conditioned column disagrees with the condition.
//!
//! At sampling time the condition column is uniform and its category
//! follows the training frequencies, which makes the mixture over
//! conditions reproduce the per-column marginals.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    batch_sizes, check_training_data, EpochStats, TableEncoding, TrainingConfig, TrainingOutcome, Tracker,
};
use crate::channel_markov::TraceDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricCurve;
use crate::nn_core::{
    gumbel_noise, gumbel_softmax_taped, normal_noise, softmax_groups, Activation, AdamState, Network, Tape,
};
use crate::rng::{self, StreamRng};

const GROUP: usize = TableEncoding::GROUP;
const SAMPLE_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: Network,
    pub discriminator: Network,
    pub noise_dim: usize,
    pub encoding: TableEncoding,
    pub config: TrainingConfig,
    /// Training-data `[LOS, NLOS]` counts per column; drives condition
    /// sampling at generation time.
    pub category_counts: Vec<[u64; 2]>,
}

/// Rows of the training table indexed by `(column, category)`.
struct ConditionalSampler {
    pairs: Vec<(usize, usize)>,
    rows: Vec<Vec<Vec<usize>>>,
}

impl ConditionalSampler {
    fn new(data: &TraceDataset) -> Self {
        let mut rows = vec![vec![Vec::new(); GROUP]; data.n_columns()];
        for (c, col) in data.columns().iter().enumerate() {
            for (r, s) in col.iter().enumerate() {
                rows[c][s.category()].push(r);
            }
        }
        let pairs = (0..data.n_columns())
            .flat_map(|c| (0..GROUP).map(move |k| (c, k)))
            .filter(|&(c, k)| !rows[c][k].is_empty())
            .collect();
        ConditionalSampler { pairs, rows }
    }

    /// `batch` conditions (as one-hot rows) and matching real row indices.
    fn draw<R: Rng>(&self, batch: usize, width: usize, rng: &mut R) -> (Array2<f64>, Vec<usize>) {
        let mut cond = Array2::zeros((batch, width));
        let mut real = Vec::with_capacity(batch);
        for i in 0..batch {
            let &(c, k) = self.pairs.choose(rng).expect("non-empty data has pairs");
            cond[[i, GROUP * c + k]] = 1.0;
            real.push(*self.rows[c][k].choose(rng).expect("pair has rows"));
        }
        (cond, real)
    }
}

fn concat(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    ndarray::concatenate(Axis(1), &[a.view(), b.view()]).expect("same row count")
}

fn mlp_dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(output);
    dims
}

/// Exponential moving average of the generator weights. Until the horizon
/// `1 / (1 - decay)` is reached it is a plain running mean, so short runs
/// are not dominated by the initialization.
struct WeightAverage {
    decay: f64,
    updates: u64,
    values: Vec<f64>,
}

impl WeightAverage {
    fn new(net: &Network, decay: f64) -> Self {
        WeightAverage {
            decay,
            updates: 0,
            values: net.flat_params(),
        }
    }

    fn update(&mut self, net: &Network) {
        let t = self.updates as f64;
        let d = self.decay.min(t / (1.0 + t));
        self.updates += 1;
        for (avg, w) in self.values.iter_mut().zip(net.flat_params()) {
            *avg = d * *avg + (1.0 - d) * w;
        }
    }

    /// The model with its generator replaced by the averaged weights.
    fn snapshot(&self, model: &GanModel) -> Result<GanModel> {
        let mut out = model.clone();
        if self.decay > 0.0 {
            out.generator.set_flat_params(&self.values)?;
        }
        Ok(out)
    }
}

pub fn train_gan(data: &TraceDataset, config: &TrainingConfig) -> Result<TrainingOutcome<GanModel>> {
    train_gan_with_holdout(data, config, None)
}

/// Train on `data`; when `config.track_angle` is set the per-epoch curve is
/// measured against `holdout` (or `data` itself if none is given).
pub fn train_gan_with_holdout(
    data: &TraceDataset,
    config: &TrainingConfig,
    holdout: Option<&TraceDataset>,
) -> Result<TrainingOutcome<GanModel>> {
    config.validate()?;
    check_training_data(data)?;
    let encoding = TableEncoding::new(data.angles().to_vec());
    let width = encoding.width();
    let arch = &config.gan;
    let tracker = Tracker::new(config, data, holdout)?;

    let mut init = rng::substream(config.seed, "gan-init", 0);
    let generator = Network::mlp(
        &mlp_dims(arch.noise_dim + width, &arch.hidden, width),
        Activation::Relu,
        Activation::Identity,
        &mut init,
    );
    let discriminator = Network::mlp(
        &mlp_dims(2 * width, &arch.hidden, 1),
        Activation::Relu,
        Activation::Identity,
        &mut init,
    );
    let mut model = GanModel {
        generator,
        discriminator,
        noise_dim: arch.noise_dim,
        encoding,
        config: config.clone(),
        category_counts: TableEncoding::new(data.angles().to_vec()).category_counts(data)?,
    };
    let mut g_opt = AdamState::new(model.generator.param_count(), config.learning_rate)?;
    let mut d_opt = AdamState::new(model.discriminator.param_count(), config.learning_rate)?;
    let sampler = ConditionalSampler::new(data);
    let real_all = model.encoding.encode(data)?;
    let mut rng = rng::substream(config.seed, "gan-train", 0);
    let mut average = WeightAverage::new(&model.generator, arch.ema_decay);

    let mut curve = MetricCurve::default();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut g_total = 0.0;
        let mut d_total = 0.0;
        let mut batches = 0usize;
        let mut produced = vec![[0u64; 2]; model.encoding.n_columns()];
        for (bi, (start, end)) in batch_sizes(data.rows(), config.batch_size).enumerate() {
            let b = end - start;
            let d_loss = model.discriminator_step(&sampler, &real_all, b, &mut d_opt, &mut rng);
            let g_loss = model.generator_step(&sampler, b, &mut g_opt, &mut produced, &mut rng);
            let (d_loss, g_loss) = match (d_loss, g_loss) {
                (Ok(d), Ok(g)) if d.is_finite() && g.is_finite() => (d, g),
                (Err(e), _) | (_, Err(e)) if !matches!(e, Error::NonFiniteGradient) => return Err(e),
                _ => return Err(Error::NonFiniteLoss { epoch, batch: bi + 1 }),
            };
            average.update(&model.generator);
            d_total += d_loss;
            g_total += g_loss;
            batches += 1;
        }
        let category_frequencies = produced
            .iter()
            .map(|c| {
                let n = (c[0] + c[1]).max(1) as f64;
                [c[0] as f64 / n, c[1] as f64 / n]
            })
            .collect::<Vec<_>>();
        log::info!(
            "gan epoch {epoch}: loss_g={:.5} loss_d={:.5} generated LOS share per column {:?}",
            g_total / batches as f64,
            d_total / batches as f64,
            category_frequencies.iter().map(|f| f[0]).collect::<Vec<_>>()
        );
        history.push(EpochStats {
            epoch,
            loss: g_total / batches as f64,
            aux_loss: d_total / batches as f64,
            category_frequencies,
        });
        if let Some(t) = &tracker {
            t.record(epoch, &average.snapshot(&model)?, &mut curve)?;
        }
    }
    let model = average.snapshot(&model)?;
    Ok(TrainingOutcome {
        model,
        curve,
        history,
    })
}

impl GanModel {
    fn width(&self) -> usize {
        self.encoding.width()
    }

    /// Relaxed generator output for fixed conditions, without recording.
    fn generate_relaxed<R: Rng>(&self, cond: &Array2<f64>, rng: &mut R) -> Result<Array2<f64>> {
        let b = cond.nrows();
        let input = concat(&normal_noise(b, self.noise_dim, rng), cond);
        let logits = self.generator.forward_batch(&input)?;
        let perturbed = (logits + gumbel_noise(b, self.width(), rng)) / self.config.gan.temperature;
        Ok(softmax_groups(&perturbed, GROUP))
    }

    fn discriminator_step(
        &mut self,
        sampler: &ConditionalSampler,
        real_all: &Array2<f64>,
        b: usize,
        opt: &mut AdamState,
        rng: &mut StreamRng,
    ) -> Result<f64> {
        let (cond, real_rows) = sampler.draw(b, self.width(), rng);
        let real = real_all.select(Axis(0), &real_rows);
        let fake = self.generate_relaxed(&cond, rng)?;

        let mut tape = Tape::new();
        let d = self.discriminator.bind(&mut tape, true);
        let real_in = tape.constant(concat(&real, &cond));
        let fake_in = tape.constant(concat(&fake, &cond));
        let real_score = d.forward(&mut tape, real_in)?;
        let fake_score = d.forward(&mut tape, fake_in)?;
        // -log D(real) - log(1 - D(fake)) with D = sigmoid(score)
        let neg_real = tape.scale(real_score, -1.0);
        let real_term = tape.softplus(neg_real);
        let real_term = tape.mean(real_term);
        let fake_term = tape.softplus(fake_score);
        let fake_term = tape.mean(fake_term);
        let loss = tape.add(real_term, fake_term);

        let grads = tape.backward(loss)?;
        let mut params = self.discriminator.flat_params();
        opt.step(&mut params, &d.flat_gradients(&grads))?;
        self.discriminator.set_flat_params(&params)?;
        Ok(tape.scalar(loss))
    }

    fn generator_step(
        &mut self,
        sampler: &ConditionalSampler,
        b: usize,
        opt: &mut AdamState,
        produced: &mut [[u64; 2]],
        rng: &mut StreamRng,
    ) -> Result<f64> {
        let width = self.width();
        let (cond, _) = sampler.draw(b, width, rng);
        let noise = normal_noise(b, self.noise_dim, rng);

        let mut tape = Tape::new();
        let g = self.generator.bind(&mut tape, true);
        let d = self.discriminator.bind(&mut tape, false);
        let cond_v = tape.constant(cond);
        let noise_v = tape.constant(noise);
        let g_in = tape.concat(&[noise_v, cond_v]);
        let logits = g.forward(&mut tape, g_in)?;
        let fake = gumbel_softmax_taped(&mut tape, logits, GROUP, self.config.gan.temperature, rng)?;
        let d_in = tape.concat(&[fake, cond_v]);
        let score = d.forward(&mut tape, d_in)?;
        // non-saturating: -log D(G(z))
        let neg = tape.scale(score, -1.0);
        let adv = tape.softplus(neg);
        let adv = tape.mean(adv);
        // cross-entropy of the conditioned column against its condition
        let log_probs = tape.log_softmax_groups(logits, GROUP);
        let picked = tape.mul(log_probs, cond_v);
        let picked = tape.sum(picked);
        let cond_loss = tape.scale(picked, -1.0 / b as f64);
        let loss = tape.add(adv, cond_loss);

        for row in tape.value(fake).rows() {
            for (c, counts) in produced.iter_mut().enumerate() {
                let k = usize::from(row[GROUP * c + 1] > row[GROUP * c]);
                counts[k] += 1;
            }
        }

        let grads = tape.backward(loss)?;
        let mut params = self.generator.flat_params();
        opt.step(&mut params, &g.flat_gradients(&grads))?;
        self.generator.set_flat_params(&params)?;
        Ok(tape.scalar(loss))
    }

    /// Conditions for generation: uniform column, category drawn with the
    /// training frequency of that column.
    fn generation_conditions<R: Rng>(&self, b: usize, rng: &mut R) -> Array2<f64> {
        let mut cond = Array2::zeros((b, self.width()));
        let n_cols = self.encoding.n_columns();
        for i in 0..b {
            let c = rng.gen_range(0..n_cols);
            let [los, nlos] = self.category_counts[c];
            let k = if rng.gen_range(0..los + nlos) < los { 0 } else { 1 };
            cond[[i, GROUP * c + k]] = 1.0;
        }
        cond
    }

    /// Generator output with a fixed condition `(column, category)` for every
    /// row. Used to inspect conditioning.
    pub fn sample_conditioned(&self, n: usize, column: usize, category: usize, seed: u64) -> Result<TraceDataset> {
        if column >= self.encoding.n_columns() || category >= GROUP {
            return Err(Error::InvalidParameter(format!(
                "condition ({column}, {category}) out of range"
            )));
        }
        let mut r = rng::stream(seed);
        self.sample_with(n, &mut r, |b, _| {
            let mut cond = Array2::zeros((b, self.width()));
            cond.column_mut(GROUP * column + category).fill(1.0);
            cond
        })
    }

    fn sample_with<R: Rng>(
        &self,
        n: usize,
        rng: &mut R,
        mut conditions: impl FnMut(usize, &mut R) -> Array2<f64>,
    ) -> Result<TraceDataset> {
        let mut chunks = Vec::new();
        for (start, end) in batch_sizes(n, SAMPLE_CHUNK) {
            let b = end - start;
            let cond = conditions(b, rng);
            let input = concat(&normal_noise(b, self.noise_dim, rng), &cond);
            // hard Gumbel-max: the argmax of the relaxed training output
            let scores = self.generator.forward_batch(&input)? + gumbel_noise(b, self.width(), rng);
            chunks.push(scores);
        }
        let scores = if chunks.is_empty() {
            Array2::zeros((0, self.width()))
        } else {
            let views: Vec<_> = chunks.iter().map(|c| c.view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("same width")
        };
        self.encoding.decode(&scores)
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        let mut r = rng::stream(seed);
        self.sample_with(n, &mut r, |b, rng| self.generation_conditions(b, rng))
    }
}
