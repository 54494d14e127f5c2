//! Tabular generative models for link-state tables: a conditional GAN and a
//! VAE, their training loops, sampling, and the model file format.

mod encoding;
mod gan;
mod model_file;
mod vae;

use serde::{Deserialize, Serialize};

pub use encoding::{TableEncoding, CATEGORIES};
pub use gan::{train_gan, train_gan_with_holdout, GanModel};
pub use model_file::{load_model, model_from_bytes, model_to_bytes, save_model, FORMAT_VERSION, MAGIC};
pub use vae::{gaussian_kl, train_vae, train_vae_with_holdout, VaeModel};

use crate::channel_markov::TraceDataset;
use crate::error::{Error, Result};
use crate::metrics::{self, CurvePoint, Metric, MetricCurve, TraceSource};
use crate::nn_core::DEFAULT_TEMPERATURE;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanArchitecture {
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    /// Gumbel-softmax temperature for generator outputs during training.
    pub temperature: f64,
    /// Decay of the moving average of generator weights used for sampling;
    /// 0 samples from the last iterate.
    #[serde(default)]
    pub ema_decay: f64,
}

impl Default for GanArchitecture {
    fn default() -> Self {
        GanArchitecture {
            noise_dim: 128,
            hidden: vec![256, 256],
            temperature: DEFAULT_TEMPERATURE,
            ema_decay: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeArchitecture {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    /// Multiplier on the reconstruction cross-entropy.
    pub reconstruction_weight: f64,
}

impl Default for VaeArchitecture {
    fn default() -> Self {
        VaeArchitecture {
            latent_dim: 16,
            hidden: vec![128, 128],
            reconstruction_weight: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Angle whose KL/Wasserstein distance is recorded after every epoch.
    pub track_angle: Option<u32>,
    /// Synthetic rows drawn per tracking evaluation.
    pub track_rows: usize,
    pub gan: GanArchitecture,
    pub vae: VaeArchitecture,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 100,
            batch_size: 50,
            learning_rate: 2e-4,
            seed: 0,
            track_angle: None,
            track_rows: 10_000,
            gan: GanArchitecture::default(),
            vae: VaeArchitecture::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.epochs == 0 {
            return fail("epochs must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning rate must be positive");
        }
        if self.track_angle.is_some() && self.track_rows == 0 {
            return fail("track rows must be positive");
        }
        if self.gan.noise_dim == 0 || self.vae.latent_dim == 0 {
            return fail("noise and latent dimensions must be positive");
        }
        if !(self.gan.temperature > 0.0) {
            return fail("temperature must be positive");
        }
        if !(0.0..1.0).contains(&self.gan.ema_decay) {
            return fail("moving-average decay must lie in [0, 1)");
        }
        if !(self.vae.reconstruction_weight > 0.0) {
            return fail("reconstruction weight must be positive");
        }
        Ok(())
    }
}

/// Per-epoch training statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// GAN: mean generator loss. VAE: mean total loss.
    pub loss: f64,
    /// GAN: mean discriminator loss. VAE: mean KL term.
    pub aux_loss: f64,
    /// Fraction of `[LOS, NLOS]` per column in what the model produced
    /// during the epoch (GAN) or reconstructed (VAE).
    pub category_frequencies: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<M> {
    pub model: M,
    pub curve: MetricCurve,
    pub history: Vec<EpochStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    Gan,
    Vae,
}

impl ModelFamily {
    pub fn key(self) -> &'static str {
        match self {
            ModelFamily::Gan => "gan",
            ModelFamily::Vae => "vae",
        }
    }

    pub fn parse(key: &str) -> Result<Self> {
        match key {
            "gan" => Ok(ModelFamily::Gan),
            "vae" => Ok(ModelFamily::Vae),
            other => Err(Error::UnknownFamily(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenerativeModel {
    Gan(GanModel),
    Vae(VaeModel),
}

impl GenerativeModel {
    pub fn family(&self) -> ModelFamily {
        match self {
            GenerativeModel::Gan(_) => ModelFamily::Gan,
            GenerativeModel::Vae(_) => ModelFamily::Vae,
        }
    }

    pub fn encoding(&self) -> &TableEncoding {
        match self {
            GenerativeModel::Gan(m) => &m.encoding,
            GenerativeModel::Vae(m) => &m.encoding,
        }
    }

    pub fn config(&self) -> &TrainingConfig {
        match self {
            GenerativeModel::Gan(m) => &m.config,
            GenerativeModel::Vae(m) => &m.config,
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        match self {
            GenerativeModel::Gan(m) => m.sample(n, seed),
            GenerativeModel::Vae(m) => m.sample(n, seed),
        }
    }
}

/// Draw `n` synthetic rows from either model family.
pub fn sample(model: &GenerativeModel, n: usize, seed: u64) -> Result<TraceDataset> {
    model.sample(n, seed)
}

impl TraceSource for GenerativeModel {
    fn angles(&self) -> Vec<u32> {
        self.encoding().angles.clone()
    }

    fn draw(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        self.sample(n, seed)
    }
}

impl TraceSource for GanModel {
    fn angles(&self) -> Vec<u32> {
        self.encoding.angles.clone()
    }

    fn draw(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        self.sample(n, seed)
    }
}

impl TraceSource for VaeModel {
    fn angles(&self) -> Vec<u32> {
        self.encoding.angles.clone()
    }

    fn draw(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        self.sample(n, seed)
    }
}

fn check_training_data(data: &TraceDataset) -> Result<()> {
    if data.rows() == 0 || data.n_columns() == 0 {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

/// Records KL and Wasserstein distance at one angle after each epoch.
struct Tracker<'a> {
    angle: u32,
    reference: &'a [crate::channel_markov::ChannelState],
    rows: usize,
    seed: u64,
}

impl<'a> Tracker<'a> {
    fn new(config: &TrainingConfig, data: &'a TraceDataset, holdout: Option<&'a TraceDataset>) -> Result<Option<Self>> {
        let Some(angle) = config.track_angle else {
            return Ok(None);
        };
        let source = holdout.unwrap_or(data);
        let reference = source.column_for_angle(angle).ok_or(Error::UnknownAngle(angle))?;
        if reference.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if data.column_for_angle(angle).is_none() {
            return Err(Error::UnknownAngle(angle));
        }
        Ok(Some(Tracker {
            angle,
            reference,
            rows: config.track_rows,
            seed: rng::derive_seed(config.seed, "track", 0),
        }))
    }

    fn record(&self, epoch: usize, source: &dyn TraceSource, curve: &mut MetricCurve) -> Result<()> {
        let synth = source.draw(self.rows, rng::derive_seed(self.seed, "epoch", epoch as u64))?;
        let column = synth.column_for_angle(self.angle).expect("tracked angle is modeled");
        let m = metrics::column_metrics(self.reference, column, metrics::DEFAULT_KL_EPSILON)?;
        curve.angle = Some(self.angle);
        for metric in [Metric::Kl, Metric::Wasserstein] {
            curve.points.push(CurvePoint {
                epoch,
                metric,
                value: m.get(metric),
            });
        }
        Ok(())
    }
}

/// Split `n` rows into batches of `batch` (last one possibly short).
fn batch_sizes(n: usize, batch: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n).step_by(batch).map(move |start| (start, (start + batch).min(n)))
}
