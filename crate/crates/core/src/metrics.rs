//! Per-column distribution distances between real and synthetic traces, and
//! the repeated-evaluation harness that summarizes them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channel_markov::{self, ChannelState, ElevationParams, TraceDataset};
use crate::error::{Error, Result};
use crate::rng;

/// Default additive smoothing for [`kl_divergence`].
pub const DEFAULT_KL_EPSILON: f64 = 1e-9;

/// Probability mass function over an ordered, finite support.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    support: Vec<f64>,
    pmf: Vec<f64>,
    sample_count: usize,
}

impl EmpiricalDistribution {
    /// Support of link-state columns, ascending.
    pub const STATE_SUPPORT: [f64; 2] = [-1.0, 1.0];

    pub fn from_pmf(support: Vec<f64>, pmf: Vec<f64>, sample_count: usize) -> Result<Self> {
        if support.len() != pmf.len() || support.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "support has {} points but pmf has {}",
                support.len(),
                pmf.len()
            )));
        }
        if support.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidParameter("support must be strictly increasing".into()));
        }
        if pmf.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::InvalidParameter("pmf entries must be non-negative".into()));
        }
        let total: f64 = pmf.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!("pmf sums to {total}, not 1")));
        }
        Ok(EmpiricalDistribution {
            support,
            pmf,
            sample_count,
        })
    }

    /// Distribution on `{-1, +1}` with `P(+1) = p_los`.
    pub fn two_point(p_los: f64) -> Result<Self> {
        Self::from_pmf(Self::STATE_SUPPORT.to_vec(), vec![1.0 - p_los, p_los], 0)
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn probability_of(&self, value: f64) -> f64 {
        self.support
            .iter()
            .position(|&s| s == value)
            .map_or(0.0, |i| self.pmf[i])
    }

    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.pmf
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect()
    }
}

/// Category frequencies of a link-state column over `{-1, +1}`.
pub fn empirical(column: &[ChannelState]) -> Result<EmpiricalDistribution> {
    if column.is_empty() {
        return Err(Error::EmptyColumn);
    }
    let los = column.iter().filter(|&&s| s == ChannelState::Los).count();
    let n = column.len();
    let p_los = los as f64 / n as f64;
    Ok(EmpiricalDistribution {
        support: EmpiricalDistribution::STATE_SUPPORT.to_vec(),
        pmf: vec![(n - los) as f64 / n as f64, p_los],
        sample_count: n,
    })
}

fn check_support(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<()> {
    if p.support != q.support {
        Err(Error::SupportMismatch)
    } else {
        Ok(())
    }
}

/// 1-D earth mover's distance: sum over support gaps of |CDF_p - CDF_q|
/// times the gap width.
pub fn wasserstein(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    check_support(p, q)?;
    let (cp, cq) = (p.cdf(), q.cdf());
    Ok(p.support
        .windows(2)
        .enumerate()
        .map(|(i, gap)| (cp[i] - cq[i]).abs() * (gap[1] - gap[0]))
        .sum())
}

/// `1 - max |CDF_p - CDF_q|`; 1 means identical distributions.
pub fn ks_complement(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> Result<f64> {
    check_support(p, q)?;
    let statistic = p
        .cdf()
        .iter()
        .zip(q.cdf())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok((1.0 - statistic).clamp(0.0, 1.0))
}

/// `KL(p || q)` in nats after adding `epsilon` to every mass and
/// renormalizing both distributions.
pub fn kl_divergence(p: &EmpiricalDistribution, q: &EmpiricalDistribution, epsilon: f64) -> Result<f64> {
    check_support(p, q)?;
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be >= 0, got {epsilon}")));
    }
    let norm = 1.0 + epsilon * p.pmf.len() as f64;
    let mut total = 0.0;
    for (&pv, &qv) in p.pmf.iter().zip(&q.pmf) {
        let ps = (pv + epsilon) / norm;
        let qs = (qv + epsilon) / norm;
        if ps == 0.0 {
            continue;
        }
        if qs == 0.0 {
            return Err(Error::KlUndefined);
        }
        total += ps * (ps / qs).ln();
    }
    Ok(total.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    KsComplement,
    Wasserstein,
    Kl,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::KsComplement, Metric::Wasserstein, Metric::Kl];

    pub fn key(self) -> &'static str {
        match self {
            Metric::KsComplement => "ks_complement",
            Metric::Wasserstein => "wasserstein",
            Metric::Kl => "kl",
        }
    }

    /// Row label used in the human-readable tables.
    pub fn label(self) -> &'static str {
        match self {
            Metric::KsComplement => "KS-test",
            Metric::Wasserstein => "Wasserstein Distance",
            Metric::Kl => "KL-Divergence",
        }
    }

    pub fn from_key(key: &str) -> Option<Self> {
        Metric::ALL.into_iter().find(|m| m.key() == key)
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

/// All three metrics for one column pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMetrics {
    pub ks_complement: f64,
    pub wasserstein: f64,
    pub kl: f64,
}

impl ColumnMetrics {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::KsComplement => self.ks_complement,
            Metric::Wasserstein => self.wasserstein,
            Metric::Kl => self.kl,
        }
    }
}

pub fn column_metrics(real: &[ChannelState], synthetic: &[ChannelState], epsilon: f64) -> Result<ColumnMetrics> {
    let p = empirical(real)?;
    let q = empirical(synthetic)?;
    Ok(ColumnMetrics {
        ks_complement: ks_complement(&p, &q)?,
        wasserstein: wasserstein(&p, &q)?,
        kl: kl_divergence(&p, &q, epsilon)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub angle: u32,
    pub metric: Metric,
    pub mean: f64,
    pub variance: f64,
}

/// Mean LOS fraction per angle over the repetitions, real vs synthetic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosFractionSummary {
    pub angle: u32,
    pub real: f64,
    pub synthetic: f64,
}

/// Per-(angle, metric) mean and population variance over repetitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub repetitions: usize,
    pub angles: Vec<u32>,
    pub cells: Vec<MetricCell>,
    #[serde(default)]
    pub los_fractions: Vec<LosFractionSummary>,
}

impl MetricReport {
    pub fn get(&self, angle: u32, metric: Metric) -> Option<&MetricCell> {
        self.cells.iter().find(|c| c.angle == angle && c.metric == metric)
    }

    pub fn mean(&self, angle: u32, metric: Metric) -> f64 {
        self.get(angle, metric).map_or(f64::NAN, |c| c.mean)
    }

    pub fn variance(&self, angle: u32, metric: Metric) -> f64 {
        self.get(angle, metric).map_or(f64::NAN, |c| c.variance)
    }

    /// Summarize per-repetition samples: `samples[rep][angle_index]`.
    fn summarize(angles: &[u32], samples: &[Vec<ColumnMetrics>], fractions: &[Vec<(f64, f64)>]) -> Self {
        let reps = samples.len();
        let mut cells = Vec::new();
        for (ai, &angle) in angles.iter().enumerate() {
            for metric in Metric::ALL {
                let values: Vec<f64> = samples.iter().map(|s| s[ai].get(metric)).collect();
                let (mean, variance) = mean_and_population_variance(&values);
                cells.push(MetricCell {
                    angle,
                    metric,
                    mean,
                    variance,
                });
            }
        }
        let los_fractions = angles
            .iter()
            .enumerate()
            .map(|(ai, &angle)| LosFractionSummary {
                angle,
                real: fractions.iter().map(|f| f[ai].0).sum::<f64>() / reps as f64,
                synthetic: fractions.iter().map(|f| f[ai].1).sum::<f64>() / reps as f64,
            })
            .collect();
        MetricReport {
            repetitions: reps,
            angles: angles.to_vec(),
            cells,
            los_fractions,
        }
    }
}

pub fn mean_and_population_variance(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, variance)
}

/// One point of a per-epoch training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub epoch: usize,
    pub metric: Metric,
    pub value: f64,
}

/// Per-epoch KL and Wasserstein distance at one tracked angle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub angle: Option<u32>,
    pub points: Vec<CurvePoint>,
}

impl MetricCurve {
    pub fn values(&self, metric: Metric) -> Vec<(usize, f64)> {
        self.points
            .iter()
            .filter(|p| p.metric == metric)
            .map(|p| (p.epoch, p.value))
            .collect()
    }

    /// First epoch at which `metric` is at or below `threshold`.
    pub fn first_epoch_at_or_below(&self, metric: Metric, threshold: f64) -> Option<usize> {
        self.values(metric)
            .into_iter()
            .find(|&(_, v)| v <= threshold)
            .map(|(e, _)| e)
    }
}

/// Anything that can produce a trace table of a requested size from a seed:
/// the Markov channel itself, or a trained generative model.
pub trait TraceSource {
    fn angles(&self) -> Vec<u32>;
    fn draw(&self, n: usize, seed: u64) -> Result<TraceDataset>;
}

/// The reference channel: independent Markov chains per angle.
#[derive(Debug, Clone)]
pub struct MarkovSource {
    params: Vec<ElevationParams>,
}

impl MarkovSource {
    pub fn new(params: Vec<ElevationParams>) -> Self {
        MarkovSource { params }
    }

    pub fn for_angles(angles: &[u32]) -> Result<Self> {
        Ok(MarkovSource {
            params: angles.iter().map(|&a| channel_markov::lookup(a)).collect::<Result<_>>()?,
        })
    }
}

impl TraceSource for MarkovSource {
    fn angles(&self) -> Vec<u32> {
        self.params.iter().map(|p| p.angle_deg).collect()
    }

    fn draw(&self, n: usize, seed: u64) -> Result<TraceDataset> {
        channel_markov::generate_dataset_from(&self.params, n, seed)
    }
}

fn join_angles(angles: &[u32]) -> String {
    angles
        .iter()
        .map(|a| format!("angle_{a}"))
        .collect::<Vec<_>>()
        .join(",")
}

/// Metrics for every column of `real` against the same-angle column of
/// `synthetic`.
fn compare_columns(real: &TraceDataset, synthetic: &TraceDataset, epsilon: f64) -> Result<Vec<(ColumnMetrics, f64, f64)>> {
    let mut sorted_real = real.angles().to_vec();
    let mut sorted_synth = synthetic.angles().to_vec();
    sorted_real.sort_unstable();
    sorted_synth.sort_unstable();
    if sorted_real != sorted_synth {
        return Err(Error::ColumnMismatch {
            real: join_angles(real.angles()),
            synthetic: join_angles(synthetic.angles()),
        });
    }
    real.angles()
        .iter()
        .enumerate()
        .map(|(i, &angle)| {
            let r = real.column(i);
            let s = synthetic.column_for_angle(angle).expect("angle sets match");
            let m = column_metrics(r, s, epsilon)?;
            let pr = empirical(r)?.probability_of(1.0);
            let ps = empirical(s)?.probability_of(1.0);
            Ok((m, pr, ps))
        })
        .collect()
}

/// One-shot comparison of two tables; a report with a single repetition.
pub fn compare_datasets(real: &TraceDataset, synthetic: &TraceDataset, epsilon: f64) -> Result<MetricReport> {
    let cols = compare_columns(real, synthetic, epsilon)?;
    let metrics = vec![cols.iter().map(|c| c.0).collect::<Vec<_>>()];
    let fractions = vec![cols.iter().map(|c| (c.1, c.2)).collect::<Vec<_>>()];
    Ok(MetricReport::summarize(real.angles(), &metrics, &fractions))
}

/// Repeat `reps` times: draw a fresh real table and a synthetic table of
/// `n` rows each, and score every angle. Seeds for repetition `k` are
/// substreams of `seed`, so the report is a pure function of the inputs.
pub fn evaluate_repeated(
    real_source: &dyn TraceSource,
    model: &dyn TraceSource,
    reps: usize,
    n: usize,
    seed: u64,
    epsilon: f64,
) -> Result<MetricReport> {
    if reps == 0 {
        return Err(Error::InvalidParameter("repetitions must be at least 1".into()));
    }
    let angles = real_source.angles();
    let mut metrics = Vec::with_capacity(reps);
    let mut fractions = Vec::with_capacity(reps);
    for k in 0..reps {
        let run = || -> Result<Vec<(ColumnMetrics, f64, f64)>> {
            let real = real_source.draw(n, rng::derive_seed(seed, "eval-real", k as u64))?;
            let synth = model.draw(n, rng::derive_seed(seed, "eval-synthetic", k as u64))?;
            compare_columns(&real, &synth, epsilon)
        };
        let cols = run().map_err(|e| Error::Repetition {
            index: k,
            source: Box::new(e),
        })?;
        log::debug!("evaluation repetition {k} done");
        metrics.push(cols.iter().map(|c| c.0).collect());
        fractions.push(cols.iter().map(|c| (c.1, c.2)).collect());
    }
    Ok(MetricReport::summarize(&angles, &metrics, &fractions))
}
