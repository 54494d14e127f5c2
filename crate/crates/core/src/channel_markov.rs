//! Two-state (LOS/NLOS) Markov model of the land-mobile satellite channel.
//!
//! The built-in table holds the dense-urban 2.2 GHz parameters for five
//! elevation angles. Only the per-step transition probabilities `g`
//! (NLOS→LOS) and `b` (LOS→NLOS) drive trace generation; the lognormal state
//! length parameters and minimum durations are carried along for reference
//! and for [`derive_transition_prob`].

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Link state of one time step. Serialized as `1` (LOS) / `-1` (NLOS).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(i8)]
pub enum ChannelState {
    Los = 1,
    Nlos = -1,
}

impl ChannelState {
    pub const fn value(self) -> i8 {
        self as i8
    }

    pub fn from_value(v: i64) -> Option<Self> {
        match v {
            1 => Some(ChannelState::Los),
            -1 => Some(ChannelState::Nlos),
            _ => None,
        }
    }

    /// Position within the fixed category order `[+1, -1]`.
    pub const fn category(self) -> usize {
        match self {
            ChannelState::Los => 0,
            ChannelState::Nlos => 1,
        }
    }

    pub const fn from_category(index: usize) -> Self {
        if index == 0 {
            ChannelState::Los
        } else {
            ChannelState::Nlos
        }
    }
}

impl fmt::Display for ChannelState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

/// One row of the satellite link parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElevationParams {
    pub angle_deg: u32,
    /// Lognormal location of the good-state length, ln(m).
    pub mu_g: f64,
    /// Lognormal location of the bad-state length, ln(m).
    pub mu_b: f64,
    pub sigma_g: f64,
    pub sigma_b: f64,
    /// Minimum good-state length, m.
    pub durmin_g: f64,
    /// Minimum bad-state length, m.
    pub durmin_b: f64,
    /// P(NLOS -> LOS) per step.
    pub g: f64,
    /// P(LOS -> NLOS) per step.
    pub b: f64,
}

const BUILTIN: [ElevationParams; 5] = [
    ElevationParams {
        angle_deg: 20,
        mu_g: 2.0042,
        mu_b: 3.6890,
        sigma_g: 1.2049,
        sigma_b: 0.9796,
        durmin_g: 3.9889,
        durmin_b: 10.3114,
        g: 0.00014310,
        b: 0.00047466,
    },
    ElevationParams {
        angle_deg: 30,
        mu_g: 2.7332,
        mu_b: 2.7582,
        sigma_g: 1.1030,
        sigma_b: 1.2210,
        durmin_g: 7.3174,
        durmin_b: 5.7276,
        g: 0.00024460,
        b: 0.00027570,
    },
    ElevationParams {
        angle_deg: 45,
        mu_g: 3.0639,
        mu_b: 2.9108,
        sigma_g: 1.6980,
        sigma_b: 1.2602,
        durmin_g: 10.0,
        durmin_b: 6.0,
        g: 0.00020318,
        b: 0.00007556,
    },
    ElevationParams {
        angle_deg: 60,
        mu_g: 2.8135,
        mu_b: 2.0211,
        sigma_g: 1.9595,
        sigma_b: 0.6568,
        durmin_g: 10.0,
        durmin_b: 1.9126,
        g: 0.00105161,
        b: 0.00010797,
    },
    ElevationParams {
        angle_deg: 70,
        mu_g: 4.2919,
        mu_b: 2.1012,
        sigma_g: 2.4703,
        sigma_b: 1.0341,
        durmin_g: 118.3312,
        durmin_b: 4.8569,
        g: 0.00052923,
        b: 2.76683e-6,
    },
];

/// Angles used by the experiment pipeline, in column order.
pub const EXPERIMENT_ANGLES: [u32; 3] = [70, 60, 45];

/// Dense-urban, 2.2 GHz parameters for 20°, 30°, 45°, 60° and 70°.
pub fn builtin_table() -> Vec<ElevationParams> {
    BUILTIN.to_vec()
}

pub fn lookup(angle_deg: u32) -> Result<ElevationParams> {
    BUILTIN
        .iter()
        .find(|p| p.angle_deg == angle_deg)
        .copied()
        .ok_or(Error::UnknownAngle(angle_deg))
}

impl ElevationParams {
    /// Params with only the transition probabilities set; useful for
    /// synthetic chains.
    pub fn from_probabilities(angle_deg: u32, g: f64, b: f64) -> Self {
        ElevationParams {
            angle_deg,
            mu_g: 0.0,
            mu_b: 0.0,
            sigma_g: 0.0,
            sigma_b: 0.0,
            durmin_g: 0.0,
            durmin_b: 0.0,
            g,
            b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!(
                    "{name} = {v} is outside [0, 1]"
                )))
            }
        };
        prob("g", self.g)?;
        prob("b", self.b)?;
        for (name, v) in [
            ("sigma_g", self.sigma_g),
            ("sigma_b", self.sigma_b),
            ("durmin_g", self.durmin_g),
            ("durmin_b", self.durmin_b),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} = {v} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Row-stochastic 2×2 transition matrix, rows and columns ordered (LOS, NLOS).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub p_stay_los: f64,
    pub p_los_to_nlos: f64,
    pub p_nlos_to_los: f64,
    pub p_stay_nlos: f64,
}

impl TransitionMatrix {
    /// Probability of leaving `state` in one step.
    pub fn exit_probability(&self, state: ChannelState) -> f64 {
        match state {
            ChannelState::Los => self.p_los_to_nlos,
            ChannelState::Nlos => self.p_nlos_to_los,
        }
    }

    pub fn rows(&self) -> [[f64; 2]; 2] {
        [
            [self.p_stay_los, self.p_los_to_nlos],
            [self.p_nlos_to_los, self.p_stay_nlos],
        ]
    }
}

pub fn transition_matrix(params: &ElevationParams) -> Result<TransitionMatrix> {
    params.validate()?;
    Ok(TransitionMatrix {
        p_stay_los: 1.0 - params.b,
        p_los_to_nlos: params.b,
        p_nlos_to_los: params.g,
        p_stay_nlos: 1.0 - params.g,
    })
}

/// Long-run fraction of LOS steps, `g / (g + b)`.
pub fn stationary_los_probability(params: &ElevationParams) -> Result<f64> {
    params.validate()?;
    let total = params.g + params.b;
    if total <= 0.0 {
        return Err(Error::DegenerateChain);
    }
    Ok(params.g / total)
}

/// Simulate `n` steps of the chain.
///
/// The first state is drawn from the stationary distribution unless
/// `initial` is given. A chain with `g = b = 0` has no unique stationary
/// distribution and needs an explicit initial state.
pub fn generate_trace(
    params: &ElevationParams,
    n: usize,
    seed: u64,
    initial: Option<ChannelState>,
) -> Result<Vec<ChannelState>> {
    let mut rng = rng::stream(seed);
    generate_trace_with(params, n, &mut rng, initial)
}

pub(crate) fn generate_trace_with<R: Rng>(
    params: &ElevationParams,
    n: usize,
    rng: &mut R,
    initial: Option<ChannelState>,
) -> Result<Vec<ChannelState>> {
    let tm = transition_matrix(params)?;
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut state = match initial {
        Some(s) => s,
        None => {
            let pi = stationary_los_probability(params)?;
            if rng.gen::<f64>() < pi {
                ChannelState::Los
            } else {
                ChannelState::Nlos
            }
        }
    };
    let mut out = Vec::with_capacity(n);
    out.push(state);
    for _ in 1..n {
        if rng.gen::<f64>() < tm.exit_probability(state) {
            state = match state {
                ChannelState::Los => ChannelState::Nlos,
                ChannelState::Nlos => ChannelState::Los,
            };
        }
        out.push(state);
    }
    Ok(out)
}

/// Rectangular table of link states: one column per elevation angle.
#[derive(Debug, Clone)]
pub struct TraceDataset {
    angles: Vec<u32>,
    columns: Vec<Vec<ChannelState>>,
    rows: usize,
    /// Seed the table was generated from, if any.
    pub seed: Option<u64>,
}

impl PartialEq for TraceDataset {
    fn eq(&self, other: &Self) -> bool {
        self.angles == other.angles && self.rows == other.rows && self.columns == other.columns
    }
}

impl TraceDataset {
    pub fn new(angles: Vec<u32>, columns: Vec<Vec<ChannelState>>, rows: usize) -> Result<Self> {
        if angles.len() != columns.len() {
            return Err(Error::ShapeMismatch {
                context: "TraceDataset",
                expected: format!("{} columns", angles.len()),
                actual: format!("{} columns", columns.len()),
            });
        }
        for (i, a) in angles.iter().enumerate() {
            if angles[..i].contains(a) {
                return Err(Error::DuplicateAngle(*a));
            }
        }
        for col in &columns {
            if col.len() != rows {
                return Err(Error::ShapeMismatch {
                    context: "TraceDataset column",
                    expected: format!("{rows} rows"),
                    actual: format!("{} rows", col.len()),
                });
            }
        }
        Ok(TraceDataset {
            angles,
            columns,
            rows,
            seed: None,
        })
    }

    pub fn empty(angles: Vec<u32>) -> Result<Self> {
        let columns = vec![Vec::new(); angles.len()];
        Self::new(angles, columns, 0)
    }

    pub fn angles(&self) -> &[u32] {
        &self.angles
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<ChannelState>] {
        &self.columns
    }

    pub fn column(&self, index: usize) -> &[ChannelState] {
        &self.columns[index]
    }

    pub fn column_for_angle(&self, angle: u32) -> Option<&[ChannelState]> {
        self.angles
            .iter()
            .position(|&a| a == angle)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn cell(&self, row: usize, column: usize) -> ChannelState {
        self.columns[column][row]
    }

    pub fn row(&self, row: usize) -> Vec<ChannelState> {
        self.columns.iter().map(|c| c[row]).collect()
    }

    /// Fraction of LOS cells per column.
    pub fn los_fractions(&self) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| {
                if c.is_empty() {
                    f64::NAN
                } else {
                    c.iter().filter(|&&s| s == ChannelState::Los).count() as f64 / c.len() as f64
                }
            })
            .collect()
    }
}

/// One independent chain per angle, each on its own substream of `seed`.
pub fn generate_dataset(angles: &[u32], n: usize, seed: u64) -> Result<TraceDataset> {
    let params = angles
        .iter()
        .map(|&a| lookup(a))
        .collect::<Result<Vec<_>>>()?;
    generate_dataset_from(&params, n, seed)
}

/// Like [`generate_dataset`] with caller-supplied parameters.
pub fn generate_dataset_from(params: &[ElevationParams], n: usize, seed: u64) -> Result<TraceDataset> {
    let columns = params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = rng::substream(seed, "trace-column", i as u64);
            generate_trace_with(p, n, &mut rng, None)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ds = TraceDataset::new(params.iter().map(|p| p.angle_deg).collect(), columns, n)?;
    ds.seed = Some(seed);
    Ok(ds)
}

/// Per-step exit probability implied by a lognormal state length with the
/// given location/scale, for steps of `step_m` meters.
///
/// Exploratory: this does not reproduce the table's `g` and `b`, which stay
/// authoritative for trace generation.
pub fn derive_transition_prob(mu: f64, sigma: f64, step_m: f64) -> Result<f64> {
    if !(step_m > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step length must be positive, got {step_m}"
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be >= 0, got {sigma}")));
    }
    let mean_length = (mu + 0.5 * sigma * sigma).exp();
    Ok((step_m / mean_length).min(1.0))
}
