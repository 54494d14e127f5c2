//! Dense-network substrate: layers, reverse-mode gradients, Adam, and the
//! stochastic relaxations used by the generative models. All arithmetic is
//! `f64`; all randomness comes in through explicit seeds or RNGs.

mod adam;
mod layer;
mod relax;
mod tape;

pub use adam::{adam_step, AdamState, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS};
pub use layer::{Activation, BoundNetwork, DenseLayer, LayerSpec, Network};
pub use relax::{
    gaussian_reparameterize, gaussian_reparameterize_taped, gumbel, gumbel_noise, gumbel_softmax,
    gumbel_softmax_taped, normal_noise, DEFAULT_TEMPERATURE,
};
pub use tape::{backward, Gradients, Tape, Var};

pub(crate) use tape::softmax_groups;
