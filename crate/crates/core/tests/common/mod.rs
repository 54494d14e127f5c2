//! Finite-difference gradient checking shared by the gradient property tests
//! and the acceptance suite.

#![allow(dead_code)]

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use satlos::nn_core::{
    gaussian_reparameterize_taped, gumbel_softmax_taped, Activation, DenseLayer, Network, Tape, Var,
};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

/// Families of scalar losses built on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Sum of squared outputs of a single network.
    SumOfSquares,
    /// Mean of all outputs passed through softplus.
    MeanSoftplus,
    /// GAN discriminator loss on a real and a fake batch.
    Discriminator,
    /// GAN generator loss through Gumbel-softmax and a frozen discriminator,
    /// plus the conditional cross-entropy.
    Generator,
    /// VAE loss: reparameterized encoder/decoder, cross-entropy plus KL.
    Vae,
}

pub const ALL_LOSSES: [LossKind; 5] = [
    LossKind::SumOfSquares,
    LossKind::MeanSoftplus,
    LossKind::Discriminator,
    LossKind::Generator,
    LossKind::Vae,
];

/// A randomly generated check: networks whose parameters are all checked,
/// plus fixed inputs.
#[derive(Debug, Clone)]
pub struct Case {
    pub kind: LossKind,
    pub nets: Vec<Network>,
    /// Frozen helper network (GAN generator loss only).
    pub frozen: Option<Network>,
    pub inputs: Vec<Array2<f64>>,
    pub noise_seed: u64,
}

const GROUP: usize = 2;
const TEMPERATURE: f64 = 0.2;

fn random_activation(rng: &mut ChaCha8Rng, out_dim: usize, smooth_only: bool) -> Activation {
    let pick = rng.gen_range(0..if smooth_only { 3 } else { 4 });
    match pick {
        0 => Activation::Tanh,
        1 => Activation::Sigmoid,
        2 if out_dim % GROUP == 0 => Activation::SoftmaxGroups { width: GROUP },
        2 => Activation::Identity,
        _ => Activation::Relu,
    }
}

fn random_network(rng: &mut ChaCha8Rng, dims: &[usize], output: Activation, smooth_only: bool) -> Network {
    let mut layers = Vec::new();
    for (i, w) in dims.windows(2).enumerate() {
        let act = if i + 2 == dims.len() {
            output
        } else {
            random_activation(rng, w[1], smooth_only)
        };
        let mut layer = DenseLayer::init(w[0], w[1], act, rng);
        layer.weights.mapv_inplace(|v| v * 2.0);
        layer.bias.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        layers.push(layer);
    }
    Network::new(layers).expect("chained dims")
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.5..1.5))
}

fn one_hot_rows(rng: &mut ChaCha8Rng, rows: usize, groups: usize) -> Array2<f64> {
    let mut out = Array2::zeros((rows, GROUP * groups));
    for r in 0..rows {
        for g in 0..groups {
            out[[r, GROUP * g + rng.gen_range(0..GROUP)]] = 1.0;
        }
    }
    out
}

fn hidden_dims(rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(1..=5)).collect()
}

pub fn random_case(kind: LossKind, seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = rng.gen_range(1..=4);
    let noise_seed = rng.gen();
    let build = |rng: &mut ChaCha8Rng, input: usize, output: usize, out_act: Activation, smooth: bool| {
        let mut dims = vec![input];
        dims.extend(hidden_dims(rng));
        dims.push(output);
        random_network(rng, &dims, out_act, smooth)
    };
    match kind {
        LossKind::SumOfSquares | LossKind::MeanSoftplus => {
            let input = rng.gen_range(1..=5);
            let output = GROUP * rng.gen_range(1..=3);
            let out_act = random_activation(&mut rng, output, false);
            let net = build(&mut rng, input, output, out_act, false);
            let x = random_matrix(&mut rng, batch, input);
            Case {
                kind,
                nets: vec![net],
                frozen: None,
                inputs: vec![x],
                noise_seed,
            }
        }
        LossKind::Discriminator => {
            let groups = rng.gen_range(1..=3);
            let width = 2 * GROUP * groups;
            let net = build(&mut rng, width, 1, Activation::Identity, false);
            let real = ndarray::concatenate(
                Axis(1),
                &[one_hot_rows(&mut rng, batch, groups).view(), one_hot_rows(&mut rng, batch, groups).view()],
            )
            .unwrap();
            let fake = random_matrix(&mut rng, batch, width).mapv(|v| 0.5 + v / 3.0);
            Case {
                kind,
                nets: vec![net],
                frozen: None,
                inputs: vec![real, fake],
                noise_seed,
            }
        }
        LossKind::Generator => {
            let groups = rng.gen_range(1..=3);
            let width = GROUP * groups;
            let noise_dim = rng.gen_range(1..=4);
            let generator = build(&mut rng, noise_dim + width, width, Activation::Identity, false);
            let discriminator = build(&mut rng, 2 * width, 1, Activation::Identity, true);
            let noise = random_matrix(&mut rng, batch, noise_dim);
            let cond = one_hot_rows(&mut rng, batch, groups);
            Case {
                kind,
                nets: vec![generator],
                frozen: Some(discriminator),
                inputs: vec![noise, cond],
                noise_seed,
            }
        }
        LossKind::Vae => {
            let groups = rng.gen_range(1..=3);
            let width = GROUP * groups;
            let latent = rng.gen_range(1..=3);
            let encoder = build(&mut rng, width, 2 * latent, Activation::Identity, false);
            let decoder = build(&mut rng, latent, width, Activation::Identity, true);
            let x = one_hot_rows(&mut rng, batch, groups);
            Case {
                kind,
                nets: vec![encoder, decoder],
                frozen: None,
                inputs: vec![x],
                noise_seed,
            }
        }
    }
}

/// Smallest |pre-activation| of any ReLU unit when `net` reads `x`.
fn relu_margin(net: &Network, x: &Array2<f64>) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in net.layers() {
        let z = h.dot(&layer.weights.t()) + &layer.bias.view().insert_axis(Axis(0));
        if layer.activation == Activation::Relu {
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        }
        let single = Network::new(vec![layer.clone()]).unwrap();
        h = single.forward_batch(&h).unwrap();
    }
    margin
}

/// Whether every ReLU in the checked networks sits far enough from its kink
/// for central differences to be meaningful.
pub fn away_from_kinks(case: &Case) -> bool {
    let limit = 1e-2;
    match case.kind {
        LossKind::SumOfSquares | LossKind::MeanSoftplus => relu_margin(&case.nets[0], &case.inputs[0]) > limit,
        LossKind::Discriminator => case.inputs.iter().all(|x| relu_margin(&case.nets[0], x) > limit),
        LossKind::Generator => {
            let x = ndarray::concatenate(Axis(1), &[case.inputs[0].view(), case.inputs[1].view()]).unwrap();
            relu_margin(&case.nets[0], &x) > limit
        }
        LossKind::Vae => relu_margin(&case.nets[0], &case.inputs[0]) > limit,
    }
}

fn softplus_mean(tape: &mut Tape, v: Var, sign: f64) -> Var {
    let s = tape.scale(v, sign);
    let s = tape.softplus(s);
    tape.mean(s)
}

/// Loss value and the gradient with respect to every checked parameter, in
/// network order then [`Network::flat_params`] order.
pub fn loss_and_gradient(case: &Case, nets: &[Network]) -> (f64, Vec<f64>) {
    let mut tape = Tape::new();
    let mut rng = ChaCha8Rng::seed_from_u64(case.noise_seed);
    let bound: Vec<_> = nets.iter().map(|n| n.bind(&mut tape, true)).collect();
    let loss = match case.kind {
        LossKind::SumOfSquares => {
            let x = tape.constant(case.inputs[0].clone());
            let y = bound[0].forward(&mut tape, x).unwrap();
            let sq = tape.square(y);
            tape.sum(sq)
        }
        LossKind::MeanSoftplus => {
            let x = tape.constant(case.inputs[0].clone());
            let y = bound[0].forward(&mut tape, x).unwrap();
            softplus_mean(&mut tape, y, 1.0)
        }
        LossKind::Discriminator => {
            let real = tape.constant(case.inputs[0].clone());
            let fake = tape.constant(case.inputs[1].clone());
            let r = bound[0].forward(&mut tape, real).unwrap();
            let f = bound[0].forward(&mut tape, fake).unwrap();
            let a = softplus_mean(&mut tape, r, -1.0);
            let b = softplus_mean(&mut tape, f, 1.0);
            tape.add(a, b)
        }
        LossKind::Generator => {
            let frozen = case.frozen.as_ref().unwrap().bind(&mut tape, false);
            let noise = tape.constant(case.inputs[0].clone());
            let cond = tape.constant(case.inputs[1].clone());
            let input = tape.concat(&[noise, cond]);
            let logits = bound[0].forward(&mut tape, input).unwrap();
            let fake = gumbel_softmax_taped(&mut tape, logits, GROUP, TEMPERATURE, &mut rng).unwrap();
            let d_in = tape.concat(&[fake, cond]);
            let score = frozen.forward(&mut tape, d_in).unwrap();
            let adv = softplus_mean(&mut tape, score, -1.0);
            let lp = tape.log_softmax_groups(logits, GROUP);
            let picked = tape.mul(lp, cond);
            let picked = tape.sum(picked);
            let ce = tape.scale(picked, -1.0);
            tape.add(adv, ce)
        }
        LossKind::Vae => {
            let x = tape.constant(case.inputs[0].clone());
            let h = bound[0].forward(&mut tape, x).unwrap();
            let latent = tape.shape(h).1 / 2;
            let mu = tape.slice_cols(h, 0, latent);
            let log_var = tape.slice_cols(h, latent, 2 * latent);
            let z = gaussian_reparameterize_taped(&mut tape, mu, log_var, &mut rng).unwrap();
            let logits = bound[1].forward(&mut tape, z).unwrap();
            let lp = tape.log_softmax_groups(logits, GROUP);
            let picked = tape.mul(lp, x);
            let picked = tape.sum(picked);
            let ce = tape.scale(picked, -2.0);
            let mu2 = tape.square(mu);
            let var = tape.exp(log_var);
            let t = tape.add(mu2, var);
            let t = tape.sub(t, log_var);
            let t = tape.offset(t, -1.0);
            let t = tape.sum(t);
            let kl = tape.scale(t, 0.5);
            tape.add(ce, kl)
        }
    };
    let grads = tape.backward(loss).unwrap();
    let flat = bound.iter().flat_map(|b| b.flat_gradients(&grads)).collect();
    (tape.scalar(loss), flat)
}

fn with_params(nets: &[Network], flat: &[f64]) -> Vec<Network> {
    let mut out = nets.to_vec();
    let mut offset = 0;
    for n in &mut out {
        let k = n.param_count();
        n.set_flat_params(&flat[offset..offset + k]).unwrap();
        offset += k;
    }
    out
}

/// Largest relative error between the taped gradient and central finite
/// differences, over all parameters.
pub fn max_relative_error(case: &Case) -> f64 {
    let (_, analytic) = loss_and_gradient(case, &case.nets);
    let base: Vec<f64> = case.nets.iter().flat_map(|n| n.flat_params()).collect();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] = base[i] + STEP;
        let (up, _) = loss_and_gradient(case, &with_params(&case.nets, &p));
        p[i] = base[i] - STEP;
        let (down, _) = loss_and_gradient(case, &with_params(&case.nets, &p));
        let numeric = (up - down) / (2.0 * STEP);
        let scale = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / scale);
    }
    worst
}

/// Activations of every layer in the case, frozen network included.
pub fn layer_kinds(case: &Case) -> Vec<Activation> {
    case.nets
        .iter()
        .chain(case.frozen.iter())
        .flat_map(|n| n.layers().iter().map(|l| l.activation))
        .collect()
}
