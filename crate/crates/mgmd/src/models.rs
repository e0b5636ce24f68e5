//! Generator and discriminator MLPs: initialization, plain and on-tape
//! forward passes, and mixture sampling across a generator ensemble.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Gradients, NodeId, SeededRng, Tape, Tensor};
use crate::objectives::ObjectiveKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub widths: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, hidden: Activation, output: Activation) -> Result<MlpSpec> {
        if widths.len() < 2 {
            return Err(Error::Contract(format!(
                "an MLP needs at least input and output widths, got {widths:?}"
            )));
        }
        if widths.contains(&0) {
            return Err(Error::Contract(format!("zero layer width in {widths:?}")));
        }
        Ok(MlpSpec {
            widths,
            hidden,
            output,
        })
    }

    pub fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

/// Layer parameters, interleaved [W0, b0, W1, b1, ...]. The flat layout is
/// what the optimizer, weight clipping, and checkpoints consume.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub tensors: Vec<Tensor>,
}

impl MlpParams {
    pub fn weight(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer]
    }

    pub fn bias(&self, layer: usize) -> &Tensor {
        &self.tensors[2 * layer + 1]
    }

    pub fn as_mut_slice(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }
}

/// He-style init: weights ~ N(0, 2/fan_in), biases zero.
pub fn init_params(spec: &MlpSpec, rng: &mut SeededRng) -> MlpParams {
    let mut tensors = Vec::with_capacity(2 * spec.layers());
    for l in 0..spec.layers() {
        let (fan_in, fan_out) = (spec.widths[l], spec.widths[l + 1]);
        let std = (2.0 / fan_in as f64).sqrt();
        let mut w = Tensor::zeros(vec![fan_in, fan_out]);
        for v in w.data_mut() {
            *v = std * rng.normal();
        }
        tensors.push(w);
        tensors.push(Tensor::zeros(vec![fan_out]));
    }
    MlpParams { tensors }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: MlpParams,
}

impl Mlp {
    pub fn init(spec: MlpSpec, rng: &mut SeededRng) -> Mlp {
        let params = init_params(&spec, rng);
        Mlp { spec, params }
    }

    /// Put the parameters on a tape, as gradient leaves when `trainable`.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> MlpHandle {
        let ids = self
            .params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        MlpHandle {
            ids,
            hidden: self.spec.hidden,
            output: self.spec.output,
            input_dim: self.spec.input_dim(),
        }
    }

    /// Forward pass on a scratch tape. The on-tape and plain paths are the
    /// same code, so they cannot drift apart.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let handle = self.register(&mut tape, false);
        let input = tape.constant(x.clone());
        let out = handle.forward(&mut tape, input)?;
        Ok(tape.value(out).clone())
    }
}

/// Tape-resident view of an MLP's parameters.
#[derive(Debug, Clone)]
pub struct MlpHandle {
    ids: Vec<NodeId>,
    hidden: Activation,
    output: Activation,
    input_dim: usize,
}

fn apply_activation(tape: &mut Tape, act: Activation, x: NodeId) -> Result<NodeId> {
    match act {
        Activation::Identity => Ok(x),
        Activation::LeakyRelu(alpha) => tape.leaky_relu(x, alpha),
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
    }
}

impl MlpHandle {
    pub fn forward(&self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        let in_cols = tape.value(x).shape().get(1).copied().unwrap_or(0);
        if in_cols != self.input_dim {
            return Err(Error::Contract(format!(
                "input has {} columns, network expects {}",
                in_cols, self.input_dim
            )));
        }
        let layers = self.ids.len() / 2;
        let mut h = x;
        for l in 0..layers {
            let z = tape.matmul(h, self.ids[2 * l])?;
            let z = tape.row_broadcast_add(z, self.ids[2 * l + 1])?;
            let act = if l + 1 == layers { self.output } else { self.hidden };
            h = apply_activation(tape, act, z)?;
        }
        Ok(h)
    }

    /// Gradients in parameter order, zeros for untouched tensors.
    pub fn grads(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        self.ids
            .iter()
            .map(|id| grads.for_leaf(*id, tape.value(*id).shape()))
            .collect()
    }
}

/// Latent noise source: standard normal with a fixed dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoisePrior {
    pub dim: usize,
}

impl NoisePrior {
    pub fn sample(&self, n: usize, rng: &mut SeededRng) -> Tensor {
        let mut z = Tensor::zeros(vec![n, self.dim]);
        for v in z.data_mut() {
            *v = rng.normal();
        }
        z
    }
}

pub fn generator_forward(gen: &Mlp, z: &Tensor) -> Result<Tensor> {
    gen.forward(z)
}

/// Discriminator scores, one per input row. JS-mode networks end in a
/// sigmoid so scores land in (0,1); Wasserstein critics are unbounded.
pub fn discriminator_forward(disc: &Mlp, x: &Tensor) -> Result<Vec<f64>> {
    let out = disc.forward(x)?;
    Ok(out.data().to_vec())
}

/// n samples from the uniform mixture over `generators`. Generator choices
/// come from substream 0 and latent draws from substream 1, so the latent
/// sequence is the same no matter which generators get picked.
pub fn sample_ensemble(
    generators: &[Mlp],
    prior: NoisePrior,
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    if generators.is_empty() {
        return Err(Error::Contract("sample_ensemble needs at least one generator".into()));
    }
    let master = SeededRng::new(seed);
    let mut idx_rng = master.derive(0);
    let mut z_rng = master.derive(1);
    let picks: Vec<usize> = (0..n).map(|_| idx_rng.index(generators.len())).collect();
    let z = prior.sample(n, &mut z_rng);

    let d = generators[0].spec.output_dim();
    let mut out = Tensor::zeros(vec![n, d]);
    for (g_idx, gen) in generators.iter().enumerate() {
        let rows: Vec<usize> = (0..n).filter(|i| picks[*i] == g_idx).collect();
        if rows.is_empty() {
            continue;
        }
        let mut zg = Tensor::zeros(vec![rows.len(), prior.dim]);
        for (r, &row) in rows.iter().enumerate() {
            zg.data_mut()[r * prior.dim..(r + 1) * prior.dim]
                .copy_from_slice(&z.data()[row * prior.dim..(row + 1) * prior.dim]);
        }
        let produced = gen.forward(&zg)?;
        for (r, &row) in rows.iter().enumerate() {
            out.data_mut()[row * d..(row + 1) * d]
                .copy_from_slice(&produced.data()[r * d..(r + 1) * d]);
        }
    }
    Ok(out)
}

/// Sampling from a single generator; the one-element mixture.
pub fn sample_generator(gen: &Mlp, prior: NoisePrior, n: usize, seed: u64) -> Result<Tensor> {
    sample_ensemble(std::slice::from_ref(gen), prior, n, seed)
}

/// Stock architectures. All of them are plain leaky-ReLU MLPs; sizes are
/// overridable through config.
pub fn generator_spec_mnist() -> MlpSpec {
    MlpSpec::new(vec![64, 128, 256, 784], Activation::LeakyRelu(0.2), Activation::Sigmoid).unwrap()
}

pub fn discriminator_spec_mnist(kind: ObjectiveKind) -> MlpSpec {
    MlpSpec::new(
        vec![784, 256, 128, 1],
        Activation::LeakyRelu(0.2),
        discriminator_output(kind),
    )
    .unwrap()
}

pub fn generator_spec_toy() -> MlpSpec {
    MlpSpec::new(vec![8, 32, 32, 2], Activation::LeakyRelu(0.2), Activation::Sigmoid).unwrap()
}

pub fn discriminator_spec_toy(kind: ObjectiveKind) -> MlpSpec {
    MlpSpec::new(
        vec![2, 32, 32, 1],
        Activation::LeakyRelu(0.2),
        discriminator_output(kind),
    )
    .unwrap()
}

/// JS discriminators emit probabilities; Wasserstein critics raw scores.
pub fn discriminator_output(kind: ObjectiveKind) -> Activation {
    match kind {
        ObjectiveKind::Js => Activation::Sigmoid,
        ObjectiveKind::Wasserstein => Activation::Identity,
    }
}

pub const LATENT_DIM_MNIST: usize = 64;
pub const LATENT_DIM_TOY: usize = 8;
