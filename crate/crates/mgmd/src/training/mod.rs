//! Training orchestration: k generator/discriminator pairs on k disjoint
//! partitions, the single-pair classic baseline, and the shared-generator
//! pargan-style baseline. One engine drives all three, so classic is
//! literally the k=1 trajectory of the partitioned method.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, serialize_checkpoint};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{partition, partition_stratified, Dataset, PartitionSet};
use crate::error::{Error, Result};
use crate::models::{
    discriminator_output, Activation, Mlp, MlpHandle, MlpParams, MlpSpec, NoisePrior,
};
use crate::numerics::{clip_weights, OptimizerState, SeededRng, Tape};
use crate::objectives::{
    discriminator_loss, discriminator_loss_node, generator_loss, generator_loss_nodes,
    GeneratorCoupling, Objective, ObjectiveKind,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mgmd,
    Classic,
    Pargan,
}

impl Method {
    /// Label used in reports and result files.
    pub fn report_label(&self) -> &'static str {
        match self {
            Method::Mgmd => "mgmd",
            Method::Classic => "classic",
            Method::Pargan => "pargan-style",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptChoice {
    Sgd,
    Adam,
}

fn default_beta1() -> f64 {
    0.5
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptChoice,
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.kind == OptChoice::Adam {
            if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
                return Err(Error::Config(format!(
                    "adam betas must lie in [0,1): {} / {}",
                    self.beta1, self.beta2
                )));
            }
            if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
                return Err(Error::Config("adam epsilon must be positive".into()));
            }
        }
        Ok(())
    }

    fn build(&self) -> OptimizerState {
        match self.kind {
            OptChoice::Sgd => OptimizerState::sgd(self.learning_rate),
            OptChoice::Adam => {
                OptimizerState::adam(self.learning_rate, self.beta1, self.beta2, self.epsilon)
            }
        }
    }
}

/// Architecture overrides; anything left unset falls back to the stock
/// layout chosen by data dimension (784 selects the image-scale networks,
/// everything else the toy ones).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub latent_dim: Option<usize>,
    pub generator_widths: Option<Vec<usize>>,
    pub discriminator_widths: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub objective: Objective,
    /// Defaults per objective family: adam(2e-4, 0.5, 0.999, 1e-8) for js,
    /// sgd(5e-3) for wasserstein.
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
    /// Critic updates per generator update; defaults 1 (js) / 5 (wasserstein).
    #[serde(default)]
    pub d_steps_per_g_step: Option<usize>,
    /// Wasserstein weight-clip bound; defaults to 0.01, js mode must leave
    /// it unset.
    #[serde(default)]
    pub clip_c: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_interval: Option<usize>,
    #[serde(default)]
    pub stratified: bool,
    #[serde(default)]
    pub arch: ArchConfig,
}

impl TrainConfig {
    pub fn resolved_optimizer(&self) -> OptimizerConfig {
        self.optimizer.unwrap_or(match self.objective.kind {
            ObjectiveKind::Js => OptimizerConfig {
                kind: OptChoice::Adam,
                learning_rate: 2e-4,
                beta1: default_beta1(),
                beta2: default_beta2(),
                epsilon: default_epsilon(),
            },
            ObjectiveKind::Wasserstein => OptimizerConfig {
                kind: OptChoice::Sgd,
                learning_rate: 5e-3,
                beta1: default_beta1(),
                beta2: default_beta2(),
                epsilon: default_epsilon(),
            },
        })
    }

    pub fn resolved_d_steps(&self) -> usize {
        self.d_steps_per_g_step.unwrap_or(match self.objective.kind {
            ObjectiveKind::Js => 1,
            ObjectiveKind::Wasserstein => 5,
        })
    }

    /// Clip bound in Wasserstein mode, None in js mode.
    pub fn resolved_clip(&self) -> Option<f64> {
        match self.objective.kind {
            ObjectiveKind::Wasserstein => Some(self.clip_c.unwrap_or(0.01)),
            ObjectiveKind::Js => None,
        }
    }

    pub fn validate_for(&self, data: &Dataset) -> Result<()> {
        if self.k < 1 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.k > data.len() {
            return Err(Error::Config(format!(
                "k={} exceeds the {} training samples",
                self.k,
                data.len()
            )));
        }
        match self.method {
            Method::Classic if self.k != 1 => {
                return Err(Error::Config(format!(
                    "classic method requires k=1, got k={}",
                    self.k
                )));
            }
            Method::Pargan if self.k < 2 => {
                return Err(Error::Config("pargan method requires k >= 2".into()));
            }
            _ => {}
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.objective.validate()?;
        self.resolved_optimizer().validate()?;
        if self.resolved_d_steps() < 1 {
            return Err(Error::Config("d_steps_per_g_step must be at least 1".into()));
        }
        match (self.objective.kind, self.clip_c) {
            (ObjectiveKind::Js, Some(_)) => {
                return Err(Error::Config(
                    "clip_c only applies to the wasserstein objective".into(),
                ));
            }
            (ObjectiveKind::Wasserstein, Some(c)) if !c.is_finite() || c <= 0.0 => {
                return Err(Error::Config(format!("clip_c must be positive, got {c}")));
            }
            _ => {}
        }
        if let Some(interval) = self.checkpoint_interval {
            if interval < 1 {
                return Err(Error::Config("checkpoint_interval must be at least 1".into()));
            }
        }
        Ok(())
    }

    /// Concrete network specs and latent prior for data of width `dim`.
    pub fn resolve_arch(&self, dim: usize) -> Result<(MlpSpec, MlpSpec, NoisePrior)> {
        let image_scale = dim == 784;
        let latent = self.arch.latent_dim.unwrap_or_else(|| {
            match &self.arch.generator_widths {
                Some(w) if !w.is_empty() => w[0],
                _ => {
                    if image_scale {
                        64
                    } else {
                        8
                    }
                }
            }
        });
        let gen_widths = self.arch.generator_widths.clone().unwrap_or_else(|| {
            if image_scale {
                vec![latent, 128, 256, 784]
            } else {
                vec![latent, 32, 32, dim]
            }
        });
        let disc_widths = self.arch.discriminator_widths.clone().unwrap_or_else(|| {
            if image_scale {
                vec![784, 256, 128, 1]
            } else {
                vec![dim, 32, 32, 1]
            }
        });
        if gen_widths.first() != Some(&latent) {
            return Err(Error::Config(format!(
                "generator input width {:?} does not match latent_dim {latent}",
                gen_widths.first()
            )));
        }
        if gen_widths.last() != Some(&dim) {
            return Err(Error::Config(format!(
                "generator output width {:?} does not match data width {dim}",
                gen_widths.last()
            )));
        }
        if disc_widths.first() != Some(&dim) || disc_widths.last() != Some(&1) {
            return Err(Error::Config(format!(
                "discriminator widths {disc_widths:?} must run from {dim} to 1"
            )));
        }
        let hidden = Activation::LeakyRelu(0.2);
        let gen = MlpSpec::new(gen_widths, hidden, Activation::Sigmoid)
            .map_err(|e| Error::Config(e.to_string()))?;
        let disc = MlpSpec::new(disc_widths, hidden, discriminator_output(self.objective.kind))
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok((gen, disc, NoisePrior { dim: latent }))
    }
}

/// End-of-epoch loss evaluations, one entry per epoch. `d_ascent` holds the
/// per-discriminator ascent value; `g_value` the per-generator mixture value.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLosses {
    pub d_ascent: Vec<f64>,
    pub g_value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub method: Method,
    pub generators: Vec<Mlp>,
    pub discriminators: Vec<Mlp>,
    pub objective: Objective,
    pub partitions: PartitionSet,
    pub config: TrainConfig,
    pub loss_history: Vec<EpochLosses>,
    /// Digest of the training data this model was fitted on; report and
    /// attack commands check it before trusting partition indices.
    pub data_digest: [u8; 32],
}

impl TrainedModel {
    pub fn k(&self) -> usize {
        self.discriminators.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.generators[0].spec.input_dim()
    }
}

/// Digest over sample values and ids; pins a dataset identity.
pub fn dataset_digest(data: &Dataset) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in data.samples.data() {
        h.update(v.to_le_bytes());
    }
    for id in &data.ids {
        h.update(id.to_le_bytes());
    }
    h.finalize().into()
}

/// Hooks for instrumenting a run; every method has a no-op default.
pub trait TrainObserver {
    /// Ids of the real samples a discriminator is about to train on.
    fn real_batch(&mut self, _pair: usize, _ids: &[u64]) {}
    fn after_critic_step(&mut self, _pair: usize, _disc: &MlpParams) {}
    fn after_generator_step(&mut self, _gen: usize, _gen_params: &MlpParams) {}
    /// Called when `checkpoint_interval` divides the finished epoch count.
    fn checkpoint_due(&mut self, _epoch: usize, _model: &TrainedModel) {}
}

struct NoopObserver;
impl TrainObserver for NoopObserver {}

pub fn train(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    train_with_observer(data, config, &mut NoopObserver)
}

pub fn train_mgmd(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    expect_method(config, Method::Mgmd)?;
    train(data, config)
}

pub fn train_classic(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    expect_method(config, Method::Classic)?;
    train(data, config)
}

/// One shared generator against k per-partition discriminators. The
/// generator always averages its loss over all k discriminators; the
/// coupling setting does not apply here.
pub fn train_pargan(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    expect_method(config, Method::Pargan)?;
    train(data, config)
}

fn expect_method(config: &TrainConfig, want: Method) -> Result<()> {
    if config.method != want {
        return Err(Error::Config(format!(
            "config method is {:?}, expected {want:?}",
            config.method
        )));
    }
    Ok(())
}

pub fn train_with_observer(
    data: &Dataset,
    config: &TrainConfig,
    obs: &mut dyn TrainObserver,
) -> Result<TrainedModel> {
    let mut engine = Engine::new(data, config)?;
    engine.run(obs)?;
    Ok(engine.into_model())
}

/// The model as initialized, before any update. Useful as the chance-level
/// reference point for attack evaluation.
pub fn init_model(data: &Dataset, config: &TrainConfig) -> Result<TrainedModel> {
    Ok(Engine::new(data, config)?.into_model())
}

// Substream layout under the master seed. Pair streams are spaced so the
// shared pargan generator stream never collides with them.
const STREAM_PARTITION: u64 = 0;
const STREAM_SHARED_GEN: u64 = 1;
const STREAM_PAIR_BASE: u64 = 16;
const SUB_INIT_GEN: u64 = 0;
const SUB_INIT_DISC: u64 = 1;
const SUB_BATCHES: u64 = 2;

struct Engine<'d> {
    data: &'d Dataset,
    config: TrainConfig,
    objective: Objective,
    prior: NoisePrior,
    partitions: PartitionSet,
    generators: Vec<Mlp>,
    discriminators: Vec<Mlp>,
    opt_gens: Vec<OptimizerState>,
    opt_discs: Vec<OptimizerState>,
    /// Mutable per-pair streams feeding batch selection and noise.
    pair_rngs: Vec<SeededRng>,
    /// Batch/noise stream for the shared pargan generator.
    shared_gen_rng: SeededRng,
    /// Per-pair epoch ordering buffer, refilled by shuffle each epoch.
    epoch_orders: Vec<Vec<usize>>,
    critic_steps: Vec<u64>,
    loss_history: Vec<EpochLosses>,
    steps_per_epoch: usize,
    d_steps: usize,
    clip: Option<f64>,
    digest: [u8; 32],
}

impl<'d> Engine<'d> {
    fn new(data: &'d Dataset, config: &TrainConfig) -> Result<Engine<'d>> {
        config.validate_for(data)?;
        let master = SeededRng::new(config.seed);
        let mut partition_seed_rng = master.derive(STREAM_PARTITION);
        let pseed = partition_seed_rng.next_u64();
        let partitions = if config.stratified {
            partition_stratified(data, config.k, pseed)?
        } else {
            partition(data, config.k, pseed)?
        };
        let (gen_spec, disc_spec, prior) = config.resolve_arch(data.dim())?;

        let k = config.k;
        let n_gens = match config.method {
            Method::Pargan => 1,
            _ => k,
        };
        let opt = config.resolved_optimizer();

        let mut generators = Vec::with_capacity(n_gens);
        if config.method == Method::Pargan {
            let mut rng = master.derive(STREAM_SHARED_GEN).derive(SUB_INIT_GEN);
            generators.push(Mlp::init(gen_spec.clone(), &mut rng));
        } else {
            for i in 0..k {
                let mut rng = master.derive(STREAM_PAIR_BASE + i as u64).derive(SUB_INIT_GEN);
                generators.push(Mlp::init(gen_spec.clone(), &mut rng));
            }
        }
        let mut discriminators = Vec::with_capacity(k);
        let mut pair_rngs = Vec::with_capacity(k);
        for i in 0..k {
            let pair = master.derive(STREAM_PAIR_BASE + i as u64);
            let mut rng = pair.derive(SUB_INIT_DISC);
            discriminators.push(Mlp::init(disc_spec.clone(), &mut rng));
            pair_rngs.push(pair.derive(SUB_BATCHES));
        }

        let min_part = partitions.parts.iter().map(Vec::len).min().unwrap();
        let steps_per_epoch = (min_part / config.batch_size).max(1);

        Ok(Engine {
            digest: dataset_digest(data),
            data,
            objective: effective_objective(config),
            prior,
            opt_gens: vec![opt.build(); n_gens],
            opt_discs: vec![opt.build(); k],
            shared_gen_rng: master.derive(STREAM_SHARED_GEN).derive(SUB_BATCHES),
            epoch_orders: partitions.parts.clone(),
            critic_steps: vec![0; k],
            loss_history: Vec::with_capacity(config.epochs),
            steps_per_epoch,
            d_steps: config.resolved_d_steps(),
            clip: config.resolved_clip(),
            partitions,
            generators,
            discriminators,
            pair_rngs,
            config: config.clone(),
        })
    }

    fn run(&mut self, obs: &mut dyn TrainObserver) -> Result<()> {
        for epoch in 0..self.config.epochs {
            self.run_epoch(epoch, obs)?;
            let losses = self.probe_losses(epoch)?;
            self.loss_history.push(losses);
            if let Some(interval) = self.config.checkpoint_interval {
                if (epoch + 1) % interval == 0 {
                    let snapshot = self.snapshot();
                    obs.checkpoint_due(epoch + 1, &snapshot);
                }
            }
        }
        Ok(())
    }

    fn run_epoch(&mut self, epoch: usize, obs: &mut dyn TrainObserver) -> Result<()> {
        let k = self.config.k;
        // Fresh pass order over each partition.
        for i in 0..k {
            let mut order = self.partitions.parts[i].clone();
            self.pair_rngs[i].shuffle(&mut order);
            self.epoch_orders[i] = order;
        }
        for step in 0..self.steps_per_epoch {
            for i in 0..k {
                let ctx = |e: Error| Error::Training {
                    epoch,
                    pair: i,
                    source: Box::new(e),
                };
                self.critic_update(i, step, obs).map_err(ctx)?;
                self.critic_steps[i] += 1;
                let due = self.critic_steps[i].is_multiple_of(self.d_steps as u64);
                if due && self.config.method != Method::Pargan {
                    self.generator_update(i, obs).map_err(ctx)?;
                }
            }
            if self.config.method == Method::Pargan
                && self.critic_steps[0].is_multiple_of(self.d_steps as u64)
            {
                self.generator_update(0, obs).map_err(|e| Error::Training {
                    epoch,
                    pair: 0,
                    source: Box::new(e),
                })?;
            }
        }
        Ok(())
    }

    /// Real-batch row indices for pair i at the given step: a slice of the
    /// shuffled pass when the partition holds at least one full batch, a
    /// with-replacement draw otherwise.
    fn real_rows(&mut self, i: usize, step: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let part_len = self.partitions.parts[i].len();
        if part_len >= b {
            self.epoch_orders[i][step * b..(step + 1) * b].to_vec()
        } else {
            let part = &self.partitions.parts[i];
            (0..b).map(|_| part[self.pair_rngs[i].index(part_len)]).collect()
        }
    }

    fn gen_for_pair(&self, i: usize) -> usize {
        match self.config.method {
            Method::Pargan => 0,
            _ => i,
        }
    }

    fn critic_update(&mut self, i: usize, step: usize, obs: &mut dyn TrainObserver) -> Result<()> {
        let rows = self.real_rows(i, step);
        let ids: Vec<u64> = rows.iter().map(|&r| self.data.ids[r]).collect();
        obs.real_batch(i, &ids);
        let real = self.data.subset(&rows).samples;
        let z = self.prior.sample(self.config.batch_size, &mut self.pair_rngs[i]);
        let fake = self.generators[self.gen_for_pair(i)].forward(&z)?;

        let mut tape = Tape::new();
        let dh = self.discriminators[i].register(&mut tape, true);
        let real_id = tape.constant(real);
        let fake_id = tape.constant(fake);
        let ascent = discriminator_loss_node(&mut tape, &self.objective, &dh, real_id, fake_id)?;
        let descend = tape.mul_scalar(ascent, -1.0)?;
        let grads = tape.backward(descend)?;
        let dg = dh.grads(&tape, &grads);
        self.opt_discs[i].step(self.discriminators[i].params.as_mut_slice(), &dg)?;
        if let Some(c) = self.clip {
            clip_weights(self.discriminators[i].params.as_mut_slice(), c)?;
        }
        obs.after_critic_step(i, &self.discriminators[i].params);
        Ok(())
    }

    fn generator_update(&mut self, gen_idx: usize, obs: &mut dyn TrainObserver) -> Result<()> {
        let rng = if self.config.method == Method::Pargan {
            &mut self.shared_gen_rng
        } else {
            &mut self.pair_rngs[gen_idx]
        };
        let z = self.prior.sample(self.config.batch_size, rng);

        let mut tape = Tape::new();
        let gh = self.generators[gen_idx].register(&mut tape, true);
        let z_id = tape.constant(z);
        let fake = gh.forward(&mut tape, z_id)?;
        let handles: Vec<MlpHandle> = self
            .discriminators
            .iter()
            .map(|d| d.register(&mut tape, false))
            .collect();
        let nodes = generator_loss_nodes(&mut tape, &self.objective, &handles, gen_idx, fake)?;
        let grads = tape.backward(nodes.descend)?;
        let gg = gh.grads(&tape, &grads);
        self.opt_gens[gen_idx].step(self.generators[gen_idx].params.as_mut_slice(), &gg)?;
        obs.after_generator_step(gen_idx, &self.generators[gen_idx].params);
        Ok(())
    }

    /// End-of-epoch evaluation on fresh probe batches.
    fn probe_losses(&mut self, epoch: usize) -> Result<EpochLosses> {
        let b = self.config.batch_size;
        let mut d_ascent = Vec::with_capacity(self.config.k);
        for i in 0..self.config.k {
            let ctx = |e: Error| Error::Training {
                epoch,
                pair: i,
                source: Box::new(e),
            };
            let part = &self.partitions.parts[i];
            let rows: Vec<usize> =
                (0..b).map(|_| part[self.pair_rngs[i].index(part.len())]).collect();
            let real = self.data.subset(&rows).samples;
            let z = self.prior.sample(b, &mut self.pair_rngs[i]);
            let fake = self.generators[self.gen_for_pair(i)].forward(&z).map_err(ctx)?;
            d_ascent.push(
                discriminator_loss(&self.objective, &self.discriminators[i], &real, &fake)
                    .map_err(ctx)?,
            );
        }
        let mut g_value = Vec::with_capacity(self.generators.len());
        for gi in 0..self.generators.len() {
            let rng = if self.config.method == Method::Pargan {
                &mut self.shared_gen_rng
            } else {
                &mut self.pair_rngs[gi]
            };
            let z = self.prior.sample(b, rng);
            g_value.push(
                generator_loss(&self.objective, &self.generators, &self.discriminators, gi, &z)
                    .map_err(|e| Error::Training {
                        epoch,
                        pair: gi,
                        source: Box::new(e),
                    })?,
            );
        }
        Ok(EpochLosses { d_ascent, g_value })
    }

    fn snapshot(&self) -> TrainedModel {
        TrainedModel {
            method: self.config.method,
            generators: self.generators.clone(),
            discriminators: self.discriminators.clone(),
            objective: self.objective,
            partitions: self.partitions.clone(),
            config: self.config.clone(),
            loss_history: self.loss_history.clone(),
            data_digest: self.digest,
        }
    }

    fn into_model(self) -> TrainedModel {
        TrainedModel {
            method: self.config.method,
            generators: self.generators,
            discriminators: self.discriminators,
            objective: self.objective,
            partitions: self.partitions,
            loss_history: self.loss_history,
            data_digest: self.digest,
            config: self.config,
        }
    }
}

/// The coupling the engine actually trains with; pargan's generator always
/// averages over every discriminator.
fn effective_objective(config: &TrainConfig) -> Objective {
    let mut obj = config.objective;
    if config.method == Method::Pargan {
        obj.generator_coupling = GeneratorCoupling::All;
    }
    obj
}

#[cfg(test)]
mod tests;
