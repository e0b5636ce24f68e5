//! Measuring functions and the adversarial losses built from them. Two
//! objective families: `js` with phi = log (clamped), `wasserstein` with
//! phi = identity and weight clipping handled by the trainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Mlp, MlpHandle};
use crate::numerics::{NodeId, Tape, Tensor, LOG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Js,
    Wasserstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    Minimax,
    NonSaturating,
}

/// How generator i couples to the discriminators: `own` trains against its
/// paired discriminator only; `all` averages terms over every discriminator.
/// Both readings of the mixture loss are first-class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorCoupling {
    Own,
    All,
}

/// In config JSON, `generator_mode` defaults by family (non_saturating for
/// js, minimax for wasserstein) and `generator_coupling` defaults to own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub generator_mode: GeneratorMode,
    pub generator_coupling: GeneratorCoupling,
}

impl<'de> Deserialize<'de> for Objective {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            kind: ObjectiveKind,
            generator_mode: Option<GeneratorMode>,
            generator_coupling: Option<GeneratorCoupling>,
        }
        let raw = Raw::deserialize(de)?;
        let default_mode = match raw.kind {
            ObjectiveKind::Js => GeneratorMode::NonSaturating,
            ObjectiveKind::Wasserstein => GeneratorMode::Minimax,
        };
        Ok(Objective {
            kind: raw.kind,
            generator_mode: raw.generator_mode.unwrap_or(default_mode),
            generator_coupling: raw.generator_coupling.unwrap_or(GeneratorCoupling::Own),
        })
    }
}

impl Objective {
    pub fn js() -> Objective {
        Objective {
            kind: ObjectiveKind::Js,
            generator_mode: GeneratorMode::NonSaturating,
            generator_coupling: GeneratorCoupling::Own,
        }
    }

    pub fn wasserstein() -> Objective {
        Objective {
            kind: ObjectiveKind::Wasserstein,
            generator_mode: GeneratorMode::Minimax,
            generator_coupling: GeneratorCoupling::Own,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == ObjectiveKind::Wasserstein
            && self.generator_mode == GeneratorMode::NonSaturating
        {
            return Err(Error::Config(
                "non_saturating generator mode only applies to the js objective".into(),
            ));
        }
        Ok(())
    }
}

/// The measuring function phi applied to a plain value.
pub fn phi(objective: &Objective, v: f64) -> f64 {
    match objective.kind {
        ObjectiveKind::Js => v.max(LOG_FLOOR).ln(),
        ObjectiveKind::Wasserstein => v,
    }
}

fn phi_node(tape: &mut Tape, objective: &Objective, v: NodeId) -> Result<NodeId> {
    match objective.kind {
        ObjectiveKind::Js => tape.log(v),
        ObjectiveKind::Wasserstein => Ok(v),
    }
}

/// mean phi(D(real)) + mean phi(1 - D(fake)), built on the caller's tape.
/// This is the quantity the discriminator ascends; trainers descend its
/// negation.
pub fn discriminator_loss_node(
    tape: &mut Tape,
    objective: &Objective,
    disc: &MlpHandle,
    real: NodeId,
    fake: NodeId,
) -> Result<NodeId> {
    let s_real = disc.forward(tape, real)?;
    let phi_real = phi_node(tape, objective, s_real)?;
    let term_real = tape.mean(phi_real)?;

    let s_fake = disc.forward(tape, fake)?;
    let ones = tape.constant(Tensor::filled(tape.value(s_fake).shape().to_vec(), 1.0));
    let one_minus = tape.sub(ones, s_fake)?;
    let phi_fake = phi_node(tape, objective, one_minus)?;
    let term_fake = tape.mean(phi_fake)?;

    tape.add(term_real, term_fake)
}

/// Evaluation form of `discriminator_loss_node` on plain tensors.
pub fn discriminator_loss(
    objective: &Objective,
    disc: &Mlp,
    real_batch: &Tensor,
    fake_batch: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let handle = disc.register(&mut tape, false);
    let real = tape.constant(real_batch.clone());
    let fake = tape.constant(fake_batch.clone());
    let loss = discriminator_loss_node(&mut tape, objective, &handle, real, fake)?;
    tape.value(loss).item()
}

/// Loss nodes for one generator update. `value` is the mixture quantity
/// (1/k) * sum over coupled j of mean phi(1 - D_j(fake)); `descend` is what
/// the update minimizes, which differs from `value` only in non-saturating
/// JS mode, where it becomes -(1/k) * sum of mean log D_j(fake).
#[derive(Debug, Clone, Copy)]
pub struct GeneratorLossNodes {
    pub descend: NodeId,
    pub value: NodeId,
}

pub fn generator_loss_nodes(
    tape: &mut Tape,
    objective: &Objective,
    discs: &[MlpHandle],
    i: usize,
    fake: NodeId,
) -> Result<GeneratorLossNodes> {
    let k = discs.len();
    if i >= k {
        return Err(Error::Contract(format!(
            "generator index {i} out of range for {k} discriminators"
        )));
    }
    let coupled: Vec<usize> = match objective.generator_coupling {
        GeneratorCoupling::Own => vec![i],
        GeneratorCoupling::All => (0..k).collect(),
    };
    let scale = 1.0 / k as f64;
    let non_saturating = objective.kind == ObjectiveKind::Js
        && objective.generator_mode == GeneratorMode::NonSaturating;

    let mut value_sum: Option<NodeId> = None;
    let mut surrogate_sum: Option<NodeId> = None;
    for j in coupled {
        let s = discs[j].forward(tape, fake)?;
        let ones = tape.constant(Tensor::filled(tape.value(s).shape().to_vec(), 1.0));
        let one_minus = tape.sub(ones, s)?;
        let phi_term = phi_node(tape, objective, one_minus)?;
        let term = tape.mean(phi_term)?;
        value_sum = Some(match value_sum {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
        if non_saturating {
            let log_s = tape.log(s)?;
            let term = tape.mean(log_s)?;
            surrogate_sum = Some(match surrogate_sum {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
    }
    let value = tape.mul_scalar(value_sum.expect("at least one coupled term"), scale)?;
    let descend = match surrogate_sum {
        Some(s) => tape.mul_scalar(s, -scale)?,
        None => value,
    };
    Ok(GeneratorLossNodes { descend, value })
}

/// Mixture loss value for generator i against the given discriminators,
/// evaluated on plain tensors. This is the quantity recorded in loss
/// histories regardless of generator_mode.
pub fn generator_loss(
    objective: &Objective,
    generators: &[Mlp],
    discriminators: &[Mlp],
    i: usize,
    noise_batch: &Tensor,
) -> Result<f64> {
    if i >= generators.len() {
        return Err(Error::Contract(format!(
            "generator index {i} out of range for {} generators",
            generators.len()
        )));
    }
    let mut tape = Tape::new();
    let gen = generators[i].register(&mut tape, false);
    let z = tape.constant(noise_batch.clone());
    let fake = gen.forward(&mut tape, z)?;
    let handles: Vec<MlpHandle> = discriminators
        .iter()
        .map(|d| d.register(&mut tape, false))
        .collect();
    let nodes = generator_loss_nodes(&mut tape, objective, &handles, i, fake)?;
    tape.value(nodes.value).item()
}

/// Empirical two-player value on one real batch and one noise batch; the
/// single-pair quantity both losses specialize to at k=1.
pub fn value_function(
    objective: &Objective,
    gen: &Mlp,
    disc: &Mlp,
    real_batch: &Tensor,
    noise_batch: &Tensor,
) -> Result<f64> {
    let fake = gen.forward(noise_batch)?;
    discriminator_loss(objective, disc, real_batch, &fake)
}
