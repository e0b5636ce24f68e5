//! Membership-inference attacks with full access to model parameters. Two
//! targets: discriminator scores read out directly, and generators probed
//! through nearest-generated-sample reconstruction distance. Both reduce to
//! a best-threshold decision over per-sample scores.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{discriminator_forward, sample_generator, NoisePrior};
use crate::numerics::SeededRng;
use crate::training::{Method, TrainedModel};

/// Balanced evaluation set: candidate samples that were in the training
/// data and candidates that were held out. Equal counts keep the random
/// guess at 0.5.
#[derive(Debug, Clone)]
pub struct MembershipEvalSet {
    pub members: Dataset,
    pub nonmembers: Dataset,
    /// Discriminator index per member, filled by `assign_member_partitions`.
    /// Only the own-partition aggregation reads it.
    member_partitions: Option<Vec<usize>>,
}

impl MembershipEvalSet {
    pub fn new(members: Dataset, nonmembers: Dataset) -> Result<MembershipEvalSet> {
        if members.is_empty() {
            return Err(Error::Contract("membership eval set is empty".into()));
        }
        if members.len() != nonmembers.len() {
            return Err(Error::Contract(format!(
                "unbalanced eval set: {} members vs {} non-members",
                members.len(),
                nonmembers.len()
            )));
        }
        if members.dim() != nonmembers.dim() {
            return Err(Error::Contract(format!(
                "member width {} differs from non-member width {}",
                members.dim(),
                nonmembers.dim()
            )));
        }
        let mut seen: std::collections::HashSet<u64> = members.ids.iter().copied().collect();
        for id in &nonmembers.ids {
            if !seen.insert(*id) {
                return Err(Error::Contract(format!(
                    "sample id {id} appears on both sides of the eval set"
                )));
            }
        }
        Ok(MembershipEvalSet {
            members,
            nonmembers,
            member_partitions: None,
        })
    }

    pub fn len_per_side(&self) -> usize {
        self.members.len()
    }

    /// Record which discriminator trained on each member, looked up through
    /// the training dataset the model was fitted on. Required before using
    /// `Aggregation::Own`.
    pub fn assign_member_partitions(
        &mut self,
        train: &Dataset,
        model: &TrainedModel,
    ) -> Result<()> {
        let mut id_to_part = std::collections::HashMap::new();
        for (part, rows) in model.partitions.parts.iter().enumerate() {
            for &row in rows {
                id_to_part.insert(train.ids[row], part);
            }
        }
        let mut assigned = Vec::with_capacity(self.members.len());
        for id in &self.members.ids {
            match id_to_part.get(id) {
                Some(&p) => assigned.push(p),
                None => {
                    return Err(Error::Contract(format!(
                        "member id {id} is not in any training partition"
                    )));
                }
            }
        }
        self.member_partitions = Some(assigned);
        Ok(())
    }
}

/// How per-discriminator scores combine when the model has several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Most confident discriminator wins; the strongest adversary.
    #[default]
    Max,
    Mean,
    /// Members are scored by the discriminator that trained on them;
    /// non-members by contiguous fold (fold i goes to discriminator i).
    Own,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackTarget {
    Discriminators,
    Generators,
}

/// Decision rule direction: predict member when the score is at least the
/// threshold, or at most the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    GreaterEqual,
    LessEqual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub target: AttackTarget,
    pub method: String,
    pub k: usize,
    pub objective: crate::objectives::ObjectiveKind,
    /// Present for the discriminator target only.
    pub aggregation: Option<Aggregation>,
    pub accuracy: f64,
    pub threshold: f64,
    pub orientation: Orientation,
    pub seed: u64,
    #[serde(skip)]
    pub member_scores: Vec<f64>,
    #[serde(skip)]
    pub nonmember_scores: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub aggregation: Aggregation,
    /// Generated samples drawn per generator for the reconstruction attack;
    /// None means 10x the eval-set size (both sides counted).
    pub m_per_generator: Option<usize>,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> AttackConfig {
        AttackConfig {
            aggregation: Aggregation::Max,
            m_per_generator: None,
            seed: 0,
        }
    }
}

/// Membership scores against the discriminators, (members, non-members).
pub fn discriminator_membership_scores(
    model: &TrainedModel,
    eval: &MembershipEvalSet,
    aggregation: Aggregation,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if model.discriminators.is_empty() {
        return Err(Error::Contract("model has no discriminators".into()));
    }
    if eval.members.is_empty() {
        return Err(Error::Contract("membership eval set is empty".into()));
    }
    let k = model.k();
    // One forward pass per discriminator over each side.
    let mut member_table = Vec::with_capacity(k);
    let mut nonmember_table = Vec::with_capacity(k);
    for d in &model.discriminators {
        member_table.push(discriminator_forward(d, &eval.members.samples)?);
        nonmember_table.push(discriminator_forward(d, &eval.nonmembers.samples)?);
    }
    let n = eval.members.len();
    let max_of = |table: &[Vec<f64>], j: usize| {
        table.iter().map(|col| col[j]).fold(f64::NEG_INFINITY, f64::max)
    };
    let mean_of =
        |table: &[Vec<f64>], j: usize| table.iter().map(|col| col[j]).sum::<f64>() / k as f64;
    let (members, nonmembers) = match aggregation {
        Aggregation::Max => (
            (0..n).map(|j| max_of(&member_table, j)).collect(),
            (0..n).map(|j| max_of(&nonmember_table, j)).collect(),
        ),
        Aggregation::Mean => (
            (0..n).map(|j| mean_of(&member_table, j)).collect(),
            (0..n).map(|j| mean_of(&nonmember_table, j)).collect(),
        ),
        Aggregation::Own => {
            let parts = eval.member_partitions.as_ref().ok_or_else(|| {
                Error::Contract(
                    "own aggregation needs assign_member_partitions to run first".into(),
                )
            })?;
            let members = (0..n).map(|j| member_table[parts[j]][j]).collect();
            // Fold i of the non-member side goes to discriminator i.
            let nonmembers = (0..n).map(|j| nonmember_table[j * k / n][j]).collect();
            (members, nonmembers)
        }
    };
    Ok((members, nonmembers))
}

/// Reconstruction-distance scores against the generator ensemble:
/// score(x) = -min over the generated pool of squared distance to x.
/// A sample the ensemble can reproduce exactly scores 0, the maximum.
pub fn generator_membership_scores(
    model: &TrainedModel,
    eval: &MembershipEvalSet,
    m_per_generator: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m_per_generator < 1 {
        return Err(Error::Contract("m_per_generator must be at least 1".into()));
    }
    if eval.members.is_empty() {
        return Err(Error::Contract("membership eval set is empty".into()));
    }
    let prior = NoisePrior {
        dim: model.latent_dim(),
    };
    let pool_seeds = SeededRng::new(seed);
    let mut pool: Vec<Vec<f64>> = Vec::with_capacity(model.generators.len() * m_per_generator);
    for (gi, gen) in model.generators.iter().enumerate() {
        let gen_seed = pool_seeds.derive(gi as u64).next_u64();
        let batch = sample_generator(gen, prior, m_per_generator, gen_seed)?;
        for r in 0..m_per_generator {
            pool.push(batch.row(r).to_vec());
        }
    }
    let score_side = |side: &Dataset| -> Vec<f64> {
        (0..side.len())
            .map(|j| {
                let x = side.row(j);
                let mut best = f64::INFINITY;
                for g in &pool {
                    let mut d2 = 0.0;
                    for (a, b) in x.iter().zip(g.iter()) {
                        let diff = a - b;
                        d2 += diff * diff;
                    }
                    if d2 < best {
                        best = d2;
                    }
                }
                -best
            })
            .collect()
    };
    Ok((score_side(&eval.members), score_side(&eval.nonmembers)))
}

/// Best achievable accuracy for a single-threshold decision rule, over all
/// distinct score thresholds, a reject-all sentinel, and both orientations.
/// Ties prefer the greater-equal orientation, then the smaller threshold.
/// Always at least 0.5 on balanced inputs: both constant predictors are in
/// the sweep.
pub fn best_threshold_accuracy(
    member_scores: &[f64],
    nonmember_scores: &[f64],
) -> Result<(f64, f64, Orientation)> {
    if member_scores.is_empty() {
        return Err(Error::Contract("no scores to threshold".into()));
    }
    if member_scores.len() != nonmember_scores.len() {
        return Err(Error::Contract(format!(
            "score lists differ in length: {} vs {}",
            member_scores.len(),
            nonmember_scores.len()
        )));
    }
    if member_scores
        .iter()
        .chain(nonmember_scores.iter())
        .any(|v| v.is_nan())
    {
        return Err(Error::Contract("NaN membership score".into()));
    }

    // (score, is_member) sorted ascending by score.
    let mut tagged: Vec<(f64, bool)> = member_scores
        .iter()
        .map(|&s| (s, true))
        .chain(nonmember_scores.iter().map(|&s| (s, false)))
        .collect();
    tagged.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let total = tagged.len() as f64;
    let n_members = member_scores.len();

    // Candidates for the >= rule are every distinct score, plus a predict-
    // nobody boundary past the top. The <= rule at distinct value v is the
    // exact complement of >= at the next distinct value, so one ascending
    // scan covers both orientations. Counting in integers keeps ties exact;
    // strict-improvement updates keep the smallest tying threshold, and >=
    // wins exact ties by being checked first at each boundary.
    let count = tagged.len();
    let mut best_correct = 0usize;
    let mut best_rule = (0.0, Orientation::GreaterEqual);
    let mut members_ge = n_members; // members with score >= current boundary
    let mut nonmembers_lt = 0usize; // non-members with score < current boundary
    let mut i = 0;
    while i <= count {
        // Correct predictions of "member iff s >= t" at t = tagged[i].0
        // (predict nobody once past the end).
        let correct_ge = members_ge + nonmembers_lt;
        if i < count && correct_ge > best_correct {
            best_correct = correct_ge;
            best_rule = (tagged[i].0, Orientation::GreaterEqual);
        }
        // Complement: "member iff s < t", realized inclusively as
        // s <= previous distinct value. At i=0 it predicts nobody.
        let correct_le = count - correct_ge;
        if i > 0 && correct_le > best_correct {
            best_correct = correct_le;
            best_rule = (tagged[i - 1].0, Orientation::LessEqual);
        }
        if i == count {
            break;
        }
        // Advance past the whole tie group at this score value.
        let group = tagged[i].0;
        while i < count && tagged[i].0 == group {
            if tagged[i].1 {
                members_ge -= 1;
            } else {
                nonmembers_lt += 1;
            }
            i += 1;
        }
    }
    Ok((best_correct as f64 / total, best_rule.0, best_rule.1))
}

pub fn run_mia(
    model: &TrainedModel,
    eval: &MembershipEvalSet,
    target: AttackTarget,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let (member_scores, nonmember_scores) = match target {
        AttackTarget::Discriminators => {
            discriminator_membership_scores(model, eval, config.aggregation)?
        }
        AttackTarget::Generators => {
            let m = config
                .m_per_generator
                .unwrap_or(10 * (eval.members.len() + eval.nonmembers.len()));
            generator_membership_scores(model, eval, m, config.seed)?
        }
    };
    let (accuracy, threshold, orientation) =
        best_threshold_accuracy(&member_scores, &nonmember_scores)?;
    Ok(AttackResult {
        target,
        method: method_label(model.method).to_string(),
        k: model.k(),
        objective: model.objective.kind,
        aggregation: match target {
            AttackTarget::Discriminators => Some(config.aggregation),
            AttackTarget::Generators => None,
        },
        accuracy,
        threshold,
        orientation,
        seed: config.seed,
        member_scores,
        nonmember_scores,
    })
}

fn method_label(method: Method) -> &'static str {
    method.report_label()
}
