//! Generalization-gap analysis: discriminator score distributions on
//! training vs holdout data, their histograms, and scalar gap measures.
//! Emitted as data files; plotting stays out of scope.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::discriminator_forward;
use crate::objectives::ObjectiveKind;
use crate::training::{dataset_digest, TrainedModel};

pub const DEFAULT_BINS: usize = 50;

/// How holdout samples get assigned to discriminators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HoldoutScoring {
    /// Contiguous fold i goes to discriminator i; merged-side sizes stay
    /// proportional to the train side.
    #[default]
    Folds,
    /// Every discriminator scores the whole holdout set.
    All,
}

/// Score distributions for one trained model. `train`/`holdout` sublists
/// are indexed by discriminator; each discriminator scores its own
/// partition's training rows. Scores are bounded: Wasserstein critic
/// outputs pass through the logistic function, with the raw values kept
/// alongside. In js mode raw and bounded coincide.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    pub k: usize,
    pub objective: ObjectiveKind,
    pub holdout_scoring: HoldoutScoring,
    pub train_by_disc: Vec<Vec<f64>>,
    pub holdout_by_disc: Vec<Vec<f64>>,
    pub train_raw_by_disc: Vec<Vec<f64>>,
    pub holdout_raw_by_disc: Vec<Vec<f64>>,
}

impl ScoreReport {
    /// All training-side scores, discriminator sublists concatenated in
    /// index order.
    pub fn merged_train(&self) -> Vec<f64> {
        self.train_by_disc.iter().flatten().copied().collect()
    }

    pub fn merged_holdout(&self) -> Vec<f64> {
        self.holdout_by_disc.iter().flatten().copied().collect()
    }
}

fn logistic(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn collect_scores(
    model: &TrainedModel,
    train: &Dataset,
    holdout: &Dataset,
) -> Result<ScoreReport> {
    collect_scores_with(model, train, holdout, HoldoutScoring::Folds)
}

pub fn collect_scores_with(
    model: &TrainedModel,
    train: &Dataset,
    holdout: &Dataset,
    holdout_scoring: HoldoutScoring,
) -> Result<ScoreReport> {
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Contract("score collection needs non-empty data".into()));
    }
    let k = model.k();
    if holdout.len() < k {
        return Err(Error::Contract(format!(
            "holdout has {} samples, fewer than k={k}",
            holdout.len()
        )));
    }
    if dataset_digest(train) != model.data_digest {
        return Err(Error::Contract(
            "training data does not match the data this model was trained on".into(),
        ));
    }
    let squash = model.objective.kind == ObjectiveKind::Wasserstein;

    let mut train_raw = Vec::with_capacity(k);
    let mut holdout_raw = Vec::with_capacity(k);
    for (i, disc) in model.discriminators.iter().enumerate() {
        let own_rows = &model.partitions.parts[i];
        let own = train.subset(own_rows);
        train_raw.push(discriminator_forward(disc, &own.samples)?);
        let fold = match holdout_scoring {
            HoldoutScoring::Folds => {
                let (lo, hi) = (i * holdout.len() / k, (i + 1) * holdout.len() / k);
                holdout.subset(&(lo..hi).collect::<Vec<_>>())
            }
            HoldoutScoring::All => holdout.clone(),
        };
        holdout_raw.push(discriminator_forward(disc, &fold.samples)?);
    }
    let bound = |table: &[Vec<f64>]| -> Vec<Vec<f64>> {
        table
            .iter()
            .map(|col| {
                col.iter()
                    .map(|&v| if squash { logistic(v) } else { v })
                    .collect()
            })
            .collect()
    };
    Ok(ScoreReport {
        k,
        objective: model.objective.kind,
        holdout_scoring,
        train_by_disc: bound(&train_raw),
        holdout_by_disc: bound(&holdout_raw),
        train_raw_by_disc: train_raw,
        holdout_raw_by_disc: holdout_raw,
    })
}

/// (mean difference, 1-D Wasserstein distance) between the merged train and
/// holdout score distributions. Computed on the bounded scores.
pub fn gap_metrics(report: &ScoreReport) -> Result<(f64, f64)> {
    let train = report.merged_train();
    let holdout = report.merged_holdout();
    if train.is_empty() || holdout.is_empty() {
        return Err(Error::Contract("gap metrics need scores on both sides".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mean_gap = mean(&train) - mean(&holdout);
    Ok((mean_gap, w1_distance(&train, &holdout)))
}

/// Empirical 1-D Wasserstein distance: integral of the absolute difference
/// between the two quantile functions. For equal-length inputs this is the
/// mean absolute difference of the sorted lists.
pub fn w1_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(|x, y| x.partial_cmp(y).unwrap());
    sb.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (n, m) = (sa.len(), sb.len());
    // Walk both step quantile functions across [0,1]; each segment between
    // adjacent breakpoints has constant |difference|.
    let mut total = 0.0;
    let mut pos = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < n && j < m {
        let next_a = (i + 1) as f64 / n as f64;
        let next_b = (j + 1) as f64 / m as f64;
        let next = next_a.min(next_b);
        total += (sa[i] - sb[j]).abs() * (next - pos);
        pos = next;
        if next_a <= next {
            i += 1;
        }
        if next_b <= next {
            j += 1;
        }
    }
    total
}

/// Histogram counts over `bins` equal-width bins spanning `range`. Bins are
/// half-open [lo, hi) with the final bin closed; values outside the range
/// clamp into the end bins so counts always conserve the total.
pub fn histogram(scores: &[f64], bins: usize, range: (f64, f64)) -> Result<Vec<usize>> {
    if bins < 1 {
        return Err(Error::Contract("histogram needs at least one bin".into()));
    }
    let (lo, hi) = range;
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::Contract(format!("bad histogram range [{lo}, {hi}]")));
    }
    let mut counts = vec![0usize; bins];
    let width = (hi - lo) / bins as f64;
    for &s in scores {
        let idx = ((s - lo) / width).floor();
        let idx = if idx < 0.0 {
            0
        } else if idx >= bins as f64 {
            bins - 1
        } else {
            idx as usize
        };
        counts[idx] += 1;
    }
    Ok(counts)
}

/// Metadata stamped into every emitted file.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub method: String,
    pub k: usize,
    pub objective: ObjectiveKind,
    pub seed: u64,
    pub config_hash: String,
}

impl ReportMeta {
    pub fn for_model(model: &TrainedModel, config_hash: &str) -> ReportMeta {
        ReportMeta {
            method: model.method.report_label().to_string(),
            k: model.k(),
            objective: model.objective.kind,
            seed: model.config.seed,
            config_hash: config_hash.to_string(),
        }
    }

    fn comment_line(&self) -> String {
        format!(
            "# method={} k={} objective={} seed={} config_hash={}",
            self.method,
            self.k,
            objective_name(self.objective),
            self.seed,
            self.config_hash,
        )
    }
}

fn objective_name(kind: ObjectiveKind) -> &'static str {
    match kind {
        ObjectiveKind::Js => "js",
        ObjectiveKind::Wasserstein => "wasserstein",
    }
}

/// Write bytes through a temp file and an atomic rename, so failures never
/// leave a partial file at the target path.
pub(crate) fn atomic_write(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// scores.csv: one row per (side, discriminator, sample) with bounded and
/// raw scores.
pub fn write_scores_csv(report: &ScoreReport, meta: &ReportMeta, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&meta.comment_line());
    out.push('\n');
    out.push_str("side,discriminator_index,score,score_raw\n");
    let mut emit = |side: &str, by_disc: &[Vec<f64>], raw_by_disc: &[Vec<f64>]| {
        for (i, (scores, raws)) in by_disc.iter().zip(raw_by_disc.iter()).enumerate() {
            for (s, r) in scores.iter().zip(raws.iter()) {
                writeln!(out, "{side},{i},{s},{r}").expect("string write");
            }
        }
    };
    emit("train", &report.train_by_disc, &report.train_raw_by_disc);
    emit("holdout", &report.holdout_by_disc, &report.holdout_raw_by_disc);
    atomic_write(path, out.as_bytes())
}

/// hist.csv: the two sides binned over [0,1] with `DEFAULT_BINS` bins.
pub fn write_hist_csv(report: &ScoreReport, meta: &ReportMeta, path: &Path) -> Result<()> {
    let range = (0.0, 1.0);
    let train_counts = histogram(&report.merged_train(), DEFAULT_BINS, range)?;
    let holdout_counts = histogram(&report.merged_holdout(), DEFAULT_BINS, range)?;
    let mut out = String::new();
    out.push_str(&meta.comment_line());
    out.push('\n');
    writeln!(
        out,
        "# bins={DEFAULT_BINS} range=[0,1) half-open, last bin closed, out-of-range clamped"
    )
    .expect("string write");
    out.push_str("bin_lo,bin_hi,train_count,holdout_count\n");
    let width = (range.1 - range.0) / DEFAULT_BINS as f64;
    for b in 0..DEFAULT_BINS {
        let lo = range.0 + b as f64 * width;
        let hi = if b + 1 == DEFAULT_BINS { range.1 } else { range.0 + (b + 1) as f64 * width };
        writeln!(out, "{lo},{hi},{},{}", train_counts[b], holdout_counts[b]).expect("string write");
    }
    atomic_write(path, out.as_bytes())
}

/// gap.json: the scalar gap metrics plus run identity.
pub fn write_gap_json(report: &ScoreReport, meta: &ReportMeta, path: &Path) -> Result<()> {
    let (mean_gap, w1) = gap_metrics(report)?;
    #[derive(Serialize)]
    struct GapDoc<'a> {
        mean_gap: f64,
        w1: f64,
        k: usize,
        objective: &'a str,
        method: &'a str,
        seed: u64,
        config_hash: &'a str,
    }
    let doc = GapDoc {
        mean_gap,
        w1,
        k: meta.k,
        objective: objective_name(meta.objective),
        method: &meta.method,
        seed: meta.seed,
        config_hash: &meta.config_hash,
    };
    let json = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::Contract(format!("gap encoding failed: {e}")))?;
    atomic_write(path, json.as_bytes())
}
