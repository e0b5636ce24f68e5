//! Run orchestration behind the command-line interface: JSON run configs,
//! the train/attack/report/compare commands, and their file artifacts.
//! Everything that affects results lives in the config file; flags only
//! select which outputs get produced.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    atomic_write, collect_scores, gap_metrics, write_gap_json, write_hist_csv, write_scores_csv,
    ReportMeta,
};
use crate::attacks::{run_mia, Aggregation, AttackConfig, AttackTarget, MembershipEvalSet};
use crate::data::{load_mnist_idx, split, synth_gaussian_ring, Dataset, SplitSizes, SplitSpec};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;
use crate::objectives::{Objective, ObjectiveKind};
use crate::training::{
    dataset_digest, load_checkpoint, save_checkpoint, train, Method, TrainConfig, TrainedModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    /// Ring of Gaussian modes mapped into [0,1]^2.
    Synthetic {
        n: usize,
        modes: usize,
        radius: f64,
        sigma: f64,
        seed: u64,
    },
    /// IDX image/label pair; `limit` keeps only the first rows.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub seed: u64,
}

fn default_per_side() -> usize {
    128
}

/// Membership-evaluation settings: how many samples per side, which seed
/// selects them, and the attack parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub per_side: usize,
    pub selection_seed: u64,
    pub attack: AttackConfig,
}

impl Default for EvalConfig {
    fn default() -> EvalConfig {
        EvalConfig {
            per_side: default_per_side(),
            selection_seed: 0,
            attack: AttackConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DataConfig,
    pub split: SplitConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl RunConfig {
    fn validate(&self) -> Result<()> {
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.split.train_fraction
            )));
        }
        if self.eval.per_side < 1 {
            return Err(Error::Config("eval per_side must be at least 1".into()));
        }
        if let DataConfig::Synthetic { n, modes, .. } = self.dataset {
            if n < 2 {
                return Err(Error::Config("synthetic dataset needs at least 2 samples".into()));
            }
            if modes < 1 {
                return Err(Error::Config("synthetic dataset needs at least one mode".into()));
            }
        }
        Ok(())
    }
}

/// Identity of a run: everything that shapes results. The output directory
/// is deliberately excluded so relocating a run does not change its hash.
pub fn config_hash(config: &RunConfig) -> String {
    #[derive(Serialize)]
    struct Identity<'a> {
        dataset: &'a DataConfig,
        split: &'a SplitConfig,
        train: &'a TrainConfig,
        eval: &'a EvalConfig,
    }
    let json = serde_json::to_string(&Identity {
        dataset: &config.dataset,
        split: &config.split,
        train: &config.train,
        eval: &config.eval,
    })
    .expect("config serialization cannot fail");
    let digest = Sha256::digest(json.as_bytes());
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").expect("string write");
    }
    hex
}

pub fn load_dataset(config: &DataConfig) -> Result<Dataset> {
    match config {
        DataConfig::Synthetic {
            n,
            modes,
            radius,
            sigma,
            seed,
        } => synth_gaussian_ring(*n, *modes, *radius, *sigma, *seed),
        DataConfig::Mnist {
            images,
            labels,
            limit,
        } => {
            let full = load_mnist_idx(images, labels)?;
            match limit {
                Some(m) if *m < full.len() => {
                    Ok(full.subset(&(0..*m).collect::<Vec<_>>()))
                }
                _ => Ok(full),
            }
        }
    }
}

fn split_dataset(data: &Dataset, config: &SplitConfig) -> Result<(Dataset, Dataset)> {
    split(
        data,
        &SplitSpec {
            sizes: SplitSizes::Fraction(config.train_fraction),
            seed: config.seed,
        },
    )
}

/// Balanced eval set: a seeded sample of training rows as members and of
/// holdout rows as non-members.
fn build_eval_set(
    train_data: &Dataset,
    holdout: &Dataset,
    eval: &EvalConfig,
) -> Result<MembershipEvalSet> {
    let per_side = eval.per_side;
    if per_side > train_data.len() || per_side > holdout.len() {
        return Err(Error::Config(format!(
            "eval per_side={per_side} exceeds train ({}) or holdout ({}) size",
            train_data.len(),
            holdout.len()
        )));
    }
    let master = SeededRng::new(eval.selection_seed);
    let pick = |n: usize, mut rng: SeededRng| -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        order.truncate(per_side);
        order
    };
    let members = train_data.subset(&pick(train_data.len(), master.derive(0)));
    let nonmembers = holdout.subset(&pick(holdout.len(), master.derive(1)));
    MembershipEvalSet::new(members, nonmembers)
}

fn read_run_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: RunConfig,
    config_hash: String,
    seed: u64,
    wall_time_secs: f64,
    artifacts: BTreeMap<String, String>,
}

fn manifest_path(checkpoint: &Path) -> PathBuf {
    let stem = checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    checkpoint.with_file_name(format!("{stem}.manifest.json"))
}

fn write_loss_csv(model: &TrainedModel, hash: &str, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(
        out,
        "# method={} k={} objective={} seed={} config_hash={hash}",
        model.method.report_label(),
        model.k(),
        match model.objective.kind {
            ObjectiveKind::Js => "js",
            ObjectiveKind::Wasserstein => "wasserstein",
        },
        model.config.seed,
    )
    .expect("string write");
    out.push_str("epoch,network,index,loss\n");
    for (epoch, losses) in model.loss_history.iter().enumerate() {
        for (i, v) in losses.d_ascent.iter().enumerate() {
            writeln!(out, "{epoch},discriminator,{i},{v}").expect("string write");
        }
        for (i, v) in losses.g_value.iter().enumerate() {
            writeln!(out, "{epoch},generator,{i},{v}").expect("string write");
        }
    }
    atomic_write(path, out.as_bytes())
}

/// Train per the config file; writes checkpoint, loss history, and manifest
/// into the config's output directory. Returns the checkpoint path.
pub fn cmd_train(config_path: &Path) -> Result<PathBuf> {
    let config = read_run_config(config_path)?;
    let started = Instant::now();
    let data = load_dataset(&config.dataset)?;
    let (train_data, holdout) = split_dataset(&data, &config.split)?;
    if config.eval.per_side > train_data.len() || config.eval.per_side > holdout.len() {
        return Err(Error::Config(format!(
            "eval per_side={} exceeds train ({}) or holdout ({}) size",
            config.eval.per_side,
            train_data.len(),
            holdout.len()
        )));
    }
    let model = train(&train_data, &config.train)?;

    std::fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(&config.output_dir, e))?;
    let hash = config_hash(&config);
    let ckpt_path = config.output_dir.join("checkpoint.ckpt");
    save_checkpoint(&model, &ckpt_path)?;
    let loss_path = config.output_dir.join("loss.csv");
    write_loss_csv(&model, &hash, &loss_path)?;

    let manifest = Manifest {
        config_hash: hash,
        seed: config.train.seed,
        wall_time_secs: started.elapsed().as_secs_f64(),
        artifacts: BTreeMap::from([
            ("checkpoint".to_string(), "checkpoint.ckpt".to_string()),
            ("loss_csv".to_string(), "loss.csv".to_string()),
        ]),
        config,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Config(format!("manifest encoding failed: {e}")))?;
    atomic_write(&manifest_path(&ckpt_path), manifest_json.as_bytes())?;
    Ok(ckpt_path)
}

/// Everything attack/report need: the model plus the datasets it was
/// trained and evaluated on, reconstructed from the manifest next to the
/// checkpoint and verified against the model's data digest.
struct RunContext {
    model: TrainedModel,
    config: RunConfig,
    hash: String,
    train_data: Dataset,
    holdout: Dataset,
}

fn load_run_context(checkpoint: &Path) -> Result<RunContext> {
    let model = load_checkpoint(checkpoint)?;
    let mpath = manifest_path(checkpoint);
    let text = std::fs::read_to_string(&mpath).map_err(|e| {
        Error::Checkpoint(format!(
            "cannot read manifest {} next to the checkpoint: {e}",
            mpath.display()
        ))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("invalid manifest {}: {e}", mpath.display())))?;
    let hash = config_hash(&manifest.config);
    if hash != manifest.config_hash {
        return Err(Error::Checkpoint(format!(
            "manifest hash {} does not match its config ({hash})",
            manifest.config_hash
        )));
    }
    if manifest.config.train != model.config {
        return Err(Error::Checkpoint(
            "manifest and checkpoint disagree about the training config".into(),
        ));
    }
    let data = load_dataset(&manifest.config.dataset)?;
    let (train_data, holdout) = split_dataset(&data, &manifest.config.split)?;
    if dataset_digest(&train_data) != model.data_digest {
        return Err(Error::Checkpoint(
            "reconstructed training data does not match the checkpoint's data digest".into(),
        ));
    }
    Ok(RunContext {
        model,
        config: manifest.config,
        hash,
        train_data,
        holdout,
    })
}

/// Run membership-inference attacks against a checkpoint. Flags narrow the
/// target and override the configured aggregation or pool seed. Returns the
/// paths written, one per attacked target.
pub fn cmd_attack(
    checkpoint: &Path,
    target: Option<AttackTarget>,
    aggregation: Option<Aggregation>,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>> {
    let ctx = load_run_context(checkpoint)?;
    let mut eval = build_eval_set(&ctx.train_data, &ctx.holdout, &ctx.config.eval)?;
    let mut attack_config = ctx.config.eval.attack;
    if let Some(a) = aggregation {
        attack_config.aggregation = a;
    }
    if let Some(s) = seed {
        attack_config.seed = s;
    }
    if attack_config.aggregation == Aggregation::Own {
        eval.assign_member_partitions(&ctx.train_data, &ctx.model)?;
    }
    let targets: Vec<AttackTarget> = match target {
        Some(t) => vec![t],
        None => vec![AttackTarget::Discriminators, AttackTarget::Generators],
    };
    let dir = checkpoint.parent().unwrap_or_else(|| Path::new("."));
    let mut written = Vec::new();
    for t in targets {
        let result = run_mia(&ctx.model, &eval, t, &attack_config)?;
        #[derive(Serialize)]
        struct AttackDoc<'a> {
            config_hash: &'a str,
            #[serde(flatten)]
            result: &'a crate::attacks::AttackResult,
        }
        let json = serde_json::to_string_pretty(&AttackDoc {
            config_hash: &ctx.hash,
            result: &result,
        })
        .map_err(|e| Error::Contract(format!("attack encoding failed: {e}")))?;
        let name = match t {
            AttackTarget::Discriminators => "attack_discriminators.json",
            AttackTarget::Generators => "attack_generators.json",
        };
        let path = dir.join(name);
        atomic_write(&path, json.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Emit the score-distribution analysis for a checkpoint: scores.csv,
/// hist.csv, and gap.json next to it.
pub fn cmd_report(checkpoint: &Path) -> Result<Vec<PathBuf>> {
    let ctx = load_run_context(checkpoint)?;
    let report = collect_scores(&ctx.model, &ctx.train_data, &ctx.holdout)?;
    let meta = ReportMeta::for_model(&ctx.model, &ctx.hash);
    let dir = checkpoint.parent().unwrap_or_else(|| Path::new("."));
    let scores = dir.join("scores.csv");
    let hist = dir.join("hist.csv");
    let gap = dir.join("gap.json");
    write_scores_csv(&report, &meta, &scores)?;
    write_hist_csv(&report, &meta, &hist)?;
    write_gap_json(&report, &meta, &gap)?;
    Ok(vec![scores, hist, gap])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellSpec {
    method: Method,
    k: usize,
    objective: ObjectiveKind,
}

/// A comparison grid: one template run config, the (method, k, objective)
/// cells to fill, and the training seeds averaged per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareMatrix {
    template: RunConfig,
    cells: Vec<CellSpec>,
    seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub summary_path: PathBuf,
    pub cells_trained: usize,
    pub cells_cached: usize,
}

/// Per-cell config: the template with method, k, objective family, and seed
/// replaced. The objective resets to the family default so cells stay
/// comparable across methods.
fn cell_config(template: &RunConfig, cell: &CellSpec, seed: u64, out: &Path) -> RunConfig {
    let mut config = template.clone();
    config.train.method = cell.method;
    config.train.k = cell.k;
    config.train.objective = match cell.objective {
        ObjectiveKind::Js => Objective::js(),
        ObjectiveKind::Wasserstein => Objective::wasserstein(),
    };
    config.train.clip_c = match cell.objective {
        ObjectiveKind::Wasserstein => config.train.clip_c,
        ObjectiveKind::Js => None,
    };
    config.train.seed = seed;
    config.output_dir = out.to_path_buf();
    config
}

struct CellOutcome {
    mia_d: f64,
    mia_g: f64,
    mean_gap: f64,
    w1: f64,
}

fn run_cell_once(
    config: &RunConfig,
    cache_dir: &Path,
    trained: &mut usize,
    cached: &mut usize,
) -> Result<CellOutcome> {
    let data = load_dataset(&config.dataset)?;
    let (train_data, holdout) = split_dataset(&data, &config.split)?;
    config.train.validate_for(&train_data)?;

    let hash = config_hash(config);
    let ckpt_path = cache_dir.join(format!("{}.ckpt", &hash[..16]));
    let model = if ckpt_path.exists() {
        let model = load_checkpoint(&ckpt_path)?;
        if model.data_digest != dataset_digest(&train_data) {
            return Err(Error::Checkpoint(format!(
                "cached cell {} was trained on different data",
                ckpt_path.display()
            )));
        }
        *cached += 1;
        model
    } else {
        let model = train(&train_data, &config.train)?;
        save_checkpoint(&model, &ckpt_path)?;
        *trained += 1;
        model
    };

    let mut eval = build_eval_set(&train_data, &holdout, &config.eval)?;
    if config.eval.attack.aggregation == Aggregation::Own {
        eval.assign_member_partitions(&train_data, &model)?;
    }
    let mia_d = run_mia(&model, &eval, AttackTarget::Discriminators, &config.eval.attack)?;
    let mia_g = run_mia(&model, &eval, AttackTarget::Generators, &config.eval.attack)?;
    let report = collect_scores(&model, &train_data, &holdout)?;
    let (mean_gap, w1) = gap_metrics(&report)?;
    Ok(CellOutcome {
        mia_d: mia_d.accuracy,
        mia_g: mia_g.accuracy,
        mean_gap,
        w1,
    })
}

/// Fill a comparison grid and emit one summary row per cell, averaging each
/// cell's metrics over the matrix seeds. Finished cells are cached as
/// checkpoints named by config hash, so reruns only train what is missing.
/// Cell failures land in the status column and the run keeps going.
pub fn cmd_compare(matrix_path: &Path, out: &Path) -> Result<CompareSummary> {
    let text = std::fs::read_to_string(matrix_path)
        .map_err(|e| Error::Config(format!("cannot read matrix {}: {e}", matrix_path.display())))?;
    let matrix: CompareMatrix = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("invalid matrix {}: {e}", matrix_path.display())))?;
    matrix.template.validate()?;
    if matrix.cells.is_empty() {
        return Err(Error::Config("matrix lists no cells".into()));
    }
    if matrix.seeds.is_empty() {
        return Err(Error::Config("matrix lists no seeds".into()));
    }
    let cache_dir = out.join("cells");
    std::fs::create_dir_all(&cache_dir).map_err(|e| Error::io(&cache_dir, e))?;

    let matrix_hash = {
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::new();
        for b in digest {
            write!(hex, "{b:02x}").expect("string write");
        }
        hex
    };

    let mut rows = String::new();
    writeln!(rows, "# config_hash={matrix_hash} seeds={:?}", matrix.seeds).expect("string write");
    rows.push_str("method,k,objective,mia_d,mia_g,mean_gap,w1,seeds_averaged,status\n");
    let mut trained = 0;
    let mut cached = 0;
    for cell in &matrix.cells {
        let objective_name = match cell.objective {
            ObjectiveKind::Js => "js",
            ObjectiveKind::Wasserstein => "wasserstein",
        };
        let mut outcomes = Vec::new();
        let mut failure: Option<Error> = None;
        for &seed in &matrix.seeds {
            let config = cell_config(&matrix.template, cell, seed, out);
            match run_cell_once(&config, &cache_dir, &mut trained, &mut cached) {
                Ok(o) => outcomes.push(o),
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let label = cell.method.report_label();
        match failure {
            Some(e) => {
                // Keep the CSV one-line-per-cell: flatten the message.
                let msg: String = e
                    .to_string()
                    .chars()
                    .map(|c| if c == ',' || c == '\n' { ';' } else { c })
                    .collect();
                writeln!(rows, "{label},{},{objective_name},,,,,0,error: {msg}", cell.k)
                    .expect("string write");
            }
            None => {
                let n = outcomes.len() as f64;
                let avg = |f: fn(&CellOutcome) -> f64| -> f64 {
                    outcomes.iter().map(f).sum::<f64>() / n
                };
                writeln!(
                    rows,
                    "{label},{},{objective_name},{},{},{},{},{},ok",
                    cell.k,
                    avg(|o| o.mia_d),
                    avg(|o| o.mia_g),
                    avg(|o| o.mean_gap),
                    avg(|o| o.w1),
                    outcomes.len(),
                )
                .expect("string write");
            }
        }
    }
    let summary_path = out.join("summary.csv");
    atomic_write(&summary_path, rows.as_bytes())?;
    Ok(CompareSummary {
        summary_path,
        cells_trained: trained,
        cells_cached: cached,
    })
}

#[cfg(test)]
mod tests;
