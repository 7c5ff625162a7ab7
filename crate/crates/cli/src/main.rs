//! Command-line driver: train, eval, predict, explain, and split.
//!
//! Progress goes to stderr; machine-readable output goes to stdout or files.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use msan_core::chem::FEATURE_DIM;
use msan_core::checkpoint;
use msan_core::config::RunConfig;
use msan_core::data::{
    load_drugs, load_pairs, metrics, sample_negatives, split_inductive, split_transductive,
    DdiSample, DrugVocab, Metrics, TypeVocab,
};
use msan_core::fingerprint::PoolEntry;
use msan_core::gnn::Backbone;
use msan_core::model::{explain_pair, ModelConfig};
use msan_core::train::{evaluate, evaluate_inductive, train_model, TrainOptions};

#[derive(Parser)]
#[command(name = "msan", about = "Substructure-aware drug-drug interaction prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Fold index; the effective seed is config.seed + fold.
    #[arg(long, default_value_t = 0)]
    fold: u64,
    /// Override the GNN backbone.
    #[arg(long, value_parser = parse_backbone)]
    backbone: Option<Backbone>,
    /// Use the inductive drug split and evaluation protocol.
    #[arg(long)]
    inductive: bool,
    /// Disable substructure-dropping augmentation during training.
    #[arg(long)]
    no_augment: bool,
}

fn parse_backbone(s: &str) -> Result<Backbone, String> {
    s.parse()
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write best/final checkpoints plus a per-epoch log.
    Train(CommonArgs),
    /// Evaluate checkpoint(s) on a split; aggregates mean and std over folds.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint path; "{fold}" is substituted per fold.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate: train|valid|test (transductive) or train|s1|s2 (inductive).
        #[arg(long, default_value = "test")]
        split: String,
        /// Additional folds to aggregate over (repeatable).
        #[arg(long = "also-fold")]
        also_folds: Vec<u64>,
    },
    /// Predict the interaction probability for one (drug1, drug2, type) tuple.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        drug1: String,
        #[arg(long)]
        drug2: String,
        /// DDI type name as it appears in the pairs file.
        #[arg(long = "type")]
        ddi_type: String,
    },
    /// Emit atom-to-pattern assignments, the similarity matrix, and the
    /// top-k substructure interaction table.
    Explain {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        drug1: String,
        #[arg(long)]
        drug2: String,
        #[arg(long = "type")]
        ddi_type: String,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
    },
    /// Write deterministic split manifest files.
    Split(CommonArgs),
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(common) => cmd_train(&common),
        Command::Eval { common, checkpoint, split, also_folds } => {
            cmd_eval(&common, checkpoint.as_deref(), &split, &also_folds)
        }
        Command::Predict { common, checkpoint, drug1, drug2, ddi_type } => {
            cmd_predict(&common, checkpoint.as_deref(), &drug1, &drug2, &ddi_type)
        }
        Command::Explain { common, checkpoint, drug1, drug2, ddi_type, top_k } => {
            cmd_explain(&common, checkpoint.as_deref(), &drug1, &drug2, &ddi_type, top_k)
        }
        Command::Split(common) => cmd_split(&common),
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| anyhow!(e))?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(backbone) = common.backbone {
        cfg.gnn.backbone = backbone;
    }
    if common.no_augment {
        cfg.augment = false;
    }
    cfg.validate().map_err(|e| anyhow!(e))?;
    Ok(cfg)
}

struct Dataset {
    vocab: DrugVocab,
    types: TypeVocab,
    /// Transductive: train/valid/test. Inductive: train/s1/s2 (valid empty slot reused for s1).
    train: Vec<DdiSample>,
    valid: Vec<DdiSample>,
    test: Vec<DdiSample>,
    /// Inductive only: ids of the known-drug pool.
    g_old: Option<Vec<String>>,
}

/// Load drugs and positive pairs, sample negatives, and split — all
/// deterministic under the effective seed.
fn build_dataset(cfg: &RunConfig, fold: u64, inductive: bool) -> Result<Dataset> {
    let seed = cfg.seed + fold;
    let vocab = load_drugs(&cfg.paths.drugs)?;
    let (positives, types) = load_pairs(&cfg.paths.pairs, &vocab)?;
    if positives.is_empty() {
        bail!("pairs file {} contains no samples", cfg.paths.pairs.display());
    }
    let drug_ids: Vec<String> = vocab.ids().map(String::from).collect();
    let negatives = sample_negatives(&positives, &drug_ids, seed)?;
    let mut samples = positives;
    samples.extend(negatives);

    if inductive {
        let split = split_inductive(&drug_ids, &samples, seed);
        Ok(Dataset {
            vocab,
            types,
            train: split.d_train,
            valid: split.d_s1,
            test: split.d_s2,
            g_old: Some(split.g_old),
        })
    } else {
        let (train, valid, test) = split_transductive(&samples, seed);
        Ok(Dataset {
            vocab,
            types,
            train,
            valid,
            test,
            g_old: None,
        })
    }
}

fn model_config(cfg: &RunConfig, num_types: usize) -> ModelConfig {
    ModelConfig {
        gnn: cfg.gnn.clone(),
        patterns: cfg.patterns,
        num_types,
        feat_dim: FEATURE_DIM,
        use_se_si: true,
    }
}

fn cmd_train(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let data = build_dataset(&cfg, common.fold, common.inductive)?;
    let model_cfg = model_config(&cfg, data.types.len());
    let seed = cfg.seed + common.fold;

    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        augment: cfg.augment,
        both_orders: cfg.both_orders,
        lr_schedule: cfg.lr_schedule.clone(),
        stop_at_train_acc: None,
        progress: Some(|log| {
            let valid = log
                .valid
                .as_ref()
                .map(|m| {
                    format!(
                        " valid acc {:.4} auc {}",
                        m.acc,
                        m.auc.map_or("n/a".into(), |a| format!("{a:.4}"))
                    )
                })
                .unwrap_or_default();
            eprintln!("epoch {:>4} lr {:.0e} loss {:.6}{valid}", log.epoch, log.lr, log.loss);
        }),
    };
    // inductive protocol has no validation split; best = final
    let valid = (!common.inductive && !data.valid.is_empty()).then_some(data.valid.as_slice());
    let result = train_model(&model_cfg, &data.vocab, &data.train, valid, &opts)
        .map_err(|e| anyhow!("training failed: {e}"))?;

    std::fs::create_dir_all(&cfg.paths.output_dir)
        .with_context(|| format!("creating {}", cfg.paths.output_dir.display()))?;
    let log_path = cfg
        .paths
        .output_dir
        .join(format!("train_log_fold{}.jsonl", common.fold));
    let mut log_text = String::new();
    for entry in &result.logs {
        log_text.push_str(&serde_json::to_string(entry)?);
        log_text.push('\n');
    }
    std::fs::write(&log_path, log_text)?;

    checkpoint::save(
        &cfg.paths.checkpoint,
        &model_cfg,
        &result.best_params,
        seed,
        data.types.names(),
    )?;
    let final_path = cfg.paths.checkpoint.with_extension("final.ckpt");
    checkpoint::save(&final_path, &model_cfg, &result.params, seed, data.types.names())?;
    eprintln!(
        "saved best checkpoint (epoch {}) to {} and final to {}",
        result.best_epoch,
        cfg.paths.checkpoint.display(),
        final_path.display()
    );
    Ok(())
}

fn checkpoint_for_fold(
    cfg: &RunConfig,
    explicit: Option<&Path>,
    fold: u64,
) -> PathBuf {
    let base = explicit.unwrap_or(&cfg.paths.checkpoint);
    let s = base.display().to_string();
    if s.contains("{fold}") {
        PathBuf::from(s.replace("{fold}", &fold.to_string()))
    } else {
        base.to_path_buf()
    }
}

fn eval_one_fold(
    cfg: &RunConfig,
    common: &CommonArgs,
    ckpt_path: &Path,
    split: &str,
    fold: u64,
) -> Result<Metrics> {
    let data = build_dataset(cfg, fold, common.inductive)?;
    let ck = checkpoint::load(ckpt_path)?;
    if ck.type_names != data.types.names() {
        bail!(
            "incompatible checkpoint {}: DDI type vocabulary differs from dataset",
            ckpt_path.display()
        );
    }
    if ck.model.feat_dim != FEATURE_DIM {
        bail!("incompatible checkpoint {}: feature width mismatch", ckpt_path.display());
    }
    let samples = match (common.inductive, split) {
        (false, "train") | (true, "train") => &data.train,
        (false, "valid") => &data.valid,
        (false, "test") => &data.test,
        (true, "s1") => &data.valid,
        (true, "s2") => &data.test,
        _ => bail!(
            "unknown split {split:?} (expected {})",
            if common.inductive { "train|s1|s2" } else { "train|valid|test" }
        ),
    };
    if samples.is_empty() {
        bail!("split {split:?} is empty");
    }
    let (scores, labels) = if common.inductive && split != "train" {
        let g_old = data.g_old.as_ref().expect("inductive split has a pool");
        let pool: Vec<PoolEntry> = g_old
            .iter()
            .map(|id| PoolEntry::new(id.clone(), data.vocab.get(id).unwrap().clone()))
            .collect();
        evaluate_inductive(&ck.model, &ck.params, &data.vocab, samples, &pool)
            .map_err(|e| anyhow!("inductive evaluation failed: {e}"))?
    } else {
        evaluate(&ck.model, &ck.params, &data.vocab, samples)
    };
    Ok(metrics(&scores, &labels))
}

fn cmd_eval(
    common: &CommonArgs,
    ckpt: Option<&Path>,
    split: &str,
    also_folds: &[u64],
) -> Result<()> {
    let cfg = load_config(common)?;
    let mut folds = vec![common.fold];
    folds.extend_from_slice(also_folds);

    let mut per_fold = Vec::new();
    for &fold in &folds {
        let path = checkpoint_for_fold(&cfg, ckpt, fold);
        let m = eval_one_fold(&cfg, common, &path, split, fold)?;
        per_fold.push((fold, m));
    }

    let agg = |f: fn(&Metrics) -> Option<f64>| -> Option<(f64, f64)> {
        let vals: Vec<f64> = per_fold.iter().filter_map(|(_, m)| f(m)).collect();
        if vals.len() != per_fold.len() {
            return None;
        }
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        Some((mean, var.sqrt()))
    };

    let mut out = serde_json::json!({
        "split": split,
        "inductive": common.inductive,
        "folds": per_fold
            .iter()
            .map(|(fold, m)| serde_json::json!({ "fold": fold, "metrics": m }))
            .collect::<Vec<_>>(),
    });
    if per_fold.iter().any(|(_, m)| m.auc.is_none()) {
        out["auc_note"] = "AUC absent on at least one fold (single-class slice)".into();
    }
    if per_fold.len() > 1 {
        let mut mean = serde_json::Map::new();
        let mut std = serde_json::Map::new();
        let fields: [(&str, fn(&Metrics) -> Option<f64>); 5] = [
            ("acc", |m| Some(m.acc)),
            ("auc", |m| m.auc),
            ("f1", |m| Some(m.f1)),
            ("precision", |m| Some(m.precision)),
            ("recall", |m| Some(m.recall)),
        ];
        for (name, getter) in fields {
            if let Some((m, s)) = agg(getter) {
                mean.insert(name.into(), m.into());
                std.insert(name.into(), s.into());
            }
        }
        out["mean"] = mean.into();
        out["std"] = std.into();
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn lookup_pair<'v>(
    vocab: &'v DrugVocab,
    types: &[String],
    drug1: &str,
    drug2: &str,
    ddi_type: &str,
) -> Result<(&'v msan_core::chem::MolecularGraph, &'v msan_core::chem::MolecularGraph, usize)> {
    let g1 = vocab
        .get(drug1)
        .ok_or_else(|| anyhow!("unknown drug id {drug1:?}"))?;
    let g2 = vocab
        .get(drug2)
        .ok_or_else(|| anyhow!("unknown drug id {drug2:?}"))?;
    let t = types
        .iter()
        .position(|n| n == ddi_type)
        .ok_or_else(|| anyhow!("unknown DDI type {ddi_type:?}"))?;
    Ok((g1, g2, t))
}

fn cmd_predict(
    common: &CommonArgs,
    ckpt: Option<&Path>,
    drug1: &str,
    drug2: &str,
    ddi_type: &str,
) -> Result<()> {
    let cfg = load_config(common)?;
    let vocab = load_drugs(&cfg.paths.drugs)?;
    let path = checkpoint_for_fold(&cfg, ckpt, common.fold);
    let ck = checkpoint::load(&path)?;
    let (g1, g2, t) = lookup_pair(&vocab, &ck.type_names, drug1, drug2, ddi_type)?;

    let probability = if common.inductive {
        let pool: Vec<PoolEntry> = vocab
            .iter()
            .map(|(id, g)| PoolEntry::new(id, g.clone()))
            .collect();
        msan_core::fingerprint::inductive_score(
            drug1, g1, drug2, g2, t, &ck.model, &ck.params, &pool,
        )
        .map_err(|e| anyhow!("inductive scoring failed: {e}"))?
    } else {
        let sample = msan_core::data::DdiSample {
            drug1: drug1.to_string(),
            drug2: drug2.to_string(),
            ddi_type: t,
            label: 1, // unused; evaluate only echoes it back
        };
        let (scores, _) = evaluate(&ck.model, &ck.params, &vocab, &[sample]);
        scores[0]
    };
    println!(
        "{}",
        serde_json::json!({
            "drug1": drug1,
            "drug2": drug2,
            "ddi_type": ddi_type,
            "probability": probability,
        })
    );
    Ok(())
}

fn cmd_explain(
    common: &CommonArgs,
    ckpt: Option<&Path>,
    drug1: &str,
    drug2: &str,
    ddi_type: &str,
    top_k: usize,
) -> Result<()> {
    let cfg = load_config(common)?;
    let vocab = load_drugs(&cfg.paths.drugs)?;
    let path = checkpoint_for_fold(&cfg, ckpt, common.fold);
    let ck = checkpoint::load(&path)?;
    let (g1, g2, t) = lookup_pair(&vocab, &ck.type_names, drug1, drug2, ddi_type)?;
    let explanation = explain_pair(g1, g2, t, &ck.model, &ck.params, top_k)
        .map_err(|e| anyhow!("explain failed: {e}"))?;
    let mut out = serde_json::to_value(&explanation)?;
    out["drug1"] = drug1.into();
    out["drug2"] = drug2.into();
    out["ddi_type"] = ddi_type.into();
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn cmd_split(common: &CommonArgs) -> Result<()> {
    let cfg = load_config(common)?;
    let data = build_dataset(&cfg, common.fold, common.inductive)?;
    std::fs::create_dir_all(&cfg.paths.output_dir)
        .with_context(|| format!("creating {}", cfg.paths.output_dir.display()))?;

    let mode = if common.inductive { "inductive" } else { "transductive" };
    let manifest = cfg
        .paths
        .output_dir
        .join(format!("split_{mode}_fold{}.csv", common.fold));
    let mut text = String::from("drug1_id,drug2_id,ddi_type,label,split\n");
    let buckets: [(&str, &[DdiSample]); 3] = if common.inductive {
        [("train", &data.train), ("s1", &data.valid), ("s2", &data.test)]
    } else {
        [("train", &data.train), ("valid", &data.valid), ("test", &data.test)]
    };
    for (name, samples) in buckets {
        for s in samples {
            text.push_str(&format!(
                "{},{},{},{},{}\n",
                s.drug1,
                s.drug2,
                data.types.name(s.ddi_type),
                s.label,
                name
            ));
        }
    }
    std::fs::write(&manifest, text)?;
    eprintln!("wrote {}", manifest.display());

    if let Some(g_old) = &data.g_old {
        let drug_manifest = cfg
            .paths
            .output_dir
            .join(format!("drug_split_fold{}.csv", common.fold));
        let old: std::collections::HashSet<&str> = g_old.iter().map(String::as_str).collect();
        let mut text = String::from("drug_id,split\n");
        for id in data.vocab.ids() {
            let bucket = if old.contains(id) { "old" } else { "new" };
            text.push_str(&format!("{id},{bucket}\n"));
        }
        std::fs::write(&drug_manifest, text)?;
        eprintln!("wrote {}", drug_manifest.display());
    }
    Ok(())
}
