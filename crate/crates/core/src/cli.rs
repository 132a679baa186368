//! Command-line entry points. Every command resolves its configuration,
//! writes `resolved_config.txt` into its output directory and never touches
//! its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crate::config::{RunConfig, OUTPUT_ROOT_ENV};
use crate::corruptions::corruption_manifest;
use crate::dataset::{
    clean_select, generate_fixture, ingest_folder, BlockDctEmbedder, Dataset, DatasetManifest, FixtureConfig,
    IngestConfig, Split,
};
use crate::evaluation::{
    attack_csv, attack_sweep, embeddings_csv, eval_input, evaluate, export_embeddings, gradcam_heatmap,
    per_perturbation_eval,
};
use crate::imaging::save_gray_png;
use crate::seeding::{derive_seed, STREAM_CLEAN, STREAM_DATA, STREAM_EVAL};
use crate::training::{fit_with, write_atomic, Checkpoint};
use crate::Model;

#[derive(Debug, Parser)]
#[command(name = "repmix", version, about = "GAN architecture attribution with representation mixing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic fixture or ingest an image folder, optionally clean it, write the manifest.
    BuildData(BuildDataArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint, optionally sweeping every corruption and severity.
    Eval(EvalArgs),
    /// I-FGSM attack over an epsilon grid.
    Attack(AttackArgs),
    /// GradCAM heatmaps and/or an embedding table.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config key, `key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Master seed (same as `--set seed=N`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; relative paths resolve against $REPMIX_OUTPUT_ROOT when set.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BuildDataArgs {
    #[command(flatten)]
    pub common: Common,
    /// Generate the procedural fixture.
    #[arg(long, conflicts_with = "input")]
    pub fixture: bool,
    /// Folder laid out as `<source>/<semantic>/<image>`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    pub sources: usize,
    #[arg(long, default_value_t = 6)]
    pub semantics: usize,
    #[arg(long, default_value_t = 50)]
    pub per_cell: usize,
    /// Seen semantics (fixture: count, default two thirds).
    #[arg(long)]
    pub seen: Option<usize>,
    #[arg(long, default_value_t = 36)]
    pub image_size: usize,
    /// Scene contrast in [0, 1]; lower makes the fingerprint easier to learn.
    #[arg(long)]
    pub content_contrast: Option<f64>,
    /// Name of the REAL folder when ingesting.
    #[arg(long, default_value = "real")]
    pub real_source: String,
    /// Comma-separated seen semantics when ingesting (default: all).
    #[arg(long, value_delimiter = ',')]
    pub seen_semantics: Option<Vec<String>>,
    /// Keep only the synthetic images closest to real ones, per cluster.
    #[arg(long)]
    pub clean: bool,
    #[arg(long, default_value_t = 100)]
    pub k_clusters: usize,
    #[arg(long, default_value_t = 120)]
    pub top_k: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub insertion_point: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Also evaluate every corruption kind at severities 1-5.
    #[arg(long)]
    pub sweep: bool,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Budgets in units of 1/255.
    #[arg(long, value_delimiter = ',', default_value = "2,4,8,16,24,32")]
    pub epsilons: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub iters: usize,
    /// Attack at most this many images (first in manifest order).
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Image ids to explain.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<String>,
    /// Class to explain; defaults to each image's predicted class.
    #[arg(long)]
    pub target: Option<String>,
    /// Export the embedding table for this split.
    #[arg(long)]
    pub embeddings: Option<Split>,
}

fn output_dir(out: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if out.is_relative() => PathBuf::from(root).join(out),
        _ => out.to_path_buf(),
    }
}

/// file < environment < `--set` < dedicated flags.
fn resolve(common: &Common, flags: &[(&str, Option<String>)]) -> anyhow::Result<(RunConfig, PathBuf)> {
    let mut rc = RunConfig::default();
    if let Some(path) = &common.config {
        rc.merge_file(path)?;
    }
    rc.merge_env(std::env::vars())?;
    for pair in &common.overrides {
        rc.set_pair(pair)?;
    }
    if let Some(seed) = common.seed {
        rc.set("seed", &seed.to_string())?;
    }
    for (k, v) in flags {
        if let Some(v) = v {
            rc.set(k, v)?;
        }
    }
    let out = output_dir(&common.out);
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut text = format!("# command: {}\n", std::env::args().skip(1).collect::<Vec<_>>().join(" "));
    text.push_str(&rc.resolved());
    fs::write(out.join("resolved_config.txt"), text)?;
    Ok((rc, out))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::BuildData(a) => build_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Attack(a) => attack(a),
        Command::Explain(a) => explain(a),
    }
}

fn print_counts(data: &Dataset) {
    let mut by_cell: BTreeMap<(String, String), [usize; 3]> = BTreeMap::new();
    for r in &data.manifest.records {
        let slot = Split::ALL.iter().position(|&s| s == r.split).expect("known split");
        by_cell.entry((r.source.clone(), r.semantic.clone())).or_default()[slot] += 1;
    }
    println!("source\tsemantic\ttrain\tval\ttest");
    for ((src, sem), c) in by_cell {
        println!("{src}\t{sem}\t{}\t{}\t{}", c[0], c[1], c[2]);
    }
}

/// Cleans each (synthetic source, semantic) cell against the REAL images.
fn clean_dataset(data: Dataset, k_clusters: usize, top_k: usize, seed: u64) -> anyhow::Result<Dataset> {
    let real = data.real_index();
    let embedder = BlockDctEmbedder::default();
    let mut keep: Vec<bool> = data.items.iter().map(|it| it.source_label == real).collect();
    let reals: Vec<_> = data.items.iter().filter(|it| it.source_label == real).cloned().collect();
    if reals.is_empty() {
        bail!("cleaning needs REAL images");
    }
    let mut cells: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, it) in data.items.iter().enumerate() {
        if it.source_label != real {
            cells.entry((it.source_label, it.semantic_label)).or_default().push(i);
        }
    }
    for ((src, sem), members) in cells {
        let synth: Vec<_> = members.iter().map(|&i| data.items[i].clone()).collect();
        let k = k_clusters.min(synth.len());
        let cell_seed = derive_seed(seed, (src * 1_000_003 + sem) as u64);
        let picked = clean_select(&synth, &reals, &embedder, k, top_k, cell_seed)?;
        for &i in &members {
            if picked.contains(&data.items[i].id) {
                keep[i] = true;
            }
        }
    }
    let (records, images): (Vec<_>, Vec<_>) = data
        .manifest
        .records
        .into_iter()
        .zip(data.items)
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|((r, it), _)| (r, it.pixels))
        .unzip();
    let h = data.manifest.header;
    let manifest = DatasetManifest::new(h.sources, &h.real_source, h.semantics, h.seen_semantics, records)?;
    Ok(Dataset::from_parts(manifest, images)?)
}

fn build_data(a: BuildDataArgs) -> anyhow::Result<()> {
    let (rc, out) = resolve(&a.common, &[])?;
    let seed = rc.seed()?;
    let mut data = if a.fixture {
        let mut fc = FixtureConfig::new(a.sources, a.semantics, a.per_cell);
        if let Some(seen) = a.seen {
            fc.seen_semantics = seen;
        }
        fc.image_size = a.image_size;
        if let Some(c) = a.content_contrast {
            fc.content_contrast = c;
        }
        generate_fixture(&fc, derive_seed(seed, STREAM_DATA))?
    } else if let Some(input) = &a.input {
        if !input.is_dir() {
            bail!("input folder {} does not exist", input.display());
        }
        let cfg = IngestConfig {
            real_source: a.real_source.clone(),
            seen_semantics: a.seen_semantics.clone(),
            seed: derive_seed(seed, STREAM_DATA),
            ..IngestConfig::default()
        };
        ingest_folder(input, &cfg)?
    } else {
        bail!("pass --fixture or --input <folder>");
    };
    if a.clean {
        let before = data.len();
        data = clean_dataset(data, a.k_clusters, a.top_k, derive_seed(seed, STREAM_CLEAN))?;
        println!("cleaning kept {} of {before} images", data.len());
    }
    let manifest = data.save(&out)?;
    fs::write(out.join("corruptions.tsv"), corruption_manifest(&rc.corruption_policy()?))?;
    print_counts(&data);
    println!("wrote {}", manifest.display());
    Ok(())
}

fn train(a: TrainArgs) -> anyhow::Result<()> {
    let (rc, out) = resolve(
        &a.common,
        &[
            ("max_epochs", a.max_epochs.map(|v| v.to_string())),
            ("learning_rate", a.learning_rate.map(|v| v.to_string())),
            ("insertion_point", a.insertion_point.clone()),
            ("batch_size", a.batch_size.map(|v| v.to_string())),
        ],
    )?;
    let data = Dataset::load(&a.manifest)?;
    let mut rc = rc;
    // A short run with the default patience would violate patience <= max_epochs.
    if let Some(n) = a.max_epochs {
        if rc.get("early_stop_patience") == "5" && n < 5 {
            rc.set("early_stop_patience", &n.max(1).to_string())?;
        }
    }
    let mc = rc.model_config(data.manifest.header.sources.clone(), data.real_index())?;
    let tc = rc.train_config()?;
    let mut model = Model::new(mc, rc.init_seed()?)?;
    let log_path = out.join("train_log.jsonl");
    let ckpt_path = out.join("checkpoint.json");
    let mut log_text = String::new();
    let outcome = fit_with(&mut model, &data, &tc, &mut |entry, best| {
        log_text.push_str(&serde_json::to_string(entry)?);
        log_text.push('\n');
        write_atomic(&log_path, log_text.as_bytes())?;
        if let Some(ckpt) = best {
            ckpt.save(&ckpt_path)?;
        }
        println!(
            "epoch {} l_det {:.4} l_attr {:.4} l_total {:.4} val_acc {:.4} lr {:.3e}",
            entry.epoch, entry.l_det, entry.l_attr, entry.l_total, entry.val_acc, entry.lr
        );
        Ok(())
    })?;
    println!(
        "best epoch {} val_acc {:.4}; checkpoint {}",
        outcome.best.epoch,
        outcome.best.val_accuracy,
        ckpt_path.display()
    );
    Ok(())
}

/// Loads a checkpoint and manifest and checks their vocabularies agree.
fn load_pair(checkpoint: &Path, manifest: &Path) -> anyhow::Result<(Checkpoint, Model, Dataset)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model: Model = ckpt.to_model()?;
    let data = Dataset::load(manifest)?;
    let cfg = model.config();
    if cfg.class_names != data.manifest.header.sources || cfg.real_index != data.real_index() {
        bail!(
            "checkpoint classes {:?} (real {}) do not match manifest sources {:?} (real {})",
            cfg.class_names,
            cfg.real_index,
            data.manifest.header.sources,
            data.real_index()
        );
    }
    Ok((ckpt, model, data))
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let (rc, out) = resolve(&a.common, &[])?;
    let (ckpt, model, data) = load_pair(&a.checkpoint, &a.manifest)?;
    let aug = &ckpt.train_config.augment;
    let report = evaluate(&model, &data, a.split, aug, None)?;
    fs::write(out.join("metrics.json"), report.to_json()?)?;
    fs::write(out.join("slices.csv"), report.slices_csv())?;
    let m = &report.overall;
    println!(
        "{} images: detection {:.4} attribution {:.4} nmi {:.4}",
        m.count, m.detection_accuracy, m.attribution_accuracy, m.attribution_nmi
    );
    if a.sweep {
        let policy = rc.corruption_policy()?;
        let sweep = per_perturbation_eval(
            &model,
            &data,
            a.split,
            &policy.bank(),
            &policy,
            aug,
            derive_seed(rc.seed()?, STREAM_EVAL),
        )?;
        fs::write(out.join("perturbations.json"), sweep.to_json()?)?;
        fs::write(out.join("perturbations.csv"), sweep.slices_csv())?;
        println!(
            "{} perturbations: detection std {:.4} attribution std {:.4}",
            sweep.entries.len(),
            sweep.detection_std,
            sweep.attribution_std
        );
    }
    Ok(())
}

fn attack(a: AttackArgs) -> anyhow::Result<()> {
    let (_, out) = resolve(&a.common, &[])?;
    let (ckpt, model, data) = load_pair(&a.checkpoint, &a.manifest)?;
    let mut indices = data.split_indices(a.split);
    if let Some(n) = a.limit {
        indices.truncate(n);
    }
    let eps: Vec<f64> = a.epsilons.iter().map(|e| e / 255.0).collect();
    let results = attack_sweep(&model, &data, &indices, &ckpt.train_config.augment, &eps, a.iters)?;
    fs::write(out.join("attack.csv"), attack_csv(&results))?;
    fs::write(out.join("attack.json"), serde_json::to_string_pretty(&results)?)?;
    for r in &results {
        println!(
            "eps {:.4}: accuracy {:.4} -> {:.4}, error {:.4}",
            r.epsilon, r.pre_attack_accuracy, r.post_attack_accuracy, r.attribution_error
        );
    }
    Ok(())
}

fn explain(a: ExplainArgs) -> anyhow::Result<()> {
    let (_, out) = resolve(&a.common, &[])?;
    let (ckpt, model, data) = load_pair(&a.checkpoint, &a.manifest)?;
    let aug = &ckpt.train_config.augment;
    let target = match &a.target {
        None => None,
        Some(name) => Some(
            data.manifest
                .source_index(name)
                .with_context(|| format!("unknown class `{name}`"))?,
        ),
    };
    if !a.ids.is_empty() {
        let dir = out.join("heatmaps");
        fs::create_dir_all(&dir)?;
        for id in &a.ids {
            let index = data
                .items
                .iter()
                .position(|it| &it.id == id)
                .with_context(|| format!("no image with id `{id}`"))?;
            let x = eval_input(&data, index, aug, None)?;
            let class = match target {
                Some(c) => c,
                None => model.predict(&x.to_tensor())?.source,
            };
            let h = gradcam_heatmap(&model, &x, class)?;
            let path = dir.join(format!("{}.png", id.replace(['/', '\\'], "_")));
            save_gray_png(&h.values, h.width, h.height, &path)?;
            println!("{id}: class {} flat {} -> {}", data.manifest.header.sources[class], h.flat, path.display());
        }
    }
    if let Some(split) = a.embeddings {
        let rows = export_embeddings(&model, &data, split, aug)?;
        fs::write(out.join("embeddings.csv"), embeddings_csv(&rows))?;
        println!("{} embedding rows", rows.len());
    }
    if a.ids.is_empty() && a.embeddings.is_none() {
        bail!("nothing to explain: pass --ids and/or --embeddings");
    }
    Ok(())
}
