//! Command-line front end. Every subcommand reads one [`RunConfig`],
//! writes its artifacts plus a resolved-config snapshot into `--out`.

use crate::arch::{histograms_to_batch, SpikeVpr};
use crate::augment::{augmented_histogram, AugmentConfig};
use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::energy::{energy_decompose, monitor_spikes};
use crate::error::{Error, Result};
use crate::event::{EventHistogram, PlaceSample};
use crate::retrieval::{
    evaluate, pca_evaluate, precision_recall, recall_at_n, sad_evaluate, write_text, DescriptorDb, PlaceMeta,
    RetrievalResult,
};
use crate::rng::{derive_seed, mix};
use crate::synth::Role;
use crate::train::{
    embed_places, eval_split, evaluate_model, load_checkpoint, load_encoder_into, metrics_csv, place_histograms,
    save_checkpoint, train, TrainState,
};
use clap::{Parser, Subcommand};
use serde::Serialize;
use std::path::{Path, PathBuf};

pub const THREADS_ENV: &str = "SPIKEPLACE_THREADS";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// The eight augmentation sets of the ablation table, in row order.
pub const ABLATION_ROWS: [&str; 8] = ["None", "D", "X", "E", "X+E", "D+E", "D+X", "D+X+E"];

#[derive(Debug, Parser)]
#[command(name = "spikeplace", version, about = "Event-camera place recognition with a stateless spiking network")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the top-level seed of the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Checkpoint manifest to read (embed, retrieve, eval, energy) or to
    /// initialize the encoder from (train).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, short, global = true)]
    pub verbose: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-traverse dataset.
    Synth,
    /// Write augmented training histograms of every train place.
    Augment,
    /// Train a model and write a checkpoint and metric log.
    Train,
    /// Embed every place with a trained model.
    Embed,
    /// Rank references for every query.
    Retrieve,
    /// Recall@N and precision-recall of a trained model.
    Eval,
    /// SAD and PCA baselines.
    Baseline,
    /// Energy estimate from monitored spike counts.
    Energy,
    /// Train and evaluate the eight augmentation sets.
    Ablate,
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 on usage or configuration errors, 2 on data errors.
pub fn run_from_args<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    if let Err(e) = init_threads() {
        eprintln!("error: {e}");
        return 1;
    }
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // a pool may already exist when running inside a test harness
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Loads and validates the config, applying the `--seed` override.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) if !p.is_file() => {
            return Err(Error::InvalidConfig(format!("config file {} does not exist", p.display())));
        }
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out = cli.out.as_path();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    cfg.write_snapshot(out)?;
    match cli.command {
        Command::Synth => cmd_synth(&cfg, out),
        Command::Augment => cmd_augment(&cfg, out),
        Command::Train => cmd_train(&cfg, out, cli.checkpoint.as_deref()),
        Command::Embed => cmd_embed(&cfg, out, need_checkpoint(cli)?),
        Command::Retrieve => cmd_retrieve(&cfg, out, need_checkpoint(cli)?),
        Command::Eval => cmd_eval(&cfg, out, need_checkpoint(cli)?),
        Command::Baseline => cmd_baseline(&cfg, out),
        Command::Energy => cmd_energy(&cfg, out, cli.checkpoint.as_deref()),
        Command::Ablate => cmd_ablate(&cfg, out),
    }
}

fn need_checkpoint(cli: &Cli) -> Result<&Path> {
    cli.checkpoint
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("this subcommand needs --checkpoint <manifest>".into()))
}

/// The configured dataset: loaded from `dataset.path` or synthesized.
pub fn open_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let ds = match &cfg.dataset.path {
        Some(p) => Dataset::load(p)?,
        None => Dataset::synthetic(&cfg.dataset.synth, cfg.seed)?,
    };
    let g = ds.manifest.geometry();
    if (g.height as usize, g.width as usize) != (cfg.model.input_height, cfg.model.input_width) {
        return Err(Error::GeometryMismatch(format!(
            "dataset is {}×{} but the model expects {}×{}",
            g.width, g.height, cfg.model.input_width, cfg.model.input_height
        )));
    }
    Ok(ds)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &serde_json::to_string_pretty(value)?)
}

fn meta(p: &PlaceSample) -> PlaceMeta {
    PlaceMeta {
        place_id: p.place_id,
        traverse_id: p.traverse_id,
        position: p.position,
    }
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = Dataset::synthetic(&cfg.dataset.synth, cfg.seed)?;
    ds.save(out)?;
    log::info!("wrote {} traverses to {}", ds.traverses.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct AugmentedPlace {
    traverse_id: u32,
    place_id: u32,
    events: u64,
    /// Row-major `[2, H, W]` counts, ON channel first.
    counts: Vec<u32>,
}

fn cmd_augment(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let places = ds.places(Role::Train)?;
    let half = ds.manifest.half_window_us;
    let base = derive_seed(cfg.seed, "augment");
    let mut items = Vec::with_capacity(places.len());
    for (k, p) in places.iter().enumerate() {
        let h = augmented_histogram(&p.stream, p.center_us, half, &cfg.augment, mix(base, k as u64))?;
        items.push(AugmentedPlace {
            traverse_id: p.traverse_id,
            place_id: p.place_id,
            events: h.total(),
            counts: h.counts().to_vec(),
        });
    }
    write_json(&out.join("augmented.json"), &items)?;
    log::info!("augmented {} places with {}", items.len(), cfg.augment.label());
    Ok(())
}

fn total_steps(cfg: &RunConfig, ds: &Dataset) -> Result<u64> {
    let n = ds.places(Role::Train)?.len();
    Ok((cfg.train.steps_per_epoch_for(n, cfg.loss.batch_size) * cfg.train.epochs) as u64)
}

/// Trains with `aug` from a fresh state; returns the state and the metric CSV.
pub fn train_run(cfg: &RunConfig, ds: &Dataset, aug: &AugmentConfig, init: Option<&Path>) -> Result<(TrainState, String)> {
    let mut state = TrainState::new(&cfg.model, &cfg.optim, total_steps(cfg, ds)?, cfg.seed)?;
    if let Some(p) = init {
        load_encoder_into(&mut state.model, p)?;
        log::info!("encoder initialized from {}", p.display());
    }
    let rows = train(ds, &mut state, &cfg.train, aug, &cfg.loss, &cfg.eval)?;
    Ok((state, metrics_csv(&rows)))
}

fn cmd_train(cfg: &RunConfig, out: &Path, init: Option<&Path>) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let (state, csv) = train_run(cfg, &ds, &cfg.augment, init)?;
    write_text(&out.join("metrics.csv"), &csv)?;
    save_checkpoint(&state, &out.join(CHECKPOINT_FILE))?;
    log::info!("checkpoint written to {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

fn model_from(cfg: &RunConfig, checkpoint: &Path) -> Result<SpikeVpr<f32>> {
    let state = load_checkpoint(checkpoint)?;
    if state.model.config() != &cfg.model {
        log::warn!("checkpoint model config differs from the run config; using the checkpoint's");
    }
    Ok(state.model)
}

#[derive(Serialize)]
struct EmbeddedPlace {
    #[serde(flatten)]
    meta: PlaceMeta,
    role: Role,
    descriptor: Vec<f64>,
}

fn cmd_embed(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let model = model_from(cfg, checkpoint)?;
    let mut items = Vec::new();
    for role in [Role::Train, Role::Test] {
        let places = ds.places(role)?;
        for (p, d) in places.iter().zip(embed_places(&model, &places, cfg.train.embed_batch)?) {
            items.push(EmbeddedPlace {
                meta: meta(p),
                role,
                descriptor: d,
            });
        }
    }
    write_json(&out.join("descriptors.json"), &items)?;
    log::info!("embedded {} places", items.len());
    Ok(())
}

fn cmd_retrieve(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let model = model_from(cfg, checkpoint)?;
    let (refs, queries) = eval_split(&ds)?;
    let mut db = DescriptorDb::new(model.config().descriptor_dim);
    for (p, d) in refs.iter().zip(embed_places(&model, &refs, cfg.train.embed_batch)?) {
        db.push(meta(p), d)?;
    }
    let q: Vec<(PlaceMeta, Vec<f64>)> = queries
        .iter()
        .map(meta)
        .zip(embed_places(&model, &queries, cfg.train.embed_batch)?)
        .collect();
    let res = evaluate(&db, &q, &cfg.eval)?;
    res.write_report(&out.join("retrieval.json"))?;
    log::info!("ranked {} queries against {} references", q.len(), db.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalSummary {
    pub method: String,
    pub recall: Vec<(usize, f64)>,
    pub precision_at_full_recall: f64,
    pub valid_queries: usize,
    pub excluded_queries: usize,
}

/// Writes `<prefix>_recall.csv` and `<prefix>_pr.csv` and returns the summary.
fn write_metrics(out: &Path, prefix: &str, res: &RetrievalResult, cfg: &RunConfig) -> Result<EvalSummary> {
    let curve = recall_at_n(res, &cfg.eval.n_values);
    let pr = precision_recall(res);
    write_text(&out.join(format!("{prefix}_recall.csv")), &curve.to_csv())?;
    write_text(&out.join(format!("{prefix}_pr.csv")), &pr.to_csv())?;
    let s = EvalSummary {
        method: prefix.to_string(),
        recall: curve.points.clone(),
        precision_at_full_recall: pr.precision_at_full_recall,
        valid_queries: curve.valid_queries,
        excluded_queries: curve.excluded_queries,
    };
    log::info!(
        "{prefix}: R@1 {:.3}, precision at full recall {:.3}",
        curve.at(1).unwrap_or(0.0),
        s.precision_at_full_recall
    );
    Ok(s)
}

fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let model = model_from(cfg, checkpoint)?;
    let res = evaluate_model(&model, &ds, &cfg.eval, cfg.train.embed_batch)?;
    res.write_report(&out.join("retrieval.json"))?;
    let s = write_metrics(out, "spikevpr", &res, cfg)?;
    write_json(&out.join("eval.json"), &s)
}

fn labelled(places: &[PlaceSample]) -> Result<Vec<(PlaceMeta, EventHistogram)>> {
    Ok(places.iter().map(meta).zip(place_histograms(places)?).collect())
}

fn cmd_baseline(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let (refs, queries) = eval_split(&ds)?;
    let (r, q) = (labelled(&refs)?, labelled(&queries)?);
    let sad = write_metrics(out, "sad", &sad_evaluate(&r, &q, &cfg.eval)?, cfg)?;
    let pca = write_metrics(out, "pca", &pca_evaluate(&r, &q, &cfg.eval)?, cfg)?;
    write_json(&out.join("baseline.json"), &[sad, pca])
}

fn cmd_energy(cfg: &RunConfig, out: &Path, checkpoint: Option<&Path>) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let model = match checkpoint {
        Some(p) => model_from(cfg, p)?,
        None => {
            log::warn!("no --checkpoint given; measuring a freshly initialized model");
            SpikeVpr::new(&cfg.model, derive_seed(cfg.seed, "model"))?
        }
    };
    let (_, queries) = eval_split(&ds)?;
    let n = cfg.energy.samples.min(queries.len());
    let hists = place_histograms(&queries[..n])?;
    let inputs = hists
        .chunks(cfg.train.embed_batch)
        .map(|c| histograms_to_batch::<f32>(&c.iter().collect::<Vec<_>>(), model.config()))
        .collect::<Result<Vec<_>>>()?;
    let synapses = model.synapses();
    let stats = monitor_spikes(&model, &synapses, &inputs)?;
    let report = energy_decompose(&synapses, &stats, &cfg.energy.tech)?;
    write_json(&out.join("spike_stats.json"), &stats)?;
    write_json(&out.join("energy.json"), &report)?;
    log::info!(
        "energy per inference {:.6} mJ (ANN {:.6} mJ) over {} samples",
        report.total_mj,
        report.ann_total_mj.unwrap_or(f64::NAN),
        stats.samples
    );
    Ok(())
}

/// The augmentation config of an ablation row label such as `"D+X"`.
pub fn ablation_config(base: &AugmentConfig, label: &str) -> Result<AugmentConfig> {
    let mut a = AugmentConfig {
        dilation: false,
        flip: false,
        drop: false,
        ..*base
    };
    if label != "None" {
        for part in label.split('+') {
            match part {
                "D" => a.dilation = true,
                "X" => a.flip = true,
                "E" => a.drop = true,
                other => return Err(Error::InvalidConfig(format!("unknown augmentation {other:?} in {label:?}"))),
            }
        }
    }
    if a.dilation && a.dilation_window.is_none() {
        return Err(Error::InvalidConfig(
            "ablation needs augment.dilation_window for the D rows".into(),
        ));
    }
    Ok(a)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub augmentation: String,
    pub recall_at_1: f64,
    pub precision_at_full_recall: f64,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("augmentation,recall_at_1,precision_at_full_recall\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.augmentation, r.recall_at_1, r.precision_at_full_recall));
    }
    s
}

/// Trains one model per ablation row and evaluates it on the test split.
pub fn ablate(cfg: &RunConfig, ds: &Dataset) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for label in ABLATION_ROWS {
        let aug = ablation_config(&cfg.augment, label)?;
        log::info!("ablation row {label}");
        let (state, _) = train_run(cfg, ds, &aug, None)?;
        let res = evaluate_model(&state.model, ds, &cfg.eval, cfg.train.embed_batch)?;
        rows.push(AblationRow {
            augmentation: label.to_string(),
            recall_at_1: recall_at_n(&res, &[1]).points[0].1,
            precision_at_full_recall: precision_recall(&res).precision_at_full_recall,
        });
    }
    Ok(rows)
}

fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<()> {
    let ds = open_dataset(cfg)?;
    let rows = ablate(cfg, &ds)?;
    let csv = ablation_csv(&rows);
    write_text(&out.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}
