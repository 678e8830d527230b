//! `nor`: train, query and evaluate an outfit matching and comment model.

mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use nor_core::data::{load_dataset, load_image, synthetic, CandidatePool, Catalog, Direction, ImageStore, Side, SplitName};
use nor_core::evaluate::evaluate_split;
use nor_core::model::{ModelMeta, NorModel};
use nor_core::training::{train, TrainingConfig};
use nor_core::write_atomic;

use manifest::RunManifest;

#[derive(Parser)]
#[command(name = "nor", version, about = "Outfit matching and comment generation")]
struct Cli {
    /// Output style for results printed to stdout.
    #[arg(long, value_enum, global = true, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and keep the checkpoint with the best validation AUC.
    Train(TrainArgs),
    /// Rank a query's candidates by match probability.
    Recommend(RecommendArgs),
    /// Write a comment for a top and bottom.
    Generate(GenerateArgs),
    /// Compute ranking and generation metrics on a split.
    Evaluate(EvaluateArgs),
    /// Write the attention weights behind one generated comment.
    DumpAttention(DumpArgs),
    /// Write a small procedural dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key = value` config file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from the `paper` or `desk` settings.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, alias = "lambda_reg")]
    lambda_reg: Option<String>,
    #[arg(long, alias = "batch_size")]
    batch_size: Option<String>,
    #[arg(long, alias = "max_epochs")]
    max_epochs: Option<String>,
    #[arg(long, alias = "learning_rate")]
    learning_rate: Option<String>,
    #[arg(long, alias = "validation_size")]
    validation_size: Option<String>,
    #[arg(long, alias = "test_size")]
    test_size: Option<String>,
    #[arg(long)]
    candidates: Option<String>,
    #[arg(long, alias = "min_freq")]
    min_freq: Option<String>,
    #[arg(long, alias = "image_size")]
    image_size: Option<String>,
    #[arg(long, alias = "pool_window")]
    pool_window: Option<String>,
    #[arg(long, alias = "conv1_channels")]
    conv1_channels: Option<String>,
    #[arg(long, alias = "conv2_channels")]
    conv2_channels: Option<String>,
    #[arg(long, alias = "visual_dim")]
    visual_dim: Option<String>,
    #[arg(long, alias = "shared_size")]
    shared_size: Option<String>,
    #[arg(long, alias = "embed_size")]
    embed_size: Option<String>,
    #[arg(long, alias = "hidden_size")]
    hidden_size: Option<String>,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainingConfig> {
        let mut cfg = match &self.config {
            Some(p) => TrainingConfig::from_file(p)?,
            None => TrainingConfig::default(),
        };
        if let Some(p) = &self.preset {
            cfg.set("preset", p)?;
        }
        let overrides = [
            ("lambda_reg", &self.lambda_reg),
            ("batch_size", &self.batch_size),
            ("max_epochs", &self.max_epochs),
            ("learning_rate", &self.learning_rate),
            ("validation_size", &self.validation_size),
            ("test_size", &self.test_size),
            ("candidates", &self.candidates),
            ("min_freq", &self.min_freq),
            ("image_size", &self.image_size),
            ("pool_window", &self.pool_window),
            ("conv1_channels", &self.conv1_channels),
            ("conv2_channels", &self.conv2_channels),
            ("visual_dim", &self.visual_dim),
            ("shared_size", &self.shared_size),
            ("embed_size", &self.embed_size),
            ("hidden_size", &self.hidden_size),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset root holding the item images; defaults to the training data.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    query: String,
    /// `top_to_bottom` (rank bottoms) or `bottom_to_top` (rank tops).
    #[arg(long, default_value = "top_to_bottom")]
    direction: String,
    /// Candidate pool file (`candidates_<split>.jsonl`).
    #[arg(long)]
    candidates: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long, default_value_t = 3)]
    beam: usize,
    #[arg(long = "max-len", default_value_t = 20)]
    max_len: usize,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    top: String,
    #[arg(long)]
    bottom: String,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// `train`, `validation` or `test`.
    #[arg(long)]
    split: String,
    /// Pool file; defaults to `candidates_<split>.jsonl` beside the
    /// checkpoint, then in the data directory.
    #[arg(long)]
    candidates: Option<PathBuf>,
    /// Report path; defaults to `report_<split>.json` beside the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    top: String,
    #[arg(long)]
    bottom: String,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    decode: DecodeArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    n: usize,
    #[arg(long, default_value_t = 32)]
    size: usize,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    if let Err(e) = configure_threads().and_then(|_| run(cli)) {
        eprintln!("error: {e:#}");
        return ExitCode::FAILURE;
    }
    ExitCode::SUCCESS
}

/// `NOR_THREADS` caps the worker pool used for evaluation.
fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("NOR_THREADS") {
        let n: usize = v.parse().with_context(|| format!("NOR_THREADS=`{v}` is not a number"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Recommend(a) => cmd_recommend(a, cli.format),
        Command::Generate(a) => cmd_generate(a, cli.format),
        Command::Evaluate(a) => cmd_evaluate(a, cli.format),
        Command::DumpAttention(a) => cmd_dump_attention(a),
        Command::Synth(a) => {
            synthetic::generate(a.n, a.size).write(&a.out)?;
            Ok(())
        }
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        bail!("{what} directory {} does not exist", path.display());
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let start = Instant::now();
    require_dir(&args.data, "data")?;
    let config = args.config()?;
    let dataset = load_dataset(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    let outcome = train(&dataset, config.clone(), &args.out)?;

    let (model, _) = NorModel::load(&outcome.checkpoint)?;
    let split = if config.test_size > 0 { SplitName::Test } else { SplitName::Train };
    let pool = CandidatePool::load(&args.out.join(CandidatePool::file_name(split)))?;
    let images = ImageStore::load_catalog(&dataset.catalog, model.config.encoder.image_size)?;
    let report = evaluate_split(&model, &images, &dataset.records, &pool, split.as_str(), 3, 20)?;
    let report_path = args.out.join(format!("report_{}.json", split.as_str()));
    write_atomic(&report_path, serde_json::to_string_pretty(&report)?.as_bytes())?;

    let manifest = RunManifest {
        command: "train".into(),
        config_text: config.to_text(),
        config,
        dataset: dataset.root.clone(),
        dataset_hash: dataset.content_hash()?,
        checkpoint: outcome.checkpoint,
        log: outcome.log_path,
        report: Some(report_path),
        best_epoch: outcome.best_epoch,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    let path = args.out.join("manifest.json");
    manifest.write(&path)?;
    println!("{}", serde_json::to_string(&manifest)?);
    Ok(())
}

struct Loaded {
    model: NorModel,
    catalog: Catalog,
}

fn load_model(args: &ModelArgs) -> Result<Loaded> {
    let (model, meta): (NorModel, ModelMeta) =
        NorModel::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let root = args
        .data
        .clone()
        .or(meta.data_root)
        .context("checkpoint does not record its dataset; pass --data")?;
    require_dir(&root, "data")?;
    let catalog = Catalog::scan(&root)?;
    Ok(Loaded { model, catalog })
}

impl Loaded {
    fn image(&self, side: Side, id: &str) -> Result<nor_core::numerics::Tensor> {
        self.model.check_known(side, id)?;
        let path = self.catalog.path(side, id)?;
        Ok(load_image(path, self.model.config.encoder.image_size)?)
    }
}

fn cmd_recommend(args: RecommendArgs, format: Format) -> Result<()> {
    let direction: Direction = args.direction.parse()?;
    let loaded = load_model(&args.model)?;
    let pool = CandidatePool::load(&args.candidates)?;
    let entry = pool
        .find(&args.query, direction)
        .with_context(|| format!("query `{}` has no {} entry in {}", args.query, direction.as_str(), args.candidates.display()))?;
    let mut images = ImageStore::new();
    let qside = direction.query_side();
    images.insert(qside, args.query.clone(), loaded.image(qside, &args.query)?);
    for c in &entry.candidates {
        images.insert(qside.other(), c.clone(), loaded.image(qside.other(), c)?);
    }
    let mut cache = nor_core::model::FeatureCache::new(&loaded.model, &images);
    let mut ranked = loaded
        .model
        .rank(&args.query, direction, &entry.candidates, |side, id| cache.get(side, id))?;
    ranked.truncate(args.k);
    match format {
        Format::Json => println!("{}", ranked.to_json_line()),
        Format::Table => {
            for (i, s) in ranked.ranking.iter().enumerate() {
                println!("{:>4}  {:<24} {:.6}", i + 1, s.item, s.score);
            }
        }
    }
    Ok(())
}

fn pair_features(loaded: &Loaded, top: &str, bottom: &str) -> Result<(nor_core::encoder::FeatureMap, nor_core::encoder::FeatureMap)> {
    let ft = loaded.model.features(&loaded.image(Side::Top, top)?)?;
    let fb = loaded.model.features(&loaded.image(Side::Bottom, bottom)?)?;
    Ok((ft, fb))
}

fn cmd_generate(args: GenerateArgs, format: Format) -> Result<()> {
    let loaded = load_model(&args.model)?;
    let (ft, fb) = pair_features(&loaded, &args.top, &args.bottom)?;
    let c = loaded
        .model
        .generate(&ft, &fb, &args.top, &args.bottom, args.decode.beam, args.decode.max_len)?;
    match format {
        Format::Json => println!("{}", serde_json::to_string(&c)?),
        Format::Table => println!("{} + {}: {} ({:.4})", c.top, c.bottom, c.comment, c.score),
    }
    Ok(())
}

fn find_pool(args: &EvaluateArgs, split: SplitName) -> Result<PathBuf> {
    if let Some(p) = &args.candidates {
        return Ok(p.clone());
    }
    let name = CandidatePool::file_name(split);
    let beside = args.checkpoint.parent().unwrap_or(Path::new(".")).join(&name);
    let in_data = args.data.join(&name);
    [beside.clone(), in_data.clone()]
        .into_iter()
        .find(|p| p.is_file())
        .with_context(|| format!("no candidate pool for split `{}` (looked for {} and {})", split.as_str(), beside.display(), in_data.display()))
}

fn cmd_evaluate(args: EvaluateArgs, format: Format) -> Result<()> {
    let split: SplitName = args.split.parse()?;
    require_dir(&args.data, "data")?;
    let pool_path = find_pool(&args, split)?;
    let pool = CandidatePool::load(&pool_path)?;
    let (model, _) = NorModel::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let dataset = load_dataset(&args.data)?;
    let images = ImageStore::load_catalog(&dataset.catalog, model.config.encoder.image_size)?;
    let report = evaluate_split(&model, &images, &dataset.records, &pool, split.as_str(), args.decode.beam, args.decode.max_len)?;
    let out = args.out.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("report_{}.json", split.as_str()))
    });
    let text = serde_json::to_string_pretty(&report)?;
    write_atomic(&out, text.as_bytes())?;
    match format {
        Format::Json => println!("{}", serde_json::to_string(&report)?),
        Format::Table => {
            for (name, r) in [("bottom_item", &report.bottom_item), ("top_item", &report.top_item)] {
                println!("{name:<12} MAP {:6.2}  MRR {:6.2}  AUC {:6.2}", 100.0 * r.map, 100.0 * r.mrr, 100.0 * r.auc);
            }
            if let Some(g) = &report.generation {
                for (k, v) in &g.rouge {
                    println!("ROUGE-{k:<4} P {:6.2}  R {:6.2}  F {:6.2}", 100.0 * v.p, 100.0 * v.r, 100.0 * v.f);
                }
                println!("BLEU       {:6.2}", 100.0 * g.bleu);
            }
        }
    }
    Ok(())
}

fn cmd_dump_attention(args: DumpArgs) -> Result<()> {
    let loaded = load_model(&args.model)?;
    let (ft, fb) = pair_features(&loaded, &args.top, &args.bottom)?;
    let dump = loaded
        .model
        .attention(&ft, &fb, &args.top, &args.bottom, args.decode.beam, args.decode.max_len)?;
    write_atomic(&args.out, serde_json::to_string_pretty(&dump)?.as_bytes())?;
    Ok(())
}
