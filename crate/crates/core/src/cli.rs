//! Command-line surface: `stats | reconstruct | train | infer | eval | ablate | synth`.
//!
//! Exit codes: 0 on success, 2 for usage errors and missing input paths,
//! 1 for every other failure.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::catalog::{CatalogEntry, EntityCatalog, SourceKind};
use crate::checkpoint;
use crate::corpus::{self, load_splits, to_conll, unknown_types, ParseOptions, Split, SplitKind, TaggedSentence, Token};
use crate::error::{Error, Result};
use crate::metrics::micro_f1;
use crate::model::Variant;
use crate::reconstruct::{reconstruct, TripletRecord};
use crate::synth;
use crate::train::{self, format_ablation, run_ablation, AblationSpec, TrainConfig, TrainData};

/// Relative input paths that do not exist are retried below this directory.
pub const DATA_DIR_ENV: &str = "NER_MRC_DATA_DIR";

#[derive(Debug, Parser)]
#[command(name = "ner-mrc", version, about = "NER as multiple-choice reading comprehension")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print split sizes, type count and mean lengths as JSON.
    Stats(StatsArgs),
    /// Write one (passage, question, options, label_matrix) JSON object per sentence.
    Reconstruct(ReconstructArgs),
    /// Train a model and write checkpoints plus run records.
    Train(TrainArgs),
    /// Tag a corpus with a trained checkpoint, writing CoNLL output.
    Infer(InferArgs),
    /// Score predicted tags against gold tags (span-level micro F1).
    Eval(EvalArgs),
    /// Train several variants / catalogs / seeds and print a comparison table.
    Ablate(AblateArgs),
    /// Write the seeded synthetic corpus and its catalogs.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct CorpusFlags {
    /// Rewrite orphan I-X tags to B-X while reading (default: warn and keep).
    #[arg(long)]
    pub repair_iob: bool,
}

impl CorpusFlags {
    fn options(&self) -> ParseOptions {
        ParseOptions {
            repair_iob: self.repair_iob,
        }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// CoNLL file, or directory with train*/dev*/test* files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Catalog JSON; without it the types found in the corpus are used.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    #[command(flatten)]
    pub flags: CorpusFlags,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// CoNLL file, or directory with train/dev/test files.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Catalog JSON listing the entity types and option texts.
    #[arg(long)]
    pub catalog: PathBuf,
    /// Output JSON-lines file.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: CorpusFlags,
}

#[derive(Debug, Args)]
pub struct TrainOverrides {
    /// Experiment JSON: training fields plus optional "corpus", "catalog"
    /// and "out" paths (relative to the file). Flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Peak learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Number of training epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sentences per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Fraction of steps spent warming up, in [0, 1).
    #[arg(long)]
    pub warmup_fraction: Option<f64>,
    /// Seed for initialization and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// full | reconstruction_only | vanilla
    #[arg(long)]
    pub variant: Option<Variant>,
    /// Model width of the encoder.
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Attention heads in each HRCA step.
    #[arg(long)]
    pub hrca_heads: Option<usize>,
    /// Width of each HRCA head.
    #[arg(long)]
    pub hrca_head_dim: Option<usize>,
    /// Stacked review/read/find layers.
    #[arg(long)]
    pub hrca_layers: Option<usize>,
    /// Disable residual + layer norm around HRCA attention steps.
    #[arg(long)]
    pub no_residual: bool,
    /// Truncate overlong inputs (option tail first, then passage) instead of failing.
    #[arg(long)]
    pub truncate: bool,
    /// Early-stopping patience in epochs on dev F1.
    #[arg(long)]
    pub patience: Option<usize>,
}

/// Training config plus the data paths an experiment file may carry.
#[derive(Debug, Clone, Default)]
pub struct Experiment {
    pub config: TrainConfig,
    pub corpus: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut doc: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let mut take = |key: &str| -> Result<Option<PathBuf>> {
            match doc.remove(key) {
                None => Ok(None),
                Some(serde_json::Value::String(p)) => Ok(Some(base.join(p))),
                Some(_) => Err(Error::Config(format!("{}: \"{key}\" must be a path string", path.display()))),
            }
        };
        let (corpus, catalog, out) = (take("corpus")?, take("catalog")?, take("out")?);
        let config = serde_json::from_value(serde_json::Value::Object(doc))
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(Self {
            config,
            corpus,
            catalog,
            out,
        })
    }
}

fn required(flag: &Option<PathBuf>, file: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.clone()
        .or_else(|| file.clone())
        .ok_or_else(|| Error::Config(format!("no --{name} given and none in the experiment file")))
}

impl TrainOverrides {
    /// Experiment file (or defaults) with every given flag applied on top.
    pub fn resolve(&self) -> Result<Experiment> {
        let mut exp = match &self.config {
            Some(p) => Experiment::load(&resolve_input(p))?,
            None => Experiment::default(),
        };
        let c = &mut exp.config;
        if let Some(v) = self.lr {
            c.learning_rate = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.warmup_fraction {
            c.warmup_fraction = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.variant {
            c.ablation = v;
        }
        if let Some(v) = self.d_model {
            c.encoder.d_model = v;
        }
        if let Some(v) = self.hrca_heads {
            c.hrca.n_heads = v;
        }
        if let Some(v) = self.hrca_head_dim {
            c.hrca.head_dim = v;
        }
        if let Some(v) = self.hrca_layers {
            c.hrca.n_layers = v;
        }
        if self.no_residual {
            c.hrca.residual = false;
        }
        if self.truncate {
            c.truncate = true;
        }
        if self.patience.is_some() {
            c.early_stopping_patience = self.patience;
        }
        c.validate()?;
        Ok(exp)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory with train/dev/test CoNLL files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Catalog JSON listing the entity types and option texts.
    #[arg(long)]
    pub catalog: Option<PathBuf>,
    /// Output directory for checkpoints and run records.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub flags: CorpusFlags,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CoNLL file (a directory uses its test split).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Output CoNLL file with one `token tag` line per token.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: CorpusFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Gold CoNLL file.
    #[arg(long)]
    pub gold: PathBuf,
    /// Predicted CoNLL file with the same tokens.
    #[arg(long)]
    pub pred: PathBuf,
    #[command(flatten)]
    pub flags: CorpusFlags,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Directory with train/dev/test CoNLL files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// One or more catalogs; each is run with every variant and seed.
    #[arg(long)]
    pub catalog: Vec<PathBuf>,
    /// Comma-separated variants to compare.
    #[arg(long, value_delimiter = ',', default_value = "full,reconstruction_only,vanilla")]
    pub variants: Vec<Variant>,
    /// Comma-separated seeds (default: the config seed).
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Optional directory for per-run outputs and `ablation.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: TrainOverrides,
    #[command(flatten)]
    pub flags: CorpusFlags,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for the splits and catalogs.
    #[arg(long)]
    pub out: PathBuf,
    /// Training sentences.
    #[arg(long, default_value_t = 50)]
    pub train: usize,
    /// Development sentences.
    #[arg(long, default_value_t = 20)]
    pub dev: usize,
    /// Test sentences.
    #[arg(long, default_value_t = 20)]
    pub test: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

pub fn resolve_input(path: &Path) -> PathBuf {
    if path.exists() || path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_DIR_ENV) {
        Some(dir) => {
            let candidate = Path::new(&dir).join(path);
            if candidate.exists() {
                candidate
            } else {
                path.to_path_buf()
            }
        }
        None => path.to_path_buf(),
    }
}

fn load_catalog(path: &Path) -> Result<EntityCatalog> {
    let path = resolve_input(path);
    if !path.exists() {
        return Err(Error::io(&path, io::Error::from(io::ErrorKind::NotFound)));
    }
    EntityCatalog::load(&path)
}

fn load(path: &Path, flags: &CorpusFlags) -> Result<Vec<Split>> {
    load_splits(&resolve_input(path), flags.options())
}

fn split<'a>(splits: &'a [Split], kind: SplitKind) -> Option<&'a [TaggedSentence]> {
    splits
        .iter()
        .find(|s| s.kind.as_ref() == Some(&kind))
        .map(|s| s.sentences.as_slice())
}

fn check_catalog(splits: &[Split], catalog: &EntityCatalog) -> Result<()> {
    for s in splits {
        if let Some(d) = unknown_types(&s.sentences, catalog).into_iter().next() {
            return Err(Error::Config(format!("{}: {}", s.path.display(), d.message)));
        }
    }
    Ok(())
}

/// Catalog naming each type found in the corpus, in first-seen order.
fn observed_catalog(splits: &[Split]) -> Result<EntityCatalog> {
    let mut types: Vec<String> = Vec::new();
    for tok in splits.iter().flat_map(|s| &s.sentences).flat_map(|s| &s.tokens) {
        if let Some(t) = tok.tag.entity_type() {
            if !types.iter().any(|x| x == t) {
                types.push(t.to_string());
            }
        }
    }
    if types.is_empty() {
        types.push("none".into());
    }
    EntityCatalog::new(
        "observed",
        SourceKind::NameOnly,
        types
            .into_iter()
            .map(|t| CatalogEntry {
                option_text: t.clone(),
                type_name: t,
            })
            .collect(),
    )
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn stats(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let splits = load(&args.corpus, &args.flags)?;
    let catalog = match &args.catalog {
        Some(p) => load_catalog(p)?,
        None => observed_catalog(&splits)?,
    };
    let named: Vec<(&str, &[TaggedSentence])> = splits
        .iter()
        .map(|s| (s.name.as_str(), s.sentences.as_slice()))
        .collect();
    let stats = corpus::compute_stats(&named, &catalog)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&stats)?).map_err(|e| Error::io("<stdout>", e))
}

fn reconstruct_cmd(args: &ReconstructArgs) -> Result<()> {
    let splits = load(&args.corpus, &args.flags)?;
    let catalog = load_catalog(&args.catalog)?;
    let mut buf = Vec::new();
    for s in splits.iter().flat_map(|s| &s.sentences) {
        let t = reconstruct(s, &catalog)?;
        serde_json::to_writer(&mut buf, &TripletRecord::from(&t))?;
        buf.push(b'\n');
    }
    write_file(&args.out, &buf)
}

fn train_cmd(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let exp = args.overrides.resolve()?;
    let corpus = required(&args.corpus, &exp.corpus, "corpus")?;
    let out_dir = required(&args.out, &exp.out, "out")?;
    let config = exp.config;
    let splits = load(&corpus, &args.flags)?;
    let catalog = load_catalog(&required(&args.catalog, &exp.catalog, "catalog")?)?;
    check_catalog(&splits, &catalog)?;
    let train_split = split(&splits, SplitKind::Train)
        .ok_or_else(|| Error::Config(format!("{}: no train split", corpus.display())))?;
    let data = TrainData {
        train: train_split,
        dev: split(&splits, SplitKind::Dev).unwrap_or(&[]),
        test: split(&splits, SplitKind::Test),
    };
    let outcome = train::train(&config, data, &catalog, Some(&out_dir))?;
    let r = &outcome.record;
    writeln!(
        out,
        "{}",
        serde_json::json!({
            "variant": r.variant,
            "epochs": r.epochs.len(),
            "best_epoch": r.best_epoch,
            "best_dev_f1": r.best_dev_f1,
            "final_test_f1": r.final_test_f1,
            "checkpoint": out_dir.join("best.ckpt"),
        })
    )
    .map_err(|e| Error::io("<stdout>", e))
}

fn infer_cmd(args: &InferArgs) -> Result<()> {
    let model = checkpoint::load(&resolve_input(&args.checkpoint))?;
    let splits = load(&args.corpus, &args.flags)?;
    let sentences = if splits.len() == 1 {
        splits[0].sentences.as_slice()
    } else {
        split(&splits, SplitKind::Test)
            .ok_or_else(|| Error::Config(format!("{}: no test split", args.corpus.display())))?
    };
    let predicted = train::predict_corpus(&model, sentences)?;
    let tagged: Vec<TaggedSentence> = sentences
        .iter()
        .zip(predicted)
        .map(|(s, tags)| TaggedSentence {
            tokens: s
                .tokens
                .iter()
                .zip(tags)
                .map(|(t, tag)| Token {
                    surface: t.surface.clone(),
                    tag,
                })
                .collect(),
            source_line: s.source_line,
        })
        .collect();
    write_file(&args.out, to_conll(&tagged).as_bytes())
}

fn eval_cmd(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let gold = corpus::read_conll_file(&resolve_input(&args.gold), args.flags.options())?;
    let pred = corpus::read_conll_file(&resolve_input(&args.pred), args.flags.options())?;
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        if g.surfaces() != p.surfaces() {
            return Err(Error::LengthMismatch(format!(
                "token mismatch between gold line {} and prediction line {}",
                g.source_line, p.source_line
            )));
        }
    }
    let tags = |c: &corpus::ParsedCorpus| c.sentences.iter().map(TaggedSentence::tags).collect::<Vec<_>>();
    let report = micro_f1(&tags(&gold), &tags(&pred), args.flags.repair_iob)?;
    writeln!(out, "{}", serde_json::to_string_pretty(&report)?).map_err(|e| Error::io("<stdout>", e))
}

fn ablate_cmd(args: &AblateArgs, out: &mut dyn Write) -> Result<()> {
    let exp = args.overrides.resolve()?;
    let corpus = required(&args.corpus, &exp.corpus, "corpus")?;
    let base = exp.config;
    let splits = load(&corpus, &args.flags)?;
    let catalog_paths = if args.catalog.is_empty() {
        vec![required(&None, &exp.catalog, "catalog")?]
    } else {
        args.catalog.clone()
    };
    let catalogs = catalog_paths
        .iter()
        .map(|p| load_catalog(p))
        .collect::<Result<Vec<_>>>()?;
    for c in &catalogs {
        check_catalog(&splits, c)?;
    }
    let train_split = split(&splits, SplitKind::Train)
        .ok_or_else(|| Error::Config(format!("{}: no train split", corpus.display())))?;
    let data = TrainData {
        train: train_split,
        dev: split(&splits, SplitKind::Dev).unwrap_or(&[]),
        test: split(&splits, SplitKind::Test),
    };
    let seeds = if args.seeds.is_empty() {
        vec![base.seed]
    } else {
        args.seeds.clone()
    };
    let spec = AblationSpec {
        base,
        variants: args.variants.clone(),
        catalogs: catalogs.iter().collect(),
        seeds,
        out_dir: args.out.clone().or(exp.out),
    };
    let rows = run_ablation(&spec, &data)?;
    if let Some(dir) = &spec.out_dir {
        write_file(&dir.join("ablation.json"), &serde_json::to_vec_pretty(&rows)?)?;
    }
    write!(out, "{}", format_ablation(&rows)).map_err(|e| Error::io("<stdout>", e))
}

fn synth_cmd(args: &SynthArgs) -> Result<()> {
    let c = synth::corpus(args.train, args.dev, args.test, args.seed);
    write_file(&args.out.join("train.txt"), to_conll(&c.train).as_bytes())?;
    write_file(&args.out.join("dev.txt"), to_conll(&c.dev).as_bytes())?;
    write_file(&args.out.join("test.txt"), to_conll(&c.test).as_bytes())?;
    for (name, cat) in [
        ("catalog.json", synth::catalog()),
        ("catalog_name_only.json", synth::name_only_catalog()),
    ] {
        write_file(&args.out.join(name), &serde_json::to_vec_pretty(&cat.to_config())?)?;
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Stats(a) => stats(a, out),
        Command::Reconstruct(a) => reconstruct_cmd(a),
        Command::Train(a) => train_cmd(a, out),
        Command::Infer(a) => infer_cmd(a),
        Command::Eval(a) => eval_cmd(a, out),
        Command::Ablate(a) => ablate_cmd(a, out),
        Command::Synth(a) => synth_cmd(a),
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
        _ => 1,
    }
}

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
