//! The `skelgen` command line: extract, train, generate, eval, gradcheck
//! and stats, all driven by one TOML run config plus flag overrides.

mod config;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{FaultInjection, GradCheckConfig, OpKind};
use crate::corpus::synthetic::toy_corpus;
use crate::corpus::{corpus_stats, load_corpus, make_batches, Batch, DiiPolicy, Story};
use crate::eval::{export_attention, report_from_scores, score_story};
use crate::models::{DecodeMode, GenerateOptions, ModelBundle, Variant};
use crate::skeleton::{Lexicons, SkeletonRepr};
use crate::train::{encode_corpus, effective_repr, prepare_data, train};

pub use config::{hex_digest, CorpusPaths, GenerateConfig, RunConfig, PRESETS};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "skelgen", version, about = "Entity-skeleton extraction and visual story generation")]
pub struct Cli {
    /// Run config: a TOML file or a preset name.
    #[arg(long, global = true)]
    pub config: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Fail on the first malformed corpus line instead of skipping it.
    #[arg(long, global = true)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the central entity skeleton of every story.
    Extract(ExtractArgs),
    /// Train a model and write checkpoints and a loss log.
    Train(TrainArgs),
    /// Generate stories from a checkpoint.
    Generate(GenerateArgs),
    /// Score generated stories against references.
    Eval(EvalArgs),
    /// Finite-difference check of the configured model's gradients.
    Gradcheck(GradcheckArgs),
    /// Print corpus counts.
    Stats(StatsArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value = "surface")]
    pub repr: SkeletonRepr,
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub dii_policy: Option<DiiPolicy>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSON lines of `{"id", "sentences"}` as written by `generate`.
    #[arg(long)]
    pub generated: PathBuf,
    /// Reference corpus.
    #[arg(long)]
    pub references: Option<PathBuf>,
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 6)]
    pub max_entries: usize,
    /// `op:factor`, scales one backward rule.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

/// One generated story as written to and read from JSON lines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedLine {
    pub id: String,
    pub sentences: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: Option<String>,
    seed: Option<u64>,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

struct Run<'a> {
    cli: &'a Cli,
    out: Vec<u8>,
}

impl<'a> Run<'a> {
    fn say(&mut self, line: impl AsRef<str>) {
        self.out.extend_from_slice(line.as_ref().as_bytes());
        self.out.push(b'\n');
    }

    fn config(&self, required: bool) -> Result<Option<RunConfig>, CliError> {
        match &self.cli.config {
            Some(spec) => Ok(Some(RunConfig::load(spec)?)),
            None if required => Err(CliError::Validation("--config is required for this command".into())),
            None => Ok(None),
        }
    }

    fn out_dir(&self) -> Result<PathBuf, CliError> {
        let dir = self.cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
        Ok(dir)
    }

    fn lexicons(&self, dir: Option<&Path>) -> Result<Lexicons, CliError> {
        match dir {
            Some(d) if !d.is_dir() => Err(CliError::Validation(format!("lexicon directory {} does not exist", d.display()))),
            Some(d) => Lexicons::from_dir(d).map_err(runtime),
            None => Ok(Lexicons::bundled()),
        }
    }

    fn corpus(&mut self, path: &Path, dim: Option<usize>) -> Result<Vec<Story>, CliError> {
        config::require_file(path, "corpus")?;
        let loaded = load_corpus(path, dim, self.cli.strict).map_err(runtime)?;
        for w in &loaded.warnings {
            eprintln!("warning: {}: {w}", path.display());
        }
        Ok(loaded.stories)
    }

    fn manifest(
        &self,
        dir: &Path,
        command: &str,
        config: Option<&RunConfig>,
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> Result<(), CliError> {
        let mut hashed = BTreeMap::new();
        for p in inputs {
            let bytes = std::fs::read(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            hashed.insert(p.display().to_string(), hex_digest(&bytes));
        }
        let mut outs: Vec<String> = outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect();
        outs.sort();
        let m = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_sha256: config.map(RunConfig::sha256),
            seed: config.map(RunConfig::seed).or(self.cli.seed),
            inputs: hashed,
            outputs: outs,
        };
        let json = serde_json::to_string_pretty(&m).map_err(runtime)?;
        write_file(&dir.join("manifest.json"), format!("{json}\n").as_bytes())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn json_lines<T: Serialize>(items: &[T]) -> Result<String, CliError> {
    let mut s = String::new();
    for item in items {
        s.push_str(&serde_json::to_string(item).map_err(runtime)?);
        s.push('\n');
    }
    Ok(s)
}

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn pick_path(flag: &Option<PathBuf>, config: Option<&Option<PathBuf>>, what: &str) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| config.and_then(|c| c.clone()))
        .ok_or_else(|| CliError::Validation(format!("no {what} given")))
}

fn cmd_extract(run: &mut Run, args: &ExtractArgs) -> Result<(), CliError> {
    let cfg = run.config(false)?;
    let path = pick_path(&args.corpus, cfg.as_ref().map(|c| &c.corpus.train), "corpus (--corpus)")?;
    let lex_dir = args.lexicons.clone().or(cfg.as_ref().and_then(|c| c.corpus.lexicons.clone()));
    let lex = run.lexicons(lex_dir.as_deref())?;
    let stories = run.corpus(&path, None)?;
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        #[serde(flatten)]
        skeleton: crate::skeleton::EntitySkeleton,
        presence: [u8; 5],
    }
    let lines: Vec<Line> = stories
        .iter()
        .map(|s| {
            let skeleton = s.skeleton(&lex, args.repr);
            let presence = skeleton.presence_vector();
            Line {
                id: &s.id,
                skeleton,
                presence,
            }
        })
        .collect();
    let dir = run.out_dir()?;
    let out = dir.join("skeletons.jsonl");
    write_file(&out, json_lines(&lines)?.as_bytes())?;
    run.manifest(&dir, "extract", cfg.as_ref(), &[&path], std::slice::from_ref(&out))?;
    run.say(format!("wrote {} skeletons to {}", lines.len(), out.display()));
    Ok(())
}

fn cmd_train(run: &mut Run, args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = run.config(true)?.expect("required");
    if let Some(v) = args.variant {
        cfg.model.variant = v;
        if v == Variant::Glocal {
            cfg.model.skeleton_repr = SkeletonRepr::Surface;
        }
    }
    if let Some(a) = args.alpha {
        cfg.model.alpha = a;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if args.max_steps.is_some() {
        cfg.train.max_steps = args.max_steps;
    }
    if let Some(lr) = args.lr {
        cfg.train.lr = lr;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if args.corpus.is_some() {
        cfg.corpus.train = args.corpus.clone();
    }
    let cfg = cfg.finalize(run.cli.seed)?;
    let path = pick_path(&None, Some(&cfg.corpus.train), "training corpus (--corpus or corpus.train)")?;
    config::require_file(&path, "corpus")?;
    let lex = run.lexicons(cfg.corpus.lexicons.as_deref())?;

    let stories = run.corpus(&path, Some(cfg.corpus.feature_dim.unwrap_or(cfg.model.image_dim)))?;
    let data = prepare_data(&stories, &lex, &cfg.model, &cfg.train).map_err(runtime)?;
    let dir = run.out_dir()?;
    let ckpt = dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt).map_err(runtime)?;
    let outcome = train(&cfg.model, &cfg.train, &data, Some(&ckpt)).map_err(runtime)?;

    for e in &outcome.epochs {
        match e.l2 {
            Some(l2) => run.say(format!("epoch {:>3} step {:>6} loss {:.6} l1 {:.6} l2 {:.6}", e.epoch, e.steps, e.loss, e.l1, l2)),
            None => run.say(format!("epoch {:>3} step {:>6} loss {:.6}", e.epoch, e.steps, e.loss)),
        }
    }
    let metrics = dir.join("metrics.jsonl");
    write_file(&metrics, json_lines(&outcome.epochs)?.as_bytes())?;
    let steps = dir.join("steps.jsonl");
    write_file(&steps, json_lines(&outcome.steps)?.as_bytes())?;
    let model = dir.join("model.sklg");
    outcome.bundle.save(&model).map_err(runtime)?;
    let config_out = dir.join("config.toml");
    write_file(&config_out, toml::to_string(&cfg).map_err(runtime)?.as_bytes())?;

    let mut outputs = vec![metrics, steps, model.clone(), config_out];
    outputs.extend(outcome.checkpoints.iter().cloned());
    if ckpt.join("best.sklg").exists() {
        outputs.push(ckpt.join("best.sklg"));
    }
    run.manifest(&dir, "train", Some(&cfg), &[&path], &outputs)?;
    run.say(format!("wrote {}", model.display()));
    Ok(())
}

fn cmd_generate(run: &mut Run, args: &GenerateArgs) -> Result<(), CliError> {
    let cfg = match run.config(false)? {
        Some(c) => Some(c.finalize(run.cli.seed)?),
        None => None,
    };
    config::require_file(&args.checkpoint, "checkpoint")?;
    let path = pick_path(&args.corpus, cfg.as_ref().map(|c| &c.corpus.eval), "corpus (--corpus)")?;
    let gen_cfg = cfg.as_ref().map(|c| c.generate.clone()).unwrap_or_default();
    let max_len = args.max_len.unwrap_or(gen_cfg.max_len);
    let temperature = args.temperature.or(gen_cfg.temperature);
    if max_len == 0 {
        return Err(CliError::Validation("--max-len must be positive".into()));
    }
    if args.batch_size == 0 {
        return Err(CliError::Validation("--batch-size must be positive".into()));
    }
    let mode = match temperature {
        Some(t) if !(t.is_finite() && t > 0.0) => {
            return Err(CliError::Validation(format!("temperature must be positive, got {t}")))
        }
        Some(temperature) => DecodeMode::Sample {
            temperature,
            seed: run.cli.seed.or(cfg.as_ref().map(RunConfig::seed)).unwrap_or(0),
        },
        None => DecodeMode::Greedy,
    };
    let policy = args
        .dii_policy
        .or(cfg.as_ref().map(|c| c.train.dii_policy))
        .unwrap_or_default();
    let lex = run.lexicons(cfg.as_ref().and_then(|c| c.corpus.lexicons.as_deref()))?;
    let bundle = ModelBundle::load(&args.checkpoint).map_err(runtime)?;
    let stories = run.corpus(&path, None)?;
    let model_cfg = bundle.model.config();
    if let Some(s) = stories.first() {
        if s.feature_dim() != model_cfg.image_dim {
            return Err(CliError::Runtime(format!(
                "corpus image features have dimension {} but the checkpoint expects {}",
                s.feature_dim(),
                model_cfg.image_dim
            )));
        }
    }
    let encoded = encode_corpus(
        &stories,
        &lex,
        &bundle.vocab,
        &bundle.skeleton_vocab,
        effective_repr(model_cfg),
        policy,
        model_cfg.max_dii_len,
    )
    .map_err(runtime)?;
    let options = GenerateOptions { max_len, mode };
    let dir = run.out_dir()?;
    let glocal = bundle.model.variant() == Variant::Glocal;
    let att_dir = dir.join("attention");
    if glocal {
        std::fs::create_dir_all(&att_dir).map_err(runtime)?;
    }
    let mut lines = Vec::with_capacity(stories.len());
    let mut outputs = Vec::new();
    for batch in make_batches(&encoded, args.batch_size, None) {
        let generated = bundle
            .model
            .generate_batch(&batch, &bundle.vocab, &bundle.skeleton_vocab, &options)
            .map_err(runtime)?;
        for g in generated {
            if let Some(maps) = &g.attention {
                let (s, w) = export_attention(maps, &att_dir, &file_stem(&g.id)).map_err(runtime)?;
                outputs.extend([s, w]);
            }
            lines.push(GeneratedLine {
                sentences: g.sentence_texts(),
                id: g.id,
            });
        }
    }
    let out = dir.join("generated.jsonl");
    write_file(&out, json_lines(&lines)?.as_bytes())?;
    outputs.push(out.clone());
    run.manifest(&dir, "generate", cfg.as_ref(), &[&args.checkpoint, &path], &outputs)?;
    run.say(format!("wrote {} stories to {}", lines.len(), out.display()));
    Ok(())
}

fn read_generated(path: &Path) -> Result<Vec<GeneratedLine>, CliError> {
    config::require_file(path, "generated file")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Runtime(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn cmd_eval(run: &mut Run, args: &EvalArgs) -> Result<(), CliError> {
    let cfg = run.config(false)?;
    let ref_path = pick_path(&args.references, cfg.as_ref().map(|c| &c.corpus.eval), "references (--references)")?;
    let lex_dir = args.lexicons.clone().or(cfg.as_ref().and_then(|c| c.corpus.lexicons.clone()));
    let lex = run.lexicons(lex_dir.as_deref())?;
    let generated = read_generated(&args.generated)?;
    let references = run.corpus(&ref_path, None)?;

    let by_id: BTreeMap<&str, &Story> = references.iter().map(|s| (s.id.as_str(), s)).collect();
    let missing: Vec<&str> = generated
        .iter()
        .map(|g| g.id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() {
        return Err(CliError::Runtime(format!("no reference for story ids: {}", missing.join(", "))));
    }
    let refs: Vec<Vec<String>> = generated
        .iter()
        .map(|g| by_id[g.id.as_str()].sis_texts().iter().map(|s| s.to_string()).collect())
        .collect();
    let gens: Vec<Vec<String>> = generated.iter().map(|g| g.sentences.clone()).collect();

    #[derive(Serialize)]
    struct Row<'a> {
        id: &'a str,
        #[serde(flatten)]
        score: crate::eval::StoryScore,
    }
    let mut scores = Vec::with_capacity(gens.len());
    let mut rows = Vec::with_capacity(gens.len());
    for ((g, r), line) in gens.iter().zip(&refs).zip(&generated) {
        let score = score_story(r, g, &lex).map_err(|e| CliError::Runtime(format!("{}: {e}", line.id)))?;
        scores.push(score.clone());
        rows.push(Row { id: &line.id, score });
    }
    let report = report_from_scores(&scores, &refs, &gens, &lex);
    let dir = run.out_dir()?;
    let json = dir.join("report.json");
    write_file(&json, format!("{}\n", serde_json::to_string_pretty(&report).map_err(runtime)?).as_bytes())?;
    let table = dir.join("report.txt");
    write_file(&table, format!("{report}\n").as_bytes())?;
    let per_story = dir.join("per_story.jsonl");
    write_file(&per_story, json_lines(&rows)?.as_bytes())?;
    run.manifest(&dir, "eval", cfg.as_ref(), &[&args.generated, &ref_path], &[json, table, per_story])?;
    run.say(report.to_string());
    Ok(())
}

fn parse_fault(spec: &str) -> Result<FaultInjection, CliError> {
    let (op, factor) = spec
        .split_once(':')
        .ok_or_else(|| CliError::Validation(format!("fault {spec:?} is not op:factor")))?;
    let op = OpKind::parse(op).ok_or_else(|| CliError::Validation(format!("unknown op {op:?}")))?;
    let factor = factor
        .parse()
        .map_err(|_| CliError::Validation(format!("bad fault factor {factor:?}")))?;
    Ok(FaultInjection { op, factor })
}

fn cmd_gradcheck(run: &mut Run, args: &GradcheckArgs) -> Result<(), CliError> {
    let cfg = run.config(true)?.expect("required").finalize(run.cli.seed)?;
    let fault = args.inject_fault.as_deref().map(parse_fault).transpose()?;
    let stories = toy_corpus(cfg.model.image_dim, cfg.seed());
    let data = prepare_data(&stories, &Lexicons::bundled(), &cfg.model, &cfg.train).map_err(runtime)?;
    let model = crate::models::StoryModel::new(cfg.model.clone(), data.dims).map_err(runtime)?;
    let batch = Batch::from_stories(&data.encoded.iter().collect::<Vec<_>>());
    let gc = GradCheckConfig {
        max_entries: args.max_entries,
        seed: cfg.seed(),
        fault,
        ..GradCheckConfig::default()
    };
    let report = model.grad_check(&batch, &gc).map_err(runtime)?;
    run.say(format!("{:<40} {:>8} {:>12}", "parameter", "entries", "max_rel_err"));
    for p in &report.params {
        let flag = if p.max_rel_error < args.tolerance { "ok" } else { "FAIL" };
        run.say(format!("{:<40} {:>8} {:>12.3e} {flag}", p.name, p.entries_checked, p.max_rel_error));
    }
    if let Some(dir) = &run.cli.out_dir {
        std::fs::create_dir_all(dir).map_err(runtime)?;
        let out = dir.join("gradcheck.json");
        write_file(&out, format!("{}\n", serde_json::to_string_pretty(&report).map_err(runtime)?).as_bytes())?;
        run.manifest(dir, "gradcheck", Some(&cfg), &[], &[out])?;
    }
    let failed: Vec<&str> = report.failures(args.tolerance).map(|p| p.name.as_str()).collect();
    if failed.is_empty() {
        run.say(format!("gradcheck passed: {} {} tensors, max relative error {:.3e}", cfg.model.variant, report.params.len(), report.max_error()));
        Ok(())
    } else {
        Err(CliError::Runtime(format!(
            "gradcheck failed for {} of {} tensors: {}",
            failed.len(),
            report.params.len(),
            failed.join(", ")
        )))
    }
}

fn cmd_stats(run: &mut Run, args: &StatsArgs) -> Result<(), CliError> {
    let cfg = run.config(false)?;
    let path = pick_path(&args.corpus, cfg.as_ref().map(|c| &c.corpus.train), "corpus (--corpus)")?;
    let stories = run.corpus(&path, None)?;
    let s = corpus_stats(&stories);
    run.say(format!("# Stories          {}", s.stories));
    run.say(format!("# Images           {}", s.images));
    run.say(format!("# with no DII      {}", s.steps_without_dii));
    run.say(format!("SIS tokens         {}", s.sis_tokens));
    run.say(format!("SIS types          {}", s.sis_types));
    run.say(format!("with gold chains   {}", s.stories_with_gold_chains));
    if let Some(dir) = run.cli.out_dir.clone() {
        std::fs::create_dir_all(&dir).map_err(runtime)?;
        let out = dir.join("stats.json");
        write_file(&out, format!("{}\n", serde_json::to_string_pretty(&s).map_err(runtime)?).as_bytes())?;
        run.manifest(&dir, "stats", cfg.as_ref(), &[&path], &[out])?;
    }
    Ok(())
}

/// Runs a parsed command, returning what it prints on success.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let mut run = Run { cli, out: Vec::new() };
    match &cli.command {
        Command::Extract(a) => cmd_extract(&mut run, a)?,
        Command::Train(a) => cmd_train(&mut run, a)?,
        Command::Generate(a) => cmd_generate(&mut run, a)?,
        Command::Eval(a) => cmd_eval(&mut run, a)?,
        Command::Gradcheck(a) => cmd_gradcheck(&mut run, a)?,
        Command::Stats(a) => cmd_stats(&mut run, a)?,
    }
    Ok(String::from_utf8(run.out).expect("utf-8 output"))
}

/// Parses `args`, runs the command and returns the process exit code:
/// 0 on success, 1 on usage or validation errors, 2 on runtime errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(out) => {
            let _ = std::io::stdout().write_all(out.as_bytes());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
