// SPDX-License-Identifier: Apache-2.0

//! Command-line front end. Data goes to stdout, diagnostics to stderr, and
//! every invocation leaves one manifest in the cache directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::config::RunConfig;
use crate::corpus::{self, dedup_by_video, filter_verifiable, Corpus, CorpusSplit, IngestOptions, VideoPost};
use crate::error::{Error, Result};
use crate::manifest::{cache_dir, RunManifest};
use crate::model::Detector;
use crate::synthesis::{self, demo, stubs, Toolkit};
use crate::train_eval::{self, AblationTable, EpochStats, SplitData};

/// Exit status for malformed command lines.
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "postcheck", version, about = "Cross-modal consistency checking for short video posts")]
pub struct Cli {
    /// TOML settings layered over the built-in defaults; flags win over both.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Repeat for more log output on stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate and normalize a corpus file.
    Ingest(IngestArgs),
    /// Stratified 80/10/10 split of a corpus.
    Split(SplitArgs),
    /// Add generated inconsistent records to a pristine corpus.
    Synthesize(SynthesizeArgs),
    /// Train a detector and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on a corpus or one of its split subsets.
    Evaluate(EvaluateArgs),
    /// Print the verdict and explanation for one record.
    Explain(ExplainArgs),
    /// Run an ablation protocol and write its table.
    Ablate(AblateArgs),
    /// Write a synthetic pristine (or balanced) demo corpus.
    GenerateDemo(DemoArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub drop_unverified: bool,
    /// Keep one record per video link.
    #[arg(long)]
    pub dedup_video: bool,
    /// Keep only records whose claim carries an event trigger.
    #[arg(long)]
    pub filter_verifiable: bool,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Relative weights for fake_claim, fake_speech, and fake_video.
    #[arg(long, value_delimiter = ',')]
    pub mix: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss and accuracy as a TSV table.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
}

impl Subset {
    fn name(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Val => "val",
            Subset::Test => "test",
        }
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Restrict to a subset of this split; the whole corpus otherwise.
    #[arg(long)]
    pub split: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub post_id: String,
    /// Print the verdict as JSON instead of key/value lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AblationKind {
    Frames,
    Modules,
    Pairs,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub kind: AblationKind,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// TSV table destination.
    #[arg(long)]
    pub out: PathBuf,
    /// Frame budgets for the frame sweep.
    #[arg(long, value_delimiter = ',')]
    pub frames: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also synthesize an equal number of fakes.
    #[arg(long)]
    pub balanced: bool,
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let (c, report) = Corpus::ingest(path, IngestOptions::default())?;
    for r in &report.rejections {
        log::warn!("{}: line {} rejected: {}", path.display(), r.line, r.reason);
    }
    Ok(c)
}

fn subset_records(corpus: &Corpus, split: &CorpusSplit, which: Subset) -> Result<Vec<VideoPost>> {
    let ids = match which {
        Subset::Train => &split.train,
        Subset::Val => &split.val,
        Subset::Test => &split.test,
    };
    Ok(corpus.subset(ids)?.into_iter().cloned().collect())
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn json_line<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v)?;
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

/// Per-epoch curve as TSV.
pub fn curve_tsv(curve: &[EpochStats]) -> String {
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.6}"));
    let mut s = String::from("epoch\ttrain_loss\ttrain_accuracy\tval_loss\tval_accuracy\n");
    for e in curve {
        s.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}\n",
            e.epoch,
            e.train_loss,
            e.train_accuracy,
            opt(e.val_loss),
            opt(e.val_accuracy)
        ));
    }
    s
}

struct Run<'a> {
    cfg: RunConfig,
    manifest: &'a mut RunManifest,
    out: &'a mut dyn Write,
}

impl Run<'_> {
    fn ingest(&mut self, a: &IngestArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.input]);
        let (mut c, report) = Corpus::ingest(&a.input, IngestOptions { drop_unverified: a.drop_unverified })?;
        for r in &report.rejections {
            log::warn!("line {} rejected: {}", r.line, r.reason);
        }
        let before = c.len();
        if a.dedup_video {
            c = dedup_by_video(&c);
        }
        let deduplicated = before - c.len();
        let mut filtered = None;
        if a.filter_verifiable {
            let tagger = self.cfg.encoding.tagger.build()?;
            let (kept, f) = filter_verifiable(&c, tagger.as_ref());
            c = kept;
            filtered = Some(f);
        }
        c.save(&a.out)?;
        self.manifest.add_outputs(&[&a.out]);
        #[derive(Serialize)]
        struct Summary<'r> {
            records: usize,
            deduplicated: usize,
            rejections: &'r [corpus::Rejection],
            dropped_unverified: &'r [String],
            #[serde(skip_serializing_if = "Option::is_none")]
            verifiable_filter: Option<corpus::FilterReport>,
        }
        json_line(
            self.out,
            &Summary {
                records: c.len(),
                deduplicated,
                rejections: &report.rejections,
                dropped_unverified: &report.dropped_unverified,
                verifiable_filter: filtered,
            },
        )
    }

    fn split(&mut self, a: &SplitArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.corpus]);
        let c = load_corpus(&a.corpus)?;
        let s = corpus::split(&c, a.seed)?;
        s.save(&a.out)?;
        self.manifest.add_outputs(&[&a.out]);
        let (train, val, test) = s.sizes();
        json_line(self.out, &serde_json::json!({ "train": train, "val": val, "test": test }))
    }

    fn synthesize(&mut self, a: &SynthesizeArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.corpus]);
        let c = load_corpus(&a.corpus)?;
        let mut cfg = self.cfg.synthesis.clone();
        cfg.seed = a.seed;
        if let Some(m) = &a.mix {
            let [c, s, v] = m[..] else {
                return Err(Error::InvalidArgument(format!("--mix takes three weights, got {}", m.len())));
            };
            cfg.mix = [c, s, v];
            cfg.validate()?;
        }
        let tk = Toolkit::stub_with_tagger(a.seed, Arc::new(stubs::pool_tagger()));
        let (out, report) = synthesis::build_balanced_dataset(&c, &tk, &cfg)?;
        out.save(&a.out)?;
        write_file(&a.report, &report.to_jsonl())?;
        self.manifest.add_outputs(&[&a.out, &a.report]);
        json_line(self.out, &report.summary)
    }

    fn train(&mut self, a: &TrainArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.corpus, &a.split]);
        let c = load_corpus(&a.corpus)?;
        let split = CorpusSplit::load(&a.split)?;
        let mut model = self.cfg.model_for(c.patches_per_frame(), c.frame_dim());
        model.seed = a.seed;
        let mut tc = self.cfg.train.clone();
        tc.seed = a.seed;
        tc.epochs = a.epochs.unwrap_or(tc.epochs);
        tc.learning_rate = a.learning_rate.unwrap_or(tc.learning_rate);
        tc.batch_size = a.batch_size.unwrap_or(tc.batch_size);
        tc.max_frames = a.max_frames.unwrap_or(tc.max_frames);
        let train = subset_records(&c, &split, Subset::Train)?;
        let val = subset_records(&c, &split, Subset::Val)?;
        let outcome = train_eval::train(&train, &val, &model, &self.cfg.encoding, &tc)?;
        outcome.detector.save(&a.out)?;
        self.manifest.add_outputs(&[&a.out]);
        if let Some(p) = &a.curve {
            write_file(p, &curve_tsv(&outcome.curve))?;
            self.manifest.add_outputs(&[p]);
        }
        let last = outcome.curve.last();
        json_line(
            self.out,
            &serde_json::json!({
                "epochs_run": outcome.curve.len(),
                "best_epoch": outcome.best_epoch,
                "final_train_loss": last.map(|e| e.train_loss),
                "final_train_accuracy": last.map(|e| e.train_accuracy),
                "best_val_accuracy": outcome.curve.iter().filter_map(|e| e.val_accuracy).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))),
            }),
        )
    }

    fn evaluate(&mut self, a: &EvaluateArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.checkpoint, &a.corpus]);
        let det = Detector::load(&a.checkpoint)?;
        let c = load_corpus(&a.corpus)?;
        let posts = match &a.split {
            Some(p) => {
                self.manifest.add_inputs(&[p]);
                subset_records(&c, &CorpusSplit::load(p)?, a.subset)?
            }
            None => c.records().to_vec(),
        };
        let r = train_eval::evaluate(&det, &posts)?;
        if let Some(p) = &a.out {
            write_file(p, &(serde_json::to_string_pretty(&r)? + "\n"))?;
            self.manifest.add_outputs(&[p]);
        }
        log::info!(
            "{} records ({}): accuracy {:.4}, f1 {:.4}",
            r.total,
            a.split.as_ref().map_or("all", |_| a.subset.name()),
            r.accuracy,
            r.f1
        );
        json_line(self.out, &r)
    }

    fn explain(&mut self, a: &ExplainArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.checkpoint, &a.corpus]);
        let det = Detector::load(&a.checkpoint)?;
        let c = load_corpus(&a.corpus)?;
        let post = c
            .get(&a.post_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no record with post_id {:?}", a.post_id)))?;
        let v = det.forward(post)?;
        if a.json {
            return json_line(self.out, &v);
        }
        let label = if v.predicted_label.is_inconsistent() { "inconsistent" } else { "consistent" };
        let body = format!(
            "post_id\t{}\nlabel\t{}\np_inconsistent\t{:.6}\nc_vs\t{:.6}\nc_vc\t{:.6}\nc_cs\t{:.6}\nexplanation\t{}\n",
            post.post_id, label, v.p_inconsistent, v.scores.c_vs, v.scores.c_vc, v.scores.c_cs, v.explanation
        );
        self.out.write_all(body.as_bytes()).map_err(|e| Error::io("<stdout>", e))
    }

    fn ablate(&mut self, a: &AblateArgs) -> Result<()> {
        self.manifest.add_inputs(&[&a.corpus, &a.split]);
        let c = load_corpus(&a.corpus)?;
        let split = CorpusSplit::load(&a.split)?;
        let (train, val, test) = (
            subset_records(&c, &split, Subset::Train)?,
            subset_records(&c, &split, Subset::Val)?,
            subset_records(&c, &split, Subset::Test)?,
        );
        let data = SplitData { train: &train, val: &val, test: &test };
        let mut model = self.cfg.model_for(c.patches_per_frame(), c.frame_dim());
        model.seed = a.seed;
        let mut tc = self.cfg.train.clone();
        tc.seed = a.seed;
        tc.epochs = a.epochs.unwrap_or(tc.epochs);
        let enc = &self.cfg.encoding;
        let table: AblationTable = match a.kind {
            AblationKind::Frames => {
                let counts = a.frames.clone().unwrap_or_else(|| self.cfg.frame_counts.clone());
                train_eval::ablate_frames(data, &model, enc, &tc, &counts)?
            }
            AblationKind::Modules => train_eval::ablate_modules(data, &model, enc, &tc)?,
            AblationKind::Pairs => train_eval::ablate_modality_pairs(data, &model, enc, &tc)?,
        };
        let tsv = table.to_tsv();
        write_file(&a.out, &tsv)?;
        self.manifest.add_outputs(&[&a.out]);
        self.out.write_all(tsv.as_bytes()).map_err(|e| Error::io("<stdout>", e))
    }

    fn demo(&mut self, a: &DemoArgs) -> Result<()> {
        let c = if a.balanced {
            demo::balanced(a.n, a.seed, self.cfg.demo)?.0
        } else {
            demo::generate(a.n, a.seed, self.cfg.demo)?
        };
        c.save(&a.out)?;
        self.manifest.add_outputs(&[&a.out]);
        json_line(self.out, &serde_json::json!({ "records": c.len() }))
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Split(_) => "split",
            Command::Synthesize(_) => "synthesize",
            Command::Train(_) => "train",
            Command::Evaluate(_) => "evaluate",
            Command::Explain(_) => "explain",
            Command::Ablate(_) => "ablate",
            Command::GenerateDemo(_) => "generate-demo",
        }
    }

    pub fn seed(&self) -> Option<u64> {
        match self {
            Command::Split(a) => Some(a.seed),
            Command::Synthesize(a) => Some(a.seed),
            Command::Train(a) => Some(a.seed),
            Command::Ablate(a) => Some(a.seed),
            Command::GenerateDemo(a) => Some(a.seed),
            _ => None,
        }
    }
}

/// Runs one parsed command, writing data to `out`. Returns the exit code;
/// errors are reported on stderr.
pub fn execute(cli: &Cli, args: Vec<String>, out: &mut dyn Write) -> i32 {
    let loaded = RunConfig::load(cli.config.as_deref()).and_then(|c| c.validate().map(|_| c));
    let hash = loaded.as_ref().map(RunConfig::hash).unwrap_or_default();
    let mut manifest = RunManifest::new(cli.command.name(), args, hash, cli.command.seed());
    if let Some(p) = &cli.config {
        manifest.add_inputs(&[p]);
    }
    let result = loaded.and_then(|cfg| {
        let mut run = Run { cfg, manifest: &mut manifest, out };
        match &cli.command {
            Command::Ingest(a) => run.ingest(a),
            Command::Split(a) => run.split(a),
            Command::Synthesize(a) => run.synthesize(a),
            Command::Train(a) => run.train(a),
            Command::Evaluate(a) => run.evaluate(a),
            Command::Explain(a) => run.explain(a),
            Command::Ablate(a) => run.ablate(a),
            Command::GenerateDemo(a) => run.demo(a),
        }
    });
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    };
    match manifest.write(&cache_dir(), code) {
        Ok(p) => log::info!("manifest written to {}", p.display()),
        Err(e) => eprintln!("warning: could not write manifest: {e}"),
    }
    code
}

/// Parses `argv` (including the program name) and runs it.
pub fn main_with_args(argv: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    execute(&cli, argv.into_iter().skip(1).collect(), &mut lock)
}
