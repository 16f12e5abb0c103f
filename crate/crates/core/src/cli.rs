//! The `ficg` command line.
//!
//! Every command is deterministic in its flags: all randomness comes from
//! `--seed`. Where a command takes `--config`, keys present in the config
//! file override the corresponding flags, and flags override built-in
//! defaults. Logging goes to stderr, filtered by `FICG_LOG`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use tracing_subscriber::EnvFilter;

use crate::data::{load_dataset, save_dataset, Dataset};
use crate::encoder::EncoderOptions;
use crate::gradcheck::{check_gradients, random_instance, DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::graph::{build, export_dot, topology_counts, Modality};
use crate::metrics::evaluate_parallel;
use crate::model::{load_params, save_params, AblationMode};
use crate::synth::{generate_synthetic, SynthConfig};
use crate::train::{run_ablation_suite, train_with, AblationRun, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "ficg", version, about = "Dialogue interaction graphs for prosody prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum GraphKind {
    Sig,
    Pig,
}

impl From<GraphKind> for Modality {
    fn from(g: GraphKind) -> Self {
        match g {
            GraphKind::Sig => Modality::Semantic,
            GraphKind::Pig => Modality::Prosody,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Split {
    All,
    Train,
    Val,
    Test,
}

#[derive(Debug, clap::Args)]
pub struct GraphArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub dialogue: String,
    #[arg(long, value_enum, default_value = "sig")]
    pub modality: GraphKind,
}

#[derive(Debug, clap::Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub d_hidden: Option<usize>,
    #[arg(long)]
    pub max_history: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, c: &mut TrainConfig) {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.learning_rate {
            c.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.d_model {
            c.d_model = v;
        }
        if let Some(v) = self.d_hidden {
            c.d_hidden = v;
        }
        if self.max_history.is_some() {
            c.max_history = self.max_history;
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dialogues: Option<usize>,
        #[arg(long)]
        turns: Option<usize>,
        #[arg(long)]
        words: Option<usize>,
        #[arg(long)]
        keyword_coefficient: Option<f64>,
        #[arg(long)]
        chain_coefficient: Option<f64>,
        #[arg(long)]
        noise_stddev: Option<f64>,
    },
    /// Print topology counts of one dialogue's graph.
    BuildGraph {
        #[command(flatten)]
        graph: GraphArgs,
    },
    /// Print topology counts and write the graph as DOT.
    ExportDot {
        #[command(flatten)]
        graph: GraphArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on the 8:1:1 train split, selecting on the val split.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Epoch log, one JSON object per line. Defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        mode: Option<AblationMode>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "full")]
        mode: AblationMode,
        #[arg(long, value_enum, default_value = "all")]
        split: Split,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Train all four ablation modes over several seeds.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Seeds used are `seed, seed + 1, …`.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Finite-difference check on one random instance.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Model width.
        #[arg(long, default_value_t = 8)]
        dims: usize,
        #[arg(long, default_value = "full")]
        mode: AblationMode,
    },
}

/// A failure reported with exit status 1.
#[derive(Debug)]
pub struct Failure(pub String);

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status: 0 on success, 1 on a validation or runtime failure,
/// 2 on a usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("FICG_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .try_init();
    match execute(cli.command) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

/// Runs one command and returns its stdout text.
pub fn execute(command: Command) -> Result<String, Failure> {
    match command {
        Command::GenData {
            config,
            out,
            seed,
            dialogues,
            turns,
            words,
            keyword_coefficient,
            chain_coefficient,
            noise_stddev,
        } => {
            let mut c = SynthConfig::default();
            c.seed = seed.unwrap_or(c.seed);
            c.n_dialogues = dialogues.unwrap_or(c.n_dialogues);
            c.turns_per_dialogue = turns.unwrap_or(c.turns_per_dialogue);
            c.words_per_utterance = words.unwrap_or(c.words_per_utterance);
            c.keyword_coefficient = keyword_coefficient.unwrap_or(c.keyword_coefficient);
            c.chain_coefficient = chain_coefficient.unwrap_or(c.chain_coefficient);
            c.noise_stddev = noise_stddev.unwrap_or(c.noise_stddev);
            let c = overlay(c, config.as_deref())?;
            c.validate().map_err(|m| Failure(format!("invalid synthetic config: {m}")))?;
            let data = generate_synthetic(&c);
            save_dataset(&data, &out)?;
            Ok(format!(
                "wrote {} dialogues to {}\n",
                data.len(),
                out.display()
            ))
        }
        Command::BuildGraph { graph } => graph_summary(&graph).map(|(text, _)| text),
        Command::ExportDot { graph, out } => {
            let (text, dot) = graph_summary(&graph)?;
            write_file(&out, &dot)?;
            Ok(text)
        }
        Command::Train {
            data,
            config,
            out,
            log,
            mode,
            flags,
        } => {
            let mut c = TrainConfig::default();
            flags.apply(&mut c);
            if let Some(m) = mode {
                c.ablation = m;
            }
            let c = overlay(c, config.as_deref())?;
            let dataset = load_dataset(&data)?;
            let run = AblationRun::from_dataset(c.seed, &dataset);
            let mut lines = String::new();
            let outcome = train_with(&c, &run.train, &run.val, |e| {
                lines.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
                lines.push('\n');
            })?;
            let log = log.unwrap_or_else(|| sibling(&out, "log.jsonl"));
            save_params(&outcome.params, &out)?;
            write_file(&log, &lines)?;
            let best = &outcome.history[outcome.best_epoch - 1];
            Ok(format!(
                "mode={} best_epoch={} val_loss={:.6}\n",
                c.ablation, outcome.best_epoch, best.val_loss
            ))
        }
        Command::Eval {
            data,
            model,
            mode,
            split,
            jobs,
        } => {
            let dataset = load_dataset(&data)?;
            let params = load_params(&model)?;
            let part = select(&dataset, split);
            let samples = part.samples(None);
            let report = evaluate_parallel(&params, mode, &samples, jobs)?;
            Ok(format!("{report}\n"))
        }
        Command::Ablate {
            data,
            config,
            out,
            seeds,
            flags,
        } => {
            let mut c = TrainConfig::default();
            flags.apply(&mut c);
            let c = overlay(c, config.as_deref())?;
            if seeds == 0 {
                return Err(Failure("--seeds must be at least 1".into()));
            }
            let dataset = load_dataset(&data)?;
            let runs: Vec<AblationRun> = (c.seed..c.seed + seeds)
                .map(|s| AblationRun::from_dataset(s, &dataset))
                .collect();
            let table = run_ablation_suite(&c, &runs)?;
            let text = table.to_string();
            write_file(&out, &text)?;
            Ok(text)
        }
        Command::GradCheck { seed, dims, mode } => {
            if dims == 0 {
                return Err(Failure("--dims must be at least 1".into()));
            }
            let inst = random_instance(seed, dims, 3, 3, EncoderOptions::default());
            let r = check_gradients(&inst.sample(), &inst.params, mode, DEFAULT_STEP)?;
            let text = format!(
                "checked={} max_rel_error={:.3e} worst={}[{}]\n",
                r.n_checked, r.max_rel_error, r.worst_tensor, r.worst_index
            );
            if r.passes(DEFAULT_TOLERANCE) {
                Ok(text)
            } else {
                print!("{text}");
                Err(Failure(format!(
                    "max relative error {:.3e} is not below {DEFAULT_TOLERANCE:e}",
                    r.max_rel_error
                )))
            }
        }
    }
}

/// Applies the keys present in a JSON config file on top of `base`.
fn overlay<C: Serialize + DeserializeOwned>(base: C, path: Option<&Path>) -> Result<C, Failure> {
    let Some(path) = path else {
        return Ok(base);
    };
    let text = fs::read_to_string(path).map_err(|e| Failure(format!("cannot read {}: {e}", path.display())))?;
    let file: Value =
        serde_json::from_str(&text).map_err(|e| Failure(format!("{}: {e}", path.display())))?;
    let Value::Object(file) = file else {
        return Err(Failure(format!("{}: config must be a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    if let Value::Object(m) = &mut merged {
        m.extend(file);
    }
    serde_json::from_value(merged).map_err(|e| Failure(format!("{}: {e}", path.display())))
}

fn graph_summary(args: &GraphArgs) -> Result<(String, String), Failure> {
    let dataset = load_dataset(&args.data)?;
    let record = dataset
        .get(&args.dialogue)
        .ok_or_else(|| Failure(format!("no dialogue with id {:?}", args.dialogue)))?;
    let n = record.utterances.len();
    if n < 2 {
        return Err(Failure(format!("dialogue {:?} has no history to graph", args.dialogue)));
    }
    let graph = build(&record.utterances[..n - 1], args.modality.into())?;
    let counts = topology_counts(&graph);
    let mut text = format!("nodes={} edges={}\n", counts.nodes, counts.edges);
    for (kind, count) in &counts.per_node_kind {
        writeln!(text, "node {kind:?}={count}").unwrap();
    }
    for (kind, count) in &counts.per_edge_kind {
        writeln!(text, "edge {kind:?}={count}").unwrap();
    }
    for (deg, count) in &counts.in_degree_histogram {
        writeln!(text, "in_degree {deg}={count}").unwrap();
    }
    Ok((text, export_dot(&graph)))
}

fn select(dataset: &Dataset, split: Split) -> Dataset {
    let index = match split {
        Split::All => return dataset.clone(),
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    };
    dataset.split(&[8, 1, 1]).swap_remove(index)
}

fn sibling(path: &Path, extension: &str) -> PathBuf {
    let mut name = path.file_stem().unwrap_or_default().to_os_string();
    name.push(".");
    name.push(extension);
    path.with_file_name(name)
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure(format!("cannot write {}: {e}", path.display())))
}
