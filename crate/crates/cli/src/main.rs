//! `mjae`: ingest, pretrain, sample, eval, probe and selftest.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use mjae_core::evalsuite::{self, GenerationMetrics, ProbeReport};
use mjae_core::molgraph::{self, MoleculeGraph};
use mjae_core::training::{self, EpochStats, TrainError};
use mjae_core::{sampling, selftest, toy, Config};

#[derive(Parser, Debug)]
#[command(name = "mjae", version, about = "Joint 2D/3D molecular trajectory auto-encoding")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true, env = "MJAE_CONFIG")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable), e.g. `--set training.epochs=10`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Data-parallel width; 0 = all cores, 1 = bitwise reference mode.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate and zero-centre a JSONL molecule file.
    Ingest { input: PathBuf, output: PathBuf },
    /// Train the score network on an ingested dataset.
    Pretrain(PretrainArgs),
    /// Generate molecules from a checkpoint.
    Sample(SampleArgs),
    /// Generation metrics against a reference set, or the linear probe with `--probe`.
    Eval(EvalArgs),
    /// Linear probe: pretrained versus random-init encoder.
    Probe(ProbeArgs),
    /// Decomposition, gradient, symmetry and schedule checks.
    Selftest {
        #[arg(long, default_value = "selftest.json")]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch loss log (JSONL); default `<out>.loss.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Contrastive weight; 0 is the reconstruction-only ablation.
    #[arg(long)]
    lambda2: Option<f64>,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(short, long)]
    n: Option<usize>,
    #[arg(long)]
    atoms: Option<usize>,
    /// 1 = reverse SDE, 0 = probability-flow ODE.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "samples.jsonl")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Generated molecules (JSONL).
    #[arg(long, conflicts_with = "probe")]
    samples: Option<PathBuf>,
    /// Generate from this checkpoint instead of reading samples; required with `--probe`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Reference set (JSONL); default is the built-in toy corpus.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    probe: bool,
    #[command(flatten)]
    probe_opts: ProbeOpts,
    #[arg(long, default_value = "eval.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProbeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    probe_opts: ProbeOpts,
    #[arg(long, default_value = "probe.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProbeOpts {
    /// Probe molecules (JSONL), labelled by radius of gyration; default is the toy probe set.
    #[arg(long)]
    probe_set: Option<PathBuf>,
    /// Number of probe split seeds.
    #[arg(long, default_value_t = 5)]
    probe_seeds: u64,
}

/// Bad invocation: exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Serialize)]
struct FileHash {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Build {
    version: &'static str,
    git: &'static str,
}

/// Everything needed to re-derive a completed run.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    config: BTreeMap<String, String>,
    seed: u64,
    build: Build,
    inputs: Vec<FileHash>,
    outputs: Vec<String>,
    started_unix: u64,
    wall_time_s: f64,
}

struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Write to a sibling temporary file, then rename over `path`.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| anyhow!("{} is not a file path", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn load_config(g: &Global) -> anyhow::Result<Config> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            Config::parse(&text).map_err(|e| usage(format!("config {}: {e}", p.display())))?
        }
        None => Config::default(),
    };
    for kv in &g.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim()).map_err(|e| usage(e.to_string()))?;
    }
    if let Some(s) = g.seed {
        cfg.training.seed = s;
        cfg.sampling.seed = s;
    }
    if let Some(t) = g.threads {
        cfg.training.threads = t;
        cfg.sampling.threads = t;
    }
    Ok(cfg)
}

fn validate(cfg: &Config) -> anyhow::Result<()> {
    cfg.validate().map_err(|e| usage(e.to_string()))
}

fn read_molecules(path: &Path, what: &str) -> anyhow::Result<Vec<MoleculeGraph>> {
    if !path.is_file() {
        return Err(usage(format!("{what} {} does not exist", path.display())));
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let (graphs, bad) = molgraph::parse_jsonl(&text);
    if let Some((line, e)) = bad.first() {
        bail!("{}:{line}: {e} ({} invalid records; run `mjae ingest` first)", path.display(), bad.len());
    }
    if graphs.is_empty() {
        bail!("{}: no records", path.display());
    }
    Ok(graphs)
}

fn cmd_ingest(input: &Path, output: &Path) -> anyhow::Result<Run> {
    if !input.is_file() {
        return Err(usage(format!("input {} does not exist", input.display())));
    }
    let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let (graphs, bad) = molgraph::parse_jsonl(&text);
    for (line, e) in &bad {
        eprintln!("{}:{line}: {e}", input.display());
    }
    if graphs.is_empty() && bad.is_empty() {
        bail!("{}: no records", input.display());
    }
    if graphs.is_empty() {
        bail!("{}: all {} records are invalid", input.display(), bad.len());
    }
    write_atomic(output, molgraph::to_jsonl(&graphs).as_bytes())?;
    println!("ingested {} molecules, rejected {}", graphs.len(), bad.len());
    Ok(Run { inputs: vec![input.into()], outputs: vec![output.into()] })
}

fn cmd_pretrain(a: &PretrainArgs, cfg: &mut Config) -> anyhow::Result<Run> {
    if let Some(e) = a.epochs {
        cfg.training.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.training.lr = lr;
    }
    if let Some(l2) = a.lambda2 {
        cfg.loss.lambda2 = l2;
    }
    validate(cfg)?;
    let data = read_molecules(&a.data, "dataset")?;
    let log_path = a.log.clone().unwrap_or_else(|| with_suffix(&a.out, ".loss.jsonl"));
    let net = training::build_network(cfg)?;
    let interval = cfg.training.checkpoint_interval;
    let mut log = String::new();
    let out = training::train_from(net, None, &data, cfg, |s: &EpochStats, net, adam| {
        log.push_str(&serde_json::to_string(s).expect("stats serialise"));
        log.push('\n');
        println!("epoch {:>4}  total {:.6}  sc {:.6}  co {:.6}  |g| {:.3}", s.epoch, s.total, s.l_sc, s.l_co, s.grad_norm);
        if interval > 0 && (s.epoch + 1) % interval == 0 {
            training::save_checkpoint(&a.out, net, Some(adam)).map_err(|e| TrainError::Hook(e.to_string()))?;
        }
        Ok(())
    })?;
    training::save_checkpoint(&a.out, &out.network, Some(&out.adam))?;
    write_atomic(&log_path, log.as_bytes())?;
    Ok(Run { inputs: vec![a.data.clone()], outputs: vec![a.out.clone(), log_path] })
}

fn with_suffix(p: &Path, suffix: &str) -> PathBuf {
    let mut s = p.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_network(path: &Path) -> anyhow::Result<mjae_core::ScoreNetwork> {
    if !path.is_file() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    Ok(training::load_checkpoint(path)?.network)
}

fn cmd_sample(a: &SampleArgs, cfg: &mut Config) -> anyhow::Result<Run> {
    let s = &mut cfg.sampling;
    if let Some(n) = a.n {
        s.num_samples = n;
    }
    if let Some(n) = a.atoms {
        s.n_atoms = n;
    }
    if let Some(l) = a.lambda {
        s.lambda = l;
    }
    if let Some(k) = a.steps {
        s.steps = k;
    }
    validate(cfg)?;
    let net = load_network(&a.checkpoint)?;
    let graphs = sampling::generate(&net, &cfg.sampling)?;
    write_atomic(&a.out, molgraph::to_jsonl(&graphs).as_bytes())?;
    println!("wrote {} molecules to {}", graphs.len(), a.out.display());
    Ok(Run { inputs: vec![a.checkpoint.clone()], outputs: vec![a.out.clone()] })
}

fn probe_data(opts: &ProbeOpts, seed: u64) -> anyhow::Result<(Vec<MoleculeGraph>, Vec<f64>)> {
    Ok(match &opts.probe_set {
        Some(p) => {
            let g = read_molecules(p, "probe set")?;
            let labels = g.iter().map(MoleculeGraph::radius_of_gyration).collect();
            (g, labels)
        }
        None => toy::probe_set(10, seed),
    })
}

fn run_probe(checkpoint: &Path, opts: &ProbeOpts, cfg: &Config) -> anyhow::Result<ProbeReport> {
    if opts.probe_seeds == 0 {
        return Err(usage("--probe-seeds must be at least 1"));
    }
    let pretrained = load_network(checkpoint)?;
    let mut random_cfg = cfg.clone();
    random_cfg.model = pretrained.config;
    let mut random = training::build_network(&random_cfg)?;
    random.schedules = pretrained.schedules;
    random.frame_cutoff = pretrained.frame_cutoff;
    let (graphs, labels) = probe_data(opts, cfg.training.seed)?;
    let seeds: Vec<u64> = (0..opts.probe_seeds).map(|k| cfg.training.seed + k).collect();
    Ok(evalsuite::linear_probe(&pretrained, &random, &graphs, &labels, &seeds)?)
}

#[derive(Serialize)]
#[serde(untagged)]
enum EvalOutput {
    Metrics(GenerationMetrics),
    Probe(ProbeReport),
}

fn cmd_eval(a: &EvalArgs, cfg: &Config) -> anyhow::Result<Run> {
    validate(cfg)?;
    let mut inputs = Vec::new();
    let report = if a.probe {
        let ck = a.checkpoint.as_ref().ok_or_else(|| usage("--probe needs --checkpoint"))?;
        inputs.push(ck.clone());
        inputs.extend(a.probe_opts.probe_set.clone());
        let r = run_probe(ck, &a.probe_opts, cfg)?;
        print!("{}", r.to_table());
        EvalOutput::Probe(r)
    } else {
        let samples = match (&a.samples, &a.checkpoint) {
            (Some(s), None) => {
                inputs.push(s.clone());
                read_molecules(s, "samples")?
            }
            (None, Some(ck)) => {
                inputs.push(ck.clone());
                sampling::generate(&load_network(ck)?, &cfg.sampling)?
            }
            _ => return Err(usage("give exactly one of --samples or --checkpoint")),
        };
        let reference = match &a.reference {
            Some(r) => {
                inputs.push(r.clone());
                read_molecules(r, "reference")?
            }
            None => toy::corpus(),
        };
        let m = evalsuite::generation_metrics(&samples, &reference)?;
        print!("{}", m.to_table());
        EvalOutput::Metrics(m)
    };
    write_atomic(&a.out, serde_json::to_string_pretty(&report)?.as_bytes())?;
    Ok(Run { inputs, outputs: vec![a.out.clone()] })
}

fn cmd_probe(a: &ProbeArgs, cfg: &Config) -> anyhow::Result<Run> {
    validate(cfg)?;
    let r = run_probe(&a.checkpoint, &a.probe_opts, cfg)?;
    print!("{}", r.to_table());
    write_atomic(&a.out, serde_json::to_string_pretty(&r)?.as_bytes())?;
    let mut inputs = vec![a.checkpoint.clone()];
    inputs.extend(a.probe_opts.probe_set.clone());
    Ok(Run { inputs, outputs: vec![a.out.clone()] })
}

fn cmd_selftest(out: &Path, cfg: &Config) -> anyhow::Result<Run> {
    let checks = selftest::run(cfg.training.seed);
    for c in &checks {
        println!("[{}] {}: {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    write_atomic(out, serde_json::to_string_pretty(&checks)?.as_bytes())?;
    let failed: Vec<&str> = checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    if !failed.is_empty() {
        bail!("selftest failed: {}", failed.join(", "));
    }
    Ok(Run { inputs: Vec::new(), outputs: vec![out.into()] })
}

fn primary_output(cmd: &Command) -> PathBuf {
    match cmd {
        Command::Ingest { output, .. } => output.clone(),
        Command::Pretrain(a) => a.out.clone(),
        Command::Sample(a) => a.out.clone(),
        Command::Eval(a) => a.out.clone(),
        Command::Probe(a) => a.out.clone(),
        Command::Selftest { out } => out.clone(),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Ingest { .. } => "ingest",
        Command::Pretrain(_) => "pretrain",
        Command::Sample(_) => "sample",
        Command::Eval(_) => "eval",
        Command::Probe(_) => "probe",
        Command::Selftest { .. } => "selftest",
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let start = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut cfg = load_config(&cli.global)?;
    let run = match &cli.command {
        Command::Ingest { input, output } => cmd_ingest(input, output)?,
        Command::Pretrain(a) => cmd_pretrain(a, &mut cfg)?,
        Command::Sample(a) => cmd_sample(a, &mut cfg)?,
        Command::Eval(a) => cmd_eval(a, &cfg)?,
        Command::Probe(a) => cmd_probe(a, &cfg)?,
        Command::Selftest { out } => cmd_selftest(out, &cfg)?,
    };
    let mut inputs: Vec<PathBuf> = run.inputs;
    inputs.extend(cli.global.config.clone());
    let manifest = RunManifest {
        command: command_name(&cli.command).to_string(),
        argv: std::env::args().collect(),
        config: cfg.entries().into_iter().collect(),
        seed: cfg.training.seed,
        build: Build { version: env!("CARGO_PKG_VERSION"), git: env!("MJAE_GIT_REV") },
        inputs: inputs
            .iter()
            .map(|p| Ok(FileHash { path: p.display().to_string(), sha256: sha256_file(p)? }))
            .collect::<anyhow::Result<_>>()?,
        outputs: run.outputs.iter().map(|p| p.display().to_string()).collect(),
        started_unix,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    let path = cli.global.manifest.clone().unwrap_or_else(|| with_suffix(&primary_output(&cli.command), ".manifest.json"));
    write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("usage error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
