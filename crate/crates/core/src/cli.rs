//! Command-line front end: `simulate`, `check`, `train`, `eval`, `ablate`,
//! `sweep` and `inspect`.
//!
//! Every config key is also a flag (`train.commit_weight` is
//! `--train.commit-weight`). Values are layered: defaults, then `--config`,
//! then `--seed`, then per-key flags.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use serde_json::json;

use crate::config::{flag_for_key, RunConfig};
use crate::data::{split_disjointness_check, Dataset, EmbeddingTable, Split};
use crate::error::{Error, Result};
use crate::eval::{evaluate_with, multi_seed, render_sweep, render_table, run_ablation, window_sweep, EvalOptions};
use crate::reward::{continue_training, Model, TrainConfig};
use crate::simulator::{generate, EPISODES_FILE, FEEDBACK_FILES, RESPONSES_FILE, TRUTH_FILE};

pub const CONFIG_ECHO: &str = "config.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.epck";
pub const METRICS_FILE: &str = "metrics.jsonl";

pub fn command() -> Command {
    let mut cmd = Command::new("persona-vq")
        .about("Persona-codebook reward models: simulate, train, evaluate, inspect")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("JSON config file"),
        )
        .arg(
            Arg::new("seed")
                .long("seed")
                .value_name("U64")
                .value_parser(value_parser!(u64))
                .global(true)
                .help("Seed for both training and world generation"),
        )
        .arg(
            Arg::new("out")
                .long("out")
                .value_name("DIR")
                .value_parser(value_parser!(PathBuf))
                .global(true)
                .help("Output directory"),
        )
        .arg(
            Arg::new("threads")
                .long("threads")
                .value_name("N")
                .value_parser(value_parser!(usize))
                .global(true)
                .help("Worker threads for parallel evaluation and multi-run commands"),
        )
        .arg(
            Arg::new("overwrite")
                .long("overwrite")
                .action(ArgAction::SetTrue)
                .global(true)
                .help("Replace existing output files"),
        );
    for key in RunConfig::keys() {
        cmd = cmd.arg(
            Arg::new(key.clone())
                .long(flag_for_key(&key))
                .value_name("VALUE")
                .action(ArgAction::Append)
                .global(true)
                .help_heading("Config overrides")
                .help(format!("Sets config key {key}")),
        );
    }
    cmd.subcommands([
        Command::new("simulate").about("Generate a synthetic world into --out"),
        Command::new("check").about("Validate the dataset in paths.data_dir"),
        Command::new("train").about("Train a model on the training split and write a checkpoint"),
        Command::new("eval").about("Evaluate paths.checkpoint on eval.split"),
        Command::new("ablate").about("Train and evaluate every eval.variants entry over eval.seeds"),
        Command::new("sweep").about("Retrain for each eval.sweep_sizes window length"),
        Command::new("inspect").about("Show codebook usage and per-user code assignments"),
    ])
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: Option<PathBuf>,
    overwrite: bool,
}

impl Ctx {
    fn out(&self, cmd: &str) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{cmd}` needs --out DIR")))
    }

    /// Creates the output directory and refuses to clobber `files` unless
    /// `--overwrite` was given.
    fn prepare(&self, cmd: &str, files: &[&str]) -> Result<PathBuf> {
        let dir = self.out(cmd)?.to_path_buf();
        if !self.overwrite {
            for f in files.iter().chain([&CONFIG_ECHO]) {
                let p = dir.join(f);
                if p.exists() {
                    return Err(Error::WouldOverwrite(p));
                }
            }
        }
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_file(&dir.join(CONFIG_ECHO), self.cfg.to_json().as_bytes())?;
        Ok(dir)
    }

    fn data_dir(&self, cmd: &str) -> Result<&Path> {
        self.cfg
            .paths
            .data_dir
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{cmd}` needs paths.data_dir (--paths.data-dir DIR)")))
    }

    fn checkpoint(&self, cmd: &str) -> Result<&Path> {
        self.cfg
            .paths
            .checkpoint
            .as_deref()
            .ok_or_else(|| Error::Config(format!("`{cmd}` needs paths.checkpoint (--paths.checkpoint PATH)")))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn build_config(m: &ArgMatches) -> Result<RunConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(&seed) = m.get_one::<u64>("seed") {
        cfg.train.seed = seed;
        cfg.world.seed = seed;
    }
    for key in RunConfig::keys() {
        if let Some(v) = m.get_many::<String>(&key).and_then(|v| v.last()) {
            cfg.apply_override(&key, v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(root: &ArgMatches) -> Result<()> {
    let (name, m) = root.subcommand().expect("subcommand required");
    let cfg = build_config(m)?;
    if let Some(&n) = m.get_one::<usize>("threads") {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let ctx = Ctx {
        cfg,
        out: m.get_one::<PathBuf>("out").cloned(),
        overwrite: m.get_flag("overwrite"),
    };
    match name {
        "simulate" => cmd_simulate(&ctx),
        "check" => cmd_check(&ctx),
        "train" => cmd_train(&ctx),
        "eval" => cmd_eval(&ctx),
        "ablate" => cmd_ablate(&ctx),
        "sweep" => cmd_sweep(&ctx),
        "inspect" => cmd_inspect(&ctx),
        other => Err(Error::Config(format!("unknown command {other:?}"))),
    }
}

/// Loads the three splits of a data directory (truth sidecar not needed).
pub fn load_splits(dir: &Path) -> Result<[Dataset; 3]> {
    let episodes = Arc::new(EmbeddingTable::read(&dir.join(EPISODES_FILE))?);
    let responses = Arc::new(EmbeddingTable::read(&dir.join(RESPONSES_FILE))?);
    let load = |name: &str| Dataset::load_with_tables(&dir.join(name), episodes.clone(), responses.clone());
    Ok([load(FEEDBACK_FILES[0].1)?, load(FEEDBACK_FILES[1].1)?, load(FEEDBACK_FILES[2].1)?])
}

fn pick_split(splits: &[Dataset; 3], split: Split) -> &Dataset {
    match split {
        Split::Train => &splits[0],
        Split::Validation => &splits[1],
        Split::Test => &splits[2],
    }
}

fn validation(splits: &[Dataset; 3]) -> Option<&Dataset> {
    (splits[1].num_current() > 0).then_some(&splits[1])
}

fn cmd_simulate(ctx: &Ctx) -> Result<()> {
    let mut files: Vec<&str> = FEEDBACK_FILES.iter().map(|(_, f)| *f).collect();
    files.extend([EPISODES_FILE, RESPONSES_FILE, TRUTH_FILE]);
    let dir = ctx.prepare("simulate", &files)?;
    let world = generate(&ctx.cfg.world)?;
    world.write(&dir)?;
    println!(
        "wrote {} train / {} validation / {} test users to {}",
        world.train.num_users(),
        world.validation.num_users(),
        world.test.num_users(),
        dir.display()
    );
    Ok(())
}

fn cmd_check(ctx: &Ctx) -> Result<()> {
    let dir = ctx.data_dir("check")?;
    let splits = load_splits(dir)?;
    for ds in &splits {
        println!(
            "{:<10} users {:>6}  records {:>8}  current {:>7}",
            ds.split().map_or("?", Split::as_str),
            ds.num_users(),
            ds.num_records(),
            ds.num_current()
        );
    }
    println!(
        "episode dim {}  response dim {}",
        splits[0].episodes().dim(),
        splits[0].responses().dim()
    );
    let violations = split_disjointness_check(&splits[0], &splits[1], &splits[2]);
    if !violations.is_empty() {
        let names: Vec<String> = violations
            .iter()
            .map(|v| format!("{} ({} and {})", v.user_id, v.first, v.second))
            .collect();
        return Err(Error::Integrity(format!("users appear in two splits: {}", names.join(", "))));
    }
    println!("ok");
    Ok(())
}

fn cmd_train(ctx: &Ctx) -> Result<()> {
    let metrics_path = ctx.cfg.paths.metrics.clone();
    let mut files = vec![CHECKPOINT_FILE];
    if metrics_path.is_none() {
        files.push(METRICS_FILE);
    }
    if let (Some(p), false) = (&metrics_path, ctx.overwrite) {
        if p.exists() {
            return Err(Error::WouldOverwrite(p.clone()));
        }
    }
    let splits = load_splits(ctx.data_dir("train")?)?;
    let dir = ctx.prepare("train", &files)?;
    let metrics_path = metrics_path.unwrap_or_else(|| dir.join(METRICS_FILE));

    let (model, epochs) = match &ctx.cfg.paths.resume {
        Some(p) => {
            let model = Model::load(p)?;
            model.check_dataset(&splits[0])?;
            (model, ctx.cfg.train.epochs)
        }
        None => (Model::init(&splits[0], &ctx.cfg.train)?, ctx.cfg.train.epochs),
    };

    let file = File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut log = BufWriter::new(file);
    for m in &model.metadata.history {
        writeln!(log, "{}", serde_json::to_string(m).expect("metrics serialize")).map_err(|e| Error::io(&metrics_path, e))?;
    }
    let mut io_err = None;
    let model = continue_training(model, &splits[0], validation(&splits), epochs, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            io_err.get_or_insert(e);
        }
        eprintln!(
            "epoch {:>4}  nll {:.4}  commit {:.4}  train {:.4}  val {}",
            m.epoch,
            m.nll,
            m.commit_loss,
            m.train_acc,
            m.val_acc.map_or("-".into(), |v| format!("{v:.4}"))
        );
    })?;
    if let Some(e) = io_err {
        return Err(Error::io(&metrics_path, e));
    }
    log.flush().map_err(|e| Error::io(&metrics_path, e))?;
    model.save(&dir.join(CHECKPOINT_FILE))?;
    println!(
        "trained {} epochs; checkpoint {}",
        model.metadata.epochs_completed,
        dir.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn write_reports(dir: &Path, stem: &str, lines: &[String], table: &str) -> Result<()> {
    let mut jsonl = lines.join("\n");
    jsonl.push('\n');
    write_file(&dir.join(format!("{stem}.jsonl")), jsonl.as_bytes())?;
    write_file(&dir.join(format!("{stem}.txt")), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let dir = ctx.out("eval")?.to_path_buf();
    let model = Model::load(ctx.checkpoint("eval")?)?;
    let splits = load_splits(ctx.data_dir("eval")?)?;
    let ds = pick_split(&splits, ctx.cfg.eval.split);
    let opts = EvalOptions {
        history_edges: ctx.cfg.eval.history_edges.clone(),
        label: ctx.cfg.eval.split.as_str().into(),
    };
    let report = evaluate_with(&model, ds, &opts)?;
    ctx.prepare("eval", &["report.jsonl", "report.txt"])?;
    write_reports(&dir, "report", &[report.to_json_line()], &render_table(&[report]))
}

fn cmd_ablate(ctx: &Ctx) -> Result<()> {
    let splits = load_splits(ctx.data_dir("ablate")?)?;
    let dir = ctx.prepare("ablate", &["ablation.jsonl", "ablation.txt"])?;
    let test = pick_split(&splits, ctx.cfg.eval.split);
    let mut reports = Vec::new();
    for &variant in &ctx.cfg.eval.variants {
        let report = multi_seed(&ctx.cfg.eval.seeds, |seed| {
            let cfg = TrainConfig {
                seed,
                ..ctx.cfg.train.clone()
            };
            Ok(run_ablation(variant, &splits[0], validation(&splits), test, &cfg)?.1)
        })?;
        eprintln!("{variant}: median accuracy {:.4}", report.accuracy);
        reports.push(report);
    }
    let lines: Vec<String> = reports.iter().map(|r| r.to_json_line()).collect();
    write_reports(&dir, "ablation", &lines, &render_table(&reports))
}

fn cmd_sweep(ctx: &Ctx) -> Result<()> {
    let splits = load_splits(ctx.data_dir("sweep")?)?;
    let dir = ctx.prepare("sweep", &["sweep.jsonl", "sweep.txt"])?;
    let test = pick_split(&splits, ctx.cfg.eval.split);
    let rows = window_sweep(&ctx.cfg.train, &splits[0], validation(&splits), test, &ctx.cfg.eval.sweep_sizes)?;
    let lines: Vec<String> = rows
        .iter()
        .map(|r| serde_json::to_string(r).expect("row serializes"))
        .collect();
    write_reports(&dir, "sweep", &lines, &render_sweep(&rows))
}

/// Codebook usage histogram and per-user code assignments as JSON.
pub fn inspect_report(model: &Model, ds: Option<&Dataset>) -> Result<serde_json::Value> {
    let cb = &model.codebook;
    let mut usage = vec![0usize; cb.size()];
    let mut users = Vec::new();
    if let Some(ds) = ds {
        model.check_dataset(ds)?;
        for u in ds.users() {
            let state = model.persona_state(&u.history, ds)?;
            for &m in &state.trace.persona.code_indices {
                usage[m] += 1;
            }
            users.push(json!({
                "user_id": u.user_id,
                "history": u.history.len(),
                "codes": state.trace.persona.code_indices,
            }));
        }
    }
    Ok(json!({
        "codebook_size": cb.size(),
        "dim": cb.dim(),
        "active_codes": cb.active_codes(),
        "ema_counts": cb.counts(),
        "idle_steps": cb.idle_steps(),
        "usage": ds.map(|_| usage),
        "users": users,
    }))
}

fn render_inspect(report: &serde_json::Value) -> String {
    let mut out = format!(
        "codebook: {} codes of dim {}, {} active\n",
        report["codebook_size"], report["dim"], report["active_codes"]
    );
    let counts = report["ema_counts"].as_array().cloned().unwrap_or_default();
    let usage = report["usage"].as_array().cloned();
    let max = usage
        .as_ref()
        .and_then(|u| u.iter().filter_map(|x| x.as_u64()).max())
        .unwrap_or(0)
        .max(1);
    out.push_str(&format!("{:>5} {:>10} {:>7}  histogram\n", "code", "ema_count", "usage"));
    for (m, c) in counts.iter().enumerate() {
        let used = usage.as_ref().and_then(|u| u[m].as_u64());
        let bar = used.map_or(String::new(), |n| "#".repeat((40 * n / max) as usize));
        out.push_str(&format!(
            "{m:>5} {:>10.3} {:>7}  {bar}\n",
            c.as_f64().unwrap_or(0.0),
            used.map_or("-".into(), |n| n.to_string())
        ));
    }
    if let Some(users) = report["users"].as_array().filter(|u| !u.is_empty()) {
        out.push_str("user codes\n");
        for u in users {
            let codes: Vec<String> = u["codes"]
                .as_array()
                .map(|c| c.iter().map(|x| x.to_string()).collect())
                .unwrap_or_default();
            out.push_str(&format!("{} [{}]\n", u["user_id"].as_str().unwrap_or("?"), codes.join(" ")));
        }
    }
    out
}

fn cmd_inspect(ctx: &Ctx) -> Result<()> {
    let model = Model::load(ctx.checkpoint("inspect")?)?;
    let splits = match &ctx.cfg.paths.data_dir {
        Some(d) => Some(load_splits(d)?),
        None => None,
    };
    let ds = splits.as_ref().map(|s| pick_split(s, ctx.cfg.eval.split));
    let report = inspect_report(&model, ds)?;
    let text = render_inspect(&report);
    if ctx.out.is_some() {
        let dir = ctx.prepare("inspect", &["inspect.json", "inspect.txt"])?;
        let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_file(&dir.join("inspect.json"), json.as_bytes())?;
        write_file(&dir.join("inspect.txt"), text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}
