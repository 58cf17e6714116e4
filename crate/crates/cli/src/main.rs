//! `cascade`: command-line front end for the reconciliation simulator.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use cascade_core::bitframe::GENERATOR_ID;
use cascade_core::metrics::write_csv;
use cascade_core::optimizer::{write_history, CompassResult};
use cascade_core::protocol::replay;
use cascade_core::{
    compass_search, parse_grid, power_of_two_sweep, run_experiment, trace_frame, BlockSchedule, CompassParams,
    Experiment, MonteCarloObjective, RunReport, Scheduling, Variant,
};
use clap::{ArgAction, Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "cascade", version, about = "Cascade information reconciliation simulator")]
struct Cli {
    /// Progress on stderr; repeat for more detail.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Frame length.
    #[arg(long, default_value_t = 10_000)]
    n: usize,
    /// Frames simulated per point.
    #[arg(long, default_value_t = 10_000)]
    frames: u64,
    /// Master seed; identical seeds give identical output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (results do not depend on it).
    #[arg(long)]
    workers: Option<usize>,
    /// Override the number of Cascade passes.
    #[arg(long)]
    passes: Option<usize>,
    /// Search scheduling: pass-ordered or parallel.
    #[arg(long)]
    scheduling: Option<String>,
    /// JSON experiment file; its fields override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Protocol {
    /// Variant name (original, mod1, opt2 ... opt7, opt8-table, opt8-formula, custom).
    #[arg(long, default_value = "original")]
    variant: String,
    /// Schedule JSON, required for `custom`.
    #[arg(long)]
    schedule: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Output {
    /// CSV destination (stdout when absent). Provenance goes next to it as
    /// `<out>.meta.json`.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Also write full reports (per-pass FER, intervals) as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OptimizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    q: f64,
    /// compass or pow2.
    #[arg(long, default_value = "compass")]
    mode: String,
    /// Compass start, e.g. 100,200 (default ceil(1/q), 2 ceil(1/q)).
    #[arg(long)]
    init: Option<String>,
    /// Compass initial step (default k1 of the start point).
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value_t = 200)]
    budget: usize,
    #[arg(long, default_value_t = 1.0)]
    min_delta: f64,
    /// pow2 exponents per block size, one flag per size, e.g. --exponents 3,4,5.
    #[arg(long)]
    exponents: Vec<String>,
    #[command(flatten)]
    output: Output,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one error rate.
    Run {
        #[command(flatten)]
        protocol: Protocol,
        #[command(flatten)]
        common: Common,
        /// True error rate.
        #[arg(long)]
        q: f64,
        /// Error-rate estimate used to size blocks (defaults to q).
        #[arg(long)]
        p_init: Option<f64>,
        /// Write the transcript of frame 0 here.
        #[arg(long)]
        transcript: Option<PathBuf>,
        #[command(flatten)]
        output: Output,
    },
    /// Simulate a grid of error rates, blocks sized for each q.
    Sweep {
        #[command(flatten)]
        protocol: Protocol,
        #[command(flatten)]
        common: Common,
        /// Grid as start:stop:step or a comma list.
        #[arg(long)]
        q: String,
        #[arg(long)]
        p_init: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Fixed block sizes from --p-init, true error rate swept over --q.
    Rateless {
        #[command(flatten)]
        protocol: Protocol,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        p_init: f64,
        #[arg(long)]
        q: String,
        #[command(flatten)]
        output: Output,
    },
    /// Search block sizes minimizing the efficiency with subblock reuse.
    Optimize(OptimizeArgs),
    /// Several variants at one error rate.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variant names.
        #[arg(long)]
        variants: String,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        p_init: Option<f64>,
        #[command(flatten)]
        output: Output,
    },
    /// Re-derive ledger totals from a transcript; exit 0 iff consistent.
    Replay {
        #[arg(long)]
        transcript: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// Opened before any simulation so a bad path fails fast.
struct Sink {
    path: Option<PathBuf>,
    writer: Box<dyn Write>,
}

fn create(path: &Path) -> Result<File> {
    File::create(path).with_context(|| format!("cannot write output file {}", path.display()))
}

impl Sink {
    fn open(path: Option<&Path>) -> Result<Sink> {
        let writer: Box<dyn Write> = match path {
            Some(p) => Box::new(BufWriter::new(create(p)?)),
            None => Box::new(io::stdout().lock()),
        };
        Ok(Sink { path: path.map(Path::to_path_buf), writer })
    }

    fn meta_path(&self) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let mut s = p.clone().into_os_string();
            s.push(".meta.json");
            PathBuf::from(s)
        })
    }
}

struct Outputs {
    csv: Sink,
    json: Option<BufWriter<File>>,
    meta: Option<BufWriter<File>>,
}

impl Outputs {
    fn open(o: &Output) -> Result<Outputs> {
        let csv = Sink::open(o.out.as_deref())?;
        let json = o.json.as_deref().map(create).transpose()?.map(BufWriter::new);
        let meta = csv.meta_path().as_deref().map(create).transpose()?.map(BufWriter::new);
        Ok(Outputs { csv, json, meta })
    }

    fn finish_reports(mut self, reports: &[RunReport], meta: Value) -> Result<()> {
        write_csv(reports, &mut self.csv.writer)?;
        self.csv.writer.flush()?;
        if let Some(w) = &mut self.json {
            serde_json::to_writer_pretty(&mut *w, reports)?;
            writeln!(w)?;
            w.flush()?;
        }
        self.finish_meta(meta)
    }

    fn finish_meta(mut self, meta: Value) -> Result<()> {
        if let Some(w) = &mut self.meta {
            serde_json::to_writer_pretty(&mut *w, &meta)?;
            writeln!(w)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn parse_scheduling(s: &str) -> Result<Scheduling> {
    serde_json::from_value(Value::String(s.to_string()))
        .map_err(|_| anyhow!("unknown scheduling `{s}` (expected pass-ordered or parallel)"))
}

/// Experiment from flags, with every field present in `--config` taking
/// precedence.
fn experiment(
    protocol: Option<&Protocol>,
    common: &Common,
    q_grid: Vec<f64>,
    p_init: Option<f64>,
) -> Result<Experiment> {
    let (variant, schedule) = match protocol {
        Some(p) => {
            let schedule = p
                .schedule
                .as_deref()
                .map(|path| {
                    BlockSchedule::load(path).with_context(|| format!("cannot load schedule {}", path.display()))
                })
                .transpose()?;
            let variant = match (&schedule, p.variant.as_str()) {
                (Some(s), "original") => s.variant,
                _ => p.variant.parse::<Variant>()?,
            };
            (variant, schedule)
        }
        None => (Variant::Original, None),
    };
    let mut exp = Experiment::new(variant, common.n, q_grid, common.frames, common.seed);
    exp.schedule = schedule;
    exp.p_init = p_init;
    exp.passes = common.passes;
    exp.scheduling = common.scheduling.as_deref().map(parse_scheduling).transpose()?;
    if let Some(w) = common.workers {
        exp.workers = w;
    }
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let overrides: Value =
            serde_json::from_str(&text).with_context(|| format!("invalid JSON in {}", path.display()))?;
        let Value::Object(overrides) = overrides else {
            bail!("config {} must be a JSON object", path.display());
        };
        let mut merged = serde_json::to_value(&exp)?;
        for (k, v) in overrides {
            merged[k] = v;
        }
        exp = serde_json::from_value(merged).with_context(|| format!("invalid experiment in {}", path.display()))?;
    }
    exp.validate()?;
    Ok(exp)
}

fn provenance(command: &str, exps: &[&Experiment]) -> Result<Value> {
    let experiments = exps
        .iter()
        .map(|e| {
            let schedules = e
                .q_grid
                .iter()
                .map(|&q| Ok(json!({ "q": q, "schedule": e.schedule_for(q)? })))
                .collect::<cascade_core::Result<Vec<_>>>()?;
            Ok(json!({
                "variant": e.variant,
                "n": e.n,
                "frames_per_point": e.frames_per_point,
                "master_seed": e.master_seed,
                "p_init": e.p_init,
                "scheduling": e.scheduling.unwrap_or_default(),
                "schedules": schedules,
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(json!({
        "tool": "cascade",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "arguments": std::env::args().skip(1).collect::<Vec<_>>(),
        "generator": GENERATOR_ID,
        "experiments": experiments,
    }))
}

fn warn_schedules(exp: &Experiment, verbose: u8) {
    if verbose == 0 {
        return;
    }
    for &q in &exp.q_grid {
        if let Ok(s) = exp.schedule_for(q) {
            eprintln!("q={q}: {}", s.describe());
            for w in &s.warnings {
                eprintln!("warning: {w}");
            }
        }
    }
}

fn simulate(command: &str, exps: Vec<Experiment>, output: &Output, verbose: u8) -> Result<()> {
    let out = Outputs::open(output)?;
    let mut reports = Vec::new();
    for exp in &exps {
        warn_schedules(exp, verbose);
        let r = run_experiment(exp)?;
        if verbose > 0 {
            for x in &r {
                eprintln!("{} q={} f_ec={} fer={}", x.variant, x.q, x.f_ec, x.fer);
            }
        }
        reports.extend(r);
    }
    let meta = provenance(command, &exps.iter().collect::<Vec<_>>())?;
    out.finish_reports(&reports, meta)
}

fn parse_sizes(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| anyhow!("bad block size `{t}` in `{text}`")))
        .collect()
}

fn optimize(args: &OptimizeArgs, verbose: u8) -> Result<()> {
    let OptimizeArgs { common, q, mode, init, delta, budget, min_delta, exponents, output } = args;
    let (q, budget, min_delta) = (*q, *budget, *min_delta);
    if !(q > 0.0 && q < 0.5) {
        bail!("error rate {q} outside (0, 0.5)");
    }
    let mut objective = MonteCarloObjective::new(common.n, q, common.frames, common.seed);
    if let Some(p) = common.passes {
        objective.passes = p;
    }
    if let Some(w) = common.workers {
        objective.workers = w;
    }
    let out = Outputs::open(output)?;
    let mut meta = json!({
        "tool": "cascade",
        "version": env!("CARGO_PKG_VERSION"),
        "command": "optimize",
        "arguments": std::env::args().skip(1).collect::<Vec<_>>(),
        "generator": GENERATOR_ID,
        "n": common.n,
        "q": q,
        "frames_per_candidate": common.frames,
        "passes": objective.passes,
        "master_seed": common.seed,
        "mode": mode,
    });
    let evaluations = match mode.as_str() {
        "compass" => {
            let start = match init.as_deref() {
                Some(text) => parse_sizes(text)?,
                None => {
                    let k1 = (1.0 / q).ceil() as usize;
                    vec![k1, 2 * k1]
                }
            };
            let params = CompassParams { delta0: delta.unwrap_or(start[0] as f64), budget, min_delta, upper: common.n };
            let CompassResult { best, deltas, history, .. } = compass_search(&objective, &start, &params)?;
            eprintln!("best {:?} eta_ec={} after {} evaluations", best.k, best.eta, history.len());
            meta["best"] = json!(best);
            meta["deltas"] = json!(deltas);
            history
        }
        "pow2" => {
            if exponents.is_empty() {
                bail!("pow2 mode needs --exponents, one flag per block size");
            }
            let exps = exponents
                .iter()
                .map(|t| {
                    t.split(',')
                        .map(|e| e.trim().parse::<u32>().map_err(|_| anyhow!("bad exponent `{e}`")))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            let ranked = power_of_two_sweep(&objective, &exps)?;
            if verbose > 0 {
                for e in &ranked {
                    eprintln!("{:?} eta_ec={} stderr={}", e.k, e.eta, e.stderr);
                }
            }
            eprintln!("best {:?} eta_ec={}", ranked[0].k, ranked[0].eta);
            meta["best"] = json!(ranked[0]);
            ranked
        }
        other => bail!("unknown optimize mode `{other}` (expected compass or pow2)"),
    };
    let Outputs { mut csv, json, meta: meta_sink } = out;
    write_history(&evaluations, &mut csv.writer)?;
    csv.writer.flush()?;
    if let Some(mut w) = json {
        serde_json::to_writer_pretty(&mut w, &evaluations)?;
        writeln!(w)?;
        w.flush()?;
    }
    Outputs { csv, json: None, meta: meta_sink }.finish_meta(meta)
}

fn execute(cli: Cli) -> Result<ExitCode> {
    let verbose = cli.verbose;
    match cli.command {
        Command::Run { protocol, common, q, p_init, transcript, output } => {
            let exp = experiment(Some(&protocol), &common, vec![q], p_init)?;
            if let Some(path) = &transcript {
                let mut w = BufWriter::new(create(path)?);
                let schedule = exp.schedule_for(exp.q_grid[0])?;
                let (_, t) =
                    trace_frame(&schedule, exp.scheduling.unwrap_or_default(), exp.q_grid[0], exp.master_seed, 0)?;
                w.write_all(t.to_text().as_bytes())?;
                w.flush()?;
            }
            simulate("run", vec![exp], &output, verbose)?;
        }
        Command::Sweep { protocol, common, q, p_init, output } => {
            let exp = experiment(Some(&protocol), &common, parse_grid(&q)?, p_init)?;
            simulate("sweep", vec![exp], &output, verbose)?;
        }
        Command::Rateless { protocol, common, p_init, q, output } => {
            let exp = experiment(Some(&protocol), &common, parse_grid(&q)?, Some(p_init))?;
            simulate("rateless", vec![exp], &output, verbose)?;
        }
        Command::Compare { common, variants, q, p_init, output } => {
            let exps = variants
                .split(',')
                .map(|v| {
                    let protocol = Protocol { variant: v.trim().to_string(), schedule: None };
                    experiment(Some(&protocol), &common, vec![q], p_init)
                })
                .collect::<Result<Vec<_>>>()?;
            simulate("compare", exps, &output, verbose)?;
        }
        Command::Optimize(args) => optimize(&args, verbose)?,
        Command::Replay { transcript } => {
            let text = std::fs::read_to_string(&transcript)
                .with_context(|| format!("cannot read transcript {}", transcript.display()))?;
            let s = replay(&text)?;
            println!(
                "rounds={} sent={} inferred={} flips={} ledger_m={} ledger_rounds={}",
                s.rounds, s.sent, s.inferred, s.flips, s.ledger_m, s.ledger_rounds
            );
            if !s.consistent() {
                for p in &s.problems {
                    eprintln!("inconsistent: {p}");
                }
                return Ok(ExitCode::FAILURE);
            }
            println!("consistent");
        }
    }
    Ok(ExitCode::SUCCESS)
}
