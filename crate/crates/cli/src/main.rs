use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use specroll::budget::{allocate, read_batch_csv, unlimited_plan, write_plan_csv, BudgetConfig, BudgetError};
use specroll::corpus::{ingest_into, pairwise_epoch_similarity, CorpusError, Window, WindowStore};
use specroll::latency::{self, fit_fixed_overhead, LatencyError, LatencyParams};
use specroll::length_policy::{build_class_table, LengthHistory, PolicyError};
use specroll::sim::{
    read_summary_csv, summarize, write_requests_csv, write_summary, write_summary_csv, write_token_dump,
    write_trace_csv, BudgetMode, ModeSummary, Scenario, ScenarioError,
};
use specroll::suffix_index::{bench_index, write_bench_csv};

mod config;
mod output;

use config::CliConfig;
use output::{open, read_to_string, Failure, Outputs, Tag};

#[derive(Debug, Parser)]
#[command(name = "specroll", version, about = "History-indexed speculative decoding toolkit for RL rollouts")]
struct Cli {
    /// RNG seed; overrides the config file and scenario.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for output files [default: .]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// TOML file with parameter overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a rollout trace and print what it holds.
    Ingest(IngestArgs),
    /// Fit the per-pass latency model from profiled passes.
    FitLatency(FitLatencyArgs),
    /// Compute per-request draft budgets for a batch.
    Optimize(OptimizeArgs),
    /// Time suffix-tree insertion against suffix-array rebuilds.
    BenchIndex(BenchArgs),
    /// Run the rollout simulator on a scenario.
    Simulate(SimulateArgs),
    /// Summarize one or more simulation summary files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Line-delimited JSON trace: {"problem_id", "epoch", "sample_index", "tokens"}.
    input: PathBuf,
    #[arg(long)]
    vocab_size: Option<u32>,
    /// History window in epochs, or `all`.
    #[arg(long, default_value = "all")]
    window: Window,
    /// Also write the length-class table (length_table.txt).
    #[arg(long)]
    length_table: bool,
    /// Length quantiles for the class thresholds.
    #[arg(long, value_parser = parse_quantiles)]
    quantiles: Option<(f64, f64)>,
    /// Also write per-problem n-gram reuse by epoch distance (similarity.csv).
    #[arg(long, value_name = "N")]
    similarity: Option<usize>,
}

#[derive(Debug, Args)]
struct FitLatencyArgs {
    /// CSV with columns n_toks,t_us.
    profile: PathBuf,
    /// CSV with columns n_fwd,n_toks_total,t_us; used to estimate the fixed overhead.
    #[arg(long)]
    rollouts: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PlanMode {
    Das,
    Unlimited,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// CSV with columns request_id,l,alpha,k.
    batch: PathBuf,
    /// Parameter file written by fit-latency; falls back to [latency] in the config.
    #[arg(long)]
    latency: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "das")]
    mode: PlanMode,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Corpus sizes in tokens.
    #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000])]
    sizes: Vec<usize>,
    /// Tokens inserted per update.
    #[arg(long, default_value_t = 100)]
    insert_batch: usize,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario JSON.
    scenario: PathBuf,
    /// Modes to run; overrides the scenario's list.
    #[arg(long, value_delimiter = ',')]
    mode: Vec<BudgetMode>,
    #[arg(long)]
    epochs: Option<u64>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// summary.csv files written by simulate.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

fn parse_quantiles(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(',').ok_or("expected `lo,hi`")?;
    let lo: f64 = lo.trim().parse().map_err(|_| format!("bad quantile `{lo}`"))?;
    let hi: f64 = hi.trim().parse().map_err(|_| format!("bad quantile `{hi}`"))?;
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(format!("need 0 <= lo <= hi <= 1, got {lo},{hi}"));
    }
    Ok((lo, hi))
}

struct Ctx {
    seed: Option<u64>,
    out: Outputs,
    config: CliConfig,
}

fn corpus_failure(e: CorpusError) -> Failure {
    match e {
        CorpusError::Io(e) => Failure::Io(e.into()),
        e => Failure::Invalid(e.into()),
    }
}

fn cmd_ingest(a: IngestArgs, ctx: &mut Ctx) -> Result<(), Failure> {
    let file = open(&a.input)?;
    let report = ingest_into(BufReader::new(file), a.vocab_size, WindowStore::new(a.window)).map_err(corpus_failure)?;
    let store = &report.store;
    for line in &report.rejected_lines {
        log::warn!("{}: skipped malformed line {line}", a.input.display());
    }
    let epochs: Vec<u64> = store.iter().map(|r| r.epoch).collect();
    println!(
        "records={} rejected={} problems={} epochs={}",
        store.len(),
        report.rejected,
        store.problem_count(),
        match (epochs.iter().min(), epochs.iter().max()) {
            (Some(lo), Some(hi)) => format!("{lo}..{hi}"),
            _ => "none".into(),
        }
    );

    if a.length_table {
        let settings = ctx.config.length_policy.unwrap_or_default();
        let (lo, hi) = a.quantiles.unwrap_or((settings.q_lo, settings.q_hi));
        let table = build_class_table(&LengthHistory::from_store(store), lo, hi, settings.bucket, settings.classes)
            .map_err(|e| match e {
                PolicyError::EmptyHistory => Failure::Degenerate(e.into()),
                e => Failure::Invalid(e.into()),
            })?;
        println!("q_short={} q_long={} low_confidence={}", table.q_short, table.q_long, table.low_confidence);
        let text = table.to_text();
        ctx.out.add("length_table.txt", |w| Ok(w.write_all(text.as_bytes())?))?;
    }

    if let Some(n) = a.similarity {
        if n == 0 {
            return Err(Failure::invalid("--similarity needs n >= 1"));
        }
        let mut rows = Vec::new();
        for pid in store.problems() {
            if let Some(sim) = pairwise_epoch_similarity(store, pid, n) {
                for (d, v) in sim.mean_by_distance().into_iter().enumerate() {
                    rows.push(format!("{pid},{},{v:.6}", d + 1));
                }
            }
        }
        ctx.out.add("similarity.csv", |w| {
            writeln!(w, "problem_id,epoch_distance,mean_reuse")?;
            for r in &rows {
                writeln!(w, "{r}")?;
            }
            Ok(())
        })?;
    }
    Ok(())
}

fn latency_failure(e: LatencyError) -> Failure {
    match e {
        LatencyError::Degenerate { .. } => Failure::Degenerate(e.into()),
        e => Failure::Invalid(e.into()),
    }
}

fn cmd_fit_latency(a: FitLatencyArgs, ctx: &mut Ctx) -> Result<(), Failure> {
    let samples = latency::read_profile_csv(open(&a.profile)?).map_err(latency_failure)?;
    let rollouts = match &a.rollouts {
        Some(p) => latency::read_rollout_csv(open(p)?).map_err(latency_failure)?,
        None => Vec::new(),
    };
    let mut fit = latency::fit(&samples).map_err(latency_failure)?;
    fit.params.c_fixed = fit_fixed_overhead(&fit.params, &rollouts);
    let p = fit.params;
    println!("c_base={} c_tok={} c_fixed={}", p.c_base, p.c_tok, p.c_fixed);
    println!("mre={:.4}{}", fit.mean_relative_error, if fit.clamped { " (clamped)" } else { "" });
    let kv = p.to_kv();
    ctx.out.add("latency.txt", |w| Ok(w.write_all(kv.as_bytes())?))
}

fn cmd_optimize(a: OptimizeArgs, ctx: &mut Ctx) -> Result<(), Failure> {
    let rows = read_batch_csv(open(&a.batch)?).map_err(|e| match e {
        BudgetError::Io(e) => Failure::Io(e.into()),
        e => Failure::Invalid(e.into()),
    })?;
    let params: LatencyParams = match (&a.latency, ctx.config.latency) {
        (Some(p), _) => LatencyParams::from_kv(&read_to_string(p)?).invalid()?,
        (None, Some(p)) => p,
        (None, None) => return Err(Failure::invalid("no latency parameters: pass --latency or set [latency] in --config")),
    };
    if !(params.c_base >= 0.0 && params.c_tok >= 0.0 && params.c_fixed >= 0.0) {
        return Err(Failure::invalid("latency parameters must be non-negative"));
    }
    let cfg: BudgetConfig = ctx.config.optimizer.unwrap_or_default().into();
    let batch: Vec<_> = rows.iter().map(|r| r.profile).collect();
    let ids: Vec<String> = rows.into_iter().map(|r| r.request_id).collect();
    let plan = match a.mode {
        PlanMode::Das => allocate(&batch, &params, &cfg),
        PlanMode::Unlimited => unlimited_plan(&batch, &params, &cfg),
    };
    println!("requests={} n_fwd_star={:.6} J={:.6}", ids.len(), plan.n_fwd_star, plan.modeled_cost);
    ctx.out.add("plan.csv", |w| Ok(write_plan_csv(&ids, &plan, w)?))
}

fn cmd_bench(a: BenchArgs, ctx: &mut Ctx) -> Result<(), Failure> {
    if a.insert_batch == 0 {
        return Err(Failure::invalid("--insert-batch must be >= 1"));
    }
    let rows = bench_index(&a.sizes, a.insert_batch, ctx.seed.or(ctx.config.seed).unwrap_or(0));
    for r in &rows {
        println!(
            "{:<13} size={:<8} spec={:>10.2}us update={:>12.2}us",
            r.structure.to_string(),
            r.corpus_size,
            r.spec_time_us,
            r.update_time_us
        );
    }
    ctx.out.add("bench_index.csv", |w| Ok(write_bench_csv(&rows, w)?))
}

fn scenario_failure(e: ScenarioError) -> Failure {
    Failure::Invalid(e.into())
}

fn cmd_simulate(a: SimulateArgs, ctx: &mut Ctx) -> Result<(), Failure> {
    let text = read_to_string(&a.scenario)?;
    let mut sc = Scenario::from_json(&text)
        .map_err(|e| Failure::invalid(format!("{}: {e}", a.scenario.display())))?;
    let c = &ctx.config;
    if let Some(s) = ctx.seed.or(c.seed) {
        sc.seed = s;
    }
    if let Some(d) = &c.drafter {
        sc.drafter = d.clone();
    }
    if let Some(b) = c.budget {
        sc.budget = b;
    }
    if let Some(l) = c.length_policy {
        sc.length_policy = l;
    }
    if let Some(l) = c.latency {
        sc.latency = l;
    }
    if let Some(e) = a.epochs {
        sc.epochs = e;
    }
    if !a.mode.is_empty() {
        sc.modes = a.mode.clone();
    }
    sc.validate().map_err(scenario_failure)?;

    let mut runs = Vec::new();
    for &mode in &sc.modes {
        runs.extend(sc.epoch_loop(mode).map_err(scenario_failure)?);
    }
    let summaries = summarize(&runs);
    let mut text = Vec::new();
    write_summary(&summaries, &mut text).invalid()?;
    print!("{}", String::from_utf8_lossy(&text));

    for m in &runs {
        let stem = format!("{}_e{}", m.mode, m.epoch);
        ctx.out.add(format!("{stem}_trace.csv"), |w| Ok(write_trace_csv(m, w)?))?;
        ctx.out.add(format!("{stem}_requests.csv"), |w| Ok(write_requests_csv(m, w)?))?;
        ctx.out.add(format!("{stem}_tokens.txt"), |w| Ok(write_token_dump(m, w)?))?;
    }
    ctx.out.add("summary.txt", |w| Ok(w.write_all(&text)?))?;
    ctx.out.add("summary.csv", |w| Ok(write_summary_csv(&summaries, w)?))
}

fn cmd_report(a: ReportArgs, ctx: &mut Ctx) -> Result<(), Failure> {
    let mut all: Vec<ModeSummary> = Vec::new();
    for p in &a.inputs {
        let rows = read_summary_csv(open(p)?).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?;
        all.extend(rows);
    }
    let mut text = Vec::new();
    write_summary(&all, &mut text).invalid()?;
    let mut epochs: Vec<u64> = all.iter().map(|s| s.epoch).collect();
    epochs.sort_unstable();
    epochs.dedup();
    let find = |mode, e| all.iter().find(|s| s.mode == mode && s.epoch == e);
    for e in epochs {
        if let (Some(d), Some(u)) = (find(BudgetMode::Das, e), find(BudgetMode::Unlimited, e)) {
            let cut = 1.0 - d.makespan_model_time / u.makespan_model_time;
            writeln!(text, "[das vs unlimited epoch={e}]\nmakespan_reduction={cut:.6}").invalid()?;
        }
    }
    print!("{}", String::from_utf8_lossy(&text));
    ctx.out.add("report.txt", |w| Ok(w.write_all(&text)?))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let config = CliConfig::load(cli.config.as_deref())?;
    let dir = cli.out_dir.clone().or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let mut ctx = Ctx { seed: cli.seed, out: Outputs::new(&dir), config };
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a, &mut ctx),
        Command::FitLatency(a) => cmd_fit_latency(a, &mut ctx),
        Command::Optimize(a) => cmd_optimize(a, &mut ctx),
        Command::BenchIndex(a) => cmd_bench(a, &mut ctx),
        Command::Simulate(a) => cmd_simulate(a, &mut ctx),
        Command::Report(a) => cmd_report(a, &mut ctx),
    }?;
    for p in ctx.out.commit()? {
        log::info!("wrote {}", p.display());
        eprintln!("wrote {}", display_path(&p));
    }
    Ok(())
}

fn display_path(p: &Path) -> String {
    p.strip_prefix("./").unwrap_or(p).display().to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 3 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
