use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nonfifo_sched::curves::attribute_in_order;
use nonfifo_sched::{
    detect_non_fifo, discrete_convex_oracle, grid_split_oracle, is_feasible, run_comparison,
    run_online, schedule_fifo, schedule_non_fifo, EnergyModel, Error as SchedError,
    ExperimentConfig, OnlinePolicy, Packet, PacketSequence, Schedule, SchedulerKind, TraceEvent,
    DEFAULT_TOLERANCE,
};

/// Writes to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

macro_rules! outln {
    ($($arg:tt)*) => {
        emit(&format!("{}\n", format_args!($($arg)*)))
    };
}

/// Relative gap above which `verify` fails.
const VERIFY_GAP: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "nonfifo", version, about = "Energy-optimal packet scheduling over an AWGN link")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    NonFifo,
    Fifo,
}

#[derive(Subcommand)]
enum Command {
    /// Compute the offline (or online) schedule of a workload file.
    Schedule {
        workload: PathBuf,
        /// Power-rate model file (JSON or TOML). Defaults to unit-noise Shannon.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Replan at every arrival instead of scheduling offline.
        #[arg(long)]
        online: bool,
        /// Online backlog policy.
        #[arg(long, value_enum, default_value = "non-fifo")]
        policy: Policy,
        /// Write the online event trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Cross-check the scheduler against the brute-force oracles.
    Verify {
        workload: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Split grid resolution.
        #[arg(long, default_value_t = 2001)]
        grid: usize,
        /// Time steps of the discretized convex program.
        #[arg(long, default_value_t = 4000)]
        dt: usize,
        /// Only check the given schedule file for feasibility.
        #[arg(long)]
        check_schedule: Option<PathBuf>,
    },
    /// Run the Monte-Carlo comparison of the four schedulers.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

/// Parses JSON for `.json` files and TOML otherwise.
fn load<T: DeserializeOwned>(path: &Path) -> anyhow::Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[derive(Deserialize)]
struct WorkloadFile {
    packets: Vec<Packet>,
}

/// Parse first, validate second, so infeasible packets surface as such.
fn load_sequence(path: &Path) -> anyhow::Result<PacketSequence> {
    let raw: WorkloadFile = load(path)?;
    Ok(PacketSequence::new(raw.packets)?)
}

fn load_model(path: Option<&Path>) -> anyhow::Result<EnergyModel> {
    let model = match path {
        Some(p) => load(p)?,
        None => EnergyModel::unit_shannon(1.0)?,
    };
    model.validate()?;
    Ok(model)
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    outln!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn cmd_schedule(
    workload: &Path,
    model: Option<&Path>,
    online: bool,
    policy: Policy,
    trace: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let seq = load_sequence(workload)?;
    let model = load_model(model)?;
    if online {
        let policy = match policy {
            Policy::NonFifo => OnlinePolicy::NonFifo,
            Policy::Fifo => OnlinePolicy::Fifo,
        };
        let run = run_online(&seq, policy, &model)?;
        if let Some(path) = trace {
            fs::write(path, TraceEvent::to_csv(&run.trace))
                .with_context(|| format!("writing {}", path.display()))?;
        }
        print_json(&json!({
            "mode": "online",
            "policy": policy,
            "energy_joules": run.energy,
            "stats": run.stats,
            "schedule": run.schedule,
        }))?;
        if run.stats.deadline_misses > 0 {
            eprintln!("error: {} deadline misses", run.stats.deadline_misses);
            return Ok(ExitCode::from(2));
        }
        return Ok(ExitCode::SUCCESS);
    }
    match detect_non_fifo(&seq)? {
        None => {
            let schedule = schedule_fifo(&seq)?;
            print_json(&json!({
                "mode": "fifo",
                "energy_joules": model.schedule_energy(&schedule),
                "schedule": schedule,
            }))?;
        }
        Some(_) => {
            let d = schedule_non_fifo(&seq)?;
            print_json(&json!({
                "mode": "non_fifo",
                "possibility": d.possibility,
                "split_bits": d.split_bits,
                "j": d.index + 1,
                "energy_joules": model.schedule_energy(&d.schedule),
                "schedule": d.schedule,
            }))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check_schedule(seq: &PacketSequence, model: &EnergyModel, path: &Path) -> anyhow::Result<ExitCode> {
    let mut schedule: Schedule = load(path)?;
    if schedule.attribution().is_empty() && seq.is_fifo() {
        let order: Vec<(u64, f64)> = seq.packets().iter().map(|p| (p.id, p.size_bits)).collect();
        let pieces = attribute_in_order(schedule.segments(), &order);
        schedule = schedule.with_attribution(pieces);
    }
    let report = is_feasible(&schedule, seq, DEFAULT_TOLERANCE);
    match report.violation {
        None => {
            outln!("feasible: energy {:.12e} J", model.schedule_energy(&schedule));
            Ok(ExitCode::SUCCESS)
        }
        Some(v) => {
            let who = v.packet_id.map(|id| format!(" packet {id}")).unwrap_or_default();
            outln!("infeasible: {:?} at t = {}{}", v.kind, v.time, who);
            Ok(ExitCode::from(2))
        }
    }
}

fn cmd_verify(
    workload: &Path,
    model: Option<&Path>,
    grid: usize,
    dt: usize,
    check_schedule: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let seq = load_sequence(workload)?;
    let model = load_model(model)?;
    if let Some(path) = check_schedule {
        return cmd_check_schedule(&seq, &model, path);
    }
    let mut worst: f64 = 0.0;
    match detect_non_fifo(&seq)? {
        None => {
            let sched = schedule_fifo(&seq)?;
            let e = model.schedule_energy(&sched);
            let disc = discrete_convex_oracle(&seq, &model, dt)?;
            let gap = rel_gap(e, disc.energy);
            worst = worst.max(gap);
            outln!("taut string      {:.12e} J", e);
            outln!("discrete oracle  {:.12e} J  gap {:.3e}", disc.energy, gap);
        }
        Some(j) => {
            let d = schedule_non_fifo(&seq)?;
            let e = model.schedule_energy(&d.schedule);
            outln!(
                "cascade          {:.12e} J  {} S = {} (j = {})",
                e,
                d.possibility,
                d.split_bits,
                j + 1
            );
            let g = grid_split_oracle(&seq, j, &model, grid)?;
            let gap = (e - g.energy) / g.energy;
            worst = worst.max(gap);
            let class_ok = g.matches(d.possibility, d.split_bits, 1e-6);
            outln!(
                "grid oracle      {:.12e} J  S = {}  gap {:.3e}  class {}",
                g.energy,
                g.split_bits,
                gap,
                if class_ok { "ok" } else { "MISMATCH" }
            );
            if !class_ok {
                worst = f64::INFINITY;
            }
            let disc = discrete_convex_oracle(&d.reordered, &model, dt)?;
            let gap = rel_gap(e, disc.energy);
            worst = worst.max(gap);
            outln!("discrete oracle  {:.12e} J  gap {:.3e}  (reordered sequence)", disc.energy, gap);
        }
    }
    if worst > VERIFY_GAP {
        outln!("FAIL: gap {worst:.3e} exceeds {VERIFY_GAP:e}");
        return Ok(ExitCode::from(3));
    }
    outln!("ok");
    Ok(ExitCode::SUCCESS)
}

fn cmd_simulate(
    config: &Path,
    out: &Path,
    trials: Option<usize>,
    seed: Option<u64>,
    model: Option<&Path>,
) -> anyhow::Result<ExitCode> {
    let mut cfg: ExperimentConfig = load(config)?;
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(m) = model {
        cfg.model = load_model(Some(m))?;
    }
    let table = run_comparison(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let results = out.join("results.csv");
    fs::write(&results, table.to_csv()).with_context(|| format!("writing {}", results.display()))?;
    for lambda in table.lambdas() {
        let path = out.join(format!("plot_lambda_{lambda}.csv"));
        fs::write(&path, table.plot_csv(lambda)).with_context(|| format!("writing {}", path.display()))?;
    }

    let mut summary = format!("{:>7} {:>10}", "lambda", "b_non");
    for k in SchedulerKind::ALL {
        let _ = write!(summary, " {:>16}", k.name());
    }
    let _ = writeln!(summary, " {:>9} {:>9}", "save-off", "save-on");
    for lambda in table.lambdas() {
        for b in table.sizes() {
            let _ = write!(summary, "{lambda:>7} {b:>10}");
            for k in SchedulerKind::ALL {
                let _ = write!(summary, " {:>16.6e}", table.mean(lambda, b, k).unwrap_or(f64::NAN));
            }
            let s = |off| table.savings(lambda, b, off).unwrap_or(f64::NAN) * 100.0;
            let _ = writeln!(summary, " {:>8.2}% {:>8.2}%", s(true), s(false));
        }
    }
    emit(&summary);
    let violations = table.dominance_violations(1e-9);
    for v in &violations {
        eprintln!("dominance violation: {v}");
    }
    if !violations.is_empty() {
        bail!("{} dominance violations", violations.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Schedule {
            workload,
            model,
            online,
            policy,
            trace,
        } => cmd_schedule(workload, model.as_deref(), *online, *policy, trace.as_deref()),
        Command::Verify {
            workload,
            model,
            grid,
            dt,
            check_schedule,
        } => cmd_verify(workload, model.as_deref(), *grid, *dt, check_schedule.as_deref()),
        Command::Simulate {
            config,
            out,
            trials,
            seed,
            model,
        } => cmd_simulate(config, out, *trials, *seed, model.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let infeasible = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<SchedError>(), Some(SchedError::Infeasible { .. })));
            ExitCode::from(if infeasible { 2 } else { 1 })
        }
    }
}
