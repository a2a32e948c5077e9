//! Monte-Carlo comparison on Poisson FIFO traffic with one injected non-FIFO
//! packet.
//!
//! Each trial draws one arrival pattern per FIFO rate and reuses it for every
//! non-FIFO size, so the size sweep compares like with like.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curves::{Packet, PacketSequence};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::nonfifo::{fifo_baseline, schedule_non_fifo, Possibility};
use crate::online::{run_online, OnlinePolicy};

/// 1 KB in bits.
pub const KB: f64 = 8192.0;

/// Nudge applied when the non-FIFO deadline lands on a FIFO deadline.
const DEADLINE_NUDGE: f64 = 1e-6;

/// Give up after this many rejected non-FIFO draws in one trial.
const MAX_RESAMPLES: usize = 100_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// FIFO Poisson rates (packets/s).
    pub lambda_fifo: Vec<f64>,
    pub horizon_s: f64,
    /// Arrival-free tail of the horizon.
    pub guard_s: f64,
    pub fifo_bits: f64,
    /// Non-FIFO sizes to sweep.
    pub nonfifo_bits: Vec<f64>,
    /// Rate of the stream the non-FIFO packet is drawn from.
    pub nonfifo_rate: f64,
    pub fifo_deadline_s: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "EnergyModel::experiment_link")]
    pub model: EnergyModel,
}

impl ExperimentConfig {
    /// T = 40 s, 2 s guard, 1 KB FIFO packets with 4 s deadlines, non-FIFO
    /// sizes 0.1 KB to 2 KB, 1000 trials.
    pub fn standard() -> Self {
        ExperimentConfig {
            lambda_fifo: vec![2.0, 3.0],
            horizon_s: 40.0,
            guard_s: 2.0,
            fifo_bits: KB,
            nonfifo_bits: (1..=20).map(|k| k as f64 * KB / 10.0).collect(),
            nonfifo_rate: 0.025,
            fifo_deadline_s: 4.0,
            trials: 1000,
            seed: 20_150_601,
            model: EnergyModel::experiment_link(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")))
            }
        };
        if self.lambda_fifo.is_empty() {
            return Err(Error::InvalidConfig("lambda_fifo is empty".into()));
        }
        for &l in &self.lambda_fifo {
            pos("lambda_fifo", l)?;
        }
        if self.nonfifo_bits.is_empty() {
            return Err(Error::InvalidConfig("nonfifo_bits is empty".into()));
        }
        for &b in &self.nonfifo_bits {
            pos("nonfifo_bits", b)?;
        }
        pos("horizon_s", self.horizon_s)?;
        pos("guard_s", self.guard_s)?;
        pos("fifo_bits", self.fifo_bits)?;
        pos("nonfifo_rate", self.nonfifo_rate)?;
        pos("fifo_deadline_s", self.fifo_deadline_s)?;
        if self.guard_s >= self.horizon_s {
            return Err(Error::InvalidConfig("guard_s must be below horizon_s".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be positive".into()));
        }
        self.model.validate().map_err(|e| Error::InvalidConfig(e.to_string()))
    }
}

/// One generated instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub sequence: PacketSequence,
    /// Position of the non-FIFO packet.
    pub non_fifo_index: usize,
    /// Rejected non-FIFO draws.
    pub resamples: usize,
}

/// Arrival pattern shared across non-FIFO sizes.
#[derive(Clone, Debug)]
struct Pattern {
    fifo: Vec<(f64, f64)>,
    non_fifo: (f64, f64),
    resamples: usize,
}

fn draw_pattern(config: &ExperimentConfig, lambda: f64, rng: &mut ChaCha8Rng) -> Result<Pattern> {
    let t_max = config.horizon_s - config.guard_s;
    let gap = Exp::new(lambda).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let first = Exp::new(config.nonfifo_rate).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut fifo = Vec::new();
    let mut t = 0.0;
    loop {
        t += gap.sample(rng);
        if t > t_max {
            break;
        }
        fifo.push((t, (t + config.fifo_deadline_s).min(config.horizon_s)));
    }
    let mut resamples = 0;
    loop {
        let a: f64 = first.sample(rng);
        let prev = fifo.iter().rev().find(|f| f.0 < a).copied();
        let Some((_, d_prev)) = prev.filter(|&(_, d_prev)| a < t_max && d_prev > a && fifo.iter().all(|f| f.0 != a)) else {
            resamples += 1;
            if resamples > MAX_RESAMPLES {
                return Err(Error::InvalidConfig("could not place a non-FIFO packet".into()));
            }
            continue;
        };
        let mut d = a + (d_prev - a) / 2.0;
        while fifo.iter().any(|f| f.1 == d) {
            d -= DEADLINE_NUDGE;
        }
        return Ok(Pattern {
            fifo,
            non_fifo: (a, d),
            resamples,
        });
    }
}

fn build(config: &ExperimentConfig, pattern: &Pattern, nonfifo_bits: f64) -> Result<Workload> {
    if !(nonfifo_bits > 0.0) {
        return Err(Error::InvalidConfig(format!("non-FIFO size must be positive, got {nonfifo_bits}")));
    }
    let (a, d) = pattern.non_fifo;
    let idx = pattern.fifo.iter().filter(|f| f.0 < a).count();
    let mut rows: Vec<(f64, f64, f64)> = pattern.fifo.iter().map(|&(t, dl)| (config.fifo_bits, t, dl)).collect();
    rows.insert(idx, (nonfifo_bits, a, d));
    let packets = rows
        .into_iter()
        .enumerate()
        .map(|(i, (b, t, dl))| Packet::new(i as u64 + 1, b, t, dl))
        .collect();
    Ok(Workload {
        sequence: PacketSequence::new(packets)?,
        non_fifo_index: idx,
        resamples: pattern.resamples,
    })
}

/// One instance at FIFO rate `lambda` with a non-FIFO packet of
/// `nonfifo_bits`, fully determined by `seed`.
pub fn generate_workload(config: &ExperimentConfig, lambda: f64, nonfifo_bits: f64, seed: u64) -> Result<Workload> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pattern = draw_pattern(config, lambda, &mut rng)?;
    build(config, &pattern, nonfifo_bits)
}

/// Seed of trial `trial` at rate index `lambda_index`.
pub fn trial_seed(base: u64, lambda_index: usize, trial: usize) -> u64 {
    base.wrapping_add(trial as u64).wrapping_add((lambda_index as u64) << 40)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchedulerKind {
    NonFifoOffline,
    FifoOffline,
    NonFifoOnline,
    FifoOnline,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 4] = [
        SchedulerKind::NonFifoOffline,
        SchedulerKind::FifoOffline,
        SchedulerKind::NonFifoOnline,
        SchedulerKind::FifoOnline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::NonFifoOffline => "nonfifo-offline",
            SchedulerKind::FifoOffline => "fifo-offline",
            SchedulerKind::NonFifoOnline => "nonfifo-online",
            SchedulerKind::FifoOnline => "fifo-online",
        }
    }

    /// Energy of this scheduler on one instance.
    pub fn energy(self, seq: &PacketSequence, model: &EnergyModel) -> Result<f64> {
        match self {
            SchedulerKind::NonFifoOffline => Ok(model.schedule_energy(&schedule_non_fifo(seq)?.schedule)),
            SchedulerKind::FifoOffline => Ok(model.schedule_energy(&fifo_baseline(seq)?)),
            SchedulerKind::NonFifoOnline => Ok(run_online(seq, OnlinePolicy::NonFifo, model)?.energy),
            SchedulerKind::FifoOnline => Ok(run_online(seq, OnlinePolicy::Fifo, model)?.energy),
        }
    }
}

/// Energies of the four schedulers on one trial, in [`SchedulerKind::ALL`]
/// order; `None` where the scheduler failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub lambda: f64,
    pub b_non_bits: f64,
    pub trial: usize,
    pub energies: [Option<f64>; 4],
    pub possibility: Option<Possibility>,
    pub packets: usize,
    pub resamples: usize,
}

impl TrialRecord {
    pub fn energy(&self, kind: SchedulerKind) -> Option<f64> {
        self.energies[kind as usize]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lambda: f64,
    pub b_non_bits: f64,
    pub scheduler: SchedulerKind,
    pub mean_energy_j: f64,
    pub stddev: f64,
    pub trials: usize,
    pub infeasible_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub cells: Vec<Cell>,
    pub records: Vec<TrialRecord>,
}

impl ResultTable {
    pub fn cell(&self, lambda: f64, b_non_bits: f64, kind: SchedulerKind) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.lambda == lambda && c.b_non_bits == b_non_bits && c.scheduler == kind)
    }

    pub fn mean(&self, lambda: f64, b_non_bits: f64, kind: SchedulerKind) -> Option<f64> {
        self.cell(lambda, b_non_bits, kind).map(|c| c.mean_energy_j)
    }

    /// `1 - nonfifo / fifo` on mean energies, offline or online.
    pub fn savings(&self, lambda: f64, b_non_bits: f64, offline: bool) -> Option<f64> {
        let (a, b) = if offline {
            (SchedulerKind::NonFifoOffline, SchedulerKind::FifoOffline)
        } else {
            (SchedulerKind::NonFifoOnline, SchedulerKind::FifoOnline)
        };
        Some(1.0 - self.mean(lambda, b_non_bits, a)? / self.mean(lambda, b_non_bits, b)?)
    }

    pub fn lambdas(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !v.contains(&c.lambda) {
                v.push(c.lambda);
            }
        }
        v
    }

    pub fn sizes(&self) -> Vec<f64> {
        let mut v: Vec<f64> = Vec::new();
        for c in &self.cells {
            if !v.contains(&c.b_non_bits) {
                v.push(c.b_non_bits);
            }
        }
        v
    }

    pub fn total_resamples(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.b_non_bits == self.records[0].b_non_bits)
            .map(|r| r.resamples)
            .sum()
    }

    /// Per-trial orderings that must hold for optimal offline schedulers:
    /// non-FIFO offline below FIFO offline, each offline below its online
    /// counterpart. Returns a description of each violation.
    pub fn dominance_violations(&self, rel: f64) -> Vec<String> {
        use SchedulerKind::*;
        let pairs = [
            (NonFifoOffline, FifoOffline),
            (NonFifoOffline, NonFifoOnline),
            (FifoOffline, FifoOnline),
        ];
        let mut out = Vec::new();
        for r in &self.records {
            for (lo, hi) in pairs {
                if let (Some(a), Some(b)) = (r.energy(lo), r.energy(hi)) {
                    if a > b * (1.0 + rel) {
                        out.push(format!(
                            "lambda={} b_non={} trial={}: {} {} > {} {}",
                            r.lambda,
                            r.b_non_bits,
                            r.trial,
                            lo.name(),
                            a,
                            hi.name(),
                            b
                        ));
                    }
                }
            }
        }
        out
    }

    /// `lambda,b_non_bits,scheduler,mean_energy_j,stddev,trials,infeasible_count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,b_non_bits,scheduler,mean_energy_j,stddev,trials,infeasible_count\n");
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.lambda,
                c.b_non_bits,
                c.scheduler.name(),
                c.mean_energy_j,
                c.stddev,
                c.trials,
                c.infeasible_count
            );
        }
        out
    }

    /// Mean energy per scheduler against non-FIFO size, for one rate.
    pub fn plot_csv(&self, lambda: f64) -> String {
        let mut out = String::from("b_non_bits");
        for k in SchedulerKind::ALL {
            out.push(',');
            out.push_str(k.name());
        }
        out.push('\n');
        for b in self.sizes() {
            let _ = write!(out, "{b}");
            for k in SchedulerKind::ALL {
                let _ = write!(out, ",{}", self.mean(lambda, b, k).unwrap_or(f64::NAN));
            }
            out.push('\n');
        }
        out
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every trial of every `(lambda, size)` cell with all four schedulers.
/// Trials run in parallel; results are reduced in trial order.
pub fn run_comparison(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let model = config.model;
    let mut cells = Vec::new();
    let mut records = Vec::new();
    for (li, &lambda) in config.lambda_fifo.iter().enumerate() {
        let per_trial: Vec<Result<Vec<TrialRecord>>> = (0..config.trials)
            .into_par_iter()
            .map(|trial| {
                let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(config.seed, li, trial));
                let pattern = draw_pattern(config, lambda, &mut rng)?;
                let mut out = Vec::with_capacity(config.nonfifo_bits.len());
                for &b in &config.nonfifo_bits {
                    let w = build(config, &pattern, b)?;
                    let seq = &w.sequence;
                    let decision = schedule_non_fifo(seq).ok();
                    let mut energies = [None; 4];
                    for k in SchedulerKind::ALL {
                        let e = match (k, &decision) {
                            (SchedulerKind::NonFifoOffline, Some(d)) => Some(model.schedule_energy(&d.schedule)),
                            (SchedulerKind::NonFifoOffline, None) => None,
                            _ => k.energy(seq, &model).ok(),
                        };
                        energies[k as usize] = e.filter(|e| e.is_finite());
                    }
                    out.push(TrialRecord {
                        lambda,
                        b_non_bits: b,
                        trial,
                        energies,
                        possibility: decision.map(|d| d.possibility),
                        packets: seq.len(),
                        resamples: w.resamples,
                    });
                }
                Ok(out)
            })
            .collect();
        let mut lam_records = Vec::with_capacity(config.trials * config.nonfifo_bits.len());
        for r in per_trial {
            lam_records.extend(r?);
        }
        for &b in &config.nonfifo_bits {
            for k in SchedulerKind::ALL {
                let vals: Vec<f64> = lam_records
                    .iter()
                    .filter(|r| r.b_non_bits == b)
                    .filter_map(|r| r.energy(k))
                    .collect();
                let (mean, sd) = mean_std(&vals);
                cells.push(Cell {
                    lambda,
                    b_non_bits: b,
                    scheduler: k,
                    mean_energy_j: mean,
                    stddev: sd,
                    trials: vals.len(),
                    infeasible_count: config.trials - vals.len(),
                });
            }
        }
        records.extend(lam_records);
    }
    Ok(ResultTable { cells, records })
}
