//! Causal rescheduling: at every arrival, re-run the offline optimum over the
//! unsent backlog plus the new packet, all treated as available now.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::curves::{Packet, PacketSequence, Schedule};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::nonfifo::{detect_non_fifo, schedule_non_fifo};
use crate::taut_string::schedule_fifo;

/// Residuals at or below this fraction of the packet size count as sent.
const RESIDUAL_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnlinePolicy {
    /// Plan each backlog with the non-FIFO-aware offline scheduler.
    NonFifo,
    /// Serve in arrival order.
    Fifo,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineStats {
    pub arrivals: usize,
    pub replans: usize,
    /// Replans that went through the non-FIFO cascade.
    pub non_fifo_plans: usize,
    /// Replans with more than one inversion, planned in deadline order.
    pub edf_fallbacks: usize,
    pub deadline_misses: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    Arrival { time: f64, packet_id: u64 },
    Replan { time: f64, backlog: usize, plan: String },
    Segment { t0: f64, t1: f64, rate: f64 },
    Miss { time: f64, packet_id: u64, residual_bits: f64 },
}

impl TraceEvent {
    /// CSV with header `kind,time,end,rate,packet_id,detail`.
    pub fn to_csv(events: &[TraceEvent]) -> String {
        let mut out = String::from("kind,time,end,rate,packet_id,detail\n");
        for e in events {
            let _ = match e {
                TraceEvent::Arrival { time, packet_id } => writeln!(out, "arrival,{time},,,{packet_id},"),
                TraceEvent::Replan { time, backlog, plan } => writeln!(out, "replan,{time},,,,{plan}:{backlog}"),
                TraceEvent::Segment { t0, t1, rate } => writeln!(out, "segment,{t0},{t1},{rate},,"),
                TraceEvent::Miss {
                    time,
                    packet_id,
                    residual_bits,
                } => writeln!(out, "miss,{time},,,{packet_id},{residual_bits}"),
            };
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct OnlineRun {
    pub schedule: Schedule,
    pub energy: f64,
    pub stats: OnlineStats,
    pub trace: Vec<TraceEvent>,
}

/// Replanning state machine.
#[derive(Clone, Debug)]
pub struct OnlineScheduler {
    policy: OnlinePolicy,
    now: f64,
    /// Unsent packets in arrival order; `size_bits` is the residual.
    backlog: Vec<Packet>,
    /// Original sizes, for the residual threshold.
    sizes: Vec<(u64, f64)>,
    executed: Schedule,
    plan: Schedule,
    stats: OnlineStats,
    trace: Vec<TraceEvent>,
}

impl OnlineScheduler {
    pub fn new(policy: OnlinePolicy) -> Self {
        OnlineScheduler {
            policy,
            now: 0.0,
            backlog: Vec::new(),
            sizes: Vec::new(),
            executed: Schedule::default(),
            plan: Schedule::default(),
            stats: OnlineStats::default(),
            trace: Vec::new(),
        }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn backlog(&self) -> &[Packet] {
        &self.backlog
    }

    pub fn plan(&self) -> &Schedule {
        &self.plan
    }

    pub fn stats(&self) -> OnlineStats {
        self.stats
    }

    fn original_size(&self, id: u64) -> f64 {
        self.sizes.iter().rev().find(|s| s.0 == id).map_or(0.0, |s| s.1)
    }

    /// Commits the plan up to `t` and shrinks the backlog accordingly.
    fn advance(&mut self, t: f64) -> Result<()> {
        if t < self.now {
            return Err(Error::InvalidArgument(format!("time {t} precedes current time {}", self.now)));
        }
        let done = self.plan.prefix(t);
        for p in &mut self.backlog {
            p.size_bits -= done.packet_bits(p.id);
        }
        for s in done.segments() {
            self.trace.push(TraceEvent::Segment {
                t0: s.t0,
                t1: s.t1,
                rate: s.rate,
            });
        }
        self.executed.append(done)?;
        self.now = t;
        let mut kept = Vec::with_capacity(self.backlog.len());
        for p in std::mem::take(&mut self.backlog) {
            if p.size_bits <= RESIDUAL_EPS * self.original_size(p.id) {
                continue;
            }
            if p.deadline_s <= t {
                self.stats.deadline_misses += 1;
                self.trace.push(TraceEvent::Miss {
                    time: t,
                    packet_id: p.id,
                    residual_bits: p.size_bits,
                });
                continue;
            }
            kept.push(p);
        }
        self.backlog = kept;
        Ok(())
    }

    /// Handles an arrival at `packet.arrival_s`.
    pub fn arrive(&mut self, packet: Packet) -> Result<()> {
        self.advance(packet.arrival_s)?;
        self.stats.arrivals += 1;
        self.trace.push(TraceEvent::Arrival {
            time: self.now,
            packet_id: packet.id,
        });
        if packet.deadline_s <= self.now {
            self.stats.deadline_misses += 1;
            return Ok(());
        }
        self.sizes.push((packet.id, packet.size_bits));
        self.backlog.push(packet);
        self.replan()
    }

    /// Recomputes the plan from the current backlog at the current time.
    pub fn replan(&mut self) -> Result<()> {
        let now = self.now;
        let pending: Vec<Packet> = self
            .backlog
            .iter()
            .map(|p| Packet::new(p.id, p.size_bits, now, p.deadline_s))
            .collect();
        self.stats.replans += 1;
        let (plan, label) = match self.policy {
            OnlinePolicy::Fifo => {
                // Served in order, a packet must also finish before every
                // later packet's deadline.
                let mut eff = pending;
                for i in (0..eff.len().saturating_sub(1)).rev() {
                    eff[i].deadline_s = eff[i].deadline_s.min(eff[i + 1].deadline_s);
                }
                (schedule_fifo(&PacketSequence::relaxed(eff)?)?, "fifo".to_string())
            }
            OnlinePolicy::NonFifo => {
                let seq = PacketSequence::relaxed(pending.clone())?;
                match detect_non_fifo(&seq) {
                    Ok(None) => (schedule_fifo(&seq)?, "fifo".to_string()),
                    Ok(Some(_)) => {
                        self.stats.non_fifo_plans += 1;
                        let d = schedule_non_fifo(&seq)?;
                        (d.schedule, d.possibility.to_string())
                    }
                    Err(Error::Unsupported(_)) => {
                        self.stats.edf_fallbacks += 1;
                        let mut edf = pending;
                        edf.sort_by(|a, b| a.deadline_s.total_cmp(&b.deadline_s));
                        (schedule_fifo(&PacketSequence::relaxed(edf)?)?, "edf".to_string())
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        self.trace.push(TraceEvent::Replan {
            time: now,
            backlog: self.backlog.len(),
            plan: label,
        });
        self.plan = plan;
        Ok(())
    }

    /// Runs the current plan to completion.
    pub fn finish(mut self) -> Result<(Schedule, OnlineStats, Vec<TraceEvent>)> {
        let end = self.plan.end_time().unwrap_or(self.now).max(self.now);
        self.advance(end)?;
        Ok((self.executed, self.stats, self.trace))
    }
}

/// Feeds `seq` to the scheduler in arrival order.
pub fn run_online(seq: &PacketSequence, policy: OnlinePolicy, model: &EnergyModel) -> Result<OnlineRun> {
    let mut sched = OnlineScheduler::new(policy);
    for p in seq.packets() {
        sched.arrive(*p)?;
    }
    let (schedule, stats, trace) = sched.finish()?;
    Ok(OnlineRun {
        energy: model.schedule_energy(&schedule),
        schedule,
        stats,
        trace,
    })
}
