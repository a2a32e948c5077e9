//! Offline scheduling of a sequence with one non-FIFO packet.
//!
//! Packet `j` has a deadline earlier than its predecessor. The packets just
//! before it whose deadlines exceed `d_j` form the *block* `m..j`. Splitting
//! the block at a cumulative offset `S` and sending the first part ahead of
//! `P_j` (the rest after it) yields a FIFO sequence; the problem reduces to the
//! choice of `S`. In the common case the block is the single packet `P_{j-1}`.
//!
//! [`schedule_non_fifo`] tries, in order: `S = 0` (P1), `S = block` (P2), the
//! split read off the merged problem (P3), and reserving `[a_j, d_j]` for
//! `P_j` alone (P4).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::curves::{deadline_descents, Packet, PacketSequence, Schedule, Segment};
use crate::error::{Error, Result};
use crate::taut_string::schedule_fifo;

/// Relative slack for the rate comparisons of P1 and P2.
const RATE_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Possibility {
    P1,
    P2,
    P3,
    P4,
}

impl fmt::Display for Possibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Possibility::P1 => "P1",
            Possibility::P2 => "P2",
            Possibility::P3 => "P3",
            Possibility::P4 => "P4",
        };
        f.write_str(s)
    }
}

/// Index (0-based) of the non-FIFO packet, if any.
///
/// Errors with [`Error::Unsupported`] when there is more than one inversion or
/// when removing the offending packet does not restore deadline order.
pub fn detect_non_fifo(seq: &PacketSequence) -> Result<Option<usize>> {
    let p = seq.packets();
    let descents = deadline_descents(p);
    match descents.as_slice() {
        [] => Ok(None),
        [j] => {
            let j = *j;
            if j + 1 < p.len() && p[j + 1].deadline_s < p[j - 1].deadline_s {
                return Err(Error::Unsupported(format!(
                    "removing packet {} leaves deadlines out of order",
                    p[j].id
                )));
            }
            Ok(Some(j))
        }
        many => Err(Error::Unsupported(format!(
            "{} deadline inversions; only one non-FIFO packet is supported",
            many.len()
        ))),
    }
}

/// A sequence together with its non-FIFO index and block.
#[derive(Clone, Debug)]
pub struct NonFifoInstance {
    pub seq: PacketSequence,
    /// Non-FIFO packet index (0-based).
    pub j: usize,
    /// First block index; the block is `m..j`.
    pub m: usize,
    /// Bits of the packets before the block.
    pub x_lo: f64,
    /// Bits of the block; `S` ranges over `[0, block_bits]`.
    pub block_bits: f64,
}

impl NonFifoInstance {
    pub fn new(seq: &PacketSequence, j: usize) -> Result<Self> {
        let p = seq.packets();
        if j == 0 || j >= p.len() || p[j].deadline_s >= p[j - 1].deadline_s {
            return Err(Error::InvalidArgument(format!("packet {j} is not a non-FIFO packet")));
        }
        let dj = p[j].deadline_s;
        let m = (0..j).find(|&i| p[i].deadline_s > dj).unwrap_or(j - 1);
        let x_lo = p[..m].iter().map(|q| q.size_bits).sum();
        let block_bits = p[m..j].iter().map(|q| q.size_bits).sum();
        Ok(NonFifoInstance {
            seq: seq.clone(),
            j,
            m,
            x_lo,
            block_bits,
        })
    }

    /// Detects the non-FIFO packet and builds the instance.
    pub fn detect(seq: &PacketSequence) -> Result<Self> {
        match detect_non_fifo(seq)? {
            Some(j) => Self::new(seq, j),
            None => Err(Error::NoNonFifo),
        }
    }

    pub fn packet(&self) -> &Packet {
        &self.seq.packets()[self.j]
    }

    /// Packets in split-and-reorder order for split `s`, zero-size parts
    /// removed. Sub-packets keep their parent's id.
    pub fn sar_packets(&self, s: f64) -> Vec<Packet> {
        let p = self.seq.packets();
        let pj = p[self.j];
        let mut before = Vec::new();
        let mut after = Vec::new();
        let mut acc = 0.0;
        for q in &p[self.m..self.j] {
            let first = (s - acc).clamp(0.0, q.size_bits);
            acc += q.size_bits;
            if first > 0.0 {
                before.push(Packet::new(q.id, first, q.arrival_s, pj.deadline_s));
            }
            let rest = q.size_bits - first;
            if rest > 0.0 {
                after.push(Packet::new(q.id, rest, pj.arrival_s, q.deadline_s));
            }
        }
        let mut out: Vec<Packet> = p[..self.m].to_vec();
        out.extend(before);
        out.push(pj);
        out.extend(after);
        out.extend_from_slice(&p[self.j + 1..]);
        out
    }

    pub fn split(&self, s: f64) -> Result<PacketSequence> {
        let tol = 1e-12 * self.block_bits;
        if !(s >= -tol && s <= self.block_bits + tol) {
            return Err(Error::InvalidArgument(format!(
                "split {s} outside [0, {}]",
                self.block_bits
            )));
        }
        PacketSequence::relaxed(self.sar_packets(s.clamp(0.0, self.block_bits)))
    }

    fn order(&self, s: f64) -> Vec<(u64, f64)> {
        self.sar_packets(s).iter().map(|q| (q.id, q.size_bits)).collect()
    }

    /// The optimal FIFO schedule of the reordered sequence for split `s`.
    pub fn sar_schedule(&self, s: f64) -> Result<Schedule> {
        schedule_fifo(&self.split(s)?)
    }

    /// `P_j` folded into block packet `k`: size `B_k + B_j`, window of `k`.
    pub fn merged(&self, k: usize) -> Result<PacketSequence> {
        if k < self.m || k >= self.j {
            return Err(Error::InvalidArgument(format!("packet {k} is not in the block")));
        }
        let p = self.seq.packets();
        let mut out = Vec::with_capacity(p.len() - 1);
        for (i, q) in p.iter().enumerate() {
            if i == self.j {
                continue;
            }
            let mut q = *q;
            if i == k {
                q.size_bits += p[self.j].size_bits;
            }
            out.push(q);
        }
        PacketSequence::relaxed(out)
    }

    /// Rates just before `P_j` starts and just after it completes.
    fn boundary_rates(&self, sched: &Schedule) -> (f64, f64) {
        let id = self.packet().id;
        let start = sched.packet_start(id).unwrap_or(self.packet().arrival_s);
        let end = sched.packet_completion(id).unwrap_or(self.packet().deadline_s);
        let first_arrival = self.seq.packets()[0].arrival_s;
        let before = if start <= first_arrival + 1e-12 * first_arrival.abs().max(1.0) {
            f64::INFINITY
        } else {
            sched.rate_before(start)
        };
        (before, sched.rate_after(end))
    }
}

/// Split-and-reorder of `seq` around non-FIFO packet `j` (0-based).
pub fn split_and_reorder(seq: &PacketSequence, j: usize, s: f64) -> Result<PacketSequence> {
    NonFifoInstance::new(seq, j)?.split(s)
}

/// Result of the cascade.
#[derive(Clone, Debug)]
pub struct NonFifoDecision {
    pub possibility: Possibility,
    /// `S`: block bits sent ahead of `P_j`.
    pub split_bits: f64,
    /// Non-FIFO packet index (0-based).
    pub index: usize,
    pub schedule: Schedule,
    /// The reordered FIFO sequence the schedule is attributed against.
    pub reordered: PacketSequence,
}

impl NonFifoDecision {
    /// For each split block packet: `(id, rate of the part before P_j, rate
    /// of the part after P_j)`.
    pub fn sub_packet_rates(&self, inst: &NonFifoInstance) -> Vec<(u64, f64, f64)> {
        let pj = inst.packet().id;
        let Some(start) = self.schedule.packet_start(pj) else {
            return Vec::new();
        };
        let end = self.schedule.packet_completion(pj).unwrap_or(start);
        let mut out = Vec::new();
        for q in &inst.seq.packets()[inst.m..inst.j] {
            let pieces: Vec<_> = self.schedule.packet_pieces(q.id).collect();
            let first = pieces.iter().filter(|p| p.t1 <= start + 1e-9).max_by(|a, b| a.t1.total_cmp(&b.t1));
            let second = pieces.iter().filter(|p| p.t0 >= end - 1e-9).min_by(|a, b| a.t0.total_cmp(&b.t0));
            if let (Some(a), Some(b)) = (first, second) {
                out.push((q.id, a.rate(), b.rate()));
            }
        }
        out
    }
}

/// P1: everything of the block goes after `P_j`. Fires when the rate ahead of
/// `P_j` is at least the rate after it.
pub fn check_p1(inst: &NonFifoInstance) -> Result<Option<Schedule>> {
    let sched = inst.sar_schedule(0.0)?;
    let (before, after) = inst.boundary_rates(&sched);
    Ok((before >= after * (1.0 - RATE_TOL)).then_some(sched))
}

/// P2: the whole block goes ahead of `P_j`. Fires when the rate ahead of `P_j`
/// is at most the rate after it.
pub fn check_p2(inst: &NonFifoInstance) -> Result<Option<Schedule>> {
    let sched = inst.sar_schedule(inst.block_bits)?;
    let (before, after) = inst.boundary_rates(&sched);
    Ok((before <= after * (1.0 + RATE_TOL)).then_some(sched))
}

/// P3: solve with `P_j` merged into a block packet and read `S` off the
/// merged curve at `d_j`. Accepted when the split is interior and the merged
/// curve respects `P_j`'s arrival.
pub fn check_p3(inst: &NonFifoInstance) -> Result<Option<(Schedule, f64)>> {
    let p = inst.seq.packets();
    let pj = p[inst.j];
    let total = inst.seq.total_bits().max(1.0);
    let tol = 1e-12 * total;
    let s_tol = 1e-12 * inst.block_bits.max(1e-300);
    for k in (inst.m..inst.j).rev() {
        let merged = schedule_fifo(&inst.merged(k)?)?;
        let x = merged.departure_at(pj.deadline_s) - pj.size_bits;
        let lo = inst.x_lo + p[inst.m..k].iter().map(|q| q.size_bits).sum::<f64>();
        let hi = lo + p[k].size_bits;
        if x < lo - tol || x > hi + tol {
            continue;
        }
        let s = x - inst.x_lo;
        if !(s > s_tol && s < inst.block_bits - s_tol) {
            return Ok(None);
        }
        if merged.departure_at(pj.arrival_s) > x + tol {
            return Ok(None);
        }
        let sched = Schedule::attributed(merged.segments().to_vec(), &inst.order(s))?;
        return Ok(Some((sched, s)));
    }
    Ok(None)
}

/// P4: reserve `[a_j, d_j]` for `P_j`, solve the rest with that interval cut
/// out of the time axis, then put it back.
pub fn schedule_p4(inst: &NonFifoInstance) -> Result<(Schedule, f64)> {
    let p = inst.seq.packets();
    let pj = p[inst.j];
    let (a, d) = (pj.arrival_s, pj.deadline_s);
    let delta = d - a;
    let squeeze = |t: f64| {
        if t <= a {
            t
        } else if t <= d {
            a
        } else {
            t - delta
        }
    };
    let rest: Vec<Packet> = p
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != inst.j)
        .map(|(_, q)| Packet::new(q.id, q.size_bits, squeeze(q.arrival_s), squeeze(q.deadline_s)))
        .collect();
    let reduced = schedule_fifo(&PacketSequence::relaxed(rest)?)?;

    let mut segments: Vec<Segment> = Vec::new();
    for s in reduced.segments() {
        if s.t0 < a {
            segments.push(Segment::new(s.t0, s.t1.min(a), s.rate));
        }
    }
    segments.push(Segment::new(a, d, pj.size_bits / delta));
    // `a + delta` need not round to `d`.
    let unsqueeze = |t: f64| if t <= a { d } else { t + delta };
    for s in reduced.segments() {
        if s.t1 > a {
            segments.push(Segment::new(unsqueeze(s.t0), unsqueeze(s.t1), s.rate));
        }
    }
    let s = (reduced.departure_at(a) - inst.x_lo).clamp(0.0, inst.block_bits);
    let joined = Schedule::from_segments(segments)?.coalesced();
    let sched = Schedule::attributed(joined.segments().to_vec(), &inst.order(s))?;
    Ok((sched, s))
}

/// Runs P1 to P4 in order and returns the first that applies.
pub fn schedule_non_fifo(seq: &PacketSequence) -> Result<NonFifoDecision> {
    let inst = NonFifoInstance::detect(seq)?;
    let (possibility, split_bits, schedule) = if let Some(s) = check_p1(&inst)? {
        (Possibility::P1, 0.0, s)
    } else if let Some(s) = check_p2(&inst)? {
        (Possibility::P2, inst.block_bits, s)
    } else if let Some((s, x)) = check_p3(&inst)? {
        (Possibility::P3, x, s)
    } else {
        let (s, x) = schedule_p4(&inst)?;
        (Possibility::P4, x, s)
    };
    Ok(NonFifoDecision {
        possibility,
        split_bits,
        index: inst.j,
        schedule,
        reordered: inst.split(split_bits)?,
    })
}

/// The FIFO comparator: packets sent in arrival order, so the whole block
/// precedes `P_j`. Plain [`schedule_fifo`] for FIFO input.
pub fn fifo_baseline(seq: &PacketSequence) -> Result<Schedule> {
    match detect_non_fifo(seq)? {
        None => schedule_fifo(seq),
        Some(j) => {
            let inst = NonFifoInstance::new(seq, j)?;
            inst.sar_schedule(inst.block_bits)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{is_feasible, DEFAULT_TOLERANCE};
    use crate::energy::EnergyModel;

    fn seq(v: &[(f64, f64, f64)]) -> PacketSequence {
        PacketSequence::new(
            v.iter()
                .enumerate()
                .map(|(i, &(b, a, d))| Packet::new(i as u64 + 1, b, a, d))
                .collect(),
        )
        .unwrap()
    }

    fn triples(s: &PacketSequence) -> Vec<(f64, f64, f64)> {
        s.packets().iter().map(|p| (p.size_bits, p.arrival_s, p.deadline_s)).collect()
    }

    fn unit() -> EnergyModel {
        EnergyModel::unit_shannon(1.0).unwrap()
    }

    #[test]
    fn detect_examples() {
        assert_eq!(detect_non_fifo(&seq(&[(1.0, 0.0, 1.0), (1.0, 1.0, 2.0), (1.0, 2.0, 3.0)])).unwrap(), None);
        assert_eq!(detect_non_fifo(&seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)])).unwrap(), Some(1));
        let two = PacketSequence::relaxed(vec![
            Packet::new(1, 1.0, 0.0, 5.0),
            Packet::new(2, 1.0, 1.0, 2.0),
            Packet::new(3, 1.0, 2.0, 6.0),
            Packet::new(4, 1.0, 3.0, 4.0),
        ])
        .unwrap();
        assert!(matches!(detect_non_fifo(&two), Err(Error::Unsupported(_))));
    }

    #[test]
    fn split_examples() {
        let s = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        assert_eq!(triples(&split_and_reorder(&s, 1, 0.0).unwrap()), vec![(1.0, 1.0, 2.0), (2.0, 1.0, 4.0)]);
        assert_eq!(triples(&split_and_reorder(&s, 1, 2.0).unwrap()), vec![(2.0, 0.0, 2.0), (1.0, 1.0, 2.0)]);
        assert_eq!(
            triples(&split_and_reorder(&s, 1, 0.5).unwrap()),
            vec![(0.5, 0.0, 2.0), (1.0, 1.0, 2.0), (1.5, 1.0, 4.0)]
        );
        assert!(split_and_reorder(&s, 1, 2.5).is_err());
        assert!(split_and_reorder(&s, 0, 0.5).is_err());
    }

    #[test]
    fn block_of_two() {
        // Packets 1 and 2 both have deadlines after packet 3's.
        let s = seq(&[(1.0, 0.0, 1.0), (2.0, 0.5, 6.0), (1.0, 1.0, 7.0), (1.0, 2.0, 3.0), (1.0, 3.0, 8.0)]);
        let inst = NonFifoInstance::detect(&s).unwrap();
        assert_eq!((inst.j, inst.m, inst.x_lo, inst.block_bits), (3, 1, 1.0, 3.0));
        let r = inst.split(2.5).unwrap();
        assert_eq!(
            triples(&r),
            vec![(1.0, 0.0, 1.0), (2.0, 0.5, 3.0), (0.5, 1.0, 3.0), (1.0, 2.0, 3.0), (0.5, 2.0, 7.0), (1.0, 3.0, 8.0)]
        );
        assert!(r.is_fifo());
    }

    #[test]
    fn worked_instance_is_reserved_interval() {
        let s = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        let inst = NonFifoInstance::detect(&s).unwrap();
        assert!(check_p1(&inst).unwrap().is_none());
        assert!(check_p2(&inst).unwrap().is_none());
        // The merged line at rate 0.75 would need P_j to send 1 bit in [1, 2] at 0.75.
        assert!(check_p3(&inst).unwrap().is_none());
        let d = schedule_non_fifo(&s).unwrap();
        assert_eq!(d.possibility, Possibility::P4);
        assert!((d.split_bits - 2.0 / 3.0).abs() < 1e-12);
        let want = 3.0 * (2f64.powf(4.0 / 3.0) - 1.0) + 3.0;
        assert!((unit().schedule_energy(&d.schedule) - want).abs() < 1e-9);
        assert!(is_feasible(&d.schedule, &s, DEFAULT_TOLERANCE).feasible);
    }

    #[test]
    fn merged_line_accepted() {
        let s = seq(&[(2.0, 0.0, 4.0), (1.0, 0.2, 3.0)]);
        let d = schedule_non_fifo(&s).unwrap();
        assert_eq!(d.possibility, Possibility::P3);
        assert!((d.split_bits - 1.25).abs() < 1e-12);
        assert!((unit().schedule_energy(&d.schedule) - 4.0 * (2f64.powf(1.5) - 1.0)).abs() < 1e-12);
        let inst = NonFifoInstance::detect(&s).unwrap();
        for (_, r1, r2) in d.sub_packet_rates(&inst) {
            assert!((r1 - r2).abs() <= 1e-9 * r1);
        }
        assert!(is_feasible(&d.schedule, &s, DEFAULT_TOLERANCE).feasible);
    }

    #[test]
    fn interior_split_below_zero_goes_to_p4() {
        let s = seq(&[(0.1, 0.0, 4.0), (2.0, 2.0, 2.5)]);
        let inst = NonFifoInstance::detect(&s).unwrap();
        assert!(check_p3(&inst).unwrap().is_none());
        let d = schedule_non_fifo(&s).unwrap();
        assert_eq!(d.possibility, Possibility::P4);
        let segs = d.schedule.segments();
        let r = 0.1 / 3.5;
        assert_eq!(segs.len(), 3);
        assert!((segs[0].rate - r).abs() < 1e-12 && segs[0].t1 == 2.0);
        assert!((segs[1].rate - 4.0).abs() < 1e-12);
        assert!((segs[2].rate - r).abs() < 1e-12 && segs[2].t0 == 2.5);
        assert!(is_feasible(&d.schedule, &s, DEFAULT_TOLERANCE).feasible);
    }

    #[test]
    fn p1_fires_when_previous_rate_dominates() {
        let s = seq(&[(3.0, 0.0, 2.0), (1.0, 0.5, 10.0), (0.5, 1.0, 3.0)]);
        let d = schedule_non_fifo(&s).unwrap();
        assert_eq!(d.possibility, Possibility::P1);
        assert_eq!(d.split_bits, 0.0);
        assert!(is_feasible(&d.schedule, &s, DEFAULT_TOLERANCE).feasible);
    }

    #[test]
    fn p2_fires_when_next_packet_is_tight() {
        let s = seq(&[(1.0, 0.0, 5.0), (0.5, 1.0, 4.0), (6.0, 3.0, 5.5)]);
        let d = schedule_non_fifo(&s).unwrap();
        assert_eq!(d.possibility, Possibility::P2);
        assert_eq!(d.split_bits, 1.0);
        assert!(is_feasible(&d.schedule, &s, DEFAULT_TOLERANCE).feasible);
    }

    #[test]
    fn fifo_input_rejected() {
        let s = seq(&[(1.0, 0.0, 1.0), (1.0, 1.0, 2.0)]);
        assert_eq!(schedule_non_fifo(&s).unwrap_err(), Error::NoNonFifo);
        assert!(fifo_baseline(&s).is_ok());
    }

    #[test]
    fn baseline_sends_in_arrival_order() {
        let s = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        let b = fifo_baseline(&s).unwrap();
        assert!(is_feasible(&b, &s, DEFAULT_TOLERANCE).feasible);
        assert_eq!(b.segments().len(), 1);
        assert!((b.segments()[0].rate - 1.5).abs() < 1e-12);
        assert!(unit().schedule_energy(&b) >= unit().schedule_energy(&schedule_non_fifo(&s).unwrap().schedule));
    }

    #[test]
    fn reassembly_is_continuous() {
        let s = seq(&[(1.0, 0.0, 3.0), (2.0, 0.5, 6.0), (1.0, 2.0, 2.5), (1.0, 2.2, 7.0)]);
        let inst = NonFifoInstance::detect(&s).unwrap();
        let (sched, _) = schedule_p4(&inst).unwrap();
        let pj = inst.packet();
        let eps = 1e-9;
        for t in [pj.arrival_s, pj.deadline_s] {
            assert!((sched.departure_at(t - eps) - sched.departure_at(t + eps)).abs() < 1e-6);
        }
        assert!(is_feasible(&sched, &s, DEFAULT_TOLERANCE).feasible);
    }
}
