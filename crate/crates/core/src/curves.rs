//! Packets, cumulative curves, departure schedules and the feasibility check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute slack in bits used by [`is_feasible`] callers that have no better
/// choice. The check scales it by `max(1, total bits)`.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// One packet `(B, t_a, t_d)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    #[serde(rename = "bits")]
    pub size_bits: f64,
    #[serde(rename = "arrival")]
    pub arrival_s: f64,
    #[serde(rename = "deadline")]
    pub deadline_s: f64,
}

impl Packet {
    pub fn new(id: u64, size_bits: f64, arrival_s: f64, deadline_s: f64) -> Self {
        Packet {
            id,
            size_bits,
            arrival_s,
            deadline_s,
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |reason: &str| {
            Err(Error::InvalidPacket {
                id: self.id,
                reason: reason.to_string(),
            })
        };
        if !(self.size_bits.is_finite() && self.size_bits > 0.0) {
            return bad("size must be positive and finite");
        }
        if !(self.arrival_s.is_finite() && self.arrival_s >= 0.0) {
            return bad("arrival must be finite and non-negative");
        }
        if !self.deadline_s.is_finite() {
            return bad("deadline must be finite");
        }
        if self.deadline_s <= self.arrival_s {
            return Err(Error::Infeasible {
                time: self.deadline_s,
                packet_id: Some(self.id),
            });
        }
        Ok(())
    }
}

/// Packets ordered by arrival.
///
/// [`PacketSequence::new`] enforces the strict model: arrivals strictly
/// increasing and at most one packet whose deadline precedes its
/// predecessor's. [`PacketSequence::relaxed`] only asks for nondecreasing
/// arrivals; it is used for derived problems (online backlogs, remapped and
/// merged sequences).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence", into = "RawSequence")]
pub struct PacketSequence {
    packets: Vec<Packet>,
    horizon: f64,
}

#[derive(Clone, Serialize, Deserialize)]
struct RawSequence {
    packets: Vec<Packet>,
}

impl TryFrom<RawSequence> for PacketSequence {
    type Error = Error;
    fn try_from(raw: RawSequence) -> Result<Self> {
        PacketSequence::new(raw.packets)
    }
}

impl From<PacketSequence> for RawSequence {
    fn from(seq: PacketSequence) -> Self {
        RawSequence { packets: seq.packets }
    }
}

/// Indices `i` with `d_i < d_{i-1}`.
pub(crate) fn deadline_descents(packets: &[Packet]) -> Vec<usize> {
    (1..packets.len())
        .filter(|&i| packets[i].deadline_s < packets[i - 1].deadline_s)
        .collect()
}

impl PacketSequence {
    pub fn new(mut packets: Vec<Packet>) -> Result<Self> {
        for p in &packets {
            p.check()?;
        }
        packets.sort_by(|a, b| a.arrival_s.total_cmp(&b.arrival_s));
        for w in packets.windows(2) {
            if w[1].arrival_s <= w[0].arrival_s {
                return Err(Error::InvalidSequence(format!(
                    "packets {} and {} share arrival time {}",
                    w[0].id, w[1].id, w[1].arrival_s
                )));
            }
        }
        let descents = deadline_descents(&packets);
        if descents.len() > 1 {
            return Err(Error::Unsupported(format!(
                "{} deadline inversions; at most one non-FIFO packet is supported",
                descents.len()
            )));
        }
        if let Some(&j) = descents.first() {
            if j + 1 < packets.len() && packets[j + 1].deadline_s < packets[j - 1].deadline_s {
                return Err(Error::Unsupported(format!(
                    "removing packet {} leaves deadlines out of order",
                    packets[j].id
                )));
            }
        }
        Ok(Self::from_checked(packets))
    }

    /// Accepts any list with nondecreasing arrivals and `deadline > arrival`.
    pub fn relaxed(packets: Vec<Packet>) -> Result<Self> {
        for p in &packets {
            p.check()?;
        }
        for w in packets.windows(2) {
            if w[1].arrival_s < w[0].arrival_s {
                return Err(Error::InvalidSequence(format!(
                    "packet {} arrives before packet {}",
                    w[1].id, w[0].id
                )));
            }
        }
        Ok(Self::from_checked(packets))
    }

    fn from_checked(packets: Vec<Packet>) -> Self {
        let horizon = packets.iter().map(|p| p.deadline_s).fold(0.0, f64::max);
        PacketSequence { packets, horizon }
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    /// `T`, the latest deadline (0 when empty).
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn total_bits(&self) -> f64 {
        self.packets.iter().map(|p| p.size_bits).sum()
    }

    /// True when deadlines are nondecreasing in list order.
    pub fn is_fifo(&self) -> bool {
        deadline_descents(&self.packets).is_empty()
    }

    pub fn find(&self, id: u64) -> Option<&Packet> {
        self.packets.iter().find(|p| p.id == id)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    /// Right-continuous, constant between breakpoints.
    Staircase,
    /// Continuous, linear between breakpoints.
    Linear,
}

/// Nondecreasing function of time given by breakpoints `(t, bits)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulativeCurve {
    pub kind: CurveKind,
    pub points: Vec<(f64, f64)>,
}

impl CumulativeCurve {
    pub fn new(kind: CurveKind, points: Vec<(f64, f64)>) -> Result<Self> {
        for w in points.windows(2) {
            if !(w[1].0 > w[0].0) || w[1].1 < w[0].1 {
                return Err(Error::InvalidArgument(
                    "curve breakpoints must have increasing times and nondecreasing values".into(),
                ));
            }
        }
        Ok(CumulativeCurve { kind, points })
    }

    pub fn final_value(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    /// Index of the last breakpoint with time `<= t` (or `< t` when `strict`).
    fn last_before(&self, t: f64, strict: bool) -> Option<usize> {
        let n = self
            .points
            .partition_point(|p| if strict { p.0 < t } else { p.0 <= t });
        n.checked_sub(1)
    }

    pub fn value(&self, t: f64) -> f64 {
        match self.kind {
            CurveKind::Staircase => self.last_before(t, false).map_or(0.0, |i| self.points[i].1),
            CurveKind::Linear => self.interpolate(t),
        }
    }

    /// `lim_{s -> t-} C(s)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        match self.kind {
            CurveKind::Staircase => self.last_before(t, true).map_or(0.0, |i| self.points[i].1),
            CurveKind::Linear => self.interpolate(t),
        }
    }

    fn interpolate(&self, t: f64) -> f64 {
        let Some(i) = self.last_before(t, false) else {
            return self.points.first().map_or(0.0, |p| p.1);
        };
        if i + 1 == self.points.len() {
            return self.points[i].1;
        }
        let (t0, b0) = self.points[i];
        let (t1, b1) = self.points[i + 1];
        b0 + (b1 - b0) * (t - t0) / (t1 - t0)
    }
}

fn staircase(mut events: Vec<(f64, f64)>) -> CumulativeCurve {
    events.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points: Vec<(f64, f64)> = Vec::new();
    let mut acc = 0.0;
    for (t, b) in events {
        acc += b;
        match points.last_mut() {
            Some(last) if last.0 == t => last.1 = acc,
            _ => points.push((t, acc)),
        }
    }
    CumulativeCurve {
        kind: CurveKind::Staircase,
        points,
    }
}

/// `A(t)`: bits arrived in `[0, t]`.
pub fn arrival_curve(seq: &PacketSequence) -> CumulativeCurve {
    staircase(seq.packets.iter().map(|p| (p.arrival_s, p.size_bits)).collect())
}

/// `D_min(t)`: bits of every packet whose deadline is `<= t`.
pub fn min_departure_curve(seq: &PacketSequence) -> CumulativeCurve {
    staircase(seq.packets.iter().map(|p| (p.deadline_s, p.size_bits)).collect())
}

/// Constant-rate interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub rate: f64,
}

impl Segment {
    pub fn new(t0: f64, t1: f64, rate: f64) -> Self {
        Segment { t0, t1, rate }
    }

    pub fn bits(&self) -> f64 {
        self.rate * (self.t1 - self.t0)
    }
}

/// Bits of one packet sent during `[t0, t1]`, inside a single segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub packet_id: u64,
    pub t0: f64,
    pub t1: f64,
    pub bits: f64,
}

impl Piece {
    pub fn rate(&self) -> f64 {
        if self.t1 > self.t0 {
            self.bits / (self.t1 - self.t0)
        } else {
            0.0
        }
    }
}

/// Piecewise-constant-rate departure plan with per-packet attribution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule")]
pub struct Schedule {
    segments: Vec<Segment>,
    #[serde(default)]
    attribution: Vec<Piece>,
}

#[derive(Deserialize)]
struct RawSchedule {
    segments: Vec<Segment>,
    #[serde(default)]
    attribution: Vec<Piece>,
}

impl TryFrom<RawSchedule> for Schedule {
    type Error = Error;
    fn try_from(raw: RawSchedule) -> Result<Self> {
        Ok(Schedule::from_segments(raw.segments)?.with_attribution(raw.attribution))
    }
}

/// Relative slack used when matching floating cumulative values.
const REL_EPS: f64 = 1e-12;

impl Schedule {
    /// Validates ordering, durations and rates. Zero-length segments are
    /// dropped.
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut out: Vec<Segment> = Vec::with_capacity(segments.len());
        for s in segments {
            if !(s.t0.is_finite() && s.t1.is_finite() && s.rate.is_finite()) {
                return Err(Error::Structural("non-finite segment".into()));
            }
            if s.t1 < s.t0 {
                return Err(Error::Structural(format!(
                    "segment [{}, {}] has negative duration",
                    s.t0, s.t1
                )));
            }
            if s.rate < 0.0 {
                return Err(Error::Structural(format!("negative rate {} at t = {}", s.rate, s.t0)));
            }
            if s.t1 == s.t0 {
                continue;
            }
            if let Some(prev) = out.last() {
                if s.t0 < prev.t1 {
                    return Err(Error::Structural(format!(
                        "segments [{}, {}] and [{}, {}] overlap",
                        prev.t0, prev.t1, s.t0, s.t1
                    )));
                }
            }
            out.push(s);
        }
        Ok(Schedule {
            segments: out,
            attribution: Vec::new(),
        })
    }

    /// Segments plus pieces assigning the departed bits to `order` first come
    /// first served. Entries may repeat an id (split packets).
    pub fn attributed(segments: Vec<Segment>, order: &[(u64, f64)]) -> Result<Self> {
        let sched = Self::from_segments(segments)?;
        let pieces = attribute_in_order(&sched.segments, order);
        Ok(sched.with_attribution(pieces))
    }

    pub fn with_attribution(mut self, attribution: Vec<Piece>) -> Self {
        self.attribution = attribution;
        self
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn attribution(&self) -> &[Piece] {
        &self.attribution
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn total_bits(&self) -> f64 {
        self.segments.iter().map(Segment::bits).sum()
    }

    pub fn start_time(&self) -> Option<f64> {
        self.segments.first().map(|s| s.t0)
    }

    pub fn end_time(&self) -> Option<f64> {
        self.segments.last().map(|s| s.t1)
    }

    /// `D(t)` as a linear curve with a breakpoint at every segment boundary.
    pub fn departure_curve(&self) -> CumulativeCurve {
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(2 * self.segments.len() + 1);
        let mut acc = 0.0;
        for s in &self.segments {
            if points.last().is_none_or(|p| p.0 < s.t0) {
                points.push((s.t0, acc));
            }
            acc += s.bits();
            points.push((s.t1, acc));
        }
        CumulativeCurve {
            kind: CurveKind::Linear,
            points,
        }
    }

    /// `D(t)`.
    pub fn departure_at(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for s in &self.segments {
            if t <= s.t0 {
                break;
            }
            acc += s.rate * (t.min(s.t1) - s.t0);
        }
        acc
    }

    /// First time at which `D` reaches `bits`.
    pub fn time_of_bits(&self, bits: f64) -> Option<f64> {
        let mut acc = 0.0;
        for s in &self.segments {
            let b = s.bits();
            if acc + b >= bits {
                if s.rate == 0.0 {
                    return Some(s.t0);
                }
                return Some((s.t0 + (bits - acc).max(0.0) / s.rate).min(s.t1));
            }
            acc += b;
        }
        None
    }

    /// Rate on `(t - eps, t)`; 0 when that interval is idle.
    pub fn rate_before(&self, t: f64) -> f64 {
        let eps = REL_EPS * t.abs().max(1.0) * 1e3;
        self.segments
            .iter()
            .find(|s| s.t0 < t - eps && t <= s.t1 + eps)
            .map_or(0.0, |s| s.rate)
    }

    /// Rate on `(t, t + eps)`; 0 when that interval is idle.
    pub fn rate_after(&self, t: f64) -> f64 {
        let eps = REL_EPS * t.abs().max(1.0) * 1e3;
        self.segments
            .iter()
            .find(|s| s.t0 <= t + eps && t < s.t1 - eps)
            .map_or(0.0, |s| s.rate)
    }

    pub fn packet_pieces(&self, id: u64) -> impl Iterator<Item = &Piece> {
        self.attribution.iter().filter(move |p| p.packet_id == id)
    }

    pub fn packet_bits(&self, id: u64) -> f64 {
        self.packet_pieces(id).map(|p| p.bits).sum()
    }

    pub fn packet_start(&self, id: u64) -> Option<f64> {
        self.packet_pieces(id).map(|p| p.t0).reduce(f64::min)
    }

    /// The completion instant `b_i`.
    pub fn packet_completion(&self, id: u64) -> Option<f64> {
        self.packet_pieces(id).map(|p| p.t1).reduce(f64::max)
    }

    /// Rate of the last piece carrying the packet's bits.
    pub fn packet_final_rate(&self, id: u64) -> Option<f64> {
        self.packet_pieces(id)
            .max_by(|a, b| a.t1.total_cmp(&b.t1))
            .map(Piece::rate)
    }

    /// Everything sent strictly before `t`.
    pub fn prefix(&self, t: f64) -> Schedule {
        let segments = self
            .segments
            .iter()
            .filter(|s| s.t0 < t)
            .map(|s| Segment::new(s.t0, s.t1.min(t), s.rate))
            .collect();
        let attribution = self
            .attribution
            .iter()
            .filter(|p| p.t0 < t)
            .map(|p| {
                if p.t1 <= t {
                    *p
                } else {
                    Piece {
                        t1: t,
                        bits: p.rate() * (t - p.t0),
                        ..*p
                    }
                }
            })
            .collect();
        Schedule {
            segments,
            attribution,
        }
    }

    /// Appends `other`, which must start no earlier than `self` ends.
    pub fn append(&mut self, other: Schedule) -> Result<()> {
        if let (Some(end), Some(start)) = (self.end_time(), other.start_time()) {
            if start < end {
                return Err(Error::Structural(format!(
                    "appended schedule starts at {start} before {end}"
                )));
            }
        }
        self.segments.extend(other.segments);
        self.attribution.extend(other.attribution);
        Ok(())
    }

    /// Joins touching segments whose rates agree to `REL_EPS`.
    pub fn coalesced(mut self) -> Schedule {
        let mut out: Vec<Segment> = Vec::with_capacity(self.segments.len());
        for s in self.segments.drain(..) {
            if let Some(prev) = out.last_mut() {
                if prev.t1 == s.t0 && (prev.rate - s.rate).abs() <= REL_EPS * prev.rate.max(s.rate) {
                    let bits = prev.bits() + s.bits();
                    prev.t1 = s.t1;
                    prev.rate = bits / (prev.t1 - prev.t0);
                    continue;
                }
            }
            out.push(s);
        }
        self.segments = out;
        self
    }
}

/// Walks `segments` assigning bits to `order` in sequence. Each piece lies in
/// one segment. Round-off left after the last segment is folded into the last
/// piece so that per-packet sums are exact.
pub fn attribute_in_order(segments: &[Segment], order: &[(u64, f64)]) -> Vec<Piece> {
    let total: f64 = order.iter().map(|o| o.1).sum();
    let eps = REL_EPS * total.max(f64::MIN_POSITIVE);
    let mut pieces: Vec<Piece> = Vec::new();
    let mut seg = segments.iter().filter(|s| s.rate > 0.0).peekable();
    let mut cursor: Option<(Segment, f64)> = seg.next().map(|s| (*s, s.t0));
    for &(id, bits) in order {
        let mut left = bits;
        while left > 0.0 {
            let Some((s, tc)) = cursor else {
                break;
            };
            let cap = s.rate * (s.t1 - tc);
            if left <= cap + eps {
                let t1 = (tc + left / s.rate).min(s.t1);
                pieces.push(Piece {
                    packet_id: id,
                    t0: tc,
                    t1,
                    bits: left,
                });
                cursor = if cap - left <= eps {
                    seg.next().map(|n| (*n, n.t0))
                } else {
                    Some((s, t1))
                };
                left = 0.0;
            } else {
                pieces.push(Piece {
                    packet_id: id,
                    t0: tc,
                    t1: s.t1,
                    bits: cap,
                });
                left -= cap;
                cursor = seg.next().map(|n| (*n, n.t0));
                if left <= eps {
                    pieces.last_mut().unwrap().bits += left;
                    left = 0.0;
                }
            }
        }
        if left > 0.0 {
            if let Some(last) = pieces.iter_mut().rev().find(|p| p.packet_id == id) {
                last.bits += left;
            }
        }
    }
    pieces
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// `D(t) > A(t-)`.
    Causality,
    /// `D(t) < D_min(t)`.
    Deadline,
    /// A packet's bits are sent before its arrival.
    EarlyBits,
    /// A packet's bits are sent after its deadline.
    LateBits,
    /// A packet's attributed bits do not sum to its size.
    Incomplete,
    /// Attribution disagrees with the segments.
    Attribution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub time: f64,
    pub kind: ViolationKind,
    pub packet_id: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    /// Earliest violation found.
    pub violation: Option<Violation>,
}

/// Checks `D_min - tol <= D <= A(t-) + tol` at every breakpoint and that each
/// packet's attributed bits lie in its own window and sum to its size. `tol`
/// is scaled by `max(1, total bits)`.
pub fn is_feasible(schedule: &Schedule, seq: &PacketSequence, tol: f64) -> FeasibilityReport {
    let tol = tol * seq.total_bits().max(1.0);
    let mut found: Vec<Violation> = Vec::new();
    let arrival = arrival_curve(seq);
    let min_dep = min_departure_curve(seq);

    for &(t, _) in &arrival.points {
        if schedule.departure_at(t) > arrival.left_limit(t) + tol {
            found.push(Violation {
                time: t,
                kind: ViolationKind::Causality,
                packet_id: None,
            });
            break;
        }
    }
    if schedule.total_bits() > arrival.final_value() + tol {
        found.push(Violation {
            time: schedule.end_time().unwrap_or(0.0),
            kind: ViolationKind::Causality,
            packet_id: None,
        });
    }
    for &(t, need) in &min_dep.points {
        if schedule.departure_at(t) < need - tol {
            let packet_id = seq
                .packets()
                .iter()
                .rev()
                .find(|p| p.deadline_s == t)
                .map(|p| p.id);
            found.push(Violation {
                time: t,
                kind: ViolationKind::Deadline,
                packet_id,
            });
            break;
        }
    }

    // Pieces must sit inside segments at the segment's rate.
    for p in schedule.attribution() {
        let host = schedule
            .segments()
            .iter()
            .find(|s| s.t0 <= p.t0 + 1e-9 * s.t0.abs().max(1.0) && p.t1 <= s.t1 + 1e-9 * s.t1.abs().max(1.0));
        let ok = match host {
            Some(s) => (p.bits - s.rate * (p.t1 - p.t0)).abs() <= tol,
            None => false,
        };
        if !ok || p.bits < -tol {
            found.push(Violation {
                time: p.t0,
                kind: ViolationKind::Attribution,
                packet_id: Some(p.packet_id),
            });
            break;
        }
    }
    if (schedule.attribution().iter().map(|p| p.bits).sum::<f64>() - schedule.total_bits()).abs() > tol {
        found.push(Violation {
            time: schedule.end_time().unwrap_or(0.0),
            kind: ViolationKind::Attribution,
            packet_id: None,
        });
    }

    for pk in seq.packets() {
        let mut early = 0.0;
        let mut late = 0.0;
        for p in schedule.packet_pieces(pk.id) {
            let r = p.rate();
            early += r * (pk.arrival_s.min(p.t1) - p.t0).max(0.0);
            late += r * (p.t1 - pk.deadline_s.max(p.t0)).max(0.0);
        }
        if early > tol {
            found.push(Violation {
                time: pk.arrival_s,
                kind: ViolationKind::EarlyBits,
                packet_id: Some(pk.id),
            });
        }
        if late > tol {
            found.push(Violation {
                time: pk.deadline_s,
                kind: ViolationKind::LateBits,
                packet_id: Some(pk.id),
            });
        }
        if (schedule.packet_bits(pk.id) - pk.size_bits).abs() > tol {
            found.push(Violation {
                time: pk.deadline_s,
                kind: ViolationKind::Incomplete,
                packet_id: Some(pk.id),
            });
        }
    }

    let violation = found.into_iter().min_by(|a, b| a.time.total_cmp(&b.time));
    FeasibilityReport {
        feasible: violation.is_none(),
        violation,
    }
}
