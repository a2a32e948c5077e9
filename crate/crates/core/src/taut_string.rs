//! Taut string between the arrival curve and the minimum departure curve.
//!
//! The string is built by scanning curve vertices from the current anchor.
//! Lower vertices `(d, D_min(d))` push the admissible slope up, upper vertices
//! `(a, A(a-))` pull it down. When the two bounds cross, the string bends at
//! the vertex that produced the violated bound and the scan restarts there.

use crate::curves::{arrival_curve, min_departure_curve, CumulativeCurve, PacketSequence, Schedule, Segment};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Side {
    Lower,
    Upper,
    End,
}

#[derive(Clone, Copy, Debug)]
struct Vertex {
    t: f64,
    b: f64,
    side: Side,
}

/// Piecewise-linear taut string from `start` to `end` inside
/// `min_dep <= D <= arrival`. Idle stretches are left as gaps.
pub fn string_tautening(
    arrival: &CumulativeCurve,
    min_dep: &CumulativeCurve,
    start: (f64, f64),
    end: (f64, f64),
) -> Result<Schedule> {
    let (t_start, b_start) = start;
    let (t_end, b_end) = end;
    if !(t_end >= t_start) {
        return Err(Error::InvalidArgument(format!("end time {t_end} precedes start {t_start}")));
    }
    let scale = b_end.abs().max(1.0);
    let tol = 1e-12 * scale;
    if b_start > arrival.value(t_start) + tol || b_start < min_dep.value(t_start) - tol {
        return Err(Error::Infeasible {
            time: t_start,
            packet_id: None,
        });
    }
    if (b_end - min_dep.value(t_end)).abs() > 1e-9 * scale || b_end > arrival.value(t_end) + tol {
        return Err(Error::Infeasible {
            time: t_end,
            packet_id: None,
        });
    }
    for &(d, need) in &min_dep.points {
        if d > t_start && d <= t_end && need > arrival.left_limit(d) + tol {
            return Err(Error::Infeasible {
                time: d,
                packet_id: None,
            });
        }
    }

    let mut verts: Vec<Vertex> = Vec::new();
    for &(t, _) in &arrival.points {
        if t > t_start && t < t_end {
            verts.push(Vertex {
                t,
                b: arrival.left_limit(t),
                side: Side::Upper,
            });
        }
    }
    for &(t, b) in &min_dep.points {
        if t > t_start && t < t_end {
            verts.push(Vertex { t, b, side: Side::Lower });
        }
    }
    verts.sort_by(|x, y| x.t.total_cmp(&y.t));
    verts.push(Vertex {
        t: t_end,
        b: b_end,
        side: Side::End,
    });

    let mut segments: Vec<Segment> = Vec::new();
    let mut push = |from: (f64, f64), to: &Vertex| {
        let rate = (to.b - from.1) / (to.t - from.0);
        if to.t > from.0 && to.b - from.1 > tol {
            segments.push(Segment::new(from.0, to.t, rate));
        }
    };

    let mut anchor = (t_start, b_start);
    let mut i = 0;
    while i < verts.len() {
        let mut lo = f64::NEG_INFINITY;
        let mut lo_at: Option<usize> = None;
        let mut hi = f64::INFINITY;
        let mut hi_at: Option<usize> = None;
        let mut bend: Option<usize> = None;
        for (k, v) in verts.iter().enumerate().skip(i) {
            if v.t <= anchor.0 {
                continue;
            }
            let s = (v.b - anchor.1) / (v.t - anchor.0);
            match v.side {
                Side::Lower => {
                    if s > hi {
                        bend = hi_at;
                        break;
                    }
                    if s >= lo {
                        lo = s;
                        lo_at = Some(k);
                    }
                }
                Side::Upper => {
                    if s < lo {
                        bend = lo_at;
                        break;
                    }
                    if s <= hi {
                        hi = s;
                        hi_at = Some(k);
                    }
                }
                Side::End => {
                    bend = if s > hi {
                        hi_at
                    } else if s < lo {
                        lo_at
                    } else {
                        Some(k)
                    };
                }
            }
        }
        let k = bend.unwrap_or(verts.len() - 1);
        push(anchor, &verts[k]);
        anchor = (verts[k].t, verts[k].b);
        i = k + 1;
    }
    Ok(Schedule::from_segments(segments)?.coalesced())
}

/// Optimal schedule for a FIFO sequence, attributed in list order.
pub fn schedule_fifo(seq: &PacketSequence) -> Result<Schedule> {
    if let Some(w) = seq.packets().windows(2).position(|w| w[1].deadline_s < w[0].deadline_s) {
        return Err(Error::NotFifo { index: w + 1 });
    }
    if seq.is_empty() {
        return Ok(Schedule::default());
    }
    let arrival = arrival_curve(seq);
    let min_dep = min_departure_curve(seq);
    let total = seq.total_bits();
    let sched = string_tautening(&arrival, &min_dep, (0.0, 0.0), (seq.horizon(), total)).map_err(|e| match e {
        Error::Infeasible { time, .. } => Error::Infeasible {
            time,
            packet_id: seq.packets().iter().rev().find(|p| p.deadline_s <= time).map(|p| p.id),
        },
        other => other,
    })?;
    let order: Vec<(u64, f64)> = seq.packets().iter().map(|p| (p.id, p.size_bits)).collect();
    Schedule::attributed(sched.segments().to_vec(), &order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::{is_feasible, Packet, DEFAULT_TOLERANCE};
    use crate::energy::EnergyModel;
    use proptest::prelude::*;

    fn seq(v: &[(f64, f64, f64)]) -> PacketSequence {
        PacketSequence::new(
            v.iter()
                .enumerate()
                .map(|(i, &(b, a, d))| Packet::new(i as u64 + 1, b, a, d))
                .collect(),
        )
        .unwrap()
    }

    fn assert_segments(s: &Schedule, want: &[(f64, f64, f64)]) {
        assert_eq!(s.segments().len(), want.len(), "{:?}", s.segments());
        for (g, w) in s.segments().iter().zip(want) {
            assert!((g.t0 - w.0).abs() < 1e-12 && (g.t1 - w.1).abs() < 1e-12 && (g.rate - w.2).abs() < 1e-12, "{g:?} vs {w:?}");
        }
    }

    #[test]
    fn single_packet_constant_rate() {
        let s = schedule_fifo(&seq(&[(1.0, 0.0, 1.0)])).unwrap();
        assert_segments(&s, &[(0.0, 1.0, 1.0)]);
    }

    #[test]
    fn straight_line_through_envelope() {
        let q = seq(&[(2.0, 0.0, 3.0), (1.0, 2.0, 4.0)]);
        let s = schedule_fifo(&q).unwrap();
        assert_segments(&s, &[(0.0, 4.0, 0.75)]);
        let e = EnergyModel::unit_shannon(1.0).unwrap().schedule_energy(&s);
        assert!((e - 4.0 * (2f64.powf(1.5) - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn bends_on_min_departure_corner() {
        let q = PacketSequence::relaxed(vec![Packet::new(1, 3.0, 0.0, 2.0), Packet::new(2, 1.0, 0.0, 4.0)]).unwrap();
        let s = schedule_fifo(&q).unwrap();
        assert_segments(&s, &[(0.0, 2.0, 1.5), (2.0, 4.0, 0.5)]);
    }

    #[test]
    fn idles_when_arrivals_force_it() {
        let s = schedule_fifo(&seq(&[(1.0, 0.0, 1.0), (1.0, 3.0, 4.0)])).unwrap();
        assert_segments(&s, &[(0.0, 1.0, 1.0), (3.0, 4.0, 1.0)]);
    }

    #[test]
    fn bends_on_arrival_corner() {
        // The string waits on A(2-) = 1.
        let s = schedule_fifo(&seq(&[(1.0, 0.0, 3.0), (4.0, 2.0, 4.0)])).unwrap();
        assert_segments(&s, &[(0.0, 2.0, 0.5), (2.0, 4.0, 2.0)]);
        let t = schedule_fifo(&seq(&[(1.0, 0.0, 3.0), (4.0, 2.0, 6.0)])).unwrap();
        assert_segments(&t, &[(0.0, 2.0, 0.5), (2.0, 6.0, 1.0)]);
    }

    #[test]
    fn rejects_non_fifo() {
        let q = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        assert_eq!(schedule_fifo(&q).unwrap_err(), Error::NotFifo { index: 1 });
    }

    #[test]
    fn rejects_bad_end_point() {
        let q = seq(&[(1.0, 0.0, 2.0), (1.0, 2.0, 3.0)]);
        let (a, m) = (arrival_curve(&q), min_departure_curve(&q));
        assert!(string_tautening(&a, &m, (0.0, 0.0), (3.0, 2.0)).is_ok());
        assert!(matches!(
            string_tautening(&a, &m, (0.0, 0.0), (3.0, 1.0)),
            Err(Error::Infeasible { time, .. }) if time == 3.0
        ));
        assert!(string_tautening(&a, &m, (2.5, 0.5), (3.0, 2.0)).is_err());
    }

    #[test]
    fn starts_mid_horizon() {
        let q = PacketSequence::relaxed(vec![Packet::new(1, 2.0, 5.0, 7.0)]).unwrap();
        let s = schedule_fifo(&q).unwrap();
        assert_segments(&s, &[(5.0, 7.0, 1.0)]);
    }

    pub(crate) fn fifo_strategy(max_n: usize) -> impl Strategy<Value = PacketSequence> {
        proptest::collection::vec((0.1f64..4.0, 0.05f64..2.0, 0.2f64..4.0), 1..=max_n).prop_map(|v| {
            let mut t = 0.0;
            let mut last_d: f64 = 0.0;
            let mut packets = Vec::new();
            for (i, (b, gap, w)) in v.into_iter().enumerate() {
                if i > 0 {
                    t += gap;
                }
                let d = (t + w).max(last_d);
                last_d = d;
                packets.push(Packet::new(i as u64 + 1, b, t, d));
            }
            PacketSequence::new(packets).unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn envelope_and_contact(q in fifo_strategy(7)) {
            let s = schedule_fifo(&q).unwrap();
            let rep = is_feasible(&s, &q, DEFAULT_TOLERANCE);
            prop_assert!(rep.feasible, "{:?}", rep);
            let a = arrival_curve(&q);
            let m = min_departure_curve(&q);
            let tol = 1e-9 * q.total_bits().max(1.0);
            // Rate changes only where the string touches a curve: down at A, up at D_min.
            let segs = s.segments();
            for w in segs.windows(2) {
                let t = w[0].t1;
                let d = s.departure_at(t);
                let r_after = if w[1].t0 > t { 0.0 } else { w[1].rate };
                if r_after < w[0].rate * (1.0 - 1e-9) {
                    prop_assert!((d - m.value(t)).abs() <= tol, "decrease at {t} off D_min");
                }
                if r_after > w[0].rate * (1.0 + 1e-9) {
                    prop_assert!((d - a.left_limit(t)).abs() <= tol, "increase at {t} off A");
                }
                if w[1].t0 > t {
                    let u = w[1].t0;
                    prop_assert!((s.departure_at(u) - a.left_limit(u)).abs() <= tol, "gap must end on A");
                }
            }
        }

        #[test]
        fn local_straightening(q in fifo_strategy(6)) {
            let s = schedule_fifo(&q).unwrap();
            // Any chord between breakpoints that stays in the envelope is the curve itself.
            let d = s.departure_curve();
            let a = arrival_curve(&q);
            let m = min_departure_curve(&q);
            let tol = 1e-9 * q.total_bits().max(1.0);
            let mut probes: Vec<f64> = d.points.iter().map(|p| p.0).collect();
            probes.extend(a.points.iter().map(|p| p.0));
            probes.extend(m.points.iter().map(|p| p.0));
            probes.sort_by(f64::total_cmp);
            for i in 0..d.points.len() {
                for k in i + 1..d.points.len() {
                    let (t0, b0) = d.points[i];
                    let (t1, b1) = d.points[k];
                    let chord = |t: f64| b0 + (b1 - b0) * (t - t0) / (t1 - t0);
                    let inside = probes.iter().filter(|&&t| t > t0 && t < t1).all(|&t| {
                        chord(t) <= a.left_limit(t) + tol && chord(t) >= m.value(t) - tol
                    });
                    if inside {
                        for &t in probes.iter().filter(|&&t| t > t0 && t < t1) {
                            prop_assert!((chord(t) - d.value(t)).abs() <= 1e-7 * q.total_bits().max(1.0));
                        }
                    }
                }
            }
        }
    }
}
