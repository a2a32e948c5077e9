#![allow(dead_code)]

use nonfifo_sched::{detect_non_fifo, Packet, PacketSequence};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Shortest non-FIFO window; tighter ones overflow the exponential power.
const MIN_WINDOW: f64 = 0.1;

/// `n` packets with increasing arrivals and nondecreasing deadlines.
pub fn random_fifo(rng: &mut impl Rng, n: usize) -> PacketSequence {
    let mut packets = Vec::with_capacity(n);
    let mut a: f64 = rng.gen_range(0.0..1.0);
    let mut d: f64 = 0.0;
    for i in 0..n {
        if i > 0 {
            a += rng.gen_range(0.05..1.5);
        }
        d = d.max(a) + rng.gen_range(0.1..2.5);
        packets.push(Packet::new(i as u64 + 1, rng.gen_range(0.2..3.0), a, d));
    }
    PacketSequence::new(packets).expect("valid FIFO instance")
}

/// `n >= 2` packets, exactly one of which (not the first) has a deadline
/// earlier than its predecessor's.
pub fn random_non_fifo(rng: &mut impl Rng, n: usize) -> PacketSequence {
    assert!(n >= 2);
    loop {
        let base = random_fifo(rng, n - 1);
        let p = base.packets();
        let k = rng.gen_range(1..=p.len());
        let prev = &p[k - 1];
        let hi = if k < p.len() { p[k].arrival_s.min(prev.deadline_s) } else { prev.deadline_s };
        let span = hi - prev.arrival_s;
        if span <= 1e-3 {
            continue;
        }
        let a = prev.arrival_s + span * rng.gen_range(0.05..0.95);
        // Half the time the block may span several predecessors.
        let d_lo = if k >= 2 && rng.gen_bool(0.5) { a.max(p[k - 2].deadline_s) } else { a };
        let d_lo = d_lo.max(a + MIN_WINDOW);
        if prev.deadline_s - d_lo <= 1e-3 {
            continue;
        }
        let d = d_lo + (prev.deadline_s - d_lo) * rng.gen_range(0.05..0.95);
        let mut packets = p.to_vec();
        packets.insert(k, Packet::new(n as u64 + 1, rng.gen_range(0.2..3.0), a, d));
        if let Ok(seq) = PacketSequence::new(packets) {
            if matches!(detect_non_fifo(&seq), Ok(Some(_))) {
                return seq;
            }
        }
    }
}

pub fn seq(spec: &[(f64, f64, f64)]) -> PacketSequence {
    PacketSequence::new(
        spec.iter()
            .enumerate()
            .map(|(i, &(b, a, d))| Packet::new(i as u64 + 1, b, a, d))
            .collect(),
    )
    .unwrap()
}

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
