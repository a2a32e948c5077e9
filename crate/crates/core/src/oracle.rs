//! Brute-force validators.
//!
//! [`grid_split_oracle`] scans the split factor on a uniform grid.
//! [`discrete_convex_oracle`] solves the time-discretized FIFO problem
//! directly in cumulative-bits space with a projected Newton method.

use serde::{Deserialize, Serialize};

use crate::curves::{arrival_curve, min_departure_curve, PacketSequence};
use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::nonfifo::{NonFifoInstance, Possibility};

/// Grid search over `S`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridOutcome {
    pub split_bits: f64,
    pub energy: f64,
    /// Grid index of the minimiser.
    pub index: usize,
    pub block_bits: f64,
    /// `(S_k, energy)`, `None` where the reordered sequence is infeasible.
    pub grid: Vec<(f64, Option<f64>)>,
}

impl GridOutcome {
    pub fn step(&self) -> f64 {
        if self.grid.len() > 1 {
            self.block_bits / (self.grid.len() - 1) as f64
        } else {
            self.block_bits
        }
    }

    /// Lowest energy among grid points of one class: `S = 0` for P1, `S = B`
    /// for P2, interior points otherwise.
    pub fn class_minimum(&self, p: Possibility) -> Option<f64> {
        let n = self.grid.len();
        self.grid
            .iter()
            .enumerate()
            .filter(|&(k, _)| match p {
                Possibility::P1 => k == 0,
                Possibility::P2 => k + 1 == n,
                Possibility::P3 | Possibility::P4 => k > 0 && k + 1 < n,
            })
            .filter_map(|(_, g)| g.1)
            .reduce(f64::min)
    }

    /// True when the grid agrees with a cascade that fired `p` at `split`:
    /// either the class holds a grid point within `rel` of the grid minimum,
    /// or `split` lies within one grid step of the minimiser.
    pub fn matches(&self, p: Possibility, split: f64, rel: f64) -> bool {
        let near = (split - self.split_bits).abs() <= self.step() * (1.0 + 1e-9);
        let tied = self
            .class_minimum(p)
            .is_some_and(|e| e <= self.energy * (1.0 + rel));
        near || tied
    }
}

/// Minimises the reordered-sequence energy over `S_k = k B / (n - 1)`.
/// The first minimum wins ties.
pub fn grid_split_oracle(seq: &PacketSequence, j: usize, model: &EnergyModel, n_grid: usize) -> Result<GridOutcome> {
    if n_grid < 2 {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 points, got {n_grid}")));
    }
    let inst = NonFifoInstance::new(seq, j)?;
    let b = inst.block_bits;
    let mut grid = Vec::with_capacity(n_grid);
    let mut best: Option<(usize, f64)> = None;
    for k in 0..n_grid {
        let s = if k + 1 == n_grid { b } else { b * k as f64 / (n_grid - 1) as f64 };
        let e = inst.sar_schedule(s).ok().map(|sc| model.schedule_energy(&sc));
        if let Some(e) = e {
            if best.is_none_or(|(_, be)| e < be) {
                best = Some((k, e));
            }
        }
        grid.push((s, e));
    }
    let (index, energy) = best.ok_or(Error::Infeasible {
        time: seq.packets()[j].deadline_s,
        packet_id: Some(seq.packets()[j].id),
    })?;
    Ok(GridOutcome {
        split_bits: grid[index].0,
        energy,
        index,
        block_bits: b,
        grid,
    })
}

/// Optimum of the discretized problem.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscreteSolution {
    pub energy: f64,
    pub times: Vec<f64>,
    /// Cumulative bits at `times`.
    pub cumulative: Vec<f64>,
    pub iterations: usize,
    /// Final scaled projected-gradient residual, in bits.
    pub residual: f64,
}

/// Convex extension of `f`: quadratic Taylor continuation below 0 and above
/// `cap`.
struct Extended<'a> {
    f: &'a EnergyModel,
    cap: f64,
    at0: [f64; 3],
    atc: [f64; 3],
}

impl<'a> Extended<'a> {
    fn new(f: &'a EnergyModel, cap: f64) -> Self {
        let d = |r: f64| [f.power(r), f.marginal_power(r), f.power_curvature(r)];
        let mut at0 = d(0.0);
        if !at0[2].is_finite() {
            at0[2] = 0.0;
        }
        Extended { f, cap, at0, atc: d(cap) }
    }

    /// `(f, f', f'')` at `r`.
    fn eval(&self, r: f64) -> [f64; 3] {
        let taylor = |c: &[f64; 3], h: f64| [c[0] + c[1] * h + 0.5 * c[2] * h * h, c[1] + c[2] * h, c[2]];
        if r < 0.0 {
            taylor(&self.at0, r)
        } else if r > self.cap {
            taylor(&self.atc, r - self.cap)
        } else {
            [self.f.power(r), self.f.marginal_power(r), self.f.power_curvature(r)]
        }
    }
}

/// Solves `min sum f(r_k) dt_k` subject to `D_min(t_k) <= c_k <= A(t_k-)` on a
/// grid of `n_steps` uniform steps refined with every arrival and deadline.
///
/// Only meaningful for FIFO sequences, where the aggregate envelope is the
/// whole feasible set.
pub fn discrete_convex_oracle(seq: &PacketSequence, model: &EnergyModel, n_steps: usize) -> Result<DiscreteSolution> {
    if let Some(i) = seq.packets().windows(2).position(|w| w[1].deadline_s < w[0].deadline_s) {
        return Err(Error::NotFifo { index: i + 1 });
    }
    if n_steps == 0 {
        return Err(Error::InvalidArgument("n_steps must be positive".into()));
    }
    if seq.is_empty() {
        return Ok(DiscreteSolution {
            energy: 0.0,
            times: vec![0.0],
            cumulative: vec![0.0],
            iterations: 0,
            residual: 0.0,
        });
    }
    let horizon = seq.horizon();
    let total = seq.total_bits();
    let mut times: Vec<f64> = (0..=n_steps).map(|k| horizon * k as f64 / n_steps as f64).collect();
    for p in seq.packets() {
        times.push(p.arrival_s);
        times.push(p.deadline_s);
    }
    times.sort_by(f64::total_cmp);
    let min_gap = 1e-12 * horizon.max(1.0);
    times.dedup_by(|a, b| (*a - *b).abs() <= min_gap);
    *times.last_mut().unwrap() = horizon;

    let arrival = arrival_curve(seq);
    let min_dep = min_departure_curve(seq);
    let n = times.len();
    let mut lower: Vec<f64> = times.iter().map(|&t| min_dep.value(t)).collect();
    let mut upper: Vec<f64> = times.iter().map(|&t| arrival.left_limit(t)).collect();
    lower[0] = 0.0;
    upper[0] = 0.0;
    lower[n - 1] = total;
    upper[n - 1] = total;
    for k in 0..n {
        if lower[k] > upper[k] + 1e-12 * total {
            return Err(Error::Infeasible {
                time: times[k],
                packet_id: None,
            });
        }
        upper[k] = upper[k].max(lower[k]);
    }
    let dt: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();

    // No optimal rate exceeds the total over the tightest window.
    let tightest = seq
        .packets()
        .iter()
        .map(|p| p.deadline_s - p.arrival_s)
        .fold(f64::INFINITY, f64::min);
    let f = Extended::new(model, 1.5 * total / tightest);

    let mut c: Vec<f64> = times
        .iter()
        .zip(lower.iter().zip(&upper))
        .map(|(&t, (&lo, &hi))| (total * t / horizon).clamp(lo, hi))
        .collect();

    let objective = |c: &[f64]| -> f64 {
        (0..n - 1)
            .map(|k| f.eval((c[k + 1] - c[k]) / dt[k])[0] * dt[k])
            .sum()
    };

    let tol = 1e-10 * total.max(1.0);
    let mut value = objective(&c);
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut g = vec![0.0; n];
    let mut h_diag = vec![0.0; n];
    let mut h_off = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut stalled = 0;
    while iterations < 2000 {
        iterations += 1;
        let d: Vec<[f64; 3]> = (0..n - 1).map(|k| f.eval((c[k + 1] - c[k]) / dt[k])).collect();
        for k in 1..n - 1 {
            g[k] = d[k - 1][1] - d[k][1];
            h_diag[k] = d[k - 1][2] / dt[k - 1] + d[k][2] / dt[k];
            h_off[k] = -d[k][2] / dt[k];
        }
        let reg = 1e-12 * h_diag[1..n - 1].iter().fold(0.0f64, |a, &b| a.max(b)) + f64::MIN_POSITIVE;
        for h in &mut h_diag[1..n - 1] {
            *h += reg;
        }

        residual = (1..n - 1)
            .map(|k| (c[k] - (c[k] - g[k] / h_diag[k]).clamp(lower[k], upper[k])).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            break;
        }

        // Variables pinned at a bound with the gradient pushing outward.
        let eps = residual.min(1e-6 * total.max(1.0));
        let free: Vec<bool> = (0..n)
            .map(|k| {
                k > 0
                    && k < n - 1
                    && !((c[k] <= lower[k] + eps && g[k] > 0.0) || (c[k] >= upper[k] - eps && g[k] < 0.0))
            })
            .collect();
        for k in 1..n - 1 {
            if !free[k] {
                dir[k] = -g[k] / h_diag[k];
            }
        }
        solve_free_block(&free, &h_diag, &h_off, &g, &mut dir);

        let mut accepted = line_search(&c, &dir, &lower, &upper, &g, value, &objective, &mut trial);
        if accepted.is_none() {
            for k in 1..n - 1 {
                dir[k] = -g[k] / h_diag[k];
            }
            accepted = line_search(&c, &dir, &lower, &upper, &g, value, &objective, &mut trial);
        }
        let Some(v) = accepted else {
            stalled += 1;
            if stalled > 2 {
                break;
            }
            continue;
        };
        stalled = 0;
        std::mem::swap(&mut c, &mut trial);
        value = v;
    }

    let energy = (0..n - 1)
        .map(|k| model.power(((c[k + 1] - c[k]) / dt[k]).max(0.0)) * dt[k])
        .sum();
    Ok(DiscreteSolution {
        energy,
        times,
        cumulative: c,
        iterations,
        residual,
    })
}

/// Armijo backtracking along the projection arc. Writes the accepted point to
/// `trial` and returns its objective.
#[allow(clippy::too_many_arguments)]
fn line_search(
    c: &[f64],
    dir: &[f64],
    lower: &[f64],
    upper: &[f64],
    g: &[f64],
    value: f64,
    objective: &dyn Fn(&[f64]) -> f64,
    trial: &mut [f64],
) -> Option<f64> {
    let n = c.len();
    let mut alpha = 1.0;
    for _ in 0..60 {
        trial[0] = c[0];
        trial[n - 1] = c[n - 1];
        for k in 1..n - 1 {
            trial[k] = (c[k] + alpha * dir[k]).clamp(lower[k], upper[k]);
        }
        let decrease: f64 = (1..n - 1).map(|k| g[k] * (trial[k] - c[k])).sum();
        if decrease < 0.0 {
            let v = objective(trial);
            if v <= value + 1e-4 * decrease {
                return Some(v);
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Newton direction on the free variables: solves the tridiagonal system
/// restricted to each run of consecutive free indices (Thomas algorithm).
fn solve_free_block(free: &[bool], diag: &[f64], off: &[f64], g: &[f64], dir: &mut [f64]) {
    let n = free.len();
    let mut k = 0;
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    while k < n {
        if !free[k] {
            k += 1;
            continue;
        }
        let start = k;
        while k < n && free[k] {
            k += 1;
        }
        // Run start..k; off[i] couples i and i + 1.
        for i in start..k {
            let rhs = -g[i];
            if i == start {
                cp[i] = off[i] / diag[i];
                dp[i] = rhs / diag[i];
            } else {
                let m = diag[i] - off[i - 1] * cp[i - 1];
                cp[i] = off[i] / m;
                dp[i] = (rhs - off[i - 1] * dp[i - 1]) / m;
            }
        }
        dir[k - 1] = dp[k - 1];
        for i in (start..k - 1).rev() {
            dir[i] = dp[i] - cp[i] * dir[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::Packet;
    use crate::nonfifo::schedule_non_fifo;
    use crate::taut_string::schedule_fifo;

    fn seq(v: &[(f64, f64, f64)]) -> PacketSequence {
        PacketSequence::new(
            v.iter()
                .enumerate()
                .map(|(i, &(b, a, d))| Packet::new(i as u64 + 1, b, a, d))
                .collect(),
        )
        .unwrap()
    }

    fn unit() -> EnergyModel {
        EnergyModel::unit_shannon(1.0).unwrap()
    }

    #[test]
    fn discrete_single_packet() {
        let s = discrete_convex_oracle(&seq(&[(1.0, 0.0, 1.0)]), &unit(), 100).unwrap();
        assert!((s.energy - 3.0).abs() < 1e-9);
    }

    #[test]
    fn discrete_matches_taut_string() {
        for v in [
            vec![(2.0, 0.0, 3.0), (1.0, 2.0, 4.0)],
            vec![(1.0, 0.0, 1.0), (1.0, 3.0, 4.0)],
            vec![(1.0, 0.0, 3.0), (4.0, 2.0, 4.0)],
            vec![(0.5, 0.0, 2.0), (3.0, 0.3, 2.5), (1.0, 1.0, 6.0), (2.0, 4.0, 6.5)],
        ] {
            let q = seq(&v);
            let taut = unit().schedule_energy(&schedule_fifo(&q).unwrap());
            let d = discrete_convex_oracle(&q, &unit(), 4000).unwrap();
            assert!((taut - d.energy).abs() <= 1e-3 * d.energy, "{v:?}: {taut} vs {}", d.energy);
        }
    }

    #[test]
    fn discrete_handles_bandlimited_scale() {
        let m = EnergyModel::experiment_link();
        let q = seq(&[(8192.0, 0.0, 4.0), (8192.0, 0.7, 4.7), (8192.0, 1.1, 5.1)]);
        let taut = m.schedule_energy(&schedule_fifo(&q).unwrap());
        let d = discrete_convex_oracle(&q, &m, 2000).unwrap();
        assert!((taut - d.energy).abs() <= 1e-4 * d.energy, "{taut} vs {}", d.energy);
    }

    #[test]
    fn discrete_converges_under_refinement() {
        let q = seq(&[(2.0, 0.0, 3.0), (1.0, 2.0, 4.0), (1.5, 2.5, 5.0)]);
        let a = discrete_convex_oracle(&q, &unit(), 1000).unwrap().energy;
        let b = discrete_convex_oracle(&q, &unit(), 2000).unwrap().energy;
        assert!((a - b).abs() <= 5e-4 * b);
    }

    #[test]
    fn discrete_tiny_packet() {
        let s = discrete_convex_oracle(&seq(&[(1e-9, 0.0, 1.0)]), &unit(), 50).unwrap();
        assert!(s.energy < 1e-8);
    }

    #[test]
    fn discrete_rejects_non_fifo() {
        let q = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        assert!(matches!(discrete_convex_oracle(&q, &unit(), 10), Err(Error::NotFifo { .. })));
    }

    #[test]
    fn grid_on_worked_instance() {
        let q = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        let g = grid_split_oracle(&q, 1, &unit(), 2001).unwrap();
        let want = 3.0 * (2f64.powf(4.0 / 3.0) - 1.0) + 3.0;
        assert!((g.split_bits - 2.0 / 3.0).abs() <= g.step());
        assert!((g.energy - want).abs() <= 1e-6 * want);
        let d = schedule_non_fifo(&q).unwrap();
        assert!(g.matches(d.possibility, d.split_bits, 1e-9));
    }

    #[test]
    fn grid_two_points_compares_endpoints() {
        let q = seq(&[(2.0, 0.0, 4.0), (1.0, 1.0, 2.0)]);
        let g = grid_split_oracle(&q, 1, &unit(), 2).unwrap();
        assert_eq!(g.grid.len(), 2);
        assert!(g.split_bits == 0.0 || g.split_bits == 2.0);
    }

    #[test]
    fn grid_rejects_fifo() {
        let q = seq(&[(1.0, 0.0, 1.0)]);
        assert!(grid_split_oracle(&q, 0, &unit(), 11).is_err());
        let q = seq(&[(1.0, 0.0, 1.0), (1.0, 0.5, 2.0)]);
        assert!(grid_split_oracle(&q, 1, &unit(), 11).is_err());
    }
}
