//! Quality indicators and termination monitors.
//!
//! All indicators assume two-objective minimization. The stagnation monitor
//! follows the running-metric idea: per generation it measures the
//! normalized movement of the ideal point, the normalized movement of the
//! nadir point, and the IGD between consecutive population snapshots (both
//! normalized by the current generation's ideal/nadir), then stops once the
//! sliding-window maximum of all three series falls under a threshold.

use crate::moea::dominates;
use crate::{BlemoError, Result};

/// Inverted generational distance: mean Euclidean distance from each
/// reference point to its nearest approximation point.
pub fn igd(reference: &[[f64; 2]], approx: &[[f64; 2]]) -> Result<f64> {
    if reference.is_empty() {
        return Err(BlemoError::EmptyInput("igd reference"));
    }
    if approx.is_empty() {
        return Err(BlemoError::EmptyInput("igd approximation"));
    }
    let total: f64 = reference
        .iter()
        .map(|r| {
            approx
                .iter()
                .map(|a| ((r[0] - a[0]).powi(2) + (r[1] - a[1]).powi(2)).sqrt())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    Ok(total / reference.len() as f64)
}

/// Exact two-objective hypervolume with respect to `ref_point`.
///
/// Dominated and out-of-reference points contribute nothing; the input may
/// be unsorted and may contain duplicates. Returns 0 for an empty front.
pub fn hv2d(front: &[[f64; 2]], ref_point: [f64; 2]) -> f64 {
    let mut pts: Vec<[f64; 2]> = front
        .iter()
        .copied()
        .filter(|p| p[0] < ref_point[0] && p[1] < ref_point[1])
        .collect();
    // Non-dominated filter plus exact-duplicate removal.
    let mut nd: Vec<[f64; 2]> = Vec::new();
    for p in pts.drain(..) {
        if front.iter().any(|q| dominates(q, &p)) {
            continue;
        }
        if !nd.contains(&p) {
            nd.push(p);
        }
    }
    nd.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
    let mut area = 0.0;
    for (i, p) in nd.iter().enumerate() {
        let next_x = if i + 1 < nd.len() { nd[i + 1][0] } else { ref_point[0] };
        area += (next_x - p[0]) * (ref_point[1] - p[1]);
    }
    area
}

/// Cross-result normalization of lower-level IGD values.
///
/// `per_result[k]` holds the per-UL-solution LL IGD values of result `k`.
/// Each result is first reduced to its mean; the means are then min-max
/// normalized across all results. If every mean is identical the output is
/// all zeros.
pub fn normalized_ll_igd(per_result: &[Vec<f64>]) -> Result<Vec<f64>> {
    if per_result.is_empty() {
        return Err(BlemoError::EmptyInput("normalized_ll_igd"));
    }
    let mut means = Vec::with_capacity(per_result.len());
    for r in per_result {
        if r.is_empty() {
            return Err(BlemoError::EmptyInput("normalized_ll_igd result"));
        }
        means.push(r.iter().sum::<f64>() / r.len() as f64);
    }
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        Ok(means.iter().map(|m| (m - lo) / (hi - lo)).collect())
    } else {
        Ok(vec![0.0; means.len()])
    }
}

fn nd_front(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    points
        .iter()
        .copied()
        .filter(|p| !points.iter().any(|q| dominates(q, p)))
        .collect()
}

/// Stagnation monitor over normalized objective-space movement.
///
/// Call [`TerminationMonitor::update`] once per generation with the feasible
/// population objectives. It returns `true` once the maxima of the last
/// `omega` ideal movements, nadir movements, and consecutive-population IGD
/// values are all at or below `epsilon`. The monitor can never fire before
/// `omega + 1` updates. Ideal and nadir are taken from the non-dominated
/// front of the supplied points; movement magnitudes are normalized by the
/// current generation's `nadir - ideal`, a degenerate (zero) range making
/// that component contribute 0 and incrementing [`Self::degenerate_updates`].
#[derive(Debug, Clone)]
pub struct TerminationMonitor {
    epsilon: f64,
    omega: usize,
    prev: Option<Vec<[f64; 2]>>,
    prev_ideal: [f64; 2],
    prev_nadir: [f64; 2],
    ideal_moves: Vec<f64>,
    nadir_moves: Vec<f64>,
    phi: Vec<f64>,
    pub degenerate_updates: usize,
}

impl TerminationMonitor {
    pub fn new(epsilon: f64, omega: usize) -> Self {
        TerminationMonitor {
            epsilon,
            omega,
            prev: None,
            prev_ideal: [0.0; 2],
            prev_nadir: [0.0; 2],
            ideal_moves: Vec::new(),
            nadir_moves: Vec::new(),
            phi: Vec::new(),
            degenerate_updates: 0,
        }
    }

    /// Movements recorded by the most recent update: (ideal, nadir, phi).
    pub fn last_deltas(&self) -> Option<(f64, f64, f64)> {
        match (self.ideal_moves.last(), self.nadir_moves.last(), self.phi.last()) {
            (Some(&a), Some(&b), Some(&c)) => Some((a, b, c)),
            _ => None,
        }
    }

    pub fn generations_seen(&self) -> usize {
        self.ideal_moves.len() + 1
    }

    pub fn update(&mut self, population: &[[f64; 2]]) -> bool {
        if population.is_empty() {
            return false;
        }
        let front = nd_front(population);
        let mut ideal = [f64::INFINITY; 2];
        let mut nadir = [f64::NEG_INFINITY; 2];
        for p in &front {
            for d in 0..2 {
                ideal[d] = ideal[d].min(p[d]);
                nadir[d] = nadir[d].max(p[d]);
            }
        }

        if let Some(prev_front) = self.prev.take() {
            let mut range = [0.0; 2];
            let mut any_degenerate = false;
            for d in 0..2 {
                range[d] = nadir[d] - ideal[d];
                if range[d] <= 0.0 {
                    any_degenerate = true;
                }
            }
            if any_degenerate {
                self.degenerate_updates += 1;
            }
            let moved = |prev: &[f64; 2], cur: &[f64; 2]| -> f64 {
                (0..2)
                    .map(|d| {
                        if range[d] > 0.0 {
                            (prev[d] - cur[d]).abs() / range[d]
                        } else {
                            0.0
                        }
                    })
                    .fold(0.0, f64::max)
            };
            self.ideal_moves.push(moved(&self.prev_ideal, &ideal));
            self.nadir_moves.push(moved(&self.prev_nadir, &nadir));

            let normalize = |pts: &[[f64; 2]]| -> Vec<[f64; 2]> {
                pts.iter()
                    .map(|p| {
                        let mut out = [0.0; 2];
                        for d in 0..2 {
                            out[d] = if range[d] > 0.0 {
                                (p[d] - ideal[d]) / range[d]
                            } else {
                                0.0
                            };
                        }
                        out
                    })
                    .collect()
            };
            let phi = igd(&normalize(&prev_front), &normalize(&front))
                .expect("both snapshots non-empty");
            self.phi.push(phi);
        }

        self.prev = Some(front);
        self.prev_ideal = ideal;
        self.prev_nadir = nadir;

        self.should_stop()
    }

    fn should_stop(&self) -> bool {
        let w = self.omega;
        if self.ideal_moves.len() < w {
            return false;
        }
        let tail_max = |xs: &[f64]| xs[xs.len() - w..].iter().copied().fold(0.0, f64::max);
        tail_max(&self.ideal_moves) <= self.epsilon
            && tail_max(&self.nadir_moves) <= self.epsilon
            && tail_max(&self.phi) <= self.epsilon
    }
}

/// Stagnation monitor on a scalar hypervolume series.
///
/// Stops when the largest absolute change across the last `omega`
/// generation-to-generation differences is at or below `epsilon`; like the
/// objective-space monitor it cannot fire before `omega + 1` updates.
#[derive(Debug, Clone)]
pub struct HvTerminationMonitor {
    epsilon: f64,
    omega: usize,
    prev: Option<f64>,
    deltas: Vec<f64>,
}

impl HvTerminationMonitor {
    pub fn new(epsilon: f64, omega: usize) -> Self {
        HvTerminationMonitor {
            epsilon,
            omega,
            prev: None,
            deltas: Vec::new(),
        }
    }

    pub fn update(&mut self, hv: f64) -> bool {
        if let Some(prev) = self.prev {
            self.deltas.push((hv - prev).abs());
        }
        self.prev = Some(hv);
        self.deltas.len() >= self.omega
            && self.deltas[self.deltas.len() - self.omega..]
                .iter()
                .all(|d| *d <= self.epsilon)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn igd_of_a_single_matching_point() {
        let reference = [[0.0, 0.0], [1.0, 1.0]];
        let approx = [[0.0, 0.0]];
        let expected = (0.0 + 2.0_f64.sqrt()) / 2.0;
        assert!((igd(&reference, &approx).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn igd_of_identical_sets_is_zero() {
        let pts = [[0.3, 0.7], [0.5, 0.5], [0.9, 0.1]];
        assert_eq!(igd(&pts, &pts).unwrap(), 0.0);
    }

    #[test]
    fn igd_rejects_empty_inputs() {
        assert!(igd(&[], &[[0.0, 0.0]]).is_err());
        assert!(igd(&[[0.0, 0.0]], &[]).is_err());
    }

    #[test]
    fn igd_is_zero_only_for_covering_approximations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let reference: Vec<[f64; 2]> =
                (0..10).map(|_| [rng.gen(), rng.gen()]).collect();
            let mut approx = reference.clone();
            approx.truncate(9);
            let v = igd(&reference, &approx).unwrap();
            assert!(v > 0.0, "missing point must give positive igd");
            assert_eq!(igd(&reference, &reference).unwrap(), 0.0);
        }
    }

    #[test]
    fn hv_of_one_interior_point() {
        assert!((hv2d(&[[0.5, 0.5]], [1.0, 1.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn hv_ignores_points_beyond_the_reference() {
        assert_eq!(hv2d(&[[2.0, 2.0]], [1.0, 1.0]), 0.0);
        assert_eq!(hv2d(&[], [1.0, 1.0]), 0.0);
    }

    #[test]
    fn hv_is_invariant_to_dominated_points_and_order() {
        let base = [[0.2, 0.8], [0.5, 0.5], [0.8, 0.2]];
        let with_dominated = [[0.5, 0.5], [0.9, 0.9], [0.2, 0.8], [0.8, 0.2], [0.5, 0.5]];
        let a = hv2d(&base, [1.0, 1.0]);
        let b = hv2d(&with_dominated, [1.0, 1.0]);
        assert!((a - b).abs() < 1e-15);
        // Rectangle sum left to right: widths to the next point (or the
        // reference), heights up to the reference.
        let direct = (0.5 - 0.2) * (1.0 - 0.8) + (0.8 - 0.5) * (1.0 - 0.5)
            + (1.0 - 0.8) * (1.0 - 0.2);
        assert!((a - direct).abs() < 1e-15);
    }

    #[test]
    fn hv_tracks_a_monte_carlo_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let front: Vec<[f64; 2]> = (0..15)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let rp = [1.2, 1.2];
        let exact = hv2d(&front, rp);
        let samples = 200_000;
        let mut hits = 0usize;
        for _ in 0..samples {
            let p = [rng.gen_range(0.0..rp[0]), rng.gen_range(0.0..rp[1])];
            if front.iter().any(|f| f[0] <= p[0] && f[1] <= p[1]) {
                hits += 1;
            }
        }
        let estimate = rp[0] * rp[1] * hits as f64 / samples as f64;
        assert!(
            (exact - estimate).abs() / exact < 0.02,
            "exact {exact} vs Monte Carlo {estimate}"
        );
    }

    #[test]
    fn normalized_ll_igd_min_max_normalizes_means() {
        let v = normalized_ll_igd(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        assert_eq!(v, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalized_ll_igd_degenerates_to_zeros() {
        assert_eq!(normalized_ll_igd(&[vec![1.5, 2.5]]).unwrap(), vec![0.0]);
        assert_eq!(
            normalized_ll_igd(&[vec![2.0], vec![2.0]]).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn monitor_never_fires_on_the_first_update() {
        let mut m = TerminationMonitor::new(1e-2, 5);
        assert!(!m.update(&[[0.0, 1.0], [1.0, 0.0]]));
        assert!(m.last_deltas().is_none());
    }

    #[test]
    fn monitor_normalizes_ideal_movement_by_current_range() {
        let mut m = TerminationMonitor::new(1e-2, 5);
        m.update(&[[0.0, 1.0], [1.0, 0.0]]);
        m.update(&[[-0.1, 1.0], [1.0, 0.0]]);
        let (di, dn, phi) = m.last_deltas().unwrap();
        // Ideal moved from (0,0) to (-0.1,0); current range is 1.1 x 1.0.
        assert!((di - 0.1 / 1.1).abs() < 1e-12, "got {di}");
        assert_eq!(dn, 0.0);
        assert!(phi > 0.0);
    }

    #[test]
    fn frozen_population_stops_exactly_at_omega_plus_one() {
        for omega in [3usize, 5, 10] {
            let mut m = TerminationMonitor::new(1e-2, omega);
            let pop = [[0.0, 1.0], [0.5, 0.5], [1.0, 0.0]];
            let mut stopped_at = None;
            for gen in 1..=omega + 3 {
                if m.update(&pop) {
                    stopped_at = Some(gen);
                    break;
                }
            }
            assert_eq!(stopped_at, Some(omega + 1));
        }
    }

    #[test]
    fn steadily_moving_ideal_never_stops() {
        // Raw movement 0.02 per generation with epsilon 0.005: the
        // normalized step stays at or above 2 * epsilon for 50 generations.
        let mut m = TerminationMonitor::new(5e-3, 5);
        for t in 0..50 {
            let a = -0.02 * t as f64;
            let stopped = m.update(&[[a, 1.0], [1.0, 0.0]]);
            assert!(!stopped, "stopped prematurely at generation {}", t + 1);
        }
    }

    #[test]
    fn degenerate_range_contributes_zero_and_is_counted() {
        let mut m = TerminationMonitor::new(1e-2, 2);
        m.update(&[[0.5, 0.5]]);
        m.update(&[[0.4, 0.4]]);
        let (di, dn, phi) = m.last_deltas().unwrap();
        assert_eq!((di, dn, phi), (0.0, 0.0, 0.0));
        assert_eq!(m.degenerate_updates, 1);
    }

    #[test]
    fn hv_monitor_stops_exactly_at_omega_plus_one_on_constant_series() {
        let mut m = HvTerminationMonitor::new(1e-3, 10);
        let mut stopped_at = None;
        for gen in 1..=15 {
            if m.update(0.75) {
                stopped_at = Some(gen);
                break;
            }
        }
        assert_eq!(stopped_at, Some(11));
    }

    #[test]
    fn hv_monitor_keeps_running_while_changes_exceed_epsilon() {
        let mut m = HvTerminationMonitor::new(1e-3, 3);
        for t in 0..20 {
            assert!(!m.update(t as f64 * 0.01), "stopped at step {t}");
        }
    }
}
