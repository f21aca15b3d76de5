//! Population machinery shared by both optimization levels.
//!
//! Everything here works on two-objective minimization problems with a
//! scalar constraint-violation measure (`cv == 0.0` means feasible).
//! Ranking is feasibility-first: feasible members are sorted into
//! non-dominated fronts, infeasible members come after every feasible one,
//! ordered by ascending violation.

use crate::{BlemoError, Result};
use rand::Rng;

/// One candidate at either level: decision vector, two objectives, violation.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objs: [f64; 2],
    pub cv: f64,
}

impl Solution {
    pub fn new(x: Vec<f64>, objs: [f64; 2], cv: f64) -> Self {
        Solution { x, objs, cv }
    }

    pub fn feasible(&self) -> bool {
        self.cv <= 0.0
    }
}

/// `a` Pareto-dominates `b` (minimization, objectives only).
pub fn dominates(a: &[f64; 2], b: &[f64; 2]) -> bool {
    a[0] <= b[0] && a[1] <= b[1] && (a[0] < b[0] || a[1] < b[1])
}

/// Indices of the non-dominated subset of `objs`, duplicates removed,
/// returned in ascending order of the first objective.
///
/// Runs in O(n log n) via a sort and sweep, so it stays usable on the
/// large candidate sets produced by reference-front generators.
pub fn nd_front_indices(objs: &[[f64; 2]]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..objs.len()).collect();
    idx.sort_by(|&a, &b| {
        objs[a][0]
            .total_cmp(&objs[b][0])
            .then(objs[a][1].total_cmp(&objs[b][1]))
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    let mut best_f2 = f64::INFINITY;
    for i in idx {
        if objs[i][1] < best_f2 {
            best_f2 = objs[i][1];
            kept.push(i);
        }
    }
    kept
}

/// A population with front assignment, crowding distances, and a total
/// rank order (front ascending, crowding descending, index as tiebreak).
#[derive(Debug, Clone)]
pub struct RankedPopulation {
    pub members: Vec<Solution>,
    pub front_index: Vec<usize>,
    pub crowding: Vec<f64>,
    /// Member indices sorted best-first.
    pub order: Vec<usize>,
}

impl RankedPopulation {
    /// Indices of the first front, in member order.
    pub fn first_front(&self) -> Vec<usize> {
        (0..self.members.len())
            .filter(|&i| self.front_index[i] == 0)
            .collect()
    }
}

/// Feasibility-first non-dominated sorting plus crowding distance.
///
/// Feasible members are peeled into fronts 0..F-1 by fast non-dominated
/// sorting. Infeasible members are then ranked by ascending `cv`; equal
/// violations share a front index. Crowding is the usual NSGA-II measure,
/// computed per feasible front; infeasible members get crowding 0.
pub fn rank_population(members: Vec<Solution>) -> RankedPopulation {
    let n = members.len();
    let mut front_index = vec![usize::MAX; n];
    let mut crowding = vec![0.0_f64; n];

    let feasible: Vec<usize> = (0..n).filter(|&i| members[i].feasible()).collect();
    let infeasible: Vec<usize> = (0..n).filter(|&i| !members[i].feasible()).collect();

    // Fast non-dominated sort over the feasible subset.
    let mut fronts: Vec<Vec<usize>> = Vec::new();
    if !feasible.is_empty() {
        let m = feasible.len();
        let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut count = vec![0usize; m];
        for p in 0..m {
            for q in 0..m {
                if p == q {
                    continue;
                }
                if dominates(&members[feasible[p]].objs, &members[feasible[q]].objs) {
                    dominated_by[p].push(q);
                } else if dominates(&members[feasible[q]].objs, &members[feasible[p]].objs) {
                    count[p] += 1;
                }
            }
        }
        let mut current: Vec<usize> = (0..m).filter(|&p| count[p] == 0).collect();
        while !current.is_empty() {
            let f = fronts.len();
            let mut next = Vec::new();
            for &p in &current {
                front_index[feasible[p]] = f;
            }
            for &p in &current {
                for &q in &dominated_by[p] {
                    count[q] -= 1;
                    if count[q] == 0 {
                        next.push(q);
                    }
                }
            }
            next.sort_unstable();
            fronts.push(current.iter().map(|&p| feasible[p]).collect());
            current = next;
        }
    }

    // Infeasible members: ascending cv, equal cv shares a front.
    let mut by_cv = infeasible.clone();
    by_cv.sort_by(|&a, &b| {
        members[a]
            .cv
            .partial_cmp(&members[b].cv)
            .unwrap()
            .then(a.cmp(&b))
    });
    let base = fronts.len();
    let mut step = 0;
    for (k, &i) in by_cv.iter().enumerate() {
        if k > 0 && members[i].cv > members[by_cv[k - 1]].cv {
            step += 1;
        }
        front_index[i] = base + step;
    }

    for front in &fronts {
        assign_crowding(&members, front, &mut crowding);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        front_index[a]
            .cmp(&front_index[b])
            .then(crowding[b].partial_cmp(&crowding[a]).unwrap())
            .then(a.cmp(&b))
    });

    RankedPopulation {
        members,
        front_index,
        crowding,
        order,
    }
}

fn assign_crowding(members: &[Solution], front: &[usize], crowding: &mut [f64]) {
    let k = front.len();
    if k <= 2 {
        for &i in front {
            crowding[i] = f64::INFINITY;
        }
        return;
    }
    for d in 0..2 {
        let mut idx: Vec<usize> = front.to_vec();
        idx.sort_by(|&a, &b| {
            members[a].objs[d]
                .partial_cmp(&members[b].objs[d])
                .unwrap()
                .then(a.cmp(&b))
        });
        let lo = members[idx[0]].objs[d];
        let hi = members[idx[k - 1]].objs[d];
        crowding[idx[0]] = f64::INFINITY;
        crowding[idx[k - 1]] = f64::INFINITY;
        if hi > lo {
            for j in 1..k - 1 {
                let gap = (members[idx[j + 1]].objs[d] - members[idx[j - 1]].objs[d]) / (hi - lo);
                if crowding[idx[j]].is_finite() {
                    crowding[idx[j]] += gap;
                }
            }
        }
    }
}

/// DE/rand/1 mutant: `a + f * (b - c)`.
fn de_mutant(a: &[f64], b: &[f64], c: &[f64], f: f64) -> Vec<f64> {
    a.iter()
        .zip(b.iter().zip(c.iter()))
        .map(|(&ai, (&bi, &ci))| ai + f * (bi - ci))
        .collect()
}

fn clamp_to(x: &mut [f64], bounds: &[(f64, f64)]) {
    for (v, &(lo, hi)) in x.iter_mut().zip(bounds.iter()) {
        *v = v.clamp(lo, hi);
    }
}

/// DE/rand/1 with binomial crossover. One child per parent; `r1`, `r2`, `r3`
/// are mutually distinct and distinct from the target. Children are clamped
/// to the box. Requires at least 4 parents.
pub fn de_variation<R: Rng>(
    parents: &[Vec<f64>],
    bounds: &[(f64, f64)],
    f: f64,
    cr: f64,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let n = parents.len();
    if n < 4 {
        return Err(BlemoError::PopulationTooSmall(n));
    }
    let d = bounds.len();
    let mut children = Vec::with_capacity(n);
    for i in 0..n {
        let mut pick = || {
            let mut r = rng.gen_range(0..n);
            while r == i {
                r = rng.gen_range(0..n);
            }
            r
        };
        let r1 = pick();
        let mut r2 = pick();
        while r2 == r1 {
            r2 = pick();
        }
        let mut r3 = pick();
        while r3 == r1 || r3 == r2 {
            r3 = pick();
        }
        let mutant = de_mutant(&parents[r1], &parents[r2], &parents[r3], f);
        let j_rand = rng.gen_range(0..d);
        let mut child: Vec<f64> = (0..d)
            .map(|j| {
                if rng.gen::<f64>() < cr || j == j_rand {
                    mutant[j]
                } else {
                    parents[i][j]
                }
            })
            .collect();
        clamp_to(&mut child, bounds);
        children.push(child);
    }
    Ok(children)
}

/// The scalar polynomial-mutation perturbation for one component.
fn polynomial_delta(x: f64, lo: f64, hi: f64, eta: f64, u: f64) -> f64 {
    if hi <= lo {
        return x;
    }
    let d1 = (x - lo) / (hi - lo);
    let d2 = (hi - x) / (hi - lo);
    let mut_pow = 1.0 / (eta + 1.0);
    let dq = if u <= 0.5 {
        let xy = 1.0 - d1;
        let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
        val.powf(mut_pow) - 1.0
    } else {
        let xy = 1.0 - d2;
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
        1.0 - val.powf(mut_pow)
    };
    (x + dq * (hi - lo)).clamp(lo, hi)
}

/// Polynomial mutation with per-component probability `pm` and index `eta`.
pub fn polynomial_mutation<R: Rng>(
    x: &[f64],
    bounds: &[(f64, f64)],
    pm: f64,
    eta: f64,
    rng: &mut R,
) -> Vec<f64> {
    x.iter()
        .zip(bounds.iter())
        .map(|(&v, &(lo, hi))| {
            if rng.gen::<f64>() < pm {
                polynomial_delta(v, lo, hi, eta, rng.gen::<f64>())
            } else {
                v
            }
        })
        .collect()
}

/// Which coordinates distance-based subset selection measures distance in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DssSpace {
    Objective,
    Decision,
}

/// Greedy maximin subset selection.
///
/// Coordinates (objective vectors by default, decision vectors as a
/// sensitivity switch) are min-max normalized over the candidate set; a
/// zero-range coordinate contributes nothing to distances. The selection is
/// seeded with the objective-1 minimizer (lexicographic objective tiebreak)
/// and then repeatedly adds the candidate whose distance to the closest
/// already-selected member is largest, lowest index winning ties. Returns
/// indices into `front` in selection order. If `n >= front.len()` the whole
/// index range is returned.
pub fn dss_select(front: &[Solution], n: usize, space: DssSpace) -> Result<Vec<usize>> {
    if front.is_empty() {
        return Err(BlemoError::EmptyInput("dss_select"));
    }
    if n == 0 {
        return Err(BlemoError::EmptySelection);
    }
    if n >= front.len() {
        return Ok((0..front.len()).collect());
    }

    let coords: Vec<Vec<f64>> = front
        .iter()
        .map(|s| match space {
            DssSpace::Objective => s.objs.to_vec(),
            DssSpace::Decision => s.x.clone(),
        })
        .collect();
    let dim = coords[0].len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for c in &coords {
        for d in 0..dim {
            lo[d] = lo[d].min(c[d]);
            hi[d] = hi[d].max(c[d]);
        }
    }
    let norm: Vec<Vec<f64>> = coords
        .iter()
        .map(|c| {
            (0..dim)
                .map(|d| {
                    if hi[d] > lo[d] {
                        (c[d] - lo[d]) / (hi[d] - lo[d])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut seed = 0usize;
    for i in 1..front.len() {
        let a = &front[i].objs;
        let b = &front[seed].objs;
        if a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]) {
            seed = i;
        }
    }

    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum()
    };

    let mut selected = vec![seed];
    let mut min_d: Vec<f64> = norm.iter().map(|c| dist2(c, &norm[seed])).collect();
    while selected.len() < n {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for i in 0..front.len() {
            if selected.contains(&i) {
                continue;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        selected.push(best);
        for i in 0..front.len() {
            let d = dist2(&norm[i], &norm[best]);
            if d < min_d[i] {
                min_d[i] = d;
            }
        }
    }
    Ok(selected)
}

/// Environmental selection to `n` members.
///
/// Duplicates (exact decision-vector equality) are dropped first, keeping
/// the best-ranked copy. If more than `n` unique first-front members remain,
/// the survivors are picked from that front by [`dss_select`]; otherwise the
/// top `n` unique members in rank order survive. Output size is
/// `min(n, unique members)`.
pub fn environmental_selection(
    ranked: &RankedPopulation,
    n: usize,
    space: DssSpace,
) -> Vec<Solution> {
    // Unique member indices in rank order.
    let mut unique: Vec<usize> = Vec::new();
    for &i in &ranked.order {
        if !unique.iter().any(|&u| ranked.members[u].x == ranked.members[i].x) {
            unique.push(i);
        }
    }
    let nd: Vec<usize> = unique
        .iter()
        .copied()
        .filter(|&i| ranked.front_index[i] == 0)
        .collect();
    if nd.len() > n {
        let front: Vec<Solution> = nd.iter().map(|&i| ranked.members[i].clone()).collect();
        let picked = dss_select(&front, n, space).expect("front non-empty, n >= 1");
        picked.into_iter().map(|k| front[k].clone()).collect()
    } else {
        unique
            .into_iter()
            .take(n)
            .map(|i| ranked.members[i].clone())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sol(objs: [f64; 2]) -> Solution {
        Solution::new(vec![objs[0], objs[1]], objs, 0.0)
    }

    #[test]
    fn de_mutant_is_base_plus_scaled_difference() {
        let m = de_mutant(&[0.0, 0.0], &[2.0, 2.0], &[0.0, 0.0], 0.5);
        assert_eq!(m, vec![1.0, 1.0]);
    }

    #[test]
    fn de_children_are_clamped_to_the_box() {
        let mut out = vec![1.5, -0.2];
        clamp_to(&mut out, &[(0.0, 1.0), (0.0, 1.0)]);
        assert_eq!(out, vec![1.0, 0.0]);
    }

    #[test]
    fn de_variation_respects_bounds_and_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bounds = vec![(-1.0, 1.0); 5];
        let parents: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let children = de_variation(&parents, &bounds, 0.5, 1.0, &mut rng).unwrap();
        assert_eq!(children.len(), 12);
        for c in &children {
            for (v, (lo, hi)) in c.iter().zip(bounds.iter()) {
                assert!(*v >= *lo && *v <= *hi, "component {v} escaped [{lo},{hi}]");
            }
        }
    }

    #[test]
    fn de_variation_rejects_tiny_populations() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let parents = vec![vec![0.0], vec![1.0], vec![2.0]];
        let err = de_variation(&parents, &[(0.0, 2.0)], 0.5, 1.0, &mut rng).unwrap_err();
        assert!(matches!(err, BlemoError::PopulationTooSmall(3)));
    }

    #[test]
    fn polynomial_delta_matches_the_textbook_law() {
        // Independent evaluation of the mutation law for x=0.5 on [0,1],
        // eta=20, u=0.9: delta_q = 1 - (2(1-u) + 2(u-0.5)(1-d2)^(eta+1))^(1/(eta+1)).
        let (x, lo, hi, eta, u) = (0.5, 0.0, 1.0, 20.0, 0.9);
        let d2 = (hi - x) / (hi - lo);
        let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * (1.0_f64 - d2).powf(eta + 1.0);
        let expected = x + (1.0 - val.powf(1.0 / (eta + 1.0))) * (hi - lo);
        let got = polynomial_delta(x, lo, hi, eta, u);
        assert!((got - expected).abs() < 1e-15);
        assert!(got > 0.5 && got < 1.0, "u>0.5 must push upward, got {got}");
    }

    #[test]
    fn polynomial_delta_is_identity_at_u_half() {
        assert_eq!(polynomial_delta(0.3, 0.0, 1.0, 20.0, 0.5), 0.3);
    }

    #[test]
    fn polynomial_mutation_with_zero_probability_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = vec![0.2, 0.8, 0.5];
        let out = polynomial_mutation(&x, &[(0.0, 1.0); 3], 0.0, 20.0, &mut rng);
        assert_eq!(out, x);
    }

    #[test]
    fn polynomial_mutation_stays_in_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let bounds = [(0.0, 1.0), (-3.0, -1.0), (5.0, 5.0)];
        for _ in 0..200 {
            let x = vec![rng.gen_range(0.0..1.0), rng.gen_range(-3.0..-1.0), 5.0];
            let out = polynomial_mutation(&x, &bounds, 1.0, 20.0, &mut rng);
            for (v, (lo, hi)) in out.iter().zip(bounds.iter()) {
                assert!(v >= lo && v <= hi);
            }
        }
    }

    #[test]
    fn ranking_splits_simple_population_into_two_fronts() {
        let pop = vec![sol([1.0, 2.0]), sol([2.0, 1.0]), sol([3.0, 3.0])];
        let ranked = rank_population(pop);
        assert_eq!(ranked.front_index, vec![0, 0, 1]);
    }

    #[test]
    fn feasible_members_always_outrank_infeasible_ones() {
        let pop = vec![
            Solution::new(vec![0.0], [5.0, 5.0], 0.0),
            Solution::new(vec![1.0], [0.0, 0.0], 0.1),
            Solution::new(vec![2.0], [0.0, 0.0], 0.05),
        ];
        let ranked = rank_population(pop);
        assert_eq!(ranked.front_index[0], 0);
        // Infeasible ordered by ascending cv after the feasible fronts.
        assert_eq!(ranked.front_index[2], 1);
        assert_eq!(ranked.front_index[1], 2);
        assert_eq!(ranked.order, vec![0, 2, 1]);
    }

    #[test]
    fn equal_violations_share_a_front() {
        let pop = vec![
            Solution::new(vec![0.0], [0.0, 0.0], 0.3),
            Solution::new(vec![1.0], [9.0, 9.0], 0.3),
        ];
        let ranked = rank_population(pop);
        assert_eq!(ranked.front_index, vec![0, 0]);
    }

    #[test]
    fn boundary_members_get_infinite_crowding() {
        let pop = vec![
            sol([0.0, 3.0]),
            sol([1.0, 2.0]),
            sol([2.0, 1.0]),
            sol([3.0, 0.0]),
        ];
        let ranked = rank_population(pop);
        assert!(ranked.crowding[0].is_infinite());
        assert!(ranked.crowding[3].is_infinite());
        assert!(ranked.crowding[1].is_finite() && ranked.crowding[1] > 0.0);
    }

    #[test]
    fn nd_sweep_matches_pairwise_definition_and_drops_duplicates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut objs: Vec<[f64; 2]> = (0..120)
                .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
                .collect();
            objs.push(objs[0]);
            let kept = nd_front_indices(&objs);
            for w in kept.windows(2) {
                assert!(objs[w[0]][0] <= objs[w[1]][0], "kept set must be F1-sorted");
            }
            // Pairwise reference: non-dominated and not an exact repeat.
            let mut expected = 0usize;
            for i in 0..objs.len() {
                let dominated = objs.iter().any(|o| dominates(o, &objs[i]));
                let repeat = objs[..i].contains(&objs[i]);
                if !dominated && !repeat {
                    expected += 1;
                }
            }
            assert_eq!(kept.len(), expected, "sweep kept a different set size");
            for &i in &kept {
                assert!(
                    !objs.iter().any(|o| dominates(o, &objs[i])),
                    "sweep kept a dominated point"
                );
            }
        }
    }

    /// O(n^2) reference ranking: repeatedly peel the mutually non-dominated
    /// feasible members, then order infeasible members by cv.
    fn brute_force_fronts(pop: &[Solution]) -> Vec<usize> {
        let n = pop.len();
        let mut front = vec![usize::MAX; n];
        let mut remaining: Vec<usize> = (0..n).filter(|&i| pop[i].feasible()).collect();
        let mut f = 0;
        while !remaining.is_empty() {
            let nd: Vec<usize> = remaining
                .iter()
                .copied()
                .filter(|&i| {
                    !remaining
                        .iter()
                        .any(|&j| j != i && dominates(&pop[j].objs, &pop[i].objs))
                })
                .collect();
            for &i in &nd {
                front[i] = f;
            }
            remaining.retain(|i| !nd.contains(i));
            f += 1;
        }
        let mut inf: Vec<usize> = (0..n).filter(|&i| !pop[i].feasible()).collect();
        inf.sort_by(|&a, &b| pop[a].cv.partial_cmp(&pop[b].cv).unwrap());
        let mut step = 0;
        for (k, &i) in inf.iter().enumerate() {
            if k > 0 && pop[i].cv > pop[inf[k - 1]].cv {
                step += 1;
            }
            front[i] = f + step;
        }
        front
    }

    #[test]
    fn ranking_agrees_with_brute_force_on_random_populations() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..30 {
            let pop: Vec<Solution> = (0..25)
                .map(|_| {
                    let cv = if rng.gen::<f64>() < 0.2 {
                        rng.gen_range(0.01..1.0)
                    } else {
                        0.0
                    };
                    Solution::new(
                        vec![rng.gen()],
                        [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)],
                        cv,
                    )
                })
                .collect();
            let expected = brute_force_fronts(&pop);
            let ranked = rank_population(pop);
            assert_eq!(ranked.front_index, expected);
        }
    }

    #[test]
    fn dss_on_colinear_points_picks_extremes_then_midpoint() {
        let front: Vec<Solution> = [0.0, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&v| sol([v, v]))
            .collect();
        let picked = dss_select(&front, 3, DssSpace::Objective).unwrap();
        assert_eq!(picked, vec![0, 4, 2], "expected f1 order 0, 1, 0.5");
    }

    #[test]
    fn dss_with_n_equal_front_size_returns_everything() {
        let front: Vec<Solution> = (0..4).map(|i| sol([i as f64, -(i as f64)])).collect();
        assert_eq!(dss_select(&front, 4, DssSpace::Objective).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn dss_on_identical_points_is_deterministic() {
        let front: Vec<Solution> = (0..5).map(|_| sol([1.0, 1.0])).collect();
        let a = dss_select(&front, 3, DssSpace::Objective).unwrap();
        let b = dss_select(&front, 3, DssSpace::Objective).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
    }

    #[test]
    fn dss_rejects_zero_target() {
        let front = vec![sol([0.0, 0.0])];
        assert!(dss_select(&front, 0, DssSpace::Objective).is_err());
    }

    #[test]
    fn selection_keeps_exact_nd_set_when_it_fits() {
        let pop = vec![sol([1.0, 2.0]), sol([2.0, 1.0]), sol([3.0, 3.0])];
        let ranked = rank_population(pop);
        let kept = environmental_selection(&ranked, 2, DssSpace::Objective);
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().any(|s| s.objs == [1.0, 2.0]));
        assert!(kept.iter().any(|s| s.objs == [2.0, 1.0]));
    }

    #[test]
    fn selection_tops_up_from_later_fronts() {
        let pop = vec![sol([1.0, 2.0]), sol([2.0, 1.0]), sol([3.0, 3.0])];
        let ranked = rank_population(pop);
        let kept = environmental_selection(&ranked, 3, DssSpace::Objective);
        assert_eq!(kept.len(), 3);
    }

    #[test]
    fn selection_drops_duplicate_decision_vectors_first() {
        let a = Solution::new(vec![0.5], [1.0, 1.0], 0.0);
        let pop = vec![a.clone(), a.clone(), Solution::new(vec![0.7], [2.0, 0.5], 0.0)];
        let ranked = rank_population(pop);
        let kept = environmental_selection(&ranked, 2, DssSpace::Objective);
        assert_eq!(kept.len(), 2);
        assert_ne!(kept[0].x, kept[1].x);
    }

    #[test]
    fn selection_size_is_capped_by_unique_member_count() {
        let a = Solution::new(vec![0.5], [1.0, 1.0], 0.0);
        let ranked = rank_population(vec![a.clone(), a.clone()]);
        let kept = environmental_selection(&ranked, 5, DssSpace::Objective);
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn oversized_nd_front_is_reduced_by_subset_selection() {
        // 5 colinear ND points reduced to 3 must keep both extremes and the
        // midpoint, matching the greedy maximin hand run above.
        let pop: Vec<Solution> = [0.0_f64, 0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&v| Solution::new(vec![v], [v, 1.0 - v], 0.0))
            .collect();
        let ranked = rank_population(pop);
        let kept = environmental_selection(&ranked, 3, DssSpace::Objective);
        let mut f1: Vec<f64> = kept.iter().map(|s| s.objs[0]).collect();
        f1.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(f1, vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn selection_never_keeps_dominated_members_when_nd_fills_quota() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pop: Vec<Solution> = (0..30)
                .map(|i| {
                    let t = i as f64 / 29.0;
                    let bump = if i % 3 == 0 { 0.5 } else { 0.0 };
                    Solution::new(
                        vec![t, rng.gen()],
                        [t + bump, 1.0 - t + bump],
                        0.0,
                    )
                })
                .collect();
            let ranked = rank_population(pop);
            let nd_count = ranked.first_front().len();
            let n = nd_count.min(8);
            let kept = environmental_selection(&ranked, n, DssSpace::Objective);
            for s in &kept {
                assert!(
                    !kept.iter().any(|o| dominates(&o.objs, &s.objs)),
                    "selected set contains a dominated member"
                );
            }
        }
    }
}
