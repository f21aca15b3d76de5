//! Nested bilevel optimization with predictor-assisted follower searches.
//!
//! The leader population holds flattened (x_u, x_l) pairs. Each generation
//! proposes fresh leader vectors, obtains a follower Pareto set for each
//! (by real search, predictor-seeded search, or pure prediction depending
//! on mode and cadence), completes leader-only follower variables with a
//! small dedicated search, and then applies environmental selection to the
//! merged pool. A variable-association audit decides up front which
//! follower variables each search is responsible for.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::metrics::{hv2d, igd, HvTerminationMonitor, TerminationMonitor};
use crate::moea::{
    de_variation, environmental_selection, nd_front_indices, polynomial_mutation,
    rank_population, DssSpace, RankedPopulation, Solution,
};
use crate::problems::{BilevelProblem, Eval};
use crate::psp::{build_dataset, train, PspModel, TrainParams, TrainingEntry};
use crate::util::grid_key;
use crate::{BlemoError, Result};

/// How many recent leader-side completions are kept for transfer seeding.
const PRIOR_POOL_LIMIT: usize = 512;

// ---------------------------------------------------------------------------
// Run configuration.
// ---------------------------------------------------------------------------

/// Which follower-search strategy the run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Periodic real follower searches retrain the predictor; generations in
    /// between evaluate its predictions directly.
    Psp,
    /// The predictor is trained once after the first generation and never
    /// refreshed.
    Os,
    /// Every generation runs real follower searches; no predictor at all.
    Ne,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Psp => write!(f, "psp"),
            Mode::Os => write!(f, "os"),
            Mode::Ne => write!(f, "ne"),
        }
    }
}

impl FromStr for Mode {
    type Err = BlemoError;

    fn from_str(s: &str) -> Result<Mode> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psp" => Ok(Mode::Psp),
            "os" => Ok(Mode::Os),
            "ne" => Ok(Mode::Ne),
            other => Err(BlemoError::InvalidConfig(format!(
                "unknown mode `{other}`, expected psp, os, or ne"
            ))),
        }
    }
}

/// Cadence of real follower searches once the training archive is full.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gamma {
    /// Search every `n`-th generation.
    Every(u32),
    /// Never search again once the archive row budget is reached.
    Never,
}

impl fmt::Display for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Every(n) => write!(f, "{n}"),
            Gamma::Never => write!(f, "inf"),
        }
    }
}

impl FromStr for Gamma {
    type Err = BlemoError;

    fn from_str(s: &str) -> Result<Gamma> {
        let t = s.trim().to_ascii_lowercase();
        if t == "inf" || t == "never" {
            return Ok(Gamma::Never);
        }
        match t.parse::<u32>() {
            Ok(n) if n >= 1 => Ok(Gamma::Every(n)),
            _ => Err(BlemoError::InvalidConfig(format!(
                "search cadence must be a positive integer or `inf`, got `{s}`"
            ))),
        }
    }
}

impl Serialize for Gamma {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Gamma::Every(n) => s.serialize_u32(*n),
            Gamma::Never => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Gamma {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u32),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) if n >= 1 => Ok(Gamma::Every(n)),
            Raw::Int(_) => Err(serde::de::Error::custom("search cadence must be at least 1")),
            Raw::Text(t) => Gamma::from_str(&t).map_err(serde::de::Error::custom),
        }
    }
}

/// Run-level termination rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "lowercase")]
pub enum StopRule {
    /// Stop when ideal, nadir, and population movement all stagnate.
    Igd { epsilon: f64, omega: usize },
    /// Stop when the hypervolume against a frozen reference point stagnates.
    Hv { epsilon: f64, omega: usize },
    /// Run to the generation cap.
    None,
}

/// Full configuration of one optimization run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub seed: u64,
    /// Leader population size.
    pub n_u: usize,
    /// Follower population size.
    pub n_l: usize,
    /// Real-search cadence once the training archive is full.
    pub gamma: Gamma,
    /// Training-archive row budget.
    pub ds: usize,
    /// Hard cap on leader generations.
    pub max_ul_gens: usize,
    pub stop: StopRule,
    /// Fixed follower-generation budget for first-generation searches.
    pub first_ll_gens: usize,
    /// Stagnation threshold for later follower searches.
    pub ll_stop_epsilon: f64,
    pub ll_stop_omega: usize,
    /// Hard cap on follower generations for stagnation-stopped searches.
    pub ll_max_gens: usize,
    /// Population size of the leader-only completion search.
    pub vaa_pop: usize,
    /// Fixed lead-in generations for an unseeded completion search.
    pub vaa_first_gens: usize,
    /// Hard cap on completion-search generations.
    pub vaa_max_gens: usize,
    pub vaa_hv_epsilon: f64,
    pub vaa_hv_omega: usize,
    pub de_f: f64,
    pub de_cr: f64,
    pub pm_eta: f64,
    pub train: TrainParams,
    /// Whether the archive is re-searched and re-evaluated at the end;
    /// unset picks the mode default (yes for psp and os, no for ne).
    pub final_reeval: Option<bool>,
    pub max_ll_fe: Option<u64>,
    pub max_ul_fe: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mode: Mode::Psp,
            seed: 1,
            n_u: 20,
            n_l: 20,
            gamma: Gamma::Every(10),
            ds: 5000,
            max_ul_gens: 100,
            stop: StopRule::Igd {
                epsilon: 1e-2,
                omega: 5,
            },
            first_ll_gens: 300,
            ll_stop_epsilon: 1e-2,
            ll_stop_omega: 5,
            ll_max_gens: 200,
            vaa_pop: 5,
            vaa_first_gens: 80,
            vaa_max_gens: 200,
            vaa_hv_epsilon: 1e-3,
            vaa_hv_omega: 10,
            de_f: 0.5,
            de_cr: 1.0,
            pm_eta: 20.0,
            // Per-generation refits rarely benefit from the full epoch cap;
            // a budgeted cap keeps large follower datasets affordable.
            train: TrainParams {
                max_epochs: 300,
                ..TrainParams::default()
            },
            final_reeval: None,
            max_ll_fe: None,
            max_ul_fe: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_u < 4 || self.n_l < 4 {
            return Err(BlemoError::InvalidConfig(
                "population sizes must be at least 4 for differential evolution".into(),
            ));
        }
        if self.vaa_pop < 4 {
            return Err(BlemoError::InvalidConfig(
                "completion-search population must be at least 4".into(),
            ));
        }
        if self.ds < self.n_l {
            return Err(BlemoError::InvalidConfig(
                "training-archive budget ds must be at least n_l".into(),
            ));
        }
        if let Gamma::Every(0) = self.gamma {
            return Err(BlemoError::InvalidConfig(
                "search cadence must be at least 1".into(),
            ));
        }
        if self.max_ul_gens == 0 {
            return Err(BlemoError::InvalidConfig(
                "generation cap must be at least 1".into(),
            ));
        }
        match self.stop {
            StopRule::Igd { epsilon, omega } | StopRule::Hv { epsilon, omega } => {
                if epsilon <= 0.0 || omega == 0 {
                    return Err(BlemoError::InvalidConfig(
                        "stopping rule needs epsilon > 0 and omega >= 1".into(),
                    ));
                }
            }
            StopRule::None => {}
        }
        if self.de_f <= 0.0 || !(0.0..=1.0).contains(&self.de_cr) || self.pm_eta <= 0.0 {
            return Err(BlemoError::InvalidConfig(
                "variation parameters out of range".into(),
            ));
        }
        Ok(())
    }

    /// Whether the final re-search is on, resolving the mode default.
    pub fn final_reeval_effective(&self) -> bool {
        self.final_reeval.unwrap_or(!matches!(self.mode, Mode::Ne))
    }
}

// ---------------------------------------------------------------------------
// Evaluation accounting and the variable-association audit.
// ---------------------------------------------------------------------------

/// Function-evaluation tallies for the two levels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeCounter {
    pub ul: u64,
    pub ll: u64,
}

/// Association-audit result for the follower decision vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaaVector {
    /// Per variable: 0 when it moves the follower problem, 1 otherwise.
    pub v: Vec<u8>,
    /// Variables that move neither level; excluded from search and pinned
    /// to the middle of their bounds.
    pub inert: Vec<usize>,
}

impl VaaVector {
    /// Indices the follower optimizer searches (v = 0).
    pub fn searched(&self) -> Vec<usize> {
        (0..self.v.len()).filter(|&i| self.v[i] == 0).collect()
    }

    /// Indices the leader-side completion search owns (v = 1, not inert).
    pub fn leader_only(&self) -> Vec<usize> {
        (0..self.v.len())
            .filter(|&i| self.v[i] == 1 && !self.inert.contains(&i))
            .collect()
    }
}

fn moved(a: &Eval, b: &Eval, threshold: f64) -> bool {
    (a.objs[0] - b.objs[0]).abs() > threshold
        || (a.objs[1] - b.objs[1]).abs() > threshold
        || (a.cv - b.cv).abs() > threshold
}

/// Probes each follower variable at three base points to classify it.
///
/// A variable that changes the follower objectives or follower violation is
/// searched by the follower optimizer (v = 0); otherwise, if it changes the
/// leader objectives or leader violation it belongs to the leader-side
/// completion search (v = 1); a variable that changes nothing is inert.
/// Probes use the mid-bounds point plus two random base points and are
/// charged to the evaluation counters.
pub fn vaa_check(
    problem: &dyn BilevelProblem,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> VaaVector {
    const THRESHOLD: f64 = 1e-10;
    let ub = problem.ul_bounds();
    let lb = problem.ll_bounds();
    let d_l = problem.d_l();
    let mid = |b: &[(f64, f64)]| -> Vec<f64> { b.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect() };
    let mut bases = vec![(mid(ub), mid(lb))];
    for _ in 0..2 {
        let xu = draw_box(ub, rng);
        let xl = draw_box(lb, rng);
        bases.push((xu, xl));
    }

    let mut ll_moves = vec![false; d_l];
    let mut ul_moves = vec![false; d_l];
    for (xu, xl) in &bases {
        let base_ll = problem.eval_ll(xu, xl);
        let base_ul = problem.eval_ul(xu, xl);
        fe.ll += 1;
        fe.ul += 1;
        for i in 0..d_l {
            let (lo, hi) = lb[i];
            if hi <= lo {
                continue;
            }
            let delta = 1e-4 * (hi - lo);
            let mut probe = xl.clone();
            probe[i] = if xl[i] + delta <= hi {
                xl[i] + delta
            } else {
                xl[i] - delta
            };
            let probe_ll = problem.eval_ll(xu, &probe);
            let probe_ul = problem.eval_ul(xu, &probe);
            fe.ll += 1;
            fe.ul += 1;
            if moved(&base_ll, &probe_ll, THRESHOLD) {
                ll_moves[i] = true;
            }
            if moved(&base_ul, &probe_ul, THRESHOLD) {
                ul_moves[i] = true;
            }
        }
    }

    let mut v = vec![0u8; d_l];
    let mut inert = Vec::new();
    for i in 0..d_l {
        if !ll_moves[i] {
            v[i] = 1;
            if !ul_moves[i] {
                inert.push(i);
            }
        }
    }
    VaaVector { v, inert }
}

// ---------------------------------------------------------------------------
// Shared assembly helpers.
// ---------------------------------------------------------------------------

fn draw_box(bounds: &[(f64, f64)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    bounds
        .iter()
        .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..hi) } else { lo })
        .collect()
}

fn draw_block(bounds: &[(f64, f64)], idx: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    idx.iter()
        .map(|&i| {
            let (lo, hi) = bounds[i];
            if hi > lo {
                rng.gen_range(lo..hi)
            } else {
                lo
            }
        })
        .collect()
}

/// Full follower vector from its searched block and leader-only block;
/// inert components sit at the middle of their bounds.
fn assemble_xl(
    lb: &[(f64, f64)],
    s_idx: &[usize],
    s_vals: &[f64],
    u_idx: &[usize],
    u_vals: &[f64],
) -> Vec<f64> {
    let mut xl: Vec<f64> = lb.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    for (&i, &v) in s_idx.iter().zip(s_vals) {
        xl[i] = v;
    }
    for (&i, &v) in u_idx.iter().zip(u_vals) {
        xl[i] = v;
    }
    xl
}

fn overlay(xl: &[f64], idx: &[usize], vals: &[f64]) -> Vec<f64> {
    let mut out = xl.to_vec();
    for (&i, &v) in idx.iter().zip(vals) {
        out[i] = v;
    }
    out
}

/// Flattened leader member: leader vector followed by its follower vector.
fn pair_solution(xu: &[f64], xl: &[f64], e: Eval) -> Solution {
    let mut x = xu.to_vec();
    x.extend_from_slice(xl);
    Solution::new(x, e.objs, e.cv)
}

/// Best single member: lowest front, then largest crowding, then smallest
/// objective vector lexicographically.
fn pick_best(ranked: &RankedPopulation) -> usize {
    (0..ranked.members.len())
        .min_by(|&a, &b| {
            ranked.front_index[a]
                .cmp(&ranked.front_index[b])
                .then_with(|| ranked.crowding[b].total_cmp(&ranked.crowding[a]))
                .then_with(|| ranked.members[a].objs[0].total_cmp(&ranked.members[b].objs[0]))
                .then_with(|| ranked.members[a].objs[1].total_cmp(&ranked.members[b].objs[1]))
        })
        .expect("completion population is never empty")
}

/// Reference point frozen from a population: 1.1 times the per-component
/// maximum, nudged outward when the maximum is not positive.
fn frozen_ref(pop: &[Solution]) -> [f64; 2] {
    let mut r = [f64::NEG_INFINITY; 2];
    for s in pop {
        for k in 0..2 {
            r[k] = r[k].max(s.objs[k]);
        }
    }
    for v in r.iter_mut() {
        *v = if *v > 0.0 {
            1.1 * *v
        } else {
            *v + 0.1 * v.abs() + 1e-6
        };
    }
    r
}

/// Reference point for hypervolume reporting, frozen from a reference front.
pub fn hv_reference_point(reference: &[[f64; 2]]) -> [f64; 2] {
    let mut r = [f64::NEG_INFINITY; 2];
    for p in reference {
        for k in 0..2 {
            r[k] = r[k].max(p[k]);
        }
    }
    for v in r.iter_mut() {
        *v = if *v > 0.0 {
            1.1 * *v
        } else {
            *v + 0.1 * v.abs() + 1e-6
        };
    }
    r
}

// ---------------------------------------------------------------------------
// Follower searches.
// ---------------------------------------------------------------------------

/// Evolves the follower population over the searched block with a fixed
/// leader-only completion, starting from pre-evaluated seed members.
#[allow(clippy::too_many_arguments)]
fn evolve_ll(
    problem: &dyn BilevelProblem,
    xu: &[f64],
    s_idx: &[usize],
    u_idx: &[usize],
    xl_u: &[f64],
    mut pop: Vec<Solution>,
    max_gens: usize,
    early_stop: Option<(f64, usize)>,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> Result<Vec<Solution>> {
    let lb = problem.ll_bounds();
    let s_bounds: Vec<(f64, f64)> = s_idx.iter().map(|&i| lb[i]).collect();
    let eval = |vals: Vec<f64>, fe: &mut FeCounter| -> Solution {
        let xl = assemble_xl(lb, s_idx, &vals, u_idx, xl_u);
        let e = problem.eval_ll(xu, &xl);
        fe.ll += 1;
        Solution::new(vals, e.objs, e.cv)
    };
    debug_assert!(pop.len() <= config.n_l, "seed count exceeds the population size");
    while pop.len() < config.n_l {
        let vals = draw_block(lb, s_idx, rng);
        pop.push(eval(vals, fe));
    }

    let mut monitor = early_stop.map(|(epsilon, omega)| TerminationMonitor::new(epsilon, omega));
    let pm = 1.0 / s_bounds.len().max(1) as f64;
    for _ in 0..max_gens {
        let parents: Vec<Vec<f64>> = pop.iter().map(|s| s.x.clone()).collect();
        let children = de_variation(&parents, &s_bounds, config.de_f, config.de_cr, rng)?;
        let mut merged = pop;
        for child in children {
            let mutated = polynomial_mutation(&child, &s_bounds, pm, config.pm_eta, rng);
            merged.push(eval(mutated, fe));
        }
        let ranked = rank_population(merged);
        pop = environmental_selection(&ranked, config.n_l, DssSpace::Objective);
        // Duplicate collapse can shrink the population below what
        // differential evolution needs; top up with fresh members.
        while pop.len() < 4 {
            let vals = draw_block(lb, s_idx, rng);
            pop.push(eval(vals, fe));
        }
        if let Some(mon) = monitor.as_mut() {
            let feas: Vec<[f64; 2]> = pop
                .iter()
                .filter(|s| s.feasible())
                .map(|s| s.objs)
                .collect();
            if !feas.is_empty() && mon.update(&feas) {
                break;
            }
        }
    }
    Ok(pop)
}

/// Feasible non-dominated (full x_l, follower objectives) pairs of a
/// final follower population.
fn extract_nd_pairs(
    lb: &[(f64, f64)],
    pop: &[Solution],
    s_idx: &[usize],
    u_idx: &[usize],
    xl_u: &[f64],
) -> Vec<(Vec<f64>, [f64; 2])> {
    let feas: Vec<&Solution> = pop.iter().filter(|s| s.feasible()).collect();
    if feas.is_empty() {
        return Vec::new();
    }
    let objs: Vec<[f64; 2]> = feas.iter().map(|s| s.objs).collect();
    nd_front_indices(&objs)
        .into_iter()
        .map(|k| {
            (
                assemble_xl(lb, s_idx, &feas[k].x, u_idx, xl_u),
                feas[k].objs,
            )
        })
        .collect()
}

/// One full follower search at `xu` from a random start.
///
/// The leader-only block is drawn once and held fixed for the whole search;
/// only the audited follower-affecting block evolves. Returns the feasible
/// non-dominated (x_l, objectives) pairs of the final population.
#[allow(clippy::too_many_arguments)]
pub fn ll_moea_search(
    problem: &dyn BilevelProblem,
    xu: &[f64],
    vaa: &VaaVector,
    max_gens: usize,
    early_stop: Option<(f64, usize)>,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> Result<Vec<(Vec<f64>, [f64; 2])>> {
    let s_idx = vaa.searched();
    let u_idx = vaa.leader_only();
    let xl_u = draw_block(problem.ll_bounds(), &u_idx, rng);
    let pop = evolve_ll(
        problem, xu, &s_idx, &u_idx, &xl_u, Vec::new(), max_gens, early_stop, config, rng, fe,
    )?;
    Ok(extract_nd_pairs(problem.ll_bounds(), &pop, &s_idx, &u_idx, &xl_u))
}

/// Stagnation-stopped follower search seeded with predictor output.
///
/// When a model is given its predictions are evaluated once, reduced to
/// their feasible non-dominated subset, and used as initial members; the
/// rest of the start population is random. Without a model this is a plain
/// stagnation-stopped search.
pub fn psp_assisted_ll_search(
    problem: &dyn BilevelProblem,
    xu: &[f64],
    vaa: &VaaVector,
    model: Option<&PspModel>,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> Result<Vec<(Vec<f64>, [f64; 2])>> {
    let s_idx = vaa.searched();
    let u_idx = vaa.leader_only();
    let lb = problem.ll_bounds();
    let xl_u = draw_block(lb, &u_idx, rng);

    let mut seeds: Vec<Solution> = Vec::new();
    if let Some(m) = model {
        let mut evaluated = Vec::with_capacity(config.n_l);
        for block in m.predict_ps(xu, config.n_l)? {
            let xl = assemble_xl(lb, &s_idx, &block, &u_idx, &xl_u);
            let e = problem.eval_ll(xu, &xl);
            fe.ll += 1;
            evaluated.push(Solution::new(block, e.objs, e.cv));
        }
        let feas: Vec<&Solution> = evaluated.iter().filter(|s| s.feasible()).collect();
        if !feas.is_empty() {
            let objs: Vec<[f64; 2]> = feas.iter().map(|s| s.objs).collect();
            seeds = nd_front_indices(&objs)
                .into_iter()
                .map(|k| feas[k].clone())
                .collect();
        }
    }

    let pop = evolve_ll(
        problem,
        xu,
        &s_idx,
        &u_idx,
        &xl_u,
        seeds,
        config.ll_max_gens,
        Some((config.ll_stop_epsilon, config.ll_stop_omega)),
        config,
        rng,
        fe,
    )?;
    Ok(extract_nd_pairs(lb, &pop, &s_idx, &u_idx, &xl_u))
}

/// Prediction-only follower set: the model's output is evaluated once per
/// point and filtered; no evolution takes place.
fn predict_only(
    problem: &dyn BilevelProblem,
    xu: &[f64],
    vaa: &VaaVector,
    model: &PspModel,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> Result<Vec<(Vec<f64>, [f64; 2])>> {
    let s_idx = vaa.searched();
    let u_idx = vaa.leader_only();
    let lb = problem.ll_bounds();
    let xl_u = draw_block(lb, &u_idx, rng);
    let mut pairs: Vec<(Vec<f64>, [f64; 2], f64)> = Vec::with_capacity(config.n_l);
    for block in model.predict_ps(xu, config.n_l)? {
        let xl = assemble_xl(lb, &s_idx, &block, &u_idx, &xl_u);
        let e = problem.eval_ll(xu, &xl);
        fe.ll += 1;
        pairs.push((xl, e.objs, e.cv));
    }
    let feas: Vec<&(Vec<f64>, [f64; 2], f64)> =
        pairs.iter().filter(|(_, _, cv)| *cv <= 0.0).collect();
    if feas.is_empty() {
        return Ok(Vec::new());
    }
    let objs: Vec<[f64; 2]> = feas.iter().map(|p| p.1).collect();
    Ok(nd_front_indices(&objs)
        .into_iter()
        .map(|k| (feas[k].0.clone(), feas[k].1))
        .collect())
}

// ---------------------------------------------------------------------------
// Leader-side completion search.
// ---------------------------------------------------------------------------

/// Completion carried between leader-side searches for transfer seeding.
#[derive(Debug, Clone)]
pub struct CompletionPrior {
    /// Searched-block values of the follower member this completion served.
    pub key: Vec<f64>,
    /// Leader-only block values found for it.
    pub xl_u: Vec<f64>,
    /// Whether the completed pair was leader-feasible.
    pub feasible: bool,
}

/// Seeding statistics of one completion pass, mainly for tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct UlSearchStats {
    pub seeded: usize,
    pub unseeded: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Completes each follower solution with leader-only variable values.
///
/// With an empty leader-only block every pair is evaluated once and
/// returned as-is. Otherwise each follower member gets a small search over
/// that block: unseeded searches run a fixed lead-in before
/// hypervolume-stagnation monitoring starts; once a leader-feasible
/// completion exists, later searches start from the completion of the
/// nearest previously-served member and are monitored from the start.
#[allow(clippy::too_many_arguments)]
pub fn ul_vaa_search(
    problem: &dyn BilevelProblem,
    xu: &[f64],
    ll_pairs: &[(Vec<f64>, [f64; 2])],
    vaa: &VaaVector,
    priors: &mut Vec<CompletionPrior>,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> Result<(Vec<Solution>, UlSearchStats)> {
    let s_idx = vaa.searched();
    let u_idx = vaa.leader_only();
    let lb = problem.ll_bounds();
    let mut out = Vec::with_capacity(ll_pairs.len());
    let mut stats = UlSearchStats::default();

    if u_idx.is_empty() {
        for (xl, _) in ll_pairs {
            let e = problem.eval_ul(xu, xl);
            fe.ul += 1;
            out.push(pair_solution(xu, xl, e));
        }
        return Ok((out, stats));
    }

    let u_bounds: Vec<(f64, f64)> = u_idx.iter().map(|&i| lb[i]).collect();
    let pm = 1.0 / u_bounds.len() as f64;
    for (xl, _) in ll_pairs {
        let key: Vec<f64> = s_idx.iter().map(|&i| xl[i]).collect();
        let seed = priors
            .iter()
            .filter(|p| p.feasible)
            .min_by(|a, b| dist2(&a.key, &key).total_cmp(&dist2(&b.key, &key)))
            .map(|p| p.xl_u.clone());
        let seeded = seed.is_some();
        if seeded {
            stats.seeded += 1;
        } else {
            stats.unseeded += 1;
        }

        let eval_block = |block: Vec<f64>, fe: &mut FeCounter| -> Solution {
            let full = overlay(xl, &u_idx, &block);
            let e = problem.eval_ul(xu, &full);
            fe.ul += 1;
            Solution::new(block, e.objs, e.cv)
        };
        let mut pop: Vec<Solution> = Vec::with_capacity(config.vaa_pop);
        if let Some(block) = seed {
            pop.push(eval_block(block, fe));
        }
        while pop.len() < config.vaa_pop {
            pop.push(eval_block(draw_block(lb, &u_idx, rng), fe));
        }

        let lead_in = if seeded { 0 } else { config.vaa_first_gens };
        let mut monitor: Option<HvTerminationMonitor> = None;
        let mut reference: Option<[f64; 2]> = None;
        for gen in 1..=config.vaa_max_gens {
            let parents: Vec<Vec<f64>> = pop.iter().map(|s| s.x.clone()).collect();
            let children = de_variation(&parents, &u_bounds, config.de_f, config.de_cr, rng)?;
            let mut merged = pop;
            for child in children {
                let mutated = polynomial_mutation(&child, &u_bounds, pm, config.pm_eta, rng);
                merged.push(eval_block(mutated, fe));
            }
            let ranked = rank_population(merged);
            pop = environmental_selection(&ranked, config.vaa_pop, DssSpace::Objective);
            while pop.len() < 4 {
                pop.push(eval_block(draw_block(lb, &u_idx, rng), fe));
            }
            if gen > lead_in {
                let r = *reference.get_or_insert_with(|| frozen_ref(&pop));
                let feas: Vec<[f64; 2]> = pop
                    .iter()
                    .filter(|s| s.feasible())
                    .map(|s| s.objs)
                    .collect();
                let hv = hv2d(&feas, r);
                let mon = monitor.get_or_insert_with(|| {
                    HvTerminationMonitor::new(config.vaa_hv_epsilon, config.vaa_hv_omega)
                });
                if mon.update(hv) {
                    break;
                }
            }
        }

        let ranked = rank_population(pop);
        let best = pick_best(&ranked);
        let block = ranked.members[best].x.clone();
        let full = overlay(xl, &u_idx, &block);
        let solution = pair_solution(
            xu,
            &full,
            Eval {
                objs: ranked.members[best].objs,
                cv: ranked.members[best].cv,
            },
        );
        priors.push(CompletionPrior {
            key,
            xl_u: block,
            feasible: solution.feasible(),
        });
        if priors.len() > 2 * PRIOR_POOL_LIMIT {
            priors.drain(..priors.len() - PRIOR_POOL_LIMIT);
        }
        out.push(solution);
    }
    Ok((out, stats))
}

// ---------------------------------------------------------------------------
// The top-level run.
// ---------------------------------------------------------------------------

/// Per-generation progress row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenRecord {
    pub generation: usize,
    pub ul_fe: u64,
    pub ll_fe: u64,
    /// Distance of the feasible population front to the reference front
    /// (NaN without a reference front or feasible members).
    pub igd: f64,
    /// Hypervolume of the feasible population front against a reference
    /// point frozen from the reference front (NaN without one).
    pub hv: f64,
}

/// Why the run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    GenerationCap,
    EvaluationCap,
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct RunResult {
    pub records: Vec<GenRecord>,
    /// Feasible non-dominated flattened pairs accumulated over the run.
    pub archive: Vec<Solution>,
    /// Front after the final re-search (the archive when that is off).
    pub final_front: Vec<Solution>,
    pub vaa: VaaVector,
    pub fe: FeCounter,
    pub generations: usize,
    pub stop_reason: StopReason,
    pub trainings: usize,
    pub model: Option<PspModel>,
}

fn fe_capped(fe: &FeCounter, config: &RunConfig) -> bool {
    config.max_ll_fe.is_some_and(|cap| fe.ll >= cap)
        || config.max_ul_fe.is_some_and(|cap| fe.ul >= cap)
}

/// Registers a leader proposal against the evaluated-point table, mutating
/// it away from collisions for up to ten attempts.
fn register_leader(
    mut xu: Vec<f64>,
    ub: &[(f64, f64)],
    eta: f64,
    evaluated: &mut HashSet<Vec<i64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    for _ in 0..10 {
        if evaluated.insert(grid_key(&xu)) {
            return xu;
        }
        xu = polynomial_mutation(&xu, ub, 1.0, eta, rng);
    }
    evaluated.insert(grid_key(&xu));
    xu
}

fn gamma_due(gamma: Gamma, gen: usize) -> bool {
    match gamma {
        Gamma::Every(g) => gen % g as usize == 0,
        Gamma::Never => false,
    }
}

/// Placeholder pair for a leader vector whose follower search found nothing
/// feasible; it ranks behind every real member and is never archived.
fn infeasible_sentinel(problem: &dyn BilevelProblem, xu: &[f64]) -> Solution {
    let mid: Vec<f64> = problem
        .ll_bounds()
        .iter()
        .map(|&(lo, hi)| 0.5 * (lo + hi))
        .collect();
    let mut x = xu.to_vec();
    x.extend_from_slice(&mid);
    Solution::new(x, [f64::INFINITY, f64::INFINITY], f64::INFINITY)
}

/// Folds feasible pairs into the running non-dominated archive.
fn archive_extend(archive: &mut Vec<Solution>, fresh: Vec<Solution>) {
    archive.extend(fresh);
    if archive.is_empty() {
        return;
    }
    let objs: Vec<[f64; 2]> = archive.iter().map(|s| s.objs).collect();
    let kept: Vec<Solution> = nd_front_indices(&objs)
        .into_iter()
        .map(|i| archive[i].clone())
        .collect();
    *archive = kept;
}

/// Feasible non-dominated objective vectors of a population.
fn feasible_front(pop: &[Solution]) -> Vec<[f64; 2]> {
    let objs: Vec<[f64; 2]> = pop
        .iter()
        .filter(|s| s.feasible())
        .map(|s| s.objs)
        .collect();
    if objs.is_empty() {
        return objs;
    }
    nd_front_indices(&objs).into_iter().map(|i| objs[i]).collect()
}

/// Runs the full nested optimization.
///
/// The reference front, when given, is used for progress reporting and for
/// freezing the hypervolume reference point; hypervolume stopping requires
/// it. Identical configurations reproduce identical results bit for bit.
pub fn run(
    problem: &dyn BilevelProblem,
    config: &RunConfig,
    reference: Option<&[[f64; 2]]>,
) -> Result<RunResult> {
    config.validate()?;
    if matches!(config.stop, StopRule::Hv { .. }) && reference.is_none() {
        return Err(BlemoError::InvalidConfig(
            "hypervolume stopping needs a reference front to fix the reference point".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fe = FeCounter::default();
    let vaa = vaa_check(problem, &mut rng, &mut fe);
    let s_idx = vaa.searched();
    let ub = problem.ul_bounds();
    let d_u = problem.d_u();
    let hv_ref = reference.map(hv_reference_point);

    let mut evaluated: HashSet<Vec<i64>> = HashSet::new();
    let mut training_entries: Vec<TrainingEntry> = Vec::new();
    let mut training_rows = 0usize;
    let mut model: Option<PspModel> = None;
    let mut trainings = 0usize;
    let mut priors: Vec<CompletionPrior> = Vec::new();
    let mut archive: Vec<Solution> = Vec::new();
    let mut records: Vec<GenRecord> = Vec::new();
    let mut pop: Vec<Solution> = Vec::new();
    let mut stop_reason = StopReason::GenerationCap;
    let mut igd_monitor = match config.stop {
        StopRule::Igd { epsilon, omega } => Some(TerminationMonitor::new(epsilon, omega)),
        _ => None,
    };
    let mut hv_monitor = match config.stop {
        StopRule::Hv { epsilon, omega } => Some(HvTerminationMonitor::new(epsilon, omega)),
        _ => None,
    };
    let mut hv_seen = false;

    for gen in 1..=config.max_ul_gens {
        let proposals: Vec<Vec<f64>> = if gen == 1 {
            let mut out = Vec::with_capacity(config.n_u);
            for _ in 0..config.n_u {
                let xu = draw_box(ub, &mut rng);
                out.push(register_leader(xu, ub, config.pm_eta, &mut evaluated, &mut rng));
            }
            out
        } else {
            let mut parents: Vec<Vec<f64>> = pop.iter().map(|s| s.x[..d_u].to_vec()).collect();
            while parents.len() < 4 {
                parents.push(draw_box(ub, &mut rng));
            }
            let pm = 1.0 / d_u as f64;
            let mut out = Vec::with_capacity(config.n_u);
            'fill: loop {
                let children =
                    de_variation(&parents, ub, config.de_f, config.de_cr, &mut rng)?;
                for child in children {
                    let mutated = polynomial_mutation(&child, ub, pm, config.pm_eta, &mut rng);
                    out.push(register_leader(
                        mutated,
                        ub,
                        config.pm_eta,
                        &mut evaluated,
                        &mut rng,
                    ));
                    if out.len() == config.n_u {
                        break 'fill;
                    }
                }
            }
            out
        };

        let searched_gen = match config.mode {
            Mode::Ne => true,
            Mode::Os => gen == 1,
            Mode::Psp => {
                gen == 1
                    || model.is_none()
                    || training_rows < config.ds
                    || gamma_due(config.gamma, gen)
            }
        };

        let mut fresh: Vec<Solution> = Vec::new();
        let mut capped = false;
        for xu in &proposals {
            if fe_capped(&fe, config) {
                capped = true;
                break;
            }
            let ll_result = if gen == 1 {
                ll_moea_search(
                    problem,
                    xu,
                    &vaa,
                    config.first_ll_gens,
                    None,
                    config,
                    &mut rng,
                    &mut fe,
                )?
            } else if searched_gen {
                let m = match config.mode {
                    Mode::Ne => None,
                    _ => model.as_ref(),
                };
                psp_assisted_ll_search(problem, xu, &vaa, m, config, &mut rng, &mut fe)?
            } else if let Some(m) = model.as_ref() {
                predict_only(problem, xu, &vaa, m, config, &mut rng, &mut fe)?
            } else {
                psp_assisted_ll_search(problem, xu, &vaa, None, config, &mut rng, &mut fe)?
            };

            if searched_gen && config.mode != Mode::Ne && !ll_result.is_empty() {
                training_rows += ll_result.len();
                training_entries.push(TrainingEntry {
                    xu: xu.clone(),
                    ps: ll_result.clone(),
                });
            }

            if ll_result.is_empty() {
                fresh.push(infeasible_sentinel(problem, xu));
            } else {
                let (completed, _) = ul_vaa_search(
                    problem, xu, &ll_result, &vaa, &mut priors, config, &mut rng, &mut fe,
                )?;
                fresh.extend(completed);
            }
        }

        let mut pool = pop;
        pool.extend(fresh.iter().cloned());
        archive_extend(
            &mut archive,
            fresh.into_iter().filter(|s| s.feasible()).collect(),
        );
        let ranked = rank_population(pool);
        pop = environmental_selection(&ranked, config.n_u, DssSpace::Objective);

        if searched_gen
            && matches!(config.mode, Mode::Psp | Mode::Os)
            && !training_entries.is_empty()
        {
            let ds = build_dataset(
                &training_entries,
                &s_idx,
                ub,
                problem.ll_bounds(),
                config.ds,
            )?;
            if ds.len() >= 20 {
                let (m, _) = train(&ds, &config.train, &mut rng)?;
                model = Some(m);
                trainings += 1;
            }
        }

        let front = feasible_front(&pop);
        let igd_val = match reference {
            Some(r) if !front.is_empty() => igd(r, &front)?,
            _ => f64::NAN,
        };
        let hv_val = match hv_ref {
            Some(r) => hv2d(&front, r),
            None => f64::NAN,
        };
        records.push(GenRecord {
            generation: gen,
            ul_fe: fe.ul,
            ll_fe: fe.ll,
            igd: igd_val,
            hv: hv_val,
        });

        if capped {
            stop_reason = StopReason::EvaluationCap;
            break;
        }
        if !front.is_empty() {
            if let Some(mon) = igd_monitor.as_mut() {
                if mon.update(&front) {
                    stop_reason = StopReason::Converged;
                    break;
                }
            }
            // The unnormalized reference box makes hv exactly zero until the
            // front first enters it; stagnation is meaningless before that.
            if hv_val > 0.0 || hv_seen {
                hv_seen = true;
                if let Some(mon) = hv_monitor.as_mut() {
                    if mon.update(hv_val) {
                        stop_reason = StopReason::Converged;
                        break;
                    }
                }
            }
        }
    }

    let generations = records.len();
    let final_front = if config.final_reeval_effective() && !archive.is_empty() {
        final_reevaluation(
            problem,
            &archive,
            &vaa,
            model.as_ref(),
            &mut priors,
            config,
            &mut rng,
            &mut fe,
        )?
    } else {
        archive.clone()
    };

    Ok(RunResult {
        records,
        archive,
        final_front,
        vaa,
        fe,
        generations,
        stop_reason,
        trainings,
        model,
    })
}

/// Re-searches the follower problem for every distinct archived leader
/// vector, re-evaluates the completions, and returns the feasible
/// non-dominated front of the outcome.
///
/// Leaders skipped because an evaluation cap fired keep their archived
/// pairs, so the result never silently loses coverage.
#[allow(clippy::too_many_arguments)]
pub fn final_reevaluation(
    problem: &dyn BilevelProblem,
    archive: &[Solution],
    vaa: &VaaVector,
    model: Option<&PspModel>,
    priors: &mut Vec<CompletionPrior>,
    config: &RunConfig,
    rng: &mut ChaCha8Rng,
    fe: &mut FeCounter,
) -> Result<Vec<Solution>> {
    let d_u = problem.d_u();
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut leaders: Vec<Vec<f64>> = Vec::new();
    for s in archive {
        let xu = s.x[..d_u].to_vec();
        if seen.insert(grid_key(&xu)) {
            leaders.push(xu);
        }
    }

    let mut pairs: Vec<Solution> = Vec::new();
    let mut processed = 0usize;
    for xu in &leaders {
        if fe_capped(fe, config) {
            break;
        }
        let ll = psp_assisted_ll_search(problem, xu, vaa, model, config, rng, fe)?;
        if !ll.is_empty() {
            let (completed, _) =
                ul_vaa_search(problem, xu, &ll, vaa, priors, config, rng, fe)?;
            pairs.extend(completed.into_iter().filter(|s| s.feasible()));
        }
        processed += 1;
    }
    if processed < leaders.len() {
        let done: HashSet<Vec<i64>> =
            leaders[..processed].iter().map(|x| grid_key(x)).collect();
        for s in archive {
            if !done.contains(&grid_key(&s.x[..d_u])) {
                pairs.push(s.clone());
            }
        }
    }

    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let objs: Vec<[f64; 2]> = pairs.iter().map(|s| s.objs).collect();
    Ok(nd_front_indices(&objs)
        .into_iter()
        .map(|i| pairs[i].clone())
        .collect())
}
