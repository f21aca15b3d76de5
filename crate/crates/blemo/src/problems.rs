//! Benchmark bilevel problems with two objectives on each level.
//!
//! Every problem couples a leader ("upper level") objective pair with a
//! follower ("lower level") objective pair over a shared pair of decision
//! vectors. A problem declares box bounds for both vectors and reports an
//! aggregate constraint violation with each evaluation, so search code never
//! needs problem-specific feasibility logic. Problems with analytically
//! known fronts also sample their true upper-level front;
//! [`generate_true_pf`] reduces such a sample to an evenly spread reference
//! set and [`load_or_generate_pf`] caches it on disk.
//!
//! TP1/TP2 and DS1..DS5 follow the bilevel multi-objective test-problem
//! family introduced by Deb and Sinha (2010). The `*D` variants are
//! deceptive versions: they reward follower-suboptimal deviations at the
//! leader level while leaving the true front unchanged. `TOY1`,
//! `SYN-VAA` and `SYN-INERT` are small fully analytic instances used
//! heavily by the test suites.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::moea::{dss_select, nd_front_indices, DssSpace, Solution};
use crate::util::linspace;
use crate::{BlemoError, Result};

/// One evaluation: objective pair plus aggregate constraint violation
/// (0 means feasible).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eval {
    pub objs: [f64; 2],
    pub cv: f64,
}

impl Eval {
    fn free(objs: [f64; 2]) -> Self {
        Eval { objs, cv: 0.0 }
    }
}

/// A bilevel problem with two objectives per level and box-bounded variables.
pub trait BilevelProblem: Send + Sync {
    /// Identifier used in file names, caches, and reports.
    fn name(&self) -> &str;
    /// Leader decision-vector length.
    fn d_u(&self) -> usize;
    /// Follower decision-vector length.
    fn d_l(&self) -> usize;
    fn ul_bounds(&self) -> &[(f64, f64)];
    fn ll_bounds(&self) -> &[(f64, f64)];
    /// Leader objectives and leader constraint violation at (x_u, x_l).
    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval;
    /// Follower objectives and follower constraint violation at (x_u, x_l).
    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval;
    /// Roughly `want` points on (or densely near) the true leader front, or
    /// `None` when the front is not analytically available. Dominated
    /// candidates are allowed; callers filter.
    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        let _ = want;
        None
    }
    /// `n` points from the known follower Pareto set at `xu`, or `None`.
    /// Components irrelevant to the follower are pinned to a canonical value
    /// so each sample is a complete decision vector.
    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        let _ = (xu, n);
        None
    }
}

/// Decision-vector size presets, from smallest (S1) to largest (S3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarSet {
    S1,
    S2,
    S3,
}

impl fmt::Display for VarSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarSet::S1 => write!(f, "S1"),
            VarSet::S2 => write!(f, "S2"),
            VarSet::S3 => write!(f, "S3"),
        }
    }
}

impl std::str::FromStr for VarSet {
    type Err = BlemoError;

    fn from_str(s: &str) -> Result<VarSet> {
        match s.trim().to_ascii_uppercase().as_str() {
            "1" | "S1" => Ok(VarSet::S1),
            "2" | "S2" => Ok(VarSet::S2),
            "3" | "S3" => Ok(VarSet::S3),
            other => Err(BlemoError::InvalidConfig(format!(
                "unknown variable set `{other}`, expected 1, 2, or 3"
            ))),
        }
    }
}

/// Label for a size preset, used in cache file names and reports.
pub fn set_label(set: Option<VarSet>) -> &'static str {
    match set {
        None => "default",
        Some(VarSet::S1) => "S1",
        Some(VarSet::S2) => "S2",
        Some(VarSet::S3) => "S3",
    }
}

/// Which problem to build, by id and optional size preset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub id: String,
    #[serde(default)]
    pub set: Option<VarSet>,
}

impl ProblemConfig {
    pub fn new(id: &str, set: Option<VarSet>) -> Self {
        ProblemConfig { id: id.to_string(), set }
    }
}

/// Instantiates a problem from its id (case-insensitive) and size preset.
pub fn make_problem(config: &ProblemConfig) -> Result<Box<dyn BilevelProblem>> {
    let id = config.id.trim().to_ascii_uppercase();
    let set = config.set;
    let fixed_size = |id: &str| -> Result<()> {
        match set {
            None | Some(VarSet::S1) => Ok(()),
            Some(s) => Err(BlemoError::UnsupportedSet(id.to_string(), s.to_string())),
        }
    };
    // Follower-dimension presets shared by TP2/DS1/DS2; DS3 needs 3 dims.
    let k_of = |default: usize, s1: usize| match set {
        None => default,
        Some(VarSet::S1) => s1,
        Some(VarSet::S2) => 4,
        Some(VarSet::S3) => 10,
    };
    let deceptive = id.ends_with('D');
    Ok(match id.as_str() {
        "TP1" => {
            fixed_size("TP1")?;
            Box::new(Tp1::new())
        }
        "TP2" => Box::new(Tp2::new(if set.is_none() { 14 } else { k_of(14, 2) })),
        "DS1" | "DS1D" => Box::new(Ds1::new(k_of(10, 2), deceptive)),
        "DS2" | "DS2D" => Box::new(Ds2::new(k_of(10, 2), deceptive)),
        "DS3" | "DS3D" => Box::new(Ds3::new(k_of(10, 3), deceptive)),
        "DS4" | "DS4D" | "DS5" | "DS5D" => {
            let (k, l) = match set {
                None | Some(VarSet::S3) => (5, 4),
                Some(VarSet::S1) => (2, 1),
                Some(VarSet::S2) => (3, 2),
            };
            Box::new(Ds45::new(id.starts_with("DS5"), k, l, deceptive))
        }
        "TOY1" => {
            fixed_size("TOY1")?;
            Box::new(toy1())
        }
        "SYN-VAA" => {
            fixed_size("SYN-VAA")?;
            Box::new(syn_vaa())
        }
        "SYN-INERT" => {
            fixed_size("SYN-INERT")?;
            Box::new(syn_inert())
        }
        _ => return Err(BlemoError::UnknownProblem(config.id.clone())),
    })
}

/// Bumped whenever a front sampler changes, so stale caches regenerate.
pub const PF_GENERATOR_VERSION: u32 = 1;

/// Evenly spread `n`-point reference set for the problem's true leader front.
///
/// Oversamples the front (at least 2n points when the geometry allows),
/// keeps the non-dominated subset, and reduces it to `n` points by greedy
/// maximin subset selection. The result is sorted by the first objective.
pub fn generate_true_pf(problem: &dyn BilevelProblem, n: usize) -> Result<Vec<[f64; 2]>> {
    if n == 0 {
        return Err(BlemoError::EmptySelection);
    }
    let sample = problem
        .pf_candidates(2 * n)
        .ok_or_else(|| BlemoError::NoPfSampler(problem.name().to_string()))?;
    let front: Vec<[f64; 2]> = nd_front_indices(&sample)
        .into_iter()
        .map(|i| sample[i])
        .collect();
    if front.len() < n {
        return Err(BlemoError::InvalidConfig(format!(
            "front sampler for {} produced {} distinct points, {} requested",
            problem.name(),
            front.len(),
            n
        )));
    }
    let mut reduced: Vec<[f64; 2]> = if front.len() == n {
        front
    } else {
        let wrapped: Vec<Solution> = front
            .iter()
            .map(|p| Solution::new(Vec::new(), *p, 0.0))
            .collect();
        dss_select(&wrapped, n, DssSpace::Objective)?
            .into_iter()
            .map(|i| front[i])
            .collect()
    };
    reduced.sort_by(|a, b| a[0].total_cmp(&b[0]));
    Ok(reduced)
}

/// Cached variant of [`generate_true_pf`]; reads or writes
/// `<dir>/<problem>_<set>_n<n>.csv`. Stale or foreign files regenerate.
pub fn load_or_generate_pf(
    problem: &dyn BilevelProblem,
    set: &str,
    n: usize,
    cache_dir: &Path,
) -> Result<Vec<[f64; 2]>> {
    fs::create_dir_all(cache_dir)?;
    let file = cache_dir.join(format!("{}_{}_n{}.csv", problem.name(), set, n));
    if file.exists() {
        if let Some(points) = read_pf_cache(&file, problem.name(), n)? {
            return Ok(points);
        }
    }
    let points = generate_true_pf(problem, n)?;
    let mut text = format!(
        "# problem={} set={} n={} generator={}\nF1,F2\n",
        problem.name(),
        set,
        n,
        PF_GENERATOR_VERSION
    );
    for p in &points {
        text.push_str(&format!("{},{}\n", p[0], p[1]));
    }
    fs::write(&file, text)?;
    Ok(points)
}

/// Returns `Ok(None)` when the file is stale or malformed (regenerate).
fn read_pf_cache(file: &Path, name: &str, n: usize) -> Result<Option<Vec<[f64; 2]>>> {
    let text = fs::read_to_string(file)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let fresh = header.starts_with('#')
        && header.contains(&format!("problem={name} "))
        && header.contains(&format!("generator={PF_GENERATOR_VERSION}"));
    if !fresh || lines.next().map(str::trim) != Some("F1,F2") {
        return Ok(None);
    }
    let mut points = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut cells = line.split(',');
        let f1 = cells.next().and_then(|v| v.trim().parse::<f64>().ok());
        let f2 = cells.next().and_then(|v| v.trim().parse::<f64>().ok());
        match (f1, f2) {
            (Some(a), Some(b)) => points.push([a, b]),
            _ => return Ok(None),
        }
    }
    if points.len() == n {
        Ok(Some(points))
    } else {
        Ok(None)
    }
}

/// Samples candidates at increasing density until the non-dominated subset
/// reaches `want` points or a fixed evaluation budget is exhausted.
fn densify_front(want: usize, sample: impl Fn(usize) -> Vec<[f64; 2]>) -> Vec<[f64; 2]> {
    let mut budget = (want * 4).max(512);
    loop {
        let pts = sample(budget);
        let nd: Vec<[f64; 2]> = nd_front_indices(&pts).into_iter().map(|i| pts[i]).collect();
        if nd.len() >= want || budget >= 8_000_000 {
            return nd;
        }
        budget *= 4;
    }
}

/// Evaluates `f` over a unit-square grid of roughly `budget` points;
/// `f` may reject infeasible parameter combinations with `None`.
fn grid2(budget: usize, f: impl Fn(f64, f64) -> Option<[f64; 2]>) -> Vec<[f64; 2]> {
    let side = (budget as f64).sqrt().ceil().max(2.0) as usize;
    let axis = linspace(0.0, 1.0, side);
    let mut pts = Vec::with_capacity(side * side);
    for &a in &axis {
        for &b in &axis {
            if let Some(p) = f(a, b) {
                pts.push(p);
            }
        }
    }
    pts
}

fn square(v: f64) -> f64 {
    v * v
}

// ---------------------------------------------------------------------------
// TOY1: fully analytic oracle problem.
// ---------------------------------------------------------------------------

/// Tiny analytic problem whose follower optimum at a given `x_u` is the
/// closed-form segment `x_l = (t*x_u, (1-t)*x_u)`, `t` in [0, 1]. The
/// follower trades proximity of `x_l1` to `x_u` against proximity of `x_l2`
/// to `x_u`; the leader trades `x_l1` against `x_l2` with opposing pulls on
/// `x_u`. Everything about it is checkable by hand, which makes it the
/// workhorse of the unit and integration tests.
#[derive(Debug, Clone)]
pub struct Toy1 {
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

/// Builds the analytic oracle problem (`x_u` in [0,1], `x_l` in [0,1]^2).
pub fn toy1() -> Toy1 {
    Toy1 {
        ul_bounds: vec![(0.0, 1.0)],
        ll_bounds: vec![(0.0, 1.0); 2],
    }
}

impl BilevelProblem for Toy1 {
    fn name(&self) -> &str {
        "TOY1"
    }
    fn d_u(&self) -> usize {
        1
    }
    fn d_l(&self) -> usize {
        2
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        Eval::free([square(xu[0]) + xl[0], square(xu[0] - 1.0) + xl[1]])
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        Eval::free([
            square(xl[0] - xu[0]) + square(xl[1]),
            square(xl[0]) + square(xl[1] - xu[0]),
        ])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        Some(densify_front(want, |budget| {
            grid2(budget, |a, t| {
                Some([square(a) + t * a, square(a - 1.0) + (1.0 - t) * a])
            })
        }))
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        let u = xu[0];
        Some(
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| vec![t * u, (1.0 - t) * u])
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// Synthetic association-audit fixtures.
// ---------------------------------------------------------------------------

/// Analytic fixture where `x_l2` never appears in the follower objectives
/// but does appear in the leader objectives, so the association audit must
/// flag exactly that variable as leader-only.
#[derive(Debug, Clone)]
pub struct SynVaa {
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

/// Builds the leader-only-variable fixture (all variables in [0,1]).
pub fn syn_vaa() -> SynVaa {
    SynVaa {
        ul_bounds: vec![(0.0, 1.0)],
        ll_bounds: vec![(0.0, 1.0); 2],
    }
}

impl BilevelProblem for SynVaa {
    fn name(&self) -> &str {
        "SYN-VAA"
    }
    fn d_u(&self) -> usize {
        1
    }
    fn d_l(&self) -> usize {
        2
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let pen = square(xl[1] - 0.3);
        Eval::free([xu[0] + pen, 1.0 - xu[0] + xl[0] + pen])
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        Eval::free([square(xl[0] - xu[0]), square(xl[0])])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        // Best completion: x_l1 = 0 and x_l2 = 0.3, leaving F1 + F2 = 1.
        Some(
            linspace(0.0, 1.0, want.max(2))
                .into_iter()
                .map(|a| [a, 1.0 - a])
                .collect(),
        )
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        let u = xu[0];
        Some(
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| vec![t * u, 0.3])
                .collect(),
        )
    }
}

/// Variant of [`SynVaa`] with a third follower variable that appears in no
/// objective at all, for exercising the audit's exclusion path.
#[derive(Debug, Clone)]
pub struct SynInert {
    inner: SynVaa,
    ll_bounds: Vec<(f64, f64)>,
}

/// Builds the inert-variable fixture (three follower variables, the last unused).
pub fn syn_inert() -> SynInert {
    SynInert {
        inner: syn_vaa(),
        ll_bounds: vec![(0.0, 1.0); 3],
    }
}

impl BilevelProblem for SynInert {
    fn name(&self) -> &str {
        "SYN-INERT"
    }
    fn d_u(&self) -> usize {
        1
    }
    fn d_l(&self) -> usize {
        3
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        self.inner.ul_bounds()
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        self.inner.eval_ul(xu, &xl[..2])
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        self.inner.eval_ll(xu, &xl[..2])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        self.inner.pf_candidates(want)
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        Some(
            self.inner
                .ll_ps_sample(xu, n)?
                .into_iter()
                .map(|mut x| {
                    x.push(0.5);
                    x
                })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// TP problems.
// ---------------------------------------------------------------------------

/// Disc-constrained follower: the follower minimizes both of its coordinates
/// inside a disc of radius `x_u`; the leader shifts the trade-off and adds a
/// linear coupling constraint that cuts away the middle of the disc arc.
#[derive(Debug, Clone)]
pub struct Tp1 {
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

impl Tp1 {
    pub fn new() -> Self {
        Tp1 {
            ul_bounds: vec![(0.0, 1.0)],
            ll_bounds: vec![(-1.0, 1.0); 2],
        }
    }
}

impl Default for Tp1 {
    fn default() -> Self {
        Self::new()
    }
}

impl BilevelProblem for Tp1 {
    fn name(&self) -> &str {
        "TP1"
    }
    fn d_u(&self) -> usize {
        1
    }
    fn d_l(&self) -> usize {
        2
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        Eval {
            objs: [xl[0] - xu[0], xl[1]],
            cv: (-(1.0 + xl[0] + xl[1])).max(0.0),
        }
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        Eval {
            objs: [xl[0], xl[1]],
            cv: (square(xl[0]) + square(xl[1]) - square(xu[0])).max(0.0),
        }
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        Some(densify_front(want, |budget| {
            grid2(budget, |a, b| {
                let theta = PI + b * (PI / 2.0);
                let x0 = a * theta.cos();
                let x1 = a * theta.sin();
                if 1.0 + x0 + x1 < 0.0 {
                    None
                } else {
                    Some([x0 - a, x1])
                }
            })
        }))
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        // Slightly inside the disc so the boundary points stay feasible
        // under floating-point roundoff.
        let r = xu[0] * (1.0 - 1e-9);
        Some(
            linspace(PI, 1.5 * PI, n)
                .into_iter()
                .map(|theta| vec![r * theta.cos(), r * theta.sin()])
                .collect(),
        )
    }
}

/// Quadratic bowls at both levels: the follower pulls `x_l1` between 0 and
/// `x_u`, the leader pulls `x_u` between 0 and 1, and all remaining follower
/// variables are pure distance penalties shared by both levels.
#[derive(Debug, Clone)]
pub struct Tp2 {
    k: usize,
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

impl Tp2 {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "TP2 needs at least one follower variable");
        Tp2 {
            k,
            ul_bounds: vec![(-1.0, 2.0)],
            ll_bounds: vec![(-1.0, 2.0); k],
        }
    }
}

impl BilevelProblem for Tp2 {
    fn name(&self) -> &str {
        "TP2"
    }
    fn d_u(&self) -> usize {
        1
    }
    fn d_l(&self) -> usize {
        self.k
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let tail: f64 = xl[1..].iter().map(|v| square(*v)).sum();
        let head = square(xl[0] - 1.0) + tail;
        Eval::free([head + square(xu[0]), head + square(xu[0] - 1.0)])
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let tail: f64 = xl[1..].iter().map(|v| square(*v)).sum();
        Eval::free([square(xl[0]) + tail, square(xl[0] - xu[0]) + tail])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        Some(densify_front(want, |budget| {
            grid2(budget, |a, t| {
                let u = -1.0 + 3.0 * a;
                let head = square(t * u - 1.0);
                Some([head + square(u), head + square(u - 1.0)])
            })
        }))
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        Some(
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| {
                    let mut x = vec![0.0; self.k];
                    x[0] = t * xu[0];
                    x
                })
                .collect(),
        )
    }
}

// ---------------------------------------------------------------------------
// DS problems.
// ---------------------------------------------------------------------------

/// Periodic leader landscape over `x_u1` with a multimodal follower: the
/// follower tracks `x_u` in every variable with an added cosine ripple, and
/// trades `x_l1` toward 0 against toward `x_u1`. The leader front is a
/// quarter circle traced jointly by `x_u1` and the follower trade-off
/// position. The deceptive variant flips the sign of the tracking-error term
/// in the leader objectives.
#[derive(Debug, Clone)]
pub struct Ds1 {
    k: usize,
    tau: f64,
    label: &'static str,
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

impl Ds1 {
    pub fn new(k: usize, deceptive: bool) -> Self {
        assert!(k >= 2, "DS1 needs at least two variables per level");
        let kf = k as f64;
        let mut ul_bounds = vec![(1.0, 4.0)];
        ul_bounds.extend(std::iter::repeat((-kf, kf)).take(k - 1));
        Ds1 {
            k,
            tau: if deceptive { -1.0 } else { 1.0 },
            label: if deceptive { "DS1D" } else { "DS1" },
            ul_bounds,
            ll_bounds: vec![(-kf, kf); k],
        }
    }
}

impl BilevelProblem for Ds1 {
    fn name(&self) -> &str {
        self.label
    }
    fn d_u(&self) -> usize {
        self.k
    }
    fn d_l(&self) -> usize {
        self.k
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let su: f64 = (1..self.k)
            .map(|i| square(xu[i] - i as f64 / 2.0))
            .sum();
        let dev: f64 = (1..self.k).map(|i| square(xl[i] - xu[i])).sum();
        let ang = PI * xl[0] / (2.0 * xu[0]);
        let base = su + self.tau * dev;
        Eval::free([
            1.1 - (PI * xu[0]).cos() + base - 0.2 * ang.cos(),
            1.1 - (PI * xu[0]).sin() + base - 0.2 * ang.sin(),
        ])
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let mut track = 0.0;
        let mut ripple = 0.0;
        for i in 1..self.k {
            let d = xl[i] - xu[i];
            track += square(d);
            ripple += 10.0 * (1.0 - (PI / self.k as f64 * d).cos());
        }
        let weighted: f64 = (0..self.k)
            .map(|i| (i + 1) as f64 * square(xl[i] - xu[i]))
            .sum();
        Eval::free([square(xl[0]) + track + ripple, weighted])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        // Quarter circle of radius 1.2 centered at (1.1, 1.1); the periodic
        // x_u1 term and the follower trade-off term align into one arc.
        Some(
            linspace(0.0, PI / 2.0, want.max(2))
                .into_iter()
                .map(|phi| [1.1 - 1.2 * phi.cos(), 1.1 - 1.2 * phi.sin()])
                .collect(),
        )
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        Some(
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| {
                    let mut x = xu.to_vec();
                    x[0] = t * xu[0];
                    x
                })
                .collect(),
        )
    }
}

/// Leader landscape with a rippled decline along `x_u1` whose slope changes
/// past `x_u1 = 1`; the follower is the same tracker as in [`Ds1`] without
/// the ripple. The true leader front splits into six circular arcs anchored
/// at the ripple's zero crossings.
#[derive(Debug, Clone)]
pub struct Ds2 {
    k: usize,
    tau: f64,
    label: &'static str,
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

/// Anchor values of `x_u1` whose arcs make up the DS2 front.
const DS2_ANCHORS: [f64; 6] = [0.001, 0.2, 0.4, 0.6, 0.8, 1.0];

fn ds2_v1(x: f64) -> f64 {
    let a = 0.2 * PI;
    if x <= 1.0 {
        a.cos() * x + a.sin() * (0.02 * (5.0 * PI * x).sin()).abs().sqrt()
    } else {
        x - (1.0 - a.cos())
    }
}

fn ds2_v2(x: f64) -> f64 {
    let a = 0.2 * PI;
    if x <= 1.0 {
        -a.sin() * x + a.cos() * (0.02 * (5.0 * PI * x).sin()).abs().sqrt()
    } else {
        0.1 * (x - 1.0) - a.sin()
    }
}

impl Ds2 {
    pub fn new(k: usize, deceptive: bool) -> Self {
        assert!(k >= 2, "DS2 needs at least two variables per level");
        let kf = k as f64;
        let mut ul_bounds = vec![(0.001, 2.0)];
        ul_bounds.extend(std::iter::repeat((-kf, kf)).take(k - 1));
        Ds2 {
            k,
            tau: if deceptive { -1.0 } else { 1.0 },
            label: if deceptive { "DS2D" } else { "DS2" },
            ul_bounds,
            ll_bounds: vec![(-kf, kf); k],
        }
    }
}

impl BilevelProblem for Ds2 {
    fn name(&self) -> &str {
        self.label
    }
    fn d_u(&self) -> usize {
        self.k
    }
    fn d_l(&self) -> usize {
        self.k
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let su: f64 = (1..self.k).map(|i| square(xu[i])).sum();
        let dev: f64 = (1..self.k).map(|i| square(xl[i] - xu[i])).sum();
        let ang = PI * xl[0] / (2.0 * xu[0]);
        let base = su + self.tau * dev;
        Eval::free([
            ds2_v1(xu[0]) + base - 0.2 * ang.cos(),
            ds2_v2(xu[0]) + base - 0.2 * ang.sin(),
        ])
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let track: f64 = (1..self.k).map(|i| square(xl[i] - xu[i])).sum();
        let weighted: f64 = (0..self.k)
            .map(|i| (i + 1) as f64 * square(xl[i] - xu[i]))
            .sum();
        Eval::free([square(xl[0]) + track, weighted])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        Some(densify_front(want, |budget| {
            let per = budget / DS2_ANCHORS.len() + 1;
            let mut pts = Vec::with_capacity(per * DS2_ANCHORS.len());
            for &anchor in &DS2_ANCHORS {
                let c = [ds2_v1(anchor), ds2_v2(anchor)];
                for psi in linspace(0.0, PI / 2.0, per) {
                    pts.push([c[0] - 0.2 * psi.cos(), c[1] - 0.2 * psi.sin()]);
                }
            }
            pts
        }))
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        Some(
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| {
                    let mut x = xu.to_vec();
                    x[0] = t * xu[0];
                    x
                })
                .collect(),
        )
    }
}

/// Constrained leader pair `(x_u1, x_u2)` pushed onto a circle of radius 2,
/// with a follower confined to a small disc around the leader point. The
/// follower's angular position modulates the leader objectives through a
/// radius term that varies periodically along the circle.
#[derive(Debug, Clone)]
pub struct Ds3 {
    k: usize,
    tau: f64,
    label: &'static str,
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

const DS3_DISC_RADIUS: f64 = 0.2;

fn ds3_amp(x: f64) -> f64 {
    0.1 + 0.15 * (2.0 * PI * (x - 0.1)).sin().abs()
}

impl Ds3 {
    pub fn new(k: usize, deceptive: bool) -> Self {
        assert!(k >= 3, "DS3 needs at least three variables per level");
        let kf = k as f64;
        let mut ul_bounds = vec![(0.0, 2.0), (0.0, 2.0)];
        ul_bounds.extend(std::iter::repeat((-kf, kf)).take(k - 2));
        Ds3 {
            k,
            tau: if deceptive { -1.0 } else { 1.0 },
            label: if deceptive { "DS3D" } else { "DS3" },
            ul_bounds,
            ll_bounds: vec![(-kf, kf + 1.0); k],
        }
    }
}

impl BilevelProblem for Ds3 {
    fn name(&self) -> &str {
        self.label
    }
    fn d_u(&self) -> usize {
        self.k
    }
    fn d_l(&self) -> usize {
        self.k
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let su: f64 = (2..self.k)
            .map(|i| square(xu[i] - (i + 1) as f64 / 2.0))
            .sum();
        let dev: f64 = (2..self.k).map(|i| square(xl[i] - xu[i])).sum();
        let amp = ds3_amp(xu[0]);
        let theta = (xu[1] - xl[1]).atan2(xu[0] - xl[0]);
        let base = su + self.tau * dev;
        Eval {
            objs: [
                xu[0] + base - amp * (4.0 * theta).cos(),
                xu[1] + base - amp * (4.0 * theta).sin(),
            ],
            cv: (4.0 - square(xu[0]) - square(xu[1])).max(0.0),
        }
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let dev: f64 = (2..self.k).map(|i| square(xl[i] - xu[i])).sum();
        Eval {
            objs: [xl[0] + dev, xl[1] + dev],
            cv: (square(xl[0] - xu[0]) + square(xl[1] - xu[1])
                - square(DS3_DISC_RADIUS))
            .max(0.0),
        }
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        Some(densify_front(want, |budget| {
            grid2(budget, |a, b| {
                let beta = a * PI / 2.0;
                let x0 = (2.0 * beta.cos()).min(2.0);
                let x1 = (2.0 * beta.sin()).min(2.0);
                let amp = ds3_amp(x0);
                let phi = b * PI / 2.0;
                Some([x0 - amp * phi.cos(), x1 - amp * phi.sin()])
            })
        }))
    }

    fn ll_ps_sample(&self, xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        // Slightly inside the disc to keep boundary samples feasible under
        // floating-point roundoff.
        let r = DS3_DISC_RADIUS * (1.0 - 1e-9);
        Some(
            linspace(PI, 1.5 * PI, n)
                .into_iter()
                .map(|theta| {
                    let mut x = xu.to_vec();
                    x[0] = xu[0] + r * theta.cos();
                    x[1] = xu[1] + r * theta.sin();
                    x
                })
                .collect(),
        )
    }
}

/// Scalar leader variable multiplying a linear follower trade-off, with the
/// follower split into a block that matters to the follower and a block that
/// matters only to the leader (the association-audit case). DS5 adds a
/// rippled leader constraint that cuts the front into segments; the
/// deceptive variants reward follower-block deviations at the leader level.
#[derive(Debug, Clone)]
pub struct Ds45 {
    five: bool,
    k: usize,
    l: usize,
    deceptive: bool,
    label: &'static str,
    ul_bounds: Vec<(f64, f64)>,
    ll_bounds: Vec<(f64, f64)>,
}

impl Ds45 {
    pub fn new(five: bool, k: usize, l: usize, deceptive: bool) -> Self {
        assert!(k >= 2 && l >= 1, "DS4/DS5 need k >= 2 and l >= 1");
        let mut ll_bounds = vec![(0.0, 1.0)];
        ll_bounds.extend(std::iter::repeat((-1.0, 1.0)).take(k + l - 1));
        Ds45 {
            five,
            k,
            l,
            deceptive,
            label: match (five, deceptive) {
                (false, false) => "DS4",
                (false, true) => "DS4D",
                (true, false) => "DS5",
                (true, true) => "DS5D",
            },
            ul_bounds: vec![(1.0, 2.0)],
            ll_bounds,
        }
    }

    fn required_margin(&self, t: f64) -> f64 {
        if self.five {
            1.0 + 0.1 * (5.0 * PI * t).sin().abs()
        } else {
            1.0
        }
    }
}

impl BilevelProblem for Ds45 {
    fn name(&self) -> &str {
        self.label
    }
    fn d_u(&self) -> usize {
        1
    }
    fn d_l(&self) -> usize {
        self.k + self.l
    }
    fn ul_bounds(&self) -> &[(f64, f64)] {
        &self.ul_bounds
    }
    fn ll_bounds(&self) -> &[(f64, f64)] {
        &self.ll_bounds
    }

    fn eval_ul(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let t = xl[0];
        let leader_block: f64 = xl[self.k..].iter().map(|v| square(*v)).sum();
        let scale = (1.0 + leader_block) * xu[0];
        let mut f1 = (1.0 - t) * scale;
        let mut f2 = t * scale;
        if self.deceptive {
            let pull: f64 = 2.0 * xl[1..self.k].iter().map(|v| square(*v)).sum::<f64>();
            f1 -= pull;
            f2 -= pull;
        }
        Eval {
            objs: [f1, f2],
            cv: (self.required_margin(t) - xu[0] * (1.0 - 0.5 * t)).max(0.0),
        }
    }

    fn eval_ll(&self, xu: &[f64], xl: &[f64]) -> Eval {
        let t = xl[0];
        let follower_block: f64 = xl[1..self.k].iter().map(|v| square(*v)).sum();
        let scale = (1.0 + follower_block) * xu[0];
        Eval::free([(1.0 - t) * scale, t * scale])
    }

    fn pf_candidates(&self, want: usize) -> Option<Vec<[f64; 2]>> {
        Some(densify_front(want, |budget| {
            linspace(0.0, 1.0, budget.max(2))
                .into_iter()
                .filter_map(|t| {
                    let u = self.required_margin(t) / (1.0 - 0.5 * t);
                    if u <= 2.0 + 1e-9 {
                        let u = u.min(2.0);
                        Some([(1.0 - t) * u, t * u])
                    } else {
                        None
                    }
                })
                .collect()
        }))
    }

    fn ll_ps_sample(&self, _xu: &[f64], n: usize) -> Option<Vec<Vec<f64>>> {
        Some(
            linspace(0.0, 1.0, n)
                .into_iter()
                .map(|t| {
                    let mut x = vec![0.0; self.k + self.l];
                    x[0] = t;
                    x
                })
                .collect(),
        )
    }
}
