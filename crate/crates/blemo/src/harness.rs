//! Experiment harness: batch execution, raw-file outputs, statistics,
//! and plot-script generation.
//!
//! Every run writes its own directory of plain CSV and JSON files; all
//! aggregation re-reads those files rather than trusting in-memory state,
//! so reports stay reproducible from the raw artifacts alone.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::framework::{
    hv_reference_point, run, FeCounter, GenRecord, Mode, RunConfig, StopReason, VaaVector,
};
use crate::metrics::{hv2d, igd};
use crate::moea::Solution;
use crate::problems::{load_or_generate_pf, make_problem, set_label, ProblemConfig, VarSet};
use crate::{BlemoError, Result};

// ---------------------------------------------------------------------------
// Experiment description.
// ---------------------------------------------------------------------------

/// One problem entry of an experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub id: String,
    #[serde(default)]
    pub set: Option<VarSet>,
}

/// Declarative description of a batch of runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub problems: Vec<ProblemSpec>,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    /// Template run configuration; mode and seed are filled per run.
    pub config: RunConfig,
    /// Reference-front size used for metric reporting.
    pub pf_points: usize,
    /// Worker threads executing the run matrix.
    pub workers: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            problems: Vec::new(),
            modes: vec![Mode::Psp],
            seeds: Vec::new(),
            config: RunConfig::default(),
            pf_points: 500,
            workers: 4,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.problems.is_empty() {
            return Err(BlemoError::InvalidConfig("no problems given".into()));
        }
        if self.modes.is_empty() {
            return Err(BlemoError::InvalidConfig("no modes given".into()));
        }
        if self.seeds.is_empty() {
            return Err(BlemoError::NoSeeds);
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(BlemoError::InvalidConfig("seeds must be distinct".into()));
        }
        if self.pf_points < 2 {
            return Err(BlemoError::InvalidConfig(
                "reference front needs at least 2 points".into(),
            ));
        }
        self.config.validate()
    }
}

/// Everything recorded about one finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub problem: String,
    pub set: String,
    pub config: RunConfig,
    pub vaa: VaaVector,
    pub generations: usize,
    pub ul_fe: u64,
    pub ll_fe: u64,
    pub stop_reason: StopReason,
    pub trainings: usize,
    /// Final-front metrics against the reference front; absent when the
    /// front came out empty.
    pub final_igd: Option<f64>,
    pub final_hv: Option<f64>,
    pub pf_points: usize,
    pub wall_clock_secs: f64,
}

// ---------------------------------------------------------------------------
// Raw-file reading and writing.
// ---------------------------------------------------------------------------

fn write_convergence_csv(path: &Path, records: &[GenRecord]) -> Result<()> {
    let mut text = String::from("generation,ul_fe,ll_fe,igd,hv\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.generation, r.ul_fe, r.ll_fe, r.igd, r.hv
        ));
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn write_front_csv(path: &Path, d_u: usize, d_l: usize, front: &[Solution]) -> Result<()> {
    let mut text = String::from("F1,F2");
    for i in 0..d_u {
        text.push_str(&format!(",xu{i}"));
    }
    for i in 0..d_l {
        text.push_str(&format!(",xl{i}"));
    }
    text.push('\n');
    for s in front {
        text.push_str(&format!("{},{}", s.objs[0], s.objs[1]));
        for v in &s.x {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Parses a plain CSV file into its header and float rows.
fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .map(|h| h.split(',').map(|c| c.trim().to_string()).collect())
        .unwrap_or_default();
    let rows = lines
        .map(|line| {
            line.split(',')
                .map(|c| c.trim().parse::<f64>().unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    Ok((header, rows))
}

/// Column indices for `required`, or the missing-column error for `path`.
fn require_columns(path: &Path, header: &[String], required: &[&str]) -> Result<Vec<usize>> {
    let mut idx = Vec::with_capacity(required.len());
    for name in required {
        match header.iter().position(|h| h == name) {
            Some(i) => idx.push(i),
            None => {
                return Err(BlemoError::MissingColumns {
                    file: path.display().to_string(),
                    expected: required.join(","),
                })
            }
        }
    }
    Ok(idx)
}

/// Objective vectors of a front CSV (columns F1 and F2).
fn read_front_objs(path: &Path) -> Result<Vec<[f64; 2]>> {
    let (header, rows) = read_csv(path)?;
    let idx = require_columns(path, &header, &["F1", "F2"])?;
    Ok(rows.iter().map(|r| [r[idx[0]], r[idx[1]]]).collect())
}

fn set_from_label(label: &str) -> Result<Option<VarSet>> {
    if label == "default" {
        Ok(None)
    } else {
        label.parse::<VarSet>().map(Some)
    }
}

// ---------------------------------------------------------------------------
// Run execution.
// ---------------------------------------------------------------------------

/// Executes one configured run and writes its artifacts into `dir`:
/// convergence.csv, final_front.csv, archive.csv, run_meta.json, and the
/// trained model when one exists.
pub fn run_one(
    problem_cfg: &ProblemConfig,
    config: &RunConfig,
    reference: &[[f64; 2]],
    dir: &Path,
) -> Result<RunMeta> {
    let problem = make_problem(problem_cfg)?;
    std::fs::create_dir_all(dir)?;
    let started = Instant::now();
    let result = run(problem.as_ref(), config, Some(reference))?;
    let wall_clock_secs = started.elapsed().as_secs_f64();

    write_convergence_csv(&dir.join("convergence.csv"), &result.records)?;
    write_front_csv(
        &dir.join("final_front.csv"),
        problem.d_u(),
        problem.d_l(),
        &result.final_front,
    )?;
    write_front_csv(
        &dir.join("archive.csv"),
        problem.d_u(),
        problem.d_l(),
        &result.archive,
    )?;
    if let Some(model) = &result.model {
        std::fs::write(dir.join("model.json"), model.to_json()?)?;
    }

    let front: Vec<[f64; 2]> = result.final_front.iter().map(|s| s.objs).collect();
    let (final_igd, final_hv) = if front.is_empty() {
        (None, None)
    } else {
        (
            Some(igd(reference, &front)?),
            Some(hv2d(&front, hv_reference_point(reference))),
        )
    };
    let meta = RunMeta {
        problem: problem.name().to_string(),
        set: set_label(problem_cfg.set).to_string(),
        config: config.clone(),
        vaa: result.vaa.clone(),
        generations: result.generations,
        ul_fe: result.fe.ul,
        ll_fe: result.fe.ll,
        stop_reason: result.stop_reason,
        trainings: result.trainings,
        final_igd,
        final_hv,
        pf_points: reference.len(),
        wall_clock_secs,
    };
    std::fs::write(
        dir.join("run_meta.json"),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(meta)
}

struct Task {
    problem_cfg: ProblemConfig,
    pf_key: String,
    dir: PathBuf,
    config: RunConfig,
}

/// Runs the whole experiment matrix with a bounded worker pool and returns
/// the summary recomputed from the files on disk.
///
/// Each run gets the directory `<out>/<problem>_<set>_<mode>_s<seed>`; a
/// failed run leaves an error.txt there instead of result files. Reference
/// fronts are generated up front into `<out>/pf_cache`.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentSummary> {
    spec.validate()?;
    std::fs::create_dir_all(out)?;
    let cache_dir = out.join("pf_cache");

    let mut fronts: HashMap<String, Vec<[f64; 2]>> = HashMap::new();
    let mut tasks: Vec<Task> = Vec::new();
    for pspec in &spec.problems {
        let cfg = ProblemConfig::new(&pspec.id, pspec.set);
        let problem = make_problem(&cfg)?;
        let name = problem.name().to_string();
        let set = set_label(pspec.set).to_string();
        let key = format!("{name}|{set}");
        if !fronts.contains_key(&key) {
            let pf = load_or_generate_pf(problem.as_ref(), &set, spec.pf_points, &cache_dir)?;
            fronts.insert(key.clone(), pf);
        }
        for &mode in &spec.modes {
            for &seed in &spec.seeds {
                let mut config = spec.config.clone();
                config.mode = mode;
                config.seed = seed;
                tasks.push(Task {
                    problem_cfg: cfg.clone(),
                    pf_key: key.clone(),
                    dir: out.join(format!("{name}_{set}_{mode}_s{seed}")),
                    config,
                });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<String>> = Mutex::new(Vec::new());
    let workers = spec.workers.clamp(1, tasks.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= tasks.len() {
                    break;
                }
                let task = &tasks[i];
                let reference = &fronts[&task.pf_key];
                if let Err(e) = run_one(&task.problem_cfg, &task.config, reference, &task.dir) {
                    let _ = std::fs::create_dir_all(&task.dir);
                    let _ = std::fs::write(task.dir.join("error.txt"), format!("{e}\n"));
                    failures
                        .lock()
                        .unwrap()
                        .push(format!("{}: {e}", task.dir.display()));
                }
            });
        }
    });

    let summary = summarize_experiment(out)?;
    std::fs::write(
        out.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// Aggregation from raw files.
// ---------------------------------------------------------------------------

/// One run as reconstructed from its directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub dir: String,
    pub problem: String,
    pub set: String,
    pub mode: String,
    pub seed: u64,
    pub generations: usize,
    pub ul_fe: u64,
    pub ll_fe: u64,
    pub final_igd: Option<f64>,
    pub final_hv: Option<f64>,
    pub error: Option<String>,
}

/// Per-(problem, set, mode) aggregate over successful runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRow {
    pub problem: String,
    pub set: String,
    pub mode: String,
    pub runs: usize,
    pub median_igd: Option<f64>,
    pub median_hv: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub runs: Vec<RunRow>,
    pub groups: Vec<GroupRow>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn run_dirs(out: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .map(|n| n != "pf_cache" && n != "plots")
                    .unwrap_or(false)
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Rebuilds the experiment summary purely from the files under `out`,
/// recomputing final-front metrics from the CSVs and the cached fronts.
pub fn summarize_experiment(out: &Path) -> Result<ExperimentSummary> {
    let cache_dir = out.join("pf_cache");
    let mut fronts: HashMap<String, Vec<[f64; 2]>> = HashMap::new();
    let mut runs: Vec<RunRow> = Vec::new();

    for dir in run_dirs(out)? {
        let dir_name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let meta_path = dir.join("run_meta.json");
        if meta_path.exists() {
            let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
            let key = format!("{}|{}", meta.problem, meta.set);
            if !fronts.contains_key(&key) {
                let set = set_from_label(&meta.set)?;
                let problem = make_problem(&ProblemConfig::new(&meta.problem, set))?;
                let pf =
                    load_or_generate_pf(problem.as_ref(), &meta.set, meta.pf_points, &cache_dir)?;
                fronts.insert(key.clone(), pf);
            }
            let pf = &fronts[&key];
            let objs = read_front_objs(&dir.join("final_front.csv"))?;
            let (final_igd, final_hv) = if objs.is_empty() {
                (None, None)
            } else {
                (
                    Some(igd(pf, &objs)?),
                    Some(hv2d(&objs, hv_reference_point(pf))),
                )
            };
            runs.push(RunRow {
                dir: dir_name,
                problem: meta.problem,
                set: meta.set,
                mode: meta.config.mode.to_string(),
                seed: meta.config.seed,
                generations: meta.generations,
                ul_fe: meta.ul_fe,
                ll_fe: meta.ll_fe,
                final_igd,
                final_hv,
                error: None,
            });
        } else if dir.join("error.txt").exists() {
            let message = std::fs::read_to_string(dir.join("error.txt"))?
                .trim()
                .to_string();
            // Recover identity from the directory name: problem_set_mode_sN.
            let parts: Vec<&str> = dir_name.rsplitn(4, '_').collect();
            let (problem, set, mode, seed) = if parts.len() == 4 {
                (
                    parts[3].to_string(),
                    parts[2].to_string(),
                    parts[1].to_string(),
                    parts[0].trim_start_matches('s').parse::<u64>().unwrap_or(0),
                )
            } else {
                (dir_name.clone(), String::new(), String::new(), 0)
            };
            runs.push(RunRow {
                dir: dir_name,
                problem,
                set,
                mode,
                seed,
                generations: 0,
                ul_fe: 0,
                ll_fe: 0,
                final_igd: None,
                final_hv: None,
                error: Some(message),
            });
        }
    }

    let mut grouped: BTreeMap<(String, String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in &runs {
        if let (Some(i), Some(h)) = (r.final_igd, r.final_hv) {
            let slot = grouped
                .entry((r.problem.clone(), r.set.clone(), r.mode.clone()))
                .or_default();
            slot.0.push(i);
            slot.1.push(h);
        }
    }
    let groups = grouped
        .into_iter()
        .map(|((problem, set, mode), (mut igds, mut hvs))| GroupRow {
            problem,
            set,
            mode,
            runs: igds.len(),
            median_igd: (!igds.is_empty()).then(|| median(&mut igds)),
            median_hv: (!hvs.is_empty()).then(|| median(&mut hvs)),
        })
        .collect();

    Ok(ExperimentSummary { runs, groups })
}

// ---------------------------------------------------------------------------
// Rank-sum testing and comparison reports.
// ---------------------------------------------------------------------------

/// Two-sided rank-sum comparison of two independent samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSumResult {
    /// Sum of the first sample's midranks.
    pub statistic: f64,
    pub p_value: f64,
    /// True when the exact null distribution was enumerated.
    pub exact: bool,
}

/// C(n, k) if it does not exceed `cap`.
fn binomial_at_most(n: usize, k: usize, cap: u64) -> Option<u64> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > cap as u128 {
            return None;
        }
    }
    Some(c as u64)
}

/// Abramowitz and Stegun formula 7.1.26, absolute error below 1.5e-7.
fn erfc(x: f64) -> f64 {
    let ax = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * ax);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    let tail = poly * (-ax * ax).exp();
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

fn normal_sf(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Compares two samples with the two-sided rank-sum test.
///
/// The statistic is the sum of the first sample's midranks. When the number
/// of arrangements C(n+m, min(n, m)) is at most 100000 the p-value comes
/// from exact enumeration of the null distribution (dynamic programming
/// over doubled midranks, so ties stay integral); larger samples fall back
/// to a tie-corrected, continuity-corrected normal approximation.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<RankSumResult> {
    if a.len() < 3 || b.len() < 3 {
        return Err(BlemoError::SampleTooSmall);
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(BlemoError::InvalidConfig(
            "rank-sum samples must be finite".into(),
        ));
    }
    let n = a.len();
    let m = b.len();
    let total = n + m;
    let mut pooled: Vec<(f64, bool)> = a
        .iter()
        .map(|&v| (v, true))
        .chain(b.iter().map(|&v| (v, false)))
        .collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));

    // Doubled midranks stay integral under ties: positions i..j (0-based)
    // share rank (i + 1 + j) / 2, so twice that is i + 1 + j.
    let mut rank2 = vec![0i64; total];
    let mut tie_sizes: Vec<usize> = Vec::new();
    let mut i = 0;
    while i < total {
        let mut j = i;
        while j < total && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        for r in rank2.iter_mut().take(j).skip(i) {
            *r = (i + 1 + j) as i64;
        }
        tie_sizes.push(j - i);
        i = j;
    }
    let statistic2: i64 = (0..total).filter(|&k| pooled[k].1).map(|k| rank2[k]).sum();
    let statistic = statistic2 as f64 / 2.0;

    if binomial_at_most(total, n.min(m), 100_000).is_some() {
        let max_sum: i64 = rank2.iter().sum();
        let mut ways = vec![vec![0u64; (max_sum + 1) as usize]; n + 1];
        ways[0][0] = 1;
        for &r in &rank2 {
            for j in (1..=n).rev() {
                for s in (r..=max_sum).rev() {
                    let prev = ways[j - 1][(s - r) as usize];
                    if prev > 0 {
                        ways[j][s as usize] += prev;
                    }
                }
            }
        }
        let mu2 = (n * (total + 1)) as i64;
        let dev = (statistic2 - mu2).abs();
        let mut extreme = 0u64;
        let mut arrangements = 0u64;
        for (s, &w) in ways[n].iter().enumerate() {
            if w == 0 {
                continue;
            }
            arrangements += w;
            if (s as i64 - mu2).abs() >= dev {
                extreme += w;
            }
        }
        return Ok(RankSumResult {
            statistic,
            p_value: extreme as f64 / arrangements as f64,
            exact: true,
        });
    }

    let nf = n as f64;
    let mf = m as f64;
    let nt = total as f64;
    let mu = nf * (nt + 1.0) / 2.0;
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let tf = t as f64;
            tf * tf * tf - tf
        })
        .sum();
    let var = nf * mf / 12.0 * ((nt + 1.0) - tie_term / (nt * (nt - 1.0)));
    if var <= 0.0 {
        return Ok(RankSumResult {
            statistic,
            p_value: 1.0,
            exact: false,
        });
    }
    let z = ((statistic - mu).abs() - 0.5).max(0.0) / var.sqrt();
    Ok(RankSumResult {
        statistic,
        p_value: (2.0 * normal_sf(z)).clamp(0.0, 1.0),
        exact: false,
    })
}

/// One mode-versus-mode entry of a comparison report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub problem: String,
    pub set: String,
    pub mode_a: String,
    pub mode_b: String,
    pub median_a: f64,
    pub median_b: f64,
    pub statistic: f64,
    pub p_value: f64,
    pub exact: bool,
    /// Winner at the report's significance level by median direction:
    /// "a", "b", or "tie".
    pub verdict: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub metric: String,
    pub alpha: f64,
    pub comparisons: Vec<PairwiseComparison>,
}

/// Builds pairwise mode comparisons of final-front distance for every
/// (problem, set) group found under `out`, writing comparison.json there.
///
/// Metrics are recomputed from the raw files. A pair is significant when
/// its rank-sum p-value is below `alpha`; the verdict then follows the
/// lower median (distance: lower is better).
pub fn compare_runs(out: &Path, alpha: f64) -> Result<ComparisonReport> {
    let summary = summarize_experiment(out)?;
    let mut groups: BTreeMap<(String, String), BTreeMap<String, Vec<(u64, f64)>>> =
        BTreeMap::new();
    for r in &summary.runs {
        if let Some(v) = r.final_igd {
            groups
                .entry((r.problem.clone(), r.set.clone()))
                .or_default()
                .entry(r.mode.clone())
                .or_default()
                .push((r.seed, v));
        }
    }

    let mut comparisons = Vec::new();
    for ((problem, set), by_mode) in &groups {
        let modes: Vec<&String> = by_mode.keys().collect();
        for i in 0..modes.len() {
            for j in i + 1..modes.len() {
                let sample = |mode: &String| -> Vec<f64> {
                    let mut rows = by_mode[mode].clone();
                    rows.sort_by_key(|(seed, _)| *seed);
                    rows.into_iter().map(|(_, v)| v).collect()
                };
                let a = sample(modes[i]);
                let b = sample(modes[j]);
                let test = rank_sum_test(&a, &b)?;
                let median_a = median(&mut a.clone());
                let median_b = median(&mut b.clone());
                let verdict = if test.p_value < alpha && median_a != median_b {
                    if median_a < median_b {
                        "a"
                    } else {
                        "b"
                    }
                } else {
                    "tie"
                };
                comparisons.push(PairwiseComparison {
                    problem: problem.clone(),
                    set: set.clone(),
                    mode_a: modes[i].clone(),
                    mode_b: modes[j].clone(),
                    median_a,
                    median_b,
                    statistic: test.statistic,
                    p_value: test.p_value,
                    exact: test.exact,
                    verdict: verdict.to_string(),
                });
            }
        }
    }

    let report = ComparisonReport {
        metric: "final_igd".to_string(),
        alpha,
        comparisons,
    };
    std::fs::write(
        out.join("comparison.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Budget-fair truncation.
// ---------------------------------------------------------------------------

/// Picks the progress row a budget-fair comparison should read: the first
/// row whose cumulative evaluations (both levels combined) exceed `budget`,
/// or the last row when the whole run fits within the budget.
pub fn truncate_at_fe(records: &[GenRecord], budget: u64) -> Result<&GenRecord> {
    if records.is_empty() {
        return Err(BlemoError::EmptyInput("truncate_at_fe"));
    }
    Ok(records
        .iter()
        .find(|r| r.ul_fe + r.ll_fe > budget)
        .unwrap_or_else(|| records.last().expect("records are non-empty")))
}

/// Total evaluations a run ended with, for use as a truncation budget.
pub fn total_fe(fe: &FeCounter) -> u64 {
    fe.ul + fe.ll
}

// ---------------------------------------------------------------------------
// Plot-script generation.
// ---------------------------------------------------------------------------

fn python_list(entries: &[(String, String, String)]) -> String {
    let mut text = String::from("[\n");
    for (group, label, rel) in entries {
        text.push_str(&format!("    (\"{group}\", \"{label}\", \"{rel}\"),\n"));
    }
    text.push(']');
    text
}

/// Validates an experiment's raw files and writes self-contained matplotlib
/// scripts under `<out>/plots`, returning their paths.
///
/// convergence_plot.py draws per-run distance curves on a log axis;
/// front_plot.py scatters final fronts against the cached true front.
pub fn emit_plots(out: &Path) -> Result<Vec<PathBuf>> {
    let mut runs: Vec<(String, String, String, usize)> = Vec::new();
    for dir in run_dirs(out)? {
        let meta_path = dir.join("run_meta.json");
        if !meta_path.exists() {
            continue;
        }
        let meta: RunMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?)?;
        let conv = dir.join("convergence.csv");
        let (header, _) = read_csv(&conv)?;
        require_columns(&conv, &header, &["generation", "ul_fe", "ll_fe", "igd", "hv"])?;
        let front = dir.join("final_front.csv");
        let (header, _) = read_csv(&front)?;
        require_columns(&front, &header, &["F1", "F2"])?;
        let dir_name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let group = format!("{}_{}", meta.problem, meta.set);
        let label = format!("{}_s{}", meta.config.mode, meta.config.seed);
        runs.push((group, label, dir_name, meta.pf_points));
    }
    if runs.is_empty() {
        return Err(BlemoError::EmptyInput("emit_plots"));
    }

    let plots_dir = out.join("plots");
    std::fs::create_dir_all(&plots_dir)?;

    let conv_entries: Vec<(String, String, String)> = runs
        .iter()
        .map(|(g, l, d, _)| (g.clone(), l.clone(), format!("../{d}/convergence.csv")))
        .collect();
    let front_entries: Vec<(String, String, String)> = runs
        .iter()
        .map(|(g, l, d, _)| (g.clone(), l.clone(), format!("../{d}/final_front.csv")))
        .collect();
    let mut pf_entries: Vec<(String, String, String)> = runs
        .iter()
        .map(|(g, _, _, n)| {
            (
                g.clone(),
                "truth".to_string(),
                format!("../pf_cache/{g}_n{n}.csv"),
            )
        })
        .collect();
    pf_entries.sort();
    pf_entries.dedup();

    let convergence_script = format!(
        r#"#!/usr/bin/env python3
"""Per-run convergence curves, one figure per problem, log-scale distance."""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))

RUNS = {runs}

groups = {{}}
for group, label, rel in RUNS:
    groups.setdefault(group, []).append((label, os.path.join(HERE, rel)))

for group, members in sorted(groups.items()):
    fig, ax = plt.subplots(figsize=(7.0, 4.5))
    for label, path in members:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        points = [
            (int(r["generation"]), float(r["igd"]))
            for r in rows
            if float(r["igd"]) == float(r["igd"]) and float(r["igd"]) > 0.0
        ]
        if not points:
            continue
        ax.plot([p[0] for p in points], [p[1] for p in points], label=label, linewidth=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("generation")
    ax.set_ylabel("distance to true front (log scale)")
    ax.set_title(group)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, "convergence_" + group + ".png"), dpi=150)
    plt.close(fig)
print("wrote", len(groups), "convergence figures")
"#,
        runs = python_list(&conv_entries)
    );

    let front_script = format!(
        r##"#!/usr/bin/env python3
"""Final fronts against the cached true front, one figure per problem."""
import csv
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))

RUNS = {runs}
TRUTH = {truth}


def read_front(path):
    with open(path) as fh:
        lines = [l for l in fh if l.strip() and not l.startswith("#")]
    reader = csv.DictReader(lines)
    return [(float(r["F1"]), float(r["F2"])) for r in reader]


truth_by_group = {{}}
for group, _, rel in TRUTH:
    truth_by_group[group] = read_front(os.path.join(HERE, rel))

groups = {{}}
for group, label, rel in RUNS:
    groups.setdefault(group, []).append((label, os.path.join(HERE, rel)))

for group, members in sorted(groups.items()):
    fig, ax = plt.subplots(figsize=(6.0, 5.0))
    truth = truth_by_group.get(group, [])
    if truth:
        ax.plot(
            [p[0] for p in truth],
            [p[1] for p in truth],
            ".",
            color="black",
            markersize=2,
            label="true front",
        )
    for label, path in members:
        front = read_front(path)
        if not front:
            continue
        ax.scatter(
            [p[0] for p in front],
            [p[1] for p in front],
            s=14,
            alpha=0.7,
            label=label,
        )
    ax.set_xlabel("F1")
    ax.set_ylabel("F2")
    ax.set_title(group)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(os.path.join(HERE, "front_" + group + ".png"), dpi=150)
    plt.close(fig)
print("wrote", len(groups), "front figures")
"##,
        runs = python_list(&front_entries),
        truth = python_list(&pf_entries)
    );

    let conv_path = plots_dir.join("convergence_plot.py");
    let front_path = plots_dir.join("front_plot.py");
    std::fs::write(&conv_path, convergence_script)?;
    std::fs::write(&front_path, front_script)?;
    Ok(vec![conv_path, front_path])
}
