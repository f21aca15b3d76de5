//! Follower Pareto-set predictor.
//!
//! A follower search result is a whole set of solutions per leader vector,
//! so the mapping "leader vector to follower optimum" is one-to-many. To
//! make it learnable by a plain regressor, each archived follower set is
//! sorted by its first objective and tagged with a helper scalar `r` spread
//! uniformly over [0, 1]; the pair (normalized leader vector, r) then maps
//! one-to-one onto a follower vector. A single-hidden-layer tanh network is
//! trained on that dataset and queried with a fresh leader vector plus a
//! linspace of `r` values to produce an approximate follower Pareto set.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::util::linspace;
use crate::{BlemoError, Result};

/// One archived follower search result used for training.
#[derive(Debug, Clone)]
pub struct TrainingEntry {
    pub xu: Vec<f64>,
    /// Feasible, mutually non-dominated (x_l, follower objectives) pairs.
    pub ps: Vec<(Vec<f64>, [f64; 2])>,
}

/// Regression rows mapping (normalized x_u, r) to normalized x_l components.
#[derive(Debug, Clone)]
pub struct PspDataset {
    /// Row inputs, each of width `d_u + 1` (normalized x_u plus r).
    pub inputs: Vec<Vec<f64>>,
    /// Row targets: the searched follower components, normalized to [0, 1].
    pub targets: Vec<Vec<f64>>,
    /// Index of the source entry each row came from.
    pub group_id: Vec<usize>,
    /// Follower components the targets correspond to.
    pub target_indices: Vec<usize>,
    pub ul_bounds: Vec<(f64, f64)>,
    pub ll_bounds: Vec<(f64, f64)>,
}

impl PspDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn normalize(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.0
    }
}

fn denormalize(v: f64, (lo, hi): (f64, f64)) -> f64 {
    lo + v * (hi - lo)
}

/// Builds the training dataset from archived follower sets.
///
/// Each entry's set is sorted by ascending first follower objective and
/// tagged with r = linspace(0, 1, m) (a single-member set gets r = 0). Rows
/// are stacked in entry order; when two rows share an identical input the
/// newer one wins; finally only the newest `ds_limit` rows are kept.
pub fn build_dataset(
    entries: &[TrainingEntry],
    searched: &[usize],
    ul_bounds: &[(f64, f64)],
    ll_bounds: &[(f64, f64)],
    ds_limit: usize,
) -> Result<PspDataset> {
    let mut inputs: Vec<Vec<f64>> = Vec::new();
    let mut targets: Vec<Vec<f64>> = Vec::new();
    let mut group_id: Vec<usize> = Vec::new();
    for (gid, entry) in entries.iter().enumerate() {
        if entry.ps.is_empty() {
            continue;
        }
        let mut order: Vec<usize> = (0..entry.ps.len()).collect();
        order.sort_by(|&a, &b| entry.ps[a].1[0].total_cmp(&entry.ps[b].1[0]));
        let rs = linspace(0.0, 1.0, order.len());
        let xu_norm: Vec<f64> = entry
            .xu
            .iter()
            .zip(ul_bounds)
            .map(|(v, b)| normalize(*v, *b))
            .collect();
        for (&row, &r) in order.iter().zip(&rs) {
            let mut input = xu_norm.clone();
            input.push(r);
            let xl = &entry.ps[row].0;
            let target: Vec<f64> = searched
                .iter()
                .map(|&i| normalize(xl[i], ll_bounds[i]))
                .collect();
            inputs.push(input);
            targets.push(target);
            group_id.push(gid);
        }
    }
    if inputs.is_empty() {
        return Err(BlemoError::EmptyArchive);
    }

    // Newest-wins de-duplication on exact input bits, then recency cut.
    let mut seen = std::collections::HashSet::new();
    let mut keep_rev: Vec<usize> = Vec::new();
    for row in (0..inputs.len()).rev() {
        let key: Vec<u64> = inputs[row].iter().map(|v| v.to_bits()).collect();
        if seen.insert(key) {
            keep_rev.push(row);
        }
    }
    keep_rev.reverse();
    let keep: Vec<usize> = if keep_rev.len() > ds_limit {
        keep_rev[keep_rev.len() - ds_limit..].to_vec()
    } else {
        keep_rev
    };

    Ok(PspDataset {
        inputs: keep.iter().map(|&i| inputs[i].clone()).collect(),
        targets: keep.iter().map(|&i| targets[i].clone()).collect(),
        group_id: keep.iter().map(|&i| group_id[i]).collect(),
        target_indices: searched.to_vec(),
        ul_bounds: ul_bounds.to_vec(),
        ll_bounds: ll_bounds.to_vec(),
    })
}

/// One-hidden-layer tanh network with linear outputs, plus the
/// normalization metadata needed to map raw vectors in and out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PspModel {
    pub d_in: usize,
    pub hidden: usize,
    pub d_out: usize,
    /// Hidden weights, row-major `hidden x d_in`.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// Output weights, row-major `d_out x hidden`.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub ul_bounds: Vec<(f64, f64)>,
    pub ll_bounds: Vec<(f64, f64)>,
    pub target_indices: Vec<usize>,
}

impl PspModel {
    /// Raw forward pass on an already-normalized input row.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.d_in);
        let mut h = vec![0.0; self.hidden];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut z = self.b1[j];
            for (i, x) in input.iter().enumerate() {
                z += self.w1[j * self.d_in + i] * x;
            }
            *hj = z.tanh();
        }
        let mut y = vec![0.0; self.d_out];
        for (k, yk) in y.iter_mut().enumerate() {
            let mut z = self.b2[k];
            for (j, hj) in h.iter().enumerate() {
                z += self.w2[k * self.hidden + j] * hj;
            }
            *yk = z;
        }
        y
    }

    /// Predicts `n_l` follower solutions for `xu`, ordered by ascending r.
    ///
    /// Outputs are clamped to the unit box before de-normalization, so every
    /// prediction lies inside the follower bounds. Each returned vector
    /// holds only the components in `target_indices`.
    pub fn predict_ps(&self, xu: &[f64], n_l: usize) -> Result<Vec<Vec<f64>>> {
        if n_l == 0 {
            return Err(BlemoError::InvalidConfig(
                "prediction count must be at least 1".into(),
            ));
        }
        for (i, (v, b)) in xu.iter().zip(&self.ul_bounds).enumerate() {
            if *v < b.0 - 1e-12 || *v > b.1 + 1e-12 {
                return Err(BlemoError::InputOutOfBounds { index: i, value: *v });
            }
        }
        let xu_norm: Vec<f64> = xu
            .iter()
            .zip(&self.ul_bounds)
            .map(|(v, b)| normalize(*v, *b))
            .collect();
        let mut out = Vec::with_capacity(n_l);
        for r in linspace(0.0, 1.0, n_l) {
            let mut input = xu_norm.clone();
            input.push(r);
            let raw = self.forward(&input);
            let xl: Vec<f64> = raw
                .iter()
                .zip(&self.target_indices)
                .map(|(v, &idx)| denormalize(v.clamp(0.0, 1.0), self.ll_bounds[idx]))
                .collect();
            out.push(xl);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Training hyperparameters; the defaults match the experiment setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainParams {
    pub max_epochs: usize,
    /// Epochs without a new best validation error before stopping.
    pub patience: usize,
    /// Initial damping of the Gauss-Newton step; adapts while training.
    pub damping: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            max_epochs: 1000,
            patience: 6,
            damping: 1e-3,
        }
    }
}

/// Summary of one training call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub test_mse: f64,
    pub stopped_early: bool,
}

struct Net {
    d_in: usize,
    hidden: usize,
    d_out: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
}

impl Net {
    fn forward(&self, x: &[f64], h: &mut [f64], y: &mut [f64]) {
        for j in 0..self.hidden {
            let mut z = self.b1[j];
            for (i, xi) in x.iter().enumerate() {
                z += self.w1[j * self.d_in + i] * xi;
            }
            h[j] = z.tanh();
        }
        for k in 0..self.d_out {
            let mut z = self.b2[k];
            for (j, hj) in h.iter().enumerate() {
                z += self.w2[k * self.hidden + j] * hj;
            }
            y[k] = z;
        }
    }

    fn mse(&self, ds: &PspDataset, rows: &[usize]) -> f64 {
        self.sse(ds, rows) / (rows.len() * self.d_out) as f64
    }

    fn sse(&self, ds: &PspDataset, rows: &[usize]) -> f64 {
        let mut h = vec![0.0; self.hidden];
        let mut y = vec![0.0; self.d_out];
        let mut acc = 0.0;
        for &row in rows {
            self.forward(&ds.inputs[row], &mut h, &mut y);
            for (yk, tk) in y.iter().zip(&ds.targets[row]) {
                acc += (yk - tk) * (yk - tk);
            }
        }
        acc
    }

    fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    fn params_vec(&self) -> DVector<f64> {
        let mut theta = Vec::with_capacity(self.param_count());
        theta.extend_from_slice(&self.w1);
        theta.extend_from_slice(&self.b1);
        theta.extend_from_slice(&self.w2);
        theta.extend_from_slice(&self.b2);
        DVector::from_vec(theta)
    }

    fn set_params(&mut self, theta: &DVector<f64>) {
        let mut at = 0;
        for slot in [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2] {
            let len = slot.len();
            slot.copy_from_slice(&theta.as_slice()[at..at + len]);
            at += len;
        }
    }
}

/// J'J (upper triangle mirrored) and J'e of the residuals over `rows`.
///
/// A residual's gradient is a_k[j] x[i] over the first-layer weights (with
/// a_k[j] = w2[k][j] (1 - h[j]^2)), a_k[j] over the first-layer biases, and
/// h[j] plus a constant over its own output's second-layer row only. Since
/// w2 is fixed during the call, every output index k factors out of the row
/// sums: the row loop accumulates rank-1 products of q = (1 - h^2) per-unit
/// scaled inputs, the derivative vector, and the activations, and the k
/// expansion happens once at the end. Second-layer blocks across two
/// different outputs are zero.
fn normal_equations(
    net: &Net,
    ds: &PspDataset,
    rows: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let p = net.param_count();
    let (d_in, hidden, d_out) = (net.d_in, net.hidden, net.d_out);
    let hd = hidden * d_in;
    let off_b1 = hd;
    let off_w2 = off_b1 + hidden;
    let off_b2 = off_w2 + d_out * hidden;

    let mut g = vec![0.0; p];
    let mut h = vec![0.0; hidden];
    let mut y = vec![0.0; d_out];
    let mut d = vec![0.0; hidden];
    let mut q = vec![0.0; hd];
    // Row sums, independent of the output index: qq/dd/hh keep the upper
    // triangle of their outer-product sums, the rest are full.
    let mut qq = vec![0.0; hd * hd];
    let mut qd = vec![0.0; hd * hidden];
    let mut qh = vec![0.0; hd * hidden];
    let mut qsum = vec![0.0; hd];
    let mut dd = vec![0.0; hidden * hidden];
    let mut dh = vec![0.0; hidden * hidden];
    let mut dsum = vec![0.0; hidden];
    let mut hh = vec![0.0; hidden * hidden];
    let mut hsum = vec![0.0; hidden];

    for &row in rows {
        let x = &ds.inputs[row];
        let t = &ds.targets[row];
        net.forward(x, &mut h, &mut y);
        for (dj, hj) in d.iter_mut().zip(&h) {
            *dj = 1.0 - hj * hj;
        }
        for j in 0..hidden {
            let seg = &mut q[j * d_in..(j + 1) * d_in];
            for (s, xi) in seg.iter_mut().zip(x) {
                *s = d[j] * xi;
            }
        }
        for a in 0..hd {
            let qa = q[a];
            qsum[a] += qa;
            let seg = &mut qq[a * hd + a..(a + 1) * hd];
            for (s, qb) in seg.iter_mut().zip(&q[a..]) {
                *s += qa * qb;
            }
            let seg = &mut qd[a * hidden..(a + 1) * hidden];
            for (s, dj) in seg.iter_mut().zip(&d) {
                *s += qa * dj;
            }
            let seg = &mut qh[a * hidden..(a + 1) * hidden];
            for (s, hj) in seg.iter_mut().zip(&h) {
                *s += qa * hj;
            }
        }
        for j in 0..hidden {
            let (dj, hj) = (d[j], h[j]);
            dsum[j] += dj;
            hsum[j] += hj;
            let seg = &mut dd[j * hidden + j..(j + 1) * hidden];
            for (s, dj2) in seg.iter_mut().zip(&d[j..]) {
                *s += dj * dj2;
            }
            let seg = &mut dh[j * hidden..(j + 1) * hidden];
            for (s, hj2) in seg.iter_mut().zip(&h) {
                *s += dj * hj2;
            }
            let seg = &mut hh[j * hidden + j..(j + 1) * hidden];
            for (s, hj2) in seg.iter_mut().zip(&h[j..]) {
                *s += hj * hj2;
            }
        }
        for k in 0..d_out {
            let e = y[k] - t[k];
            g[off_b2 + k] += e;
            let seg = &mut g[off_w2 + k * hidden..off_w2 + (k + 1) * hidden];
            for (s, hj) in seg.iter_mut().zip(&h) {
                *s += e * hj;
            }
        }
        for j in 0..hidden {
            let mut acc = 0.0;
            for k in 0..d_out {
                acc += (y[k] - t[k]) * net.w2[k * hidden + j];
            }
            let vj = acc * d[j];
            g[off_b1 + j] += vj;
            let seg = &mut g[j * d_in..(j + 1) * d_in];
            for (s, xi) in seg.iter_mut().zip(x) {
                *s += vj * xi;
            }
        }
    }

    // Expand the per-output blocks. First-layer blocks share
    // s[j][j2] = sum_k w2[k][j] w2[k][j2] across all outputs.
    let mut s_mat = vec![0.0; hidden * hidden];
    for j in 0..hidden {
        for j2 in j..hidden {
            let mut acc = 0.0;
            for k in 0..d_out {
                acc += net.w2[k * hidden + j] * net.w2[k * hidden + j2];
            }
            s_mat[j * hidden + j2] = acc;
            s_mat[j2 * hidden + j] = acc;
        }
    }
    let mut upper = vec![0.0; p * p];
    for j in 0..hidden {
        let srow = &s_mat[j * hidden..(j + 1) * hidden];
        for j2 in j..hidden {
            let sv = srow[j2];
            for i in 0..d_in {
                let a = j * d_in + i;
                let b = j2 * d_in + if j2 == j { i } else { 0 };
                let seg = &mut upper[a * p + b..a * p + (j2 + 1) * d_in];
                for (s, qv) in seg.iter_mut().zip(&qq[a * hd + b..]) {
                    *s += sv * qv;
                }
            }
        }
        for i in 0..d_in {
            let a = j * d_in + i;
            let seg = &mut upper[a * p + off_b1..a * p + off_b1 + hidden];
            for ((s, sv), qv) in seg.iter_mut().zip(srow).zip(&qd[a * hidden..]) {
                *s += sv * qv;
            }
        }
        let base = (off_b1 + j) * p + off_b1;
        let seg = &mut upper[base + j..base + hidden];
        for ((s, sv), dv) in seg.iter_mut().zip(&srow[j..]).zip(&dd[j * hidden + j..]) {
            *s += sv * dv;
        }
    }
    for k in 0..d_out {
        let col = off_w2 + k * hidden;
        for j in 0..hidden {
            let wkj = net.w2[k * hidden + j];
            for i in 0..d_in {
                let a = j * d_in + i;
                let seg = &mut upper[a * p + col..a * p + col + hidden];
                for (s, qv) in seg.iter_mut().zip(&qh[a * hidden..]) {
                    *s += wkj * qv;
                }
                upper[a * p + off_b2 + k] += wkj * qsum[a];
            }
            let base = (off_b1 + j) * p;
            let seg = &mut upper[base + col..base + col + hidden];
            for (s, dv) in seg.iter_mut().zip(&dh[j * hidden..]) {
                *s += wkj * dv;
            }
            upper[base + off_b2 + k] += wkj * dsum[j];

            let base = (col + j) * p;
            let seg = &mut upper[base + col + j..base + col + hidden];
            for (s, hv) in seg.iter_mut().zip(&hh[j * hidden + j..]) {
                *s += hv;
            }
            upper[base + off_b2 + k] += hsum[j];
        }
        upper[(off_b2 + k) * p + off_b2 + k] += rows.len() as f64;
    }

    let h_mat = DMatrix::from_fn(p, p, |r, c| {
        let (a, b) = if r <= c { (r, c) } else { (c, r) };
        upper[a * p + b]
    });
    (h_mat, DVector::from_vec(g))
}

/// Trains the predictor on a dataset of at least 20 rows.
///
/// Rows are split 70/15/15 into train/validation/test at random; damped
/// Gauss-Newton steps minimize the mean squared error, with the damping
/// raised until a step descends and relaxed after each success. Training
/// stops when the validation error has not improved on its best for
/// `patience` consecutive epochs, when no damped step descends any more,
/// when the training error stalls for `patience` consecutive epochs, or at
/// the epoch cap; improvements of at most one part in a million are
/// counted as stalls, and the best-validation weights are returned.
pub fn train<R: Rng>(
    ds: &PspDataset,
    params: &TrainParams,
    rng: &mut R,
) -> Result<(PspModel, TrainReport)> {
    let n = ds.len();
    if n < 20 {
        return Err(BlemoError::DatasetTooSmall(n, 20));
    }
    if params.max_epochs == 0 || params.patience == 0 || params.damping <= 0.0 {
        return Err(BlemoError::InvalidConfig(
            "training needs max_epochs >= 1, patience >= 1, damping > 0".into(),
        ));
    }
    let d_in = ds.inputs[0].len();
    let d_out = ds.targets[0].len();
    let hidden = 2 * d_in.max(d_out);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_val = ((n as f64) * 0.15).round().max(1.0) as usize;
    let n_train = n - 2 * n_val;
    let train_rows = order[..n_train].to_vec();
    let val_rows = order[n_train..n_train + n_val].to_vec();
    let test_rows = order[n_train + n_val..].to_vec();

    let mut net = Net {
        d_in,
        hidden,
        d_out,
        w1: xavier(hidden * d_in, d_in, hidden, rng),
        b1: vec![0.0; hidden],
        w2: xavier(d_out * hidden, hidden, d_out, rng),
        b2: vec![0.0; d_out],
    };
    let p = net.param_count();
    let mut scratch = Net {
        d_in,
        hidden,
        d_out,
        w1: net.w1.clone(),
        b1: net.b1.clone(),
        w2: net.w2.clone(),
        b2: net.b2.clone(),
    };

    const MU_MAX: f64 = 1e10;
    const MU_MIN: f64 = 1e-20;
    // Relative error improvements at or below this floor count as no
    // improvement, for both the validation patience and the training stall.
    const REL_FLOOR: f64 = 1e-6;
    let mut mu = params.damping;
    let mut sse = net.sse(ds, &train_rows);
    let mut best = (net.mse(ds, &val_rows), net.params_vec());
    let mut stale = 0usize;
    let mut flat = 0usize;
    let mut epochs_run = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=params.max_epochs {
        epochs_run = epoch;
        let (h_mat, g) = normal_equations(&net, ds, &train_rows);
        let theta = net.params_vec();
        let prev_sse = sse;
        let mut accepted = false;
        while mu <= MU_MAX {
            let mut damped = h_mat.clone();
            for i in 0..p {
                damped[(i, i)] += mu;
            }
            if let Some(chol) = damped.cholesky() {
                let candidate = &theta - chol.solve(&g);
                scratch.set_params(&candidate);
                let cand_sse = scratch.sse(ds, &train_rows);
                if cand_sse.is_finite() && cand_sse < sse {
                    net.set_params(&candidate);
                    sse = cand_sse;
                    mu = (mu * 0.1).max(MU_MIN);
                    accepted = true;
                    break;
                }
            }
            mu *= 10.0;
        }
        if !accepted {
            // No damped step descends: the fit has converged.
            stopped_early = true;
            break;
        }
        if !sse.is_finite() {
            return Err(BlemoError::NonFiniteLoss(epoch));
        }
        let val = net.mse(ds, &val_rows);
        if !val.is_finite() {
            return Err(BlemoError::NonFiniteLoss(epoch));
        }
        let improved = val < best.0 * (1.0 - REL_FLOOR);
        if val < best.0 {
            best = (val, net.params_vec());
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.patience {
                stopped_early = true;
                break;
            }
        }
        if sse >= prev_sse * (1.0 - REL_FLOOR) {
            flat += 1;
            if flat >= params.patience {
                stopped_early = true;
                break;
            }
        } else {
            flat = 0;
        }
    }

    net.set_params(&best.1);
    let report = TrainReport {
        epochs_run,
        train_mse: net.mse(ds, &train_rows),
        val_mse: best.0,
        test_mse: net.mse(ds, &test_rows),
        stopped_early,
    };
    let model = PspModel {
        d_in,
        hidden,
        d_out,
        w1: net.w1,
        b1: net.b1,
        w2: net.w2,
        b2: net.b2,
        ul_bounds: ds.ul_bounds.clone(),
        ll_bounds: ds.ll_bounds.clone(),
        target_indices: ds.target_indices.clone(),
    };
    Ok((model, report))
}

fn xavier<R: Rng>(len: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Vec<f64> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-a..a)).collect()
}
