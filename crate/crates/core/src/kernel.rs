//! RBF kernel, squared MMD and the prototype objective
//! `J(X) = MMD²(∅, X_T) − MMD²(X, X_T)`.
//!
//! [`KernelCache`] keeps, for every pool point `i`,
//!
//! * `μ_i = (1/n) Σ_j k(f_i, f_j)`, the mean kernel value against the pool,
//! * `s_i = Σ_{j ∈ X} k(f_i, f_j)`, the kernel sum against the selected set,
//!
//! together with `S1 = Σ_{i ∈ X} μ_i` and `S2 = Σ_{i,j ∈ X} k(f_i, f_j)`.
//! With those, `J(X) = 2·S1/m − S2/m²` and the gain of adding a candidate is
//! O(1). Building μ costs O(n²·d) once; each commit costs one kernel row,
//! O(n·d). Memory stays O(n) beyond the points themselves.

use ndarray::{s, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `exp(−γ‖z − z′‖²)`.
pub fn rbf_kernel(z: &[f64], z2: &[f64], gamma: f64) -> Result<f64> {
    if z.len() != z2.len() {
        return Err(Error::DimensionMismatch {
            expected: z.len(),
            got: z2.len(),
        });
    }
    check_gamma(gamma)?;
    Ok((-gamma * squared_distance(z, z2)).exp())
}

/// The bandwidth used when none is configured: the inverse feature dimension.
pub fn default_gamma(dim: usize) -> f64 {
    1.0 / dim.max(1) as f64
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidGamma(gamma))
    }
}

/// Squared Euclidean distance with a fixed 4-lane accumulation order so the
/// loop vectorises without changing results between call sites.
#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks_a = a.chunks_exact(4);
    let chunks_b = b.chunks_exact(4);
    let tail: f64 = chunks_a
        .remainder()
        .iter()
        .zip(chunks_b.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    for (ca, cb) in chunks_a.zip(chunks_b) {
        for l in 0..4 {
            let d = ca[l] - cb[l];
            acc[l] += d * d;
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn row<'a>(points: &ArrayView2<'a, f64>, i: usize) -> &'a [f64] {
    let view: ArrayView2<'a, f64> = *points;
    view.index_axis_move(Axis(0), i)
        .to_slice()
        .expect("kernel pools are kept in standard layout")
}

/// Squared MMD between the rows `subset` of `pool` and the whole pool,
/// evaluated term by term with O(n²) kernel calls.
pub fn mmd_squared(subset: &[usize], pool: ArrayView2<'_, f64>, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    if subset.is_empty() {
        return Err(Error::EmptySelection);
    }
    let n = pool.nrows();
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let pool = pool.as_standard_layout();
    let pool = pool.view();
    let k = |i: usize, j: usize| (-gamma * squared_distance(row(&pool, i), row(&pool, j))).exp();

    let m = subset.len() as f64;
    let nf = n as f64;
    let within: f64 = subset
        .iter()
        .map(|&i| subset.iter().map(|&j| k(i, j)).sum::<f64>())
        .sum();
    let cross: f64 = subset
        .iter()
        .map(|&i| (0..n).map(|j| k(i, j)).sum::<f64>())
        .sum();
    let pool_term: f64 = (0..n).map(|i| (0..n).map(|j| k(i, j)).sum::<f64>()).sum();
    Ok(within / (m * m) - 2.0 * cross / (nf * m) + pool_term / (nf * nf))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CacheOptions {
    /// Rows per block when building μ; bounds the scratch kernel tile to
    /// `chunk_rows²` values.
    pub chunk_rows: usize,
}

impl Default for CacheOptions {
    fn default() -> Self {
        Self { chunk_rows: 1024 }
    }
}

/// One step of a greedy run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreedyStep {
    pub index: usize,
    pub gain: f64,
    /// J of the selected set after this step.
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct KernelCache {
    points: Array2<f64>,
    gamma: f64,
    mean_to_pool: Vec<f64>,
    sum_to_selected: Vec<f64>,
    is_selected: Vec<bool>,
    selected: Vec<usize>,
    s1: f64,
    s2: f64,
    tie_keys: Option<Vec<u64>>,
}

impl KernelCache {
    /// Builds μ for every row of `points` in blocks of `opts.chunk_rows`.
    pub fn build(points: Array2<f64>, gamma: f64, opts: CacheOptions) -> Result<Self> {
        check_gamma(gamma)?;
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::InvalidDataset("empty kernel pool".into()));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite feature in kernel pool".into()));
        }
        let points = points.as_standard_layout().into_owned();
        let mean_to_pool = mean_kernel_rows(points.view(), gamma, opts.chunk_rows.max(1));
        let n = points.nrows();
        Ok(Self {
            points,
            gamma,
            mean_to_pool,
            sum_to_selected: vec![0.0; n],
            is_selected: vec![false; n],
            selected: Vec::new(),
            s1: 0.0,
            s2: 0.0,
            tie_keys: None,
        })
    }

    /// Breaks argmax ties by the smallest key instead of the smallest row
    /// index, e.g. by original sample ids.
    pub fn with_tie_keys(mut self, keys: Vec<u64>) -> Result<Self> {
        if keys.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: keys.len(),
            });
        }
        self.tie_keys = Some(keys);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn mean_to_pool(&self) -> &[f64] {
        &self.mean_to_pool
    }

    pub fn sum_to_selected(&self) -> &[f64] {
        &self.sum_to_selected
    }

    /// Selected rows in commit order.
    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn selected_count(&self) -> usize {
        self.selected.len()
    }

    pub fn is_selected(&self, i: usize) -> bool {
        self.is_selected.get(i).copied().unwrap_or(false)
    }

    pub fn s1(&self) -> f64 {
        self.s1
    }

    pub fn s2(&self) -> f64 {
        self.s2
    }

    pub fn kernel(&self, i: usize, j: usize) -> f64 {
        let p = self.points.view();
        (-self.gamma * squared_distance(row(&p, i), row(&p, j))).exp()
    }

    /// J of the currently selected set.
    pub fn objective(&self) -> f64 {
        objective_from_sums(self.s1, self.s2, self.selected.len())
    }

    fn check_candidate(&self, candidate: usize) -> Result<()> {
        if candidate >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: candidate,
                len: self.len(),
            });
        }
        if self.is_selected[candidate] {
            return Err(Error::AlreadySelected(candidate));
        }
        Ok(())
    }

    #[inline]
    fn gain_unchecked(&self, c: usize, current: f64) -> f64 {
        let m = self.selected.len() as f64 + 1.0;
        let s1 = self.s1 + self.mean_to_pool[c];
        let s2 = self.s2 + 2.0 * self.sum_to_selected[c] + 1.0;
        2.0 * s1 / m - s2 / (m * m) - current
    }

    pub fn marginal_gain(&self, candidate: usize) -> Result<f64> {
        self.check_candidate(candidate)?;
        Ok(self.gain_unchecked(candidate, self.objective()))
    }

    /// Adds `candidate` to the selected set, updating `s` with one kernel row.
    /// Returns the realised gain.
    pub fn commit(&mut self, candidate: usize) -> Result<f64> {
        self.check_candidate(candidate)?;
        let gain = self.gain_unchecked(candidate, self.objective());
        let s_c = self.sum_to_selected[candidate];
        let gamma = self.gamma;
        let points = self.points.view();
        let anchor = row(&points, candidate);
        self.sum_to_selected
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, s)| *s += (-gamma * squared_distance(row(&points, i), anchor)).exp());
        self.s1 += self.mean_to_pool[candidate];
        self.s2 += 2.0 * s_c + 1.0;
        self.is_selected[candidate] = true;
        self.selected.push(candidate);
        Ok(gain)
    }

    /// Unselected row with the largest marginal gain; ties go to the
    /// smallest tie key (row index unless keys were supplied).
    pub fn best_candidate(&self) -> Option<(usize, f64)> {
        self.best_candidate_where(|_| true)
    }

    /// As [`best_candidate`](Self::best_candidate), restricted to rows for
    /// which `eligible` holds.
    pub fn best_candidate_where<F>(&self, eligible: F) -> Option<(usize, f64)>
    where
        F: Fn(usize) -> bool + Sync,
    {
        let current = self.objective();
        let key = |i: usize| self.tie_keys.as_ref().map_or(i as u64, |k| k[i]);
        (0..self.len())
            .into_par_iter()
            .filter(|&i| !self.is_selected[i] && eligible(i))
            .map(|i| (i, self.gain_unchecked(i, current)))
            .filter(|(_, g)| !g.is_nan())
            .reduce_with(|a, b| {
                if a.1 > b.1 || (a.1 == b.1 && key(a.0) < key(b.0)) {
                    a
                } else {
                    b
                }
            })
    }

    /// Runs up to `count` greedy steps from the current selection.
    pub fn greedy(&mut self, count: usize) -> Vec<GreedyStep> {
        let mut steps = Vec::with_capacity(count);
        for _ in 0..count {
            let Some((index, _)) = self.best_candidate() else {
                break;
            };
            let gain = self
                .commit(index)
                .expect("best candidate is always unselected");
            steps.push(GreedyStep {
                index,
                gain,
                objective: self.objective(),
            });
        }
        steps
    }

    /// Recomputes `s`, `S1` and `S2` for the current selection from scratch.
    pub fn recompute_selection_sums(&self) -> (Vec<f64>, f64, f64) {
        let s: Vec<f64> = (0..self.len())
            .map(|i| self.selected.iter().map(|&j| self.kernel(i, j)).sum())
            .collect();
        let s1 = self.selected.iter().map(|&i| self.mean_to_pool[i]).sum();
        let s2 = self.selected.iter().map(|&i| s[i]).sum();
        (s, s1, s2)
    }
}

fn objective_from_sums(s1: f64, s2: f64, m: usize) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    2.0 * s1 / m - s2 / (m * m)
}

/// μ for every row.
///
/// Only tiles on or above the block diagonal are evaluated; each tile yields
/// row sums for its row block and column sums for its column block. The
/// per-block partial sums are reduced in ascending block order, so results
/// do not depend on how tiles are scheduled across threads.
fn mean_kernel_rows(points: ArrayView2<'_, f64>, gamma: f64, chunk: usize) -> Vec<f64> {
    let n = points.nrows();
    let blocks = n.div_ceil(chunk);
    let bounds = |b: usize| (b * chunk, ((b + 1) * chunk).min(n));
    let norms: Vec<f64> = points
        .outer_iter()
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();

    let pairs: Vec<(usize, usize)> = (0..blocks)
        .flat_map(|bi| (bi..blocks).map(move |bj| (bi, bj)))
        .collect();
    let tiles: Vec<(Vec<f64>, Vec<f64>)> = pairs
        .par_iter()
        .map(|&(bi, bj)| {
            let (r0, r1) = bounds(bi);
            let (c0, c1) = bounds(bj);
            let gram = points
                .slice(s![r0..r1, ..])
                .dot(&points.slice(s![c0..c1, ..]).t());
            let mut row_sums = vec![0.0; r1 - r0];
            let mut col_sums = vec![0.0; if bi == bj { 0 } else { c1 - c0 }];
            for (r, g) in gram.axis_iter(Axis(0)).enumerate() {
                let ni = norms[r0 + r];
                let g = g.to_slice().expect("fresh gram rows are contiguous");
                let mut acc = 0.0;
                for (c, &gij) in g.iter().enumerate() {
                    let d2 = (ni + norms[c0 + c] - 2.0 * gij).max(0.0);
                    let k = (-gamma * d2).exp();
                    acc += k;
                    if let Some(cs) = col_sums.get_mut(c) {
                        *cs += k;
                    }
                }
                row_sums[r] = acc;
            }
            (row_sums, col_sums)
        })
        .collect();

    // partial[b * n + i] = Σ_{j in block b} k(i, j)
    let mut partial = vec![0.0; blocks * n];
    for (&(bi, bj), (row_sums, col_sums)) in pairs.iter().zip(&tiles) {
        let (r0, r1) = bounds(bi);
        let (c0, c1) = bounds(bj);
        partial[bj * n + r0..bj * n + r1].copy_from_slice(row_sums);
        if bi != bj {
            partial[bi * n + c0..bi * n + c1].copy_from_slice(col_sums);
        }
    }
    let nf = n as f64;
    (0..n)
        .map(|i| (0..blocks).map(|b| partial[b * n + i]).sum::<f64>() / nf)
        .collect()
}

/// J(X) for an arbitrary subset, using the cached μ and direct kernel
/// evaluations for the within-set term. `J(∅) = 0`.
pub fn objective_j(subset: &[usize], cache: &KernelCache) -> Result<f64> {
    let n = cache.len();
    if let Some(&bad) = subset.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: bad, len: n });
    }
    let s1: f64 = subset.iter().map(|&i| cache.mean_to_pool[i]).sum();
    let s2: f64 = subset
        .iter()
        .map(|&i| subset.iter().map(|&j| cache.kernel(i, j)).sum::<f64>())
        .sum();
    Ok(objective_from_sums(s1, s2, subset.len()))
}

/// `J(X ∪ {c}) − J(X)` for the cache's current selection X.
pub fn marginal_gain(candidate: usize, cache: &KernelCache) -> Result<f64> {
    cache.marginal_gain(candidate)
}

pub fn commit_selection(candidate: usize, cache: &mut KernelCache) -> Result<()> {
    cache.commit(candidate).map(|_| ())
}
