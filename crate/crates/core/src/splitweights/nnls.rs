//! Lawson-Hanson active-set NNLS for circular split weights.
//!
//! The pair-by-split incidence matrix `A` is never formed. Splits are cuts
//! `(i, j)` of the ordering, separating positions `i+1..=j` from the rest,
//! so `A w`, `A^T r` and entries of `A^T A` all reduce to rectangle sums
//! over prefix tables or to arc-intersection arithmetic.

use super::{cut_index, position_distances, FitOptions, Result, SplitError, WeightedSplitSystem};
use crate::corrdist::DistanceMatrix;

/// Matrix-free view of the incidence matrix of all circular splits of `n` taxa.
#[derive(Debug, Clone)]
pub struct StructuredIncidence {
    n: usize,
    cuts: Vec<(usize, usize)>,
}

impl StructuredIncidence {
    pub fn new(n: usize) -> Self {
        let mut cuts = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                cuts.push((i, j));
            }
        }
        Self { n, cuts }
    }

    pub fn n_taxa(&self) -> usize {
        self.n
    }

    pub fn n_splits(&self) -> usize {
        self.cuts.len()
    }

    /// `A w` as a symmetric `n x n` row-major matrix over ordering positions.
    pub fn apply(&self, w: &[f64]) -> Vec<f64> {
        let n = self.n;
        debug_assert_eq!(w.len(), self.cuts.len());
        let stride = n + 1;
        // prefix[r * stride + c] = sum of w(i, j) over i < r, j < c
        let mut prefix = vec![0.0; stride * stride];
        for r in 0..n {
            let mut row = 0.0;
            for c in 0..n {
                if r < c {
                    row += w[cut_index(r, c, n)];
                }
                prefix[(r + 1) * stride + c + 1] = prefix[r * stride + c + 1] + row;
            }
        }
        let rect = |i0: usize, i1: usize, j0: usize, j1: usize| -> f64 {
            if i0 > i1 || j0 > j1 {
                return 0.0;
            }
            prefix[(i1 + 1) * stride + j1 + 1] - prefix[i0 * stride + j1 + 1] - prefix[(i1 + 1) * stride + j0]
                + prefix[i0 * stride + j0]
        };

        let mut out = vec![0.0; n * n];
        for a in 0..n {
            for b in (a + 1)..n {
                // a inside the arc and b outside, or the reverse
                let left = if a == 0 { 0.0 } else { rect(0, a - 1, a, b - 1) };
                let right = rect(a, b - 1, b, n - 1);
                let v = left + right;
                out[a * n + b] = v;
                out[b * n + a] = v;
            }
        }
        out
    }

    /// `A^T r` for a symmetric `n x n` matrix `r` over ordering positions.
    pub fn transpose(&self, r: &[f64]) -> Vec<f64> {
        let n = self.n;
        let stride = n + 1;
        let mut prefix = vec![0.0; stride * stride];
        let mut row_cum = vec![0.0; n + 1];
        for a in 0..n {
            let mut row = 0.0;
            let mut total = 0.0;
            for b in 0..n {
                if a != b {
                    row += r[a * n + b];
                    total += r[a * n + b];
                }
                prefix[(a + 1) * stride + b + 1] = prefix[a * stride + b + 1] + row;
            }
            row_cum[a + 1] = row_cum[a] + total;
        }
        self.cuts
            .iter()
            .map(|&(i, j)| {
                let (lo, hi) = (i + 1, j + 1);
                let block = prefix[hi * stride + hi] - prefix[lo * stride + hi] - prefix[hi * stride + lo] + prefix[lo * stride + lo];
                row_cum[hi] - row_cum[lo] - block
            })
            .collect()
    }

    /// `(A^T A)[s][t]`: the number of pairs separated by both splits.
    pub fn gram(&self, s: usize, t: usize) -> f64 {
        let n = self.n as i64;
        let (si, sj) = self.cuts[s];
        let (ti, tj) = self.cuts[t];
        let size_s = (sj - si) as i64;
        let size_t = (tj - ti) as i64;
        let lo = si.max(ti) + 1;
        let hi = sj.min(tj);
        let both = if hi >= lo { (hi - lo + 1) as i64 } else { 0 };
        let v = both * (n - size_s - size_t + both) + (size_s - both) * (size_t - both);
        v as f64
    }
}

/// Largest violation of the NNLS optimality conditions for `system` against
/// `d`, relative to `max(1, max |A^T d|)`. Zero weights need a non-positive
/// gradient `A^T (d - A w)`; positive weights need a zero gradient.
pub fn kkt_violation(d: &DistanceMatrix, system: &WeightedSplitSystem) -> f64 {
    let n = system.n_taxa();
    if n < 2 {
        return 0.0;
    }
    let op = StructuredIncidence::new(n);
    let target = position_distances(d, system.ordering());
    let w = system.dense_weights();
    let scale = op.transpose(&target).iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let grad = gradient(&op, &w, &target);
    let worst = w
        .iter()
        .zip(&grad)
        .map(|(&wk, &g)| if wk > 0.0 { g.abs() } else { g.max(0.0) })
        .fold(0.0, f64::max);
    worst / scale
}

fn gradient(op: &StructuredIncidence, x: &[f64], target: &[f64]) -> Vec<f64> {
    let fitted = op.apply(x);
    let residual: Vec<f64> = target.iter().zip(&fitted).map(|(d, f)| d - f).collect();
    op.transpose(&residual)
}

/// Lower-triangular Cholesky factor of `A_P^T A_P`, stored by rows.
#[derive(Debug, Default)]
struct Cholesky {
    rows: Vec<Vec<f64>>,
}

impl Cholesky {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Appends a column with off-diagonal Gram entries `col` and diagonal
    /// `diag`. Returns false, leaving the factor unchanged, when the column
    /// is numerically dependent on the existing ones.
    fn push(&mut self, col: &[f64], diag: f64) -> bool {
        let mut row = self.forward(col);
        let sq: f64 = row.iter().map(|v| v * v).sum();
        let pivot = diag - sq;
        if pivot <= 1e-12 * diag.max(1.0) {
            return false;
        }
        row.push(pivot.sqrt());
        self.rows.push(row);
        true
    }

    /// Drops column `k`, restoring the factor with a rank-one update of the
    /// trailing block.
    fn remove(&mut self, k: usize) {
        self.rows.remove(k);
        let m = self.rows.len();
        let mut v: Vec<f64> = (k..m).map(|i| self.rows[i].remove(k)).collect();
        for j in k..m {
            let jj = self.rows[j][j];
            let r = jj.hypot(v[j - k]);
            let c = r / jj;
            let s = v[j - k] / jj;
            self.rows[j][j] = r;
            for i in (j + 1)..m {
                let lij = (self.rows[i][j] + s * v[i - k]) / c;
                v[i - k] = c * v[i - k] - s * lij;
                self.rows[i][j] = lij;
            }
        }
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut y = Vec::with_capacity(b.len() + 1);
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&y).map(|(l, v)| l * v).sum();
            y.push((b[i] - s) / row[i]);
        }
        y
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = self.forward(b);
        for k in (0..x.len()).rev() {
            let mut s = x[k];
            for i in (k + 1)..x.len() {
                s -= self.rows[i][k] * x[i];
            }
            x[k] = s / self.rows[k][k];
        }
        x
    }
}

/// Minimises `||A x - target||` over `x >= 0`.
pub(super) fn solve(op: &StructuredIncidence, target: &[f64], options: &FitOptions) -> Result<Vec<f64>> {
    let m = op.n_splits();
    let atd = op.transpose(target);
    let scale = atd.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let tol = options.tolerance * scale;
    let cap = options.max_iterations.unwrap_or(10 * m);

    let mut x = vec![0.0; m];
    let mut passive: Vec<usize> = Vec::new();
    let mut in_passive = vec![false; m];
    let mut blocked = vec![false; m];
    let mut chol = Cholesky::default();
    let mut iterations = 0;

    let not_converged = |iterations: usize, x: &[f64]| SplitError::NotConverged {
        iterations,
        residual: super::rms_residual(op, x, target),
        best: x.to_vec(),
    };

    loop {
        let grad = gradient(op, &x, target);
        let mut entering = None;
        let mut best = tol;
        for (k, &g) in grad.iter().enumerate() {
            if !in_passive[k] && !blocked[k] && g > best {
                best = g;
                entering = Some(k);
            }
        }
        let Some(t) = entering else { break };
        iterations += 1;
        if iterations > cap {
            return Err(not_converged(iterations - 1, &x));
        }

        let col: Vec<f64> = passive.iter().map(|&s| op.gram(s, t)).collect();
        if !chol.push(&col, op.gram(t, t)) {
            blocked[t] = true;
            continue;
        }
        passive.push(t);
        in_passive[t] = true;

        let mut first = true;
        loop {
            let z = passive_solution(op, &chol, &passive, &atd, target);
            if first && *z.last().expect("entering split is passive") <= 0.0 {
                // rounding made the entering split useless; keep x and skip it
                chol.remove(chol.len() - 1);
                passive.pop();
                in_passive[t] = false;
                blocked[t] = true;
                break;
            }
            first = false;

            if z.iter().all(|&v| v > 0.0) {
                for (&s, &v) in passive.iter().zip(&z) {
                    x[s] = v;
                }
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }

            iterations += 1;
            if iterations > cap {
                return Err(not_converged(iterations - 1, &x));
            }
            let mut alpha = f64::INFINITY;
            let mut limiting = 0;
            for (k, (&s, &v)) in passive.iter().zip(&z).enumerate() {
                if v <= 0.0 {
                    let a = x[s] / (x[s] - v);
                    if a < alpha {
                        alpha = a;
                        limiting = k;
                    }
                }
            }
            for (&s, &v) in passive.iter().zip(&z) {
                x[s] += alpha * (v - x[s]);
            }
            x[passive[limiting]] = 0.0;
            blocked.iter_mut().for_each(|b| *b = false);

            for k in (0..passive.len()).rev() {
                let s = passive[k];
                if x[s] <= 0.0 {
                    x[s] = 0.0;
                    in_passive[s] = false;
                    passive.remove(k);
                    chol.remove(k);
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }
    Ok(x)
}

/// Unconstrained least squares on the passive columns, with one step of
/// iterative refinement against the exact structured residual.
fn passive_solution(op: &StructuredIncidence, chol: &Cholesky, passive: &[usize], atd: &[f64], target: &[f64]) -> Vec<f64> {
    let rhs: Vec<f64> = passive.iter().map(|&s| atd[s]).collect();
    let mut z = chol.solve(&rhs);
    let mut full = vec![0.0; op.n_splits()];
    for (&s, &v) in passive.iter().zip(&z) {
        full[s] = v;
    }
    let grad = gradient(op, &full, target);
    let correction: Vec<f64> = passive.iter().map(|&s| grad[s]).collect();
    for (zi, dz) in z.iter_mut().zip(chol.solve(&correction)) {
        *zi += dz;
    }
    z
}
