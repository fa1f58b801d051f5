//! Kernel orthogonal matching pursuit, destructive variant.
//!
//! [`compress`] removes centers one at a time. Each round drops the center
//! whose removal, after least-squares re-projection of the remaining weights,
//! leaves the smallest Hilbert distance to the uncompressed input, and stops
//! before that distance would exceed the budget.
//!
//! Scoring uses the inverse Gram of the surviving centers: removing center `j`
//! from an exact representation `u` costs `‖u_j‖² / P_jj` and re-projects as
//! `u_i ← u_i − P_ij u_j / P_jj`. The inverse is downdated in O(N²) per
//! removal, and [`GramCache`] keeps it alive between calls so online learners
//! pay O(N²) per inserted center instead of a fresh factorization.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::rkhs::{gram, KernelParams, SparseKernelModel, GRAM_JITTER};

/// Hilbert-norm (not squared) tolerance for a compression pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressionBudget(f64);

impl CompressionBudget {
    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "compression budget must be >= 0, got {epsilon}"
            )));
        }
        Ok(Self(epsilon))
    }

    pub fn epsilon(&self) -> f64 {
        self.0
    }
}

/// Solves `(K + jitter·I) X = B` by Cholesky; `K` must be symmetric PSD.
fn regularized_solve(mut k: DMatrix<f64>, b: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..k.nrows() {
        k[(i, i)] += GRAM_JITTER;
    }
    match k.clone().cholesky() {
        Some(ch) => ch.solve(&b),
        None => k.lu().solve(&b).expect("jittered Gram is nonsingular"),
    }
}

fn regularized_inverse(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    regularized_solve(k.clone(), DMatrix::identity(n, n))
}

/// Best approximation of `target` supported on `onto_centers` (flat, row-major).
pub fn project(target: &SparseKernelModel, onto_centers: &[Vec<f64>]) -> Result<SparseKernelModel> {
    let kernel = target.kernel().clone();
    let p = kernel.dim();
    let d = target.output_dim();
    let mut flat = Vec::with_capacity(onto_centers.len() * p);
    for c in onto_centers {
        crate::error::check_dim(p, c.len(), "projection center")?;
        flat.extend_from_slice(c);
    }
    if onto_centers.is_empty() {
        return Ok(SparseKernelModel::zero(kernel, d));
    }
    let k_mm = gram(&kernel, &flat, &flat);
    let k_mn = gram(&kernel, &flat, target.centers_flat());
    let w = DMatrix::from_row_slice(target.order(), d, target.weights_flat());
    let rhs = &k_mn * w;
    let coef = regularized_solve(k_mm, rhs);
    let mut weights = Vec::with_capacity(onto_centers.len() * d);
    for i in 0..coef.nrows() {
        weights.extend(coef.row(i).iter().copied());
    }
    SparseKernelModel::from_flat(kernel, d, flat, weights)
}

/// Dictionary with its Gram matrix and the inverse of the jittered Gram.
#[derive(Debug, Clone)]
pub struct GramCache {
    kernel: KernelParams,
    n: usize,
    centers: Vec<f64>,
    gram: Vec<f64>,
    inv: Vec<f64>,
}

impl GramCache {
    pub fn new(kernel: KernelParams) -> Self {
        Self {
            kernel,
            n: 0,
            centers: Vec::new(),
            gram: Vec::new(),
            inv: Vec::new(),
        }
    }

    pub fn from_model(m: &SparseKernelModel) -> Self {
        let mut cache = Self::new(m.kernel().clone());
        cache.n = m.order();
        cache.centers = m.centers_flat().to_vec();
        cache.refresh_gram();
        cache.refresh_inverse();
        cache
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn centers_flat(&self) -> &[f64] {
        &self.centers
    }

    fn refresh_gram(&mut self) {
        let k = gram(&self.kernel, &self.centers, &self.centers);
        self.gram = (0..self.n)
            .flat_map(|i| k.row(i).iter().copied().collect::<Vec<_>>())
            .collect();
    }

    /// Recomputes the inverse from the stored Gram, discarding accumulated
    /// rounding from incremental updates.
    pub fn refresh_inverse(&mut self) {
        if self.n == 0 {
            self.inv.clear();
            return;
        }
        let k = DMatrix::from_row_slice(self.n, self.n, &self.gram);
        let inv = regularized_inverse(&k);
        self.inv = (0..self.n)
            .flat_map(|i| inv.row(i).iter().copied().collect::<Vec<_>>())
            .collect();
    }

    /// Appends a center, growing Gram and inverse by a bordered-block update.
    pub fn push(&mut self, c: &[f64]) {
        let n = self.n;
        let p = self.kernel.dim();
        let kcol: Vec<f64> = self
            .centers
            .chunks_exact(p)
            .map(|ci| self.kernel.eval_unchecked(ci, c))
            .collect();
        let g: Vec<f64> = (0..n)
            .map(|i| {
                self.inv[i * n..(i + 1) * n]
                    .iter()
                    .zip(&kcol)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        let schur = 1.0 + GRAM_JITTER - kcol.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();

        let m = n + 1;
        let mut gram = vec![0.0; m * m];
        for i in 0..n {
            gram[i * m..i * m + n].copy_from_slice(&self.gram[i * n..(i + 1) * n]);
            gram[i * m + n] = kcol[i];
            gram[n * m + i] = kcol[i];
        }
        gram[n * m + n] = 1.0;
        self.gram = gram;
        self.centers.extend_from_slice(c);
        self.n = m;

        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(schur > GRAM_JITTER * 0.5) {
            // Rounding pushed the complement below the jitter floor.
            self.refresh_inverse();
            return;
        }
        let mut inv = vec![0.0; m * m];
        for i in 0..n {
            let gi = g[i] / schur;
            for j in 0..n {
                inv[i * m + j] = self.inv[i * n + j] + gi * g[j];
            }
            inv[i * m + n] = -gi;
            inv[n * m + i] = -gi;
        }
        inv[n * m + n] = 1.0 / schur;
        self.inv = inv;
    }

    fn keep_rows(&mut self, keep: &[bool]) {
        let n = self.n;
        let p = self.kernel.dim();
        let idx: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
        let m = idx.len();
        let mut gram = Vec::with_capacity(m * m);
        let mut inv = Vec::with_capacity(m * m);
        for &i in &idx {
            for &j in &idx {
                gram.push(self.gram[i * n + j]);
                inv.push(self.inv[i * n + j]);
            }
        }
        self.centers = idx
            .iter()
            .flat_map(|&i| self.centers[i * p..(i + 1) * p].to_vec())
            .collect();
        self.gram = gram;
        self.inv = inv;
        self.n = m;
    }

    /// Greedy pruning of `weights` (`len() × d`, row-major) in place.
    ///
    /// Returns the number of removed centers. Weights and cache stay aligned.
    pub fn prune(&mut self, weights: &mut Vec<f64>, d: usize, budget: CompressionBudget) -> usize {
        let n = self.n;
        assert_eq!(
            weights.len(),
            n * d,
            "weight block does not match dictionary"
        );
        if n == 0 {
            return 0;
        }
        let eps_sq = budget.epsilon() * budget.epsilon();
        let original = weights.clone();
        let mut active = vec![true; n];
        let mut removed = 0;
        let mut trial = vec![0.0; n * d];

        loop {
            let mut best: Option<(usize, f64)> = None;
            for j in (0..n).filter(|&j| active[j]) {
                let pjj = self.inv[j * n + j];
                let wn: f64 = weights[j * d..(j + 1) * d].iter().map(|w| w * w).sum();
                let score = wn / pjj;
                if best.is_none_or(|(_, b)| score < b) {
                    best = Some((j, score));
                }
            }
            let Some((j, _)) = best else { break };

            trial.copy_from_slice(weights);
            let pjj = self.inv[j * n + j];
            for i in (0..n).filter(|&i| active[i] && i != j) {
                let f = self.inv[i * n + j] / pjj;
                if f != 0.0 {
                    for c in 0..d {
                        trial[i * d + c] -= f * weights[j * d + c];
                    }
                }
            }
            trial[j * d..(j + 1) * d].iter_mut().for_each(|w| *w = 0.0);

            let err = self.residual_sq(&original, &trial, d);
            // A NaN residual must never count as within budget.
            #[allow(clippy::neg_cmp_op_on_partial_ord)]
            if !(err <= eps_sq) {
                break;
            }

            weights.copy_from_slice(&trial);
            active[j] = false;
            removed += 1;
            let pj: Vec<f64> = (0..n).map(|i| self.inv[i * n + j]).collect();
            for i in (0..n).filter(|&i| active[i]) {
                let fi = pj[i] / pjj;
                if fi == 0.0 {
                    continue;
                }
                for k in (0..n).filter(|&k| active[k]) {
                    self.inv[i * n + k] -= fi * pj[k];
                }
            }
        }

        if removed > 0 {
            let compact: Vec<f64> = (0..n)
                .filter(|&i| active[i])
                .flat_map(|i| weights[i * d..(i + 1) * d].to_vec())
                .collect();
            self.keep_rows(&active);
            *weights = compact;
        }
        removed
    }

    /// `Σ_c (a − b)_cᵀ K (a − b)_c` against the full current Gram.
    fn residual_sq(&self, a: &[f64], b: &[f64], d: usize) -> f64 {
        let n = self.n;
        let r: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
        let nz: Vec<usize> = (0..n)
            .filter(|&i| r[i * d..(i + 1) * d].iter().any(|v| *v != 0.0))
            .collect();
        let mut acc = 0.0;
        for &i in &nz {
            let ri = &r[i * d..(i + 1) * d];
            for &k in &nz {
                let rk = &r[k * d..(k + 1) * d];
                let dot: f64 = ri.iter().zip(rk).map(|(x, y)| x * y).sum();
                acc += self.gram[i * n + k] * dot;
            }
        }
        acc.max(0.0)
    }
}

/// Removes centers from `m` while staying within `budget` of it in the
/// Hilbert norm. Ties between equal-cost removals go to the lowest index.
pub fn compress(m: &SparseKernelModel, budget: CompressionBudget) -> SparseKernelModel {
    let mut cache = GramCache::from_model(m);
    let mut weights = m.weights_flat().to_vec();
    cache.prune(&mut weights, m.output_dim(), budget);
    SparseKernelModel::from_flat(
        m.kernel().clone(),
        m.output_dim(),
        cache.centers.clone(),
        weights,
    )
    .expect("pruning keeps centers and weights aligned")
}

/// Dense Gram-solve projection of `target` onto a subset of its own centers,
/// returning the squared Hilbert residual. Used by exhaustive checks.
pub fn subset_residual_sq(target: &SparseKernelModel, subset: &[usize]) -> f64 {
    let centers: Vec<Vec<f64>> = subset.iter().map(|&i| target.center(i).to_vec()).collect();
    let proj = project(target, &centers).expect("subset centers share the kernel");
    crate::rkhs::hilbert_dist_sq(target, &proj).expect("compatible models")
}
