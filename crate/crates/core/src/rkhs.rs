//! Gaussian kernels and sparse kernel expansions.
//!
//! A [`SparseKernelModel`] is a function `f(s) = Σ_n w_n κ(c_n, s)` with one
//! weight row per center. The row width is the output dimension, so the same
//! type carries scalar functions (value, density) and vector or matrix valued
//! ones (policy mean, advantage factor, flattened row-major).
//!
//! Bandwidths are lengthscales: `κ(x, y) = exp(-½ Σ_i ((x_i - y_i) / b_i)²)`.

use nalgebra::DMatrix;

use crate::error::{check_dim, Error, Result};

/// Diagonal added to Gram matrices before any solve.
pub const GRAM_JITTER: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    bandwidth: Vec<f64>,
    inv_sq: Vec<f64>,
}

impl KernelParams {
    pub fn new(bandwidth: Vec<f64>) -> Result<Self> {
        if bandwidth.is_empty() {
            return Err(Error::InvalidParameter(
                "kernel needs at least one lengthscale".into(),
            ));
        }
        if let Some(b) = bandwidth.iter().find(|b| !(b.is_finite() && **b > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "lengthscale must be positive, got {b}"
            )));
        }
        let inv_sq = bandwidth.iter().map(|b| 1.0 / (b * b)).collect();
        Ok(Self { bandwidth, inv_sq })
    }

    /// Same lengthscale on every axis.
    pub fn isotropic(dim: usize, lengthscale: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    /// Unchecked evaluation; callers guarantee both slices have length `dim()`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((xi, yi), w) in x.iter().zip(y).zip(&self.inv_sq) {
            let d = xi - yi;
            q += d * d * w;
        }
        (-0.5 * q).exp()
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len(), "kernel argument x")?;
        check_dim(self.dim(), y.len(), "kernel argument y")?;
        Ok(self.eval_unchecked(x, y))
    }
}

/// `κ(x, y)` under `k`.
pub fn kernel_eval(x: &[f64], y: &[f64], k: &KernelParams) -> Result<f64> {
    k.eval(x, y)
}

/// Dense cross-Gram `K[i, j] = κ(a_i, b_j)` for flat row-major center blocks.
pub fn gram(k: &KernelParams, a: &[f64], b: &[f64]) -> DMatrix<f64> {
    let p = k.dim();
    let (na, nb) = (a.len() / p, b.len() / p);
    DMatrix::from_fn(na, nb, |i, j| {
        k.eval_unchecked(&a[i * p..(i + 1) * p], &b[j * p..(j + 1) * p])
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseKernelModel {
    kernel: KernelParams,
    out_dim: usize,
    centers: Vec<f64>,
    weights: Vec<f64>,
}

impl SparseKernelModel {
    /// The identically-zero function with `out_dim` outputs.
    pub fn zero(kernel: KernelParams, out_dim: usize) -> Self {
        Self {
            kernel,
            out_dim,
            centers: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn from_rows(
        kernel: KernelParams,
        out_dim: usize,
        centers: &[Vec<f64>],
        weights: &[Vec<f64>],
    ) -> Result<Self> {
        check_dim(centers.len(), weights.len(), "center/weight row count")?;
        let p = kernel.dim();
        let mut flat_c = Vec::with_capacity(centers.len() * p);
        let mut flat_w = Vec::with_capacity(weights.len() * out_dim);
        for (c, w) in centers.iter().zip(weights) {
            check_dim(p, c.len(), "center")?;
            check_dim(out_dim, w.len(), "weight row")?;
            flat_c.extend_from_slice(c);
            flat_w.extend_from_slice(w);
        }
        Ok(Self {
            kernel,
            out_dim,
            centers: flat_c,
            weights: flat_w,
        })
    }

    pub(crate) fn from_flat(
        kernel: KernelParams,
        out_dim: usize,
        centers: Vec<f64>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let p = kernel.dim();
        if !centers.len().is_multiple_of(p) || !weights.len().is_multiple_of(out_dim.max(1)) {
            return Err(Error::InvalidParameter(
                "ragged center or weight block".into(),
            ));
        }
        check_dim(
            centers.len() / p,
            weights.len() / out_dim.max(1),
            "center/weight row count",
        )?;
        Ok(Self {
            kernel,
            out_dim,
            centers,
            weights,
        })
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn state_dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.out_dim
    }

    /// Model order: the number of centers.
    pub fn order(&self) -> usize {
        self.centers.len() / self.kernel.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn center(&self, i: usize) -> &[f64] {
        let p = self.kernel.dim();
        &self.centers[i * p..(i + 1) * p]
    }

    pub fn weight(&self, i: usize) -> &[f64] {
        &self.weights[i * self.out_dim..(i + 1) * self.out_dim]
    }

    pub fn centers_flat(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights_flat(&self) -> &[f64] {
        &self.weights
    }

    pub fn centers(&self) -> impl Iterator<Item = &[f64]> {
        self.centers.chunks_exact(self.kernel.dim())
    }

    pub fn eval(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.state_dim(), s.len(), "state")?;
        let mut out = vec![0.0; self.out_dim];
        self.eval_into(s, &mut out);
        Ok(out)
    }

    /// Accumulates `f(s)` into a zeroed `out` (length `output_dim`).
    pub(crate) fn eval_into(&self, s: &[f64], out: &mut [f64]) {
        let d = self.out_dim;
        for (c, w) in self.centers().zip(self.weights.chunks_exact(d.max(1))) {
            let k = self.kernel.eval_unchecked(c, s);
            for (o, wi) in out.iter_mut().zip(w) {
                *o += k * wi;
            }
        }
    }

    /// Returns a model with `w` added at `s`; an exactly coincident center has
    /// its row incremented instead of a new row being created.
    pub fn add_center(&self, s: &[f64], w: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.add_center_mut(s, w)?;
        Ok(out)
    }

    pub(crate) fn add_center_mut(&mut self, s: &[f64], w: &[f64]) -> Result<usize> {
        check_dim(self.state_dim(), s.len(), "center")?;
        check_dim(self.out_dim, w.len(), "weight row")?;
        if let Some(i) = self.find_center(s) {
            let d = self.out_dim;
            for (dst, src) in self.weights[i * d..(i + 1) * d].iter_mut().zip(w) {
                *dst += src;
            }
            Ok(i)
        } else {
            self.centers.extend_from_slice(s);
            self.weights.extend_from_slice(w);
            Ok(self.order() - 1)
        }
    }

    /// Index of a center bitwise equal to `s`, if any.
    pub fn find_center(&self, s: &[f64]) -> Option<usize> {
        self.centers()
            .position(|c| c.iter().zip(s).all(|(a, b)| a.to_bits() == b.to_bits()))
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn replace(&mut self, centers: Vec<f64>, weights: Vec<f64>) {
        debug_assert_eq!(
            centers.len() / self.kernel.dim(),
            weights.len() / self.out_dim.max(1)
        );
        self.centers = centers;
        self.weights = weights;
    }

    /// Concatenation of centers and weights; evaluates to `self + other`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.centers.extend_from_slice(&other.centers);
        out.weights.extend_from_slice(&other.weights);
        Ok(out)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.weights.iter_mut().for_each(|w| *w *= factor);
        out
    }

    /// Selects output columns `[start, start + len)` as a new model on the same centers.
    pub fn columns(&self, start: usize, len: usize) -> Self {
        assert!(start + len <= self.out_dim, "column range out of bounds");
        let weights = self
            .weights
            .chunks_exact(self.out_dim)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        Self {
            kernel: self.kernel.clone(),
            out_dim: len,
            centers: self.centers.clone(),
            weights,
        }
    }

    /// The kernel section `κ(s, ·)` as a scalar model.
    pub fn section(kernel: KernelParams, s: &[f64]) -> Result<Self> {
        Self::from_rows(kernel, 1, &[s.to_vec()], &[vec![1.0]])
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.kernel != other.kernel {
            return Err(Error::KernelMismatch);
        }
        check_dim(self.out_dim, other.out_dim, "output dimension")
    }

    /// `⟨a, b⟩_H` summed over output coordinates, via the cross-Gram.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_compatible(other)?;
        let k = gram(&self.kernel, &self.centers, &other.centers);
        let d = self.out_dim;
        let mut acc = 0.0;
        for i in 0..self.order() {
            for j in 0..other.order() {
                let kij = k[(i, j)];
                let wi = &self.weights[i * d..(i + 1) * d];
                let wj = &other.weights[j * d..(j + 1) * d];
                acc += kij * wi.iter().zip(wj).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        Ok(acc)
    }

    /// `‖f‖²_H` summed over output coordinates.
    pub fn norm_sq(&self) -> f64 {
        self.inner(self).expect("self-compatible").max(0.0)
    }

    /// Merges exactly coincident centers by summing their rows.
    pub fn fused(&self) -> Self {
        let mut out = Self::zero(self.kernel.clone(), self.out_dim);
        for (c, w) in self
            .centers()
            .zip(self.weights.chunks_exact(self.out_dim.max(1)))
        {
            out.add_center_mut(c, w).expect("dimensions preserved");
        }
        out
    }
}

/// `‖a − b‖²_H` over the union of centers, summed over output coordinates.
pub fn hilbert_dist_sq(a: &SparseKernelModel, b: &SparseKernelModel) -> Result<f64> {
    let diff = a.concat(&b.scaled(-1.0))?.fused();
    Ok(diff.norm_sq())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k5() -> KernelParams {
        KernelParams::isotropic(5, 0.75).unwrap()
    }

    #[test]
    fn kernel_hand_value() {
        // exponent: -0.5 * (1 / 0.75)^2 = -0.5 / 0.5625
        let expected = (-0.5f64 / 0.5625).exp();
        let v = kernel_eval(&[0.0; 5], &[1.0, 0.0, 0.0, 0.0, 0.0], &k5()).unwrap();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.411112).abs() < 1e-6);
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(kernel_eval(&[0.0; 4], &[0.0; 5], &k5()).is_err());
        assert!(KernelParams::new(vec![0.75, 0.0]).is_err());
        assert!(KernelParams::new(vec![]).is_err());
    }

    #[test]
    fn empty_model_is_zero() {
        let m = SparseKernelModel::zero(k5(), 3);
        assert_eq!(m.eval(&[0.3; 5]).unwrap(), vec![0.0; 3]);
        assert!(m.eval(&[0.3; 4]).is_err());
    }

    #[test]
    fn add_center_reproduces_and_fuses() {
        let m = SparseKernelModel::zero(k5(), 2);
        let s = [0.1, 0.2, 0.3, 0.4, 0.5];
        let m1 = m.add_center(&s, &[1.5, -2.0]).unwrap();
        assert_eq!(m1.order(), 1);
        assert_eq!(m1.eval(&s).unwrap(), vec![1.5, -2.0]);
        let m2 = m1.add_center(&s, &[-1.5, 2.0]).unwrap();
        assert_eq!(m2.order(), 1);
        assert_eq!(m2.eval(&[0.7; 5]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn far_center_perturbation_bounded() {
        let s = [0.0; 5];
        let far = [2.0, 1.0, 0.0, -1.0, 0.5];
        let w = [0.8, -0.6];
        let m = SparseKernelModel::zero(k5(), 2)
            .add_center(&s, &[1.0, 1.0])
            .unwrap();
        let m2 = m.add_center(&far, &w).unwrap();
        let before = m.eval(&s).unwrap();
        let after = m2.eval(&s).unwrap();
        let change = before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let bound = k5().eval(&s, &far).unwrap() * 1.0;
        assert!(change <= bound + 1e-15, "{change} > {bound}");
    }

    #[test]
    fn two_center_eval_matches_naive_sum() {
        let k = k5();
        let c1 = vec![0.5, 1.0, 2.0, 1.0, 0.5];
        let c2 = vec![1.5, 0.0, 2.5, 1.0, 3.0];
        let m = SparseKernelModel::from_rows(
            k.clone(),
            1,
            &[c1.clone(), c2.clone()],
            &[vec![2.0], vec![-0.5]],
        )
        .unwrap();
        let s = [1.0, 0.5, 2.0, 1.5, 1.0];
        let naive = |a: &[f64], b: &[f64]| {
            let q: f64 = a.iter().zip(b).map(|(x, y)| ((x - y) / 0.75).powi(2)).sum();
            (-0.5 * q).exp()
        };
        let expected = 2.0 * naive(&c1, &s) - 0.5 * naive(&c2, &s);
        assert!((m.eval(&s).unwrap()[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn hilbert_distance_basics() {
        let k = k5();
        let a =
            SparseKernelModel::from_rows(k.clone(), 2, &[vec![0.0; 5]], &[vec![3.0, 4.0]]).unwrap();
        let empty = SparseKernelModel::zero(k.clone(), 2);
        assert!((hilbert_dist_sq(&a, &empty).unwrap() - 25.0).abs() < 1e-12);
        assert_eq!(hilbert_dist_sq(&a, &a).unwrap(), 0.0);
        let other = SparseKernelModel::zero(KernelParams::isotropic(5, 1.0).unwrap(), 2);
        assert!(matches!(
            hilbert_dist_sq(&a, &other),
            Err(Error::KernelMismatch)
        ));
    }

    #[test]
    fn columns_select_outputs() {
        let m =
            SparseKernelModel::from_rows(k5(), 3, &[vec![0.0; 5]], &[vec![1.0, 2.0, 3.0]]).unwrap();
        let c = m.columns(1, 2);
        assert_eq!(c.eval(&[0.0; 5]).unwrap(), vec![2.0, 3.0]);
    }
}
