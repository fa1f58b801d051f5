//! Merging independently trained policies into one kernel policy.
//!
//! Every dictionary point of every candidate is visited once in a seeded
//! random order. A point is accepted only when the density of the policy it
//! came from strictly exceeds the density of every other candidate there.
//! Accepted points are interpolated into the composite `Π` with
//! `Π ← Π + (f_i(s) − Π(s)) κ(s, ·)`, which makes `Π(s) = f_i(s)` right after the
//! update. The composite is compressed with KOMP at the end.
//!
//! `V`, `L` and `ρ` ride along in the same update so the result is a complete
//! policy that can itself be composed again. Executing it only uses `π`.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::knaf::{stacked_width, NafPolicy};
use crate::komp::{compress, CompressionBudget};
use crate::rkhs::SparseKernelModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityMode {
    /// The learned kernel mean embedding `ρ`.
    #[default]
    Kme,
    /// Unit-weight sum over the policy's own dictionary.
    Dict,
}

impl std::str::FromStr for DensityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kme" => Ok(Self::Kme),
            "dict" => Ok(Self::Dict),
            other => Err(Error::InvalidParameter(format!(
                "unknown density mode '{other}' (kme|dict)"
            ))),
        }
    }
}

/// Visit-density estimate `ρ(s)` stored with the policy.
pub fn kme_density(p: &NafPolicy, s: &[f64]) -> Result<f64> {
    Ok(p.evaluate(s)?.density)
}

/// `Σ_k κ(s, s_k)` over the policy's dictionary.
pub fn dict_density(p: &NafPolicy, s: &[f64]) -> Result<f64> {
    check_dim(p.state_dim(), s.len(), "state")?;
    let k = p.kernel();
    Ok(p.stacked().centers().map(|c| k.eval_unchecked(c, s)).sum())
}

fn density(p: &NafPolicy, s: &[f64], mode: DensityMode) -> Result<f64> {
    match mode {
        DensityMode::Kme => kme_density(p, s),
        DensityMode::Dict => dict_density(p, s),
    }
}

#[derive(Debug, Clone)]
pub struct CandidateSet {
    policies: Vec<NafPolicy>,
    seed: u64,
}

impl CandidateSet {
    pub fn new(policies: Vec<NafPolicy>, seed: u64) -> Result<Self> {
        let first = policies.first().ok_or_else(|| {
            Error::InvalidParameter("composition needs at least one policy".into())
        })?;
        for p in &policies[1..] {
            if p.kernel() != first.kernel() {
                return Err(Error::KernelMismatch);
            }
            check_dim(
                first.action_dim(),
                p.action_dim(),
                "candidate action dimension",
            )?;
        }
        Ok(Self { policies, seed })
    }

    pub fn policies(&self) -> &[NafPolicy] {
        &self.policies
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComposeOptions {
    pub epsilon: f64,
    pub density: DensityMode,
    /// Total interpolation passes allowed; 1 is the plain one-pass procedure.
    pub max_passes: usize,
    /// Multi-pass stops once every accepted point's `π` residual is below this.
    pub tolerance: f64,
}

impl Default for ComposeOptions {
    fn default() -> Self {
        Self {
            epsilon: 3.0,
            density: DensityMode::Kme,
            max_passes: 1,
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub policy: usize,
    pub center: usize,
    pub own_density: f64,
    /// Highest density among the other candidates; `-inf` when there are none.
    pub rival_density: f64,
    pub accepted: bool,
    pub tie: bool,
}

#[derive(Debug, Clone)]
pub struct Composition {
    pub policy: NafPolicy,
    /// One entry per visited point of the first pass, in visit order.
    pub log: Vec<Decision>,
    pub passes: usize,
    /// Largest `|π_i(s_ij) − Π(s_ij)|` over accepted points before compression.
    pub max_residual: f64,
}

pub fn compose(cands: &CandidateSet, epsilon: f64, density: DensityMode) -> Result<Composition> {
    compose_with(
        cands,
        &ComposeOptions {
            epsilon,
            density,
            ..ComposeOptions::default()
        },
    )
}

pub fn compose_with(cands: &CandidateSet, opts: &ComposeOptions) -> Result<Composition> {
    let budget = CompressionBudget::new(opts.epsilon)?;
    let pols = cands.policies();
    let first = &pols[0];
    let q = first.action_dim();
    let width = stacked_width(q);
    let l0 = first.l0();
    let low: Vec<f64> = (0..q)
        .map(|i| {
            pols.iter()
                .map(|p| p.action_low()[i])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let high: Vec<f64> = (0..q)
        .map(|i| {
            pols.iter()
                .map(|p| p.action_high()[i])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();

    let mut points: Vec<(usize, usize)> = pols
        .iter()
        .enumerate()
        .flat_map(|(i, p)| (0..p.order()).map(move |j| (i, j)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cands.seed());
    points.shuffle(&mut rng);

    // Stacked target row for a point, with L re-expressed against the composite's l0.
    let target = |i: usize, s: &[f64]| -> Result<Vec<f64>> {
        let e = pols[i].evaluate(s)?;
        let mut row = Vec::with_capacity(width);
        row.push(e.value);
        row.extend_from_slice(&e.mean);
        let mut l = e.l;
        for k in 0..q {
            l[k * q + k] -= l0;
        }
        row.extend_from_slice(&l);
        row.push(e.density);
        Ok(row)
    };

    let mut composite = SparseKernelModel::zero(first.kernel().clone(), width);
    let mut log = Vec::with_capacity(points.len());
    let mut accepted = Vec::new();
    let mut current = vec![0.0; width];
    let interpolate =
        |model: &mut SparseKernelModel, s: &[f64], goal: &[f64], buf: &mut [f64]| -> Result<()> {
            buf.iter_mut().for_each(|v| *v = 0.0);
            model.eval_into(s, buf);
            let diff: Vec<f64> = goal.iter().zip(buf.iter()).map(|(g, c)| g - c).collect();
            model.add_center_mut(s, &diff)?;
            Ok(())
        };

    for &(i, j) in &points {
        let s = pols[i].stacked().center(j).to_vec();
        let own = density(&pols[i], &s, opts.density)?;
        let mut rival = f64::NEG_INFINITY;
        for (k, p) in pols.iter().enumerate() {
            if k != i {
                rival = rival.max(density(p, &s, opts.density)?);
            }
        }
        let ok = own > rival;
        log.push(Decision {
            policy: i,
            center: j,
            own_density: own,
            rival_density: rival,
            accepted: ok,
            tie: own == rival,
        });
        if ok {
            let goal = target(i, &s)?;
            interpolate(&mut composite, &s, &goal, &mut current)?;
            accepted.push((s, goal));
        }
    }

    let residual = |model: &SparseKernelModel, buf: &mut [f64]| {
        accepted
            .iter()
            .map(|(s, goal)| {
                buf.iter_mut().for_each(|v| *v = 0.0);
                model.eval_into(s, buf);
                (1..=q)
                    .map(|c| (goal[c] - buf[c]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };

    let mut passes = 1;
    let mut max_residual = residual(&composite, &mut current);
    while passes < opts.max_passes && max_residual >= opts.tolerance {
        let mut order: Vec<usize> = (0..accepted.len()).collect();
        order.shuffle(&mut rng);
        for idx in order {
            let (s, goal) = &accepted[idx];
            interpolate(&mut composite, s, goal, &mut current)?;
        }
        passes += 1;
        max_residual = residual(&composite, &mut current);
    }

    let compressed = compress(&composite, budget);
    Ok(Composition {
        policy: NafPolicy::from_stacked(compressed, low, high, l0)?,
        log,
        passes,
        max_residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rkhs::KernelParams;

    fn kernel() -> KernelParams {
        KernelParams::isotropic(2, 0.5).unwrap()
    }

    /// Single-center policy with the given π weight and ρ weight.
    fn atom(c: [f64; 2], pi: f64, rho: f64) -> NafPolicy {
        let m =
            SparseKernelModel::from_rows(kernel(), 4, &[c.to_vec()], &[vec![0.0, pi, 0.0, rho]])
                .unwrap();
        NafPolicy::from_stacked(m, vec![-1.0], vec![1.0], 0.01).unwrap()
    }

    #[test]
    fn densities_on_simple_models() {
        let p = NafPolicy::new(kernel(), vec![-1.0], vec![1.0], 0.01).unwrap();
        assert_eq!(kme_density(&p, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(dict_density(&p, &[0.0, 0.0]).unwrap(), 0.0);
        let a = atom([1.0, 2.0], 0.3, 5.0);
        assert_eq!(kme_density(&a, &[1.0, 2.0]).unwrap(), 5.0);
        assert_eq!(dict_density(&a, &[1.0, 2.0]).unwrap(), 1.0);
    }

    #[test]
    fn dict_density_is_plain_sum() {
        let centers = vec![vec![0.0, 0.0], vec![0.4, 0.1], vec![-0.3, 0.5]];
        let m =
            SparseKernelModel::from_rows(kernel(), 4, &centers, &vec![vec![9.0, 1.0, 2.0, 3.0]; 3])
                .unwrap();
        let p = NafPolicy::from_stacked(m, vec![-1.0], vec![1.0], 0.01).unwrap();
        let s = [0.2, 0.2];
        let k = |c: &[f64]| (-0.5 * ((c[0] - s[0]).powi(2) + (c[1] - s[1]).powi(2)) / 0.25).exp();
        let expect: f64 = centers.iter().map(|c| k(c)).sum();
        assert!((dict_density(&p, &s).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn rejects_mixed_kernels() {
        let a = atom([0.0, 0.0], 0.1, 1.0);
        let m = SparseKernelModel::zero(KernelParams::isotropic(2, 0.9).unwrap(), 4);
        let b = NafPolicy::from_stacked(m, vec![-1.0], vec![1.0], 0.01).unwrap();
        assert!(matches!(
            CandidateSet::new(vec![a, b], 0),
            Err(Error::KernelMismatch)
        ));
        assert!(CandidateSet::new(vec![], 0).is_err());
    }

    #[test]
    fn disjoint_atoms_are_both_kept() {
        let a = atom([0.0, 0.0], 0.25, 1.0);
        let b = atom([10.0, 10.0], -0.5, 1.0);
        let c = CandidateSet::new(vec![a, b], 3).unwrap();
        let out = compose(&c, 0.0, DensityMode::Kme).unwrap();
        assert!(out.log.iter().all(|d| d.accepted));
        assert!((out.policy.evaluate(&[0.0, 0.0]).unwrap().mean[0] - 0.25).abs() < 1e-10);
        assert!((out.policy.evaluate(&[10.0, 10.0]).unwrap().mean[0] + 0.5).abs() < 1e-10);
    }

    #[test]
    fn multi_pass_reduces_residual() {
        // Overlapping neighbours: one pass leaves residuals, more passes shrink them.
        let centers: Vec<Vec<f64>> = (0..6).map(|i| vec![0.15 * i as f64, 0.0]).collect();
        let weights: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![0.0, (i as f64).sin(), 0.0, 1.0])
            .collect();
        let m = SparseKernelModel::from_rows(kernel(), 4, &centers, &weights).unwrap();
        let p = NafPolicy::from_stacked(m, vec![-1.0], vec![1.0], 0.01).unwrap();
        let set = CandidateSet::new(vec![p], 1).unwrap();
        let one = compose_with(
            &set,
            &ComposeOptions {
                epsilon: 0.0,
                ..Default::default()
            },
        )
        .unwrap();
        let many = compose_with(
            &set,
            &ComposeOptions {
                epsilon: 0.0,
                max_passes: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(many.max_residual <= one.max_residual);
        assert!(many.passes >= 1 && many.passes <= 10);
    }

    #[test]
    fn density_mode_parses() {
        assert_eq!("kme".parse::<DensityMode>().unwrap(), DensityMode::Kme);
        assert_eq!("dict".parse::<DensityMode>().unwrap(), DensityMode::Dict);
        assert!("soft".parse::<DensityMode>().is_err());
    }
}
