//! Q-learning with kernel normalized advantage functions.
//!
//! The action-value function is `Q(s, a) = V(s) − ½ (a − π(s))ᵀ Lᵀ(s) L(s) (a − π(s))`.
//! `V`, `π`, `L` and the visit density `ρ` are kernel expansions over one
//! shared dictionary, stored as a single stacked weight block
//! `[V | π (q) | L (q², row-major) | ρ]`. `L` carries a constant `l0·I` on top
//! of its expansion so the untrained policy is exactly `L ≡ l0·I`.
//!
//! Each online step appends the visited state as a center with the
//! semi-gradient increments and then prunes the dictionary jointly with KOMP
//! in the stacked Hilbert norm.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::komp::{CompressionBudget, GramCache};
use crate::rkhs::{KernelParams, SparseKernelModel};

/// Result of one environment transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn reset(&mut self) -> Result<Vec<f64>>;
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: Vec<f64>,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub zeta: f64,
    pub epsilon: f64,
    pub sigma_explore: Vec<f64>,
    pub gamma: f64,
    pub l0: f64,
    pub lambda: f64,
    pub bandwidth: Vec<f64>,
    pub max_steps: usize,
    pub episode_max_len: usize,
    pub seed: u64,
    /// Disables KOMP entirely; the dictionary then grows by one center per step.
    pub skip_compression: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            beta: 0.25,
            zeta: 0.001,
            epsilon: 3.0,
            sigma_explore: vec![0.2],
            gamma: 0.99,
            l0: 0.01,
            lambda: 0.0,
            bandwidth: vec![0.75; 5],
            max_steps: 100_000,
            episode_max_len: 5_000,
            seed: 0,
            skip_compression: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("zeta", self.zeta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !self.l0.is_finite() {
            return bad("l0 must be finite".into());
        }
        if self
            .sigma_explore
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            return bad("exploration std-devs must be >= 0".into());
        }
        if self.episode_max_len == 0 {
            return bad("episode_max_len must be positive".into());
        }
        CompressionBudget::new(self.epsilon)?;
        KernelParams::new(self.bandwidth.clone())?;
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelParams> {
        KernelParams::new(self.bandwidth.clone())
    }
}

/// All four components evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct NafEval {
    pub value: f64,
    pub mean: Vec<f64>,
    /// `L(s)` row-major, including the `l0·I` offset.
    pub l: Vec<f64>,
    pub density: f64,
}

impl NafEval {
    /// `L(s)·d` for a q-vector `d`.
    fn l_times(&self, d: &[f64]) -> Vec<f64> {
        let q = d.len();
        (0..q)
            .map(|i| (0..q).map(|k| self.l[i * q + k] * d[k]).sum())
            .collect()
    }

    pub fn advantage(&self, a: &[f64]) -> f64 {
        let d: Vec<f64> = a.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let ld = self.l_times(&d);
        -0.5 * ld.iter().map(|v| v * v).sum::<f64>()
    }

    pub fn q_value(&self, a: &[f64]) -> f64 {
        self.value + self.advantage(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NafPolicy {
    model: SparseKernelModel,
    action_dim: usize,
    l0: f64,
    action_low: Vec<f64>,
    action_high: Vec<f64>,
}

pub(crate) fn stacked_width(q: usize) -> usize {
    2 + q + q * q
}

impl NafPolicy {
    /// `V = 0, π = 0, L = l0·I, ρ = 0` with an empty dictionary.
    pub fn new(
        kernel: KernelParams,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        l0: f64,
    ) -> Result<Self> {
        let q = action_low.len();
        check_dim(q, action_high.len(), "action bounds")?;
        if q == 0 {
            return Err(Error::InvalidParameter(
                "action dimension must be positive".into(),
            ));
        }
        // Negated so NaN bounds are rejected too.
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if action_low.iter().zip(&action_high).any(|(l, h)| !(l <= h)) {
            return Err(Error::InvalidParameter(
                "action_low must not exceed action_high".into(),
            ));
        }
        Ok(Self {
            model: SparseKernelModel::zero(kernel, stacked_width(q)),
            action_dim: q,
            l0,
            action_low,
            action_high,
        })
    }

    /// Rebuilds a policy from a stacked `[V | π | L | ρ]` model.
    pub fn from_stacked(
        model: SparseKernelModel,
        action_low: Vec<f64>,
        action_high: Vec<f64>,
        l0: f64,
    ) -> Result<Self> {
        let mut p = Self::new(model.kernel().clone(), action_low, action_high, l0)?;
        check_dim(
            stacked_width(p.action_dim),
            model.output_dim(),
            "stacked weight width",
        )?;
        p.model = model;
        Ok(p)
    }

    pub fn kernel(&self) -> &KernelParams {
        self.model.kernel()
    }

    pub fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn l0(&self) -> f64 {
        self.l0
    }

    pub fn action_low(&self) -> &[f64] {
        &self.action_low
    }

    pub fn action_high(&self) -> &[f64] {
        &self.action_high
    }

    pub fn order(&self) -> usize {
        self.model.order()
    }

    pub fn stacked(&self) -> &SparseKernelModel {
        &self.model
    }

    pub fn value_model(&self) -> SparseKernelModel {
        self.model.columns(0, 1)
    }

    pub fn mean_model(&self) -> SparseKernelModel {
        self.model.columns(1, self.action_dim)
    }

    /// Expansion part of `L` only (without `l0·I`).
    pub fn l_model(&self) -> SparseKernelModel {
        let q = self.action_dim;
        self.model.columns(1 + q, q * q)
    }

    pub fn density_model(&self) -> SparseKernelModel {
        self.model
            .columns(1 + self.action_dim + self.action_dim * self.action_dim, 1)
    }

    pub fn evaluate(&self, s: &[f64]) -> Result<NafEval> {
        check_dim(self.state_dim(), s.len(), "state")?;
        Ok(self.evaluate_unchecked(s))
    }

    fn evaluate_unchecked(&self, s: &[f64]) -> NafEval {
        let q = self.action_dim;
        let mut out = vec![0.0; stacked_width(q)];
        self.model.eval_into(s, &mut out);
        let mut l = out[1 + q..1 + q + q * q].to_vec();
        for i in 0..q {
            l[i * q + i] += self.l0;
        }
        NafEval {
            value: out[0],
            mean: out[1..1 + q].to_vec(),
            l,
            density: out[1 + q + q * q],
        }
    }

    fn check_action(&self, a: &[f64]) -> Result<()> {
        check_dim(self.action_dim, a.len(), "action")
    }

    pub fn advantage(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_action(a)?;
        Ok(self.evaluate(s)?.advantage(a))
    }

    pub fn q_value(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        self.check_action(a)?;
        Ok(self.evaluate(s)?.q_value(a))
    }

    pub fn clip(&self, a: &mut [f64]) {
        for ((x, lo), hi) in a.iter_mut().zip(&self.action_low).zip(&self.action_high) {
            *x = x.clamp(*lo, *hi);
        }
    }

    pub fn greedy_action(&self, s: &[f64]) -> Result<Vec<f64>> {
        let mut a = self.evaluate(s)?.mean;
        self.clip(&mut a);
        Ok(a)
    }

    /// `clip(π(s) + σ ⊙ ξ)` with `ξ ~ N(0, I)`.
    pub fn explore_action<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        sigma: &[f64],
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        check_dim(self.action_dim, sigma.len(), "exploration std-devs")?;
        let mean = self.evaluate(s)?.mean;
        let mut a: Vec<f64> = mean
            .iter()
            .zip(sigma)
            .map(|(m, sd)| {
                let z: f64 = rng.sample(StandardNormal);
                m + sd * z
            })
            .collect();
        self.clip(&mut a);
        Ok(a)
    }

    /// Bootstrapped target and Bellman error `(y, δ)`.
    pub fn td_error(&self, t: &Transition, gamma: f64) -> Result<(f64, f64)> {
        self.check_action(&t.a)?;
        let here = self.evaluate(&t.s)?;
        check_dim(self.state_dim(), t.s_next.len(), "next state")?;
        Ok(self.td_error_from(&here, t, gamma))
    }

    fn td_error_from(&self, here: &NafEval, t: &Transition, gamma: f64) -> (f64, f64) {
        let y = if t.done {
            t.r
        } else {
            t.r + gamma * self.evaluate_unchecked(&t.s_next).value
        };
        (y, y - here.q_value(&t.a))
    }

    /// Applies one semi-gradient step and returns the updated policy.
    pub fn gradient_step(&self, t: &Transition, cfg: &TrainConfig) -> Result<NafPolicy> {
        let mut next = self.clone();
        next.apply_gradient(t, cfg)?;
        Ok(next)
    }

    /// In-place [`NafPolicy::gradient_step`]; reports the TD error and whether a
    /// new center was appended (as opposed to fused into an existing one).
    pub(crate) fn apply_gradient(
        &mut self,
        t: &Transition,
        cfg: &TrainConfig,
    ) -> Result<GradientInfo> {
        self.check_action(&t.a)?;
        check_dim(self.state_dim(), t.s.len(), "state")?;
        check_dim(self.state_dim(), t.s_next.len(), "next state")?;
        let here = self.evaluate_unchecked(&t.s);
        let (y, delta) = self.td_error_from(&here, t, cfg.gamma);
        let increment = increments(&here, &t.a, delta, cfg.alpha, cfg.beta, cfg.zeta);

        if cfg.lambda > 0.0 {
            let q = self.action_dim;
            let width = stacked_width(q);
            let factors: Vec<f64> = (0..width)
                .map(|c| match c {
                    0 => 1.0 - cfg.alpha * cfg.lambda,
                    c if c <= q => 1.0 - cfg.beta * cfg.lambda,
                    c if c < width - 1 => 1.0 - cfg.zeta * cfg.lambda,
                    _ => 1.0,
                })
                .collect();
            for row in self.model.weights_mut().chunks_exact_mut(width) {
                for (w, f) in row.iter_mut().zip(&factors) {
                    *w *= f;
                }
            }
        }

        let before = self.model.order();
        let index = self.model.add_center_mut(&t.s, &increment)?;
        Ok(GradientInfo {
            target: y,
            delta,
            appended: self.model.order() > before,
            index,
        })
    }

    /// Joint KOMP over the stacked block.
    pub fn compressed(&self, budget: CompressionBudget) -> NafPolicy {
        let mut next = self.clone();
        next.model = crate::komp::compress(&self.model, budget);
        next
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct GradientInfo {
    pub target: f64,
    pub delta: f64,
    pub appended: bool,
    pub index: usize,
}

/// Stacked weight row added at `s_t` for one semi-gradient step.
///
/// With `d = a − π(s)`: `ΔV = αδ`, `Δπ = βδ LᵀL d`, `ΔL = −ζδ (L d) dᵀ`, `Δρ = 1`.
/// These are the exact partials of `½ δ²` for the advantage `−½ dᵀLᵀL d`.
pub fn increments(
    here: &NafEval,
    a: &[f64],
    delta: f64,
    alpha: f64,
    beta: f64,
    zeta: f64,
) -> Vec<f64> {
    let q = a.len();
    let d: Vec<f64> = a.iter().zip(&here.mean).map(|(x, m)| x - m).collect();
    let ld = here.l_times(&d);
    // Lᵀ (L d)
    let ltld: Vec<f64> = (0..q)
        .map(|k| (0..q).map(|i| here.l[i * q + k] * ld[i]).sum())
        .collect();
    let mut row = Vec::with_capacity(stacked_width(q));
    row.push(alpha * delta);
    row.extend(ltld.iter().map(|v| beta * delta * v));
    for li in &ld {
        row.extend(d.iter().map(|dk| -zeta * delta * li * dk));
    }
    row.push(1.0);
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub episode: usize,
    pub reward: f64,
    pub delta: f64,
    pub model_order: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainMetrics {
    pub steps: Vec<StepRecord>,
    /// Accumulated reward of each finished episode, in order.
    pub episode_rewards: Vec<f64>,
    pub episode_lengths: Vec<usize>,
}

impl TrainMetrics {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "step,episode,reward,delta,model_order")?;
        for r in &self.steps {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step, r.episode, r.reward, r.delta, r.model_order
            )?;
        }
        Ok(())
    }

    /// Mean of the last `n` finished episode rewards (all if fewer).
    pub fn recent_mean_episode_reward(&self, n: usize) -> Option<f64> {
        let k = self.episode_rewards.len();
        if k == 0 {
            return None;
        }
        let tail = &self.episode_rewards[k.saturating_sub(n)..];
        Some(tail.iter().sum::<f64>() / tail.len() as f64)
    }
}

/// How many steps pass between exact refactorizations of the cached inverse Gram.
const REFRESH_EVERY: usize = 1000;

/// Online learner state: the policy plus its cached dictionary Gram.
#[derive(Debug, Clone)]
pub struct Learner {
    policy: NafPolicy,
    cache: GramCache,
    cfg: TrainConfig,
    budget: CompressionBudget,
    updates: usize,
}

impl Learner {
    pub fn new(cfg: TrainConfig, action_low: Vec<f64>, action_high: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        check_dim(
            action_low.len(),
            cfg.sigma_explore.len(),
            "exploration std-devs",
        )?;
        let kernel = cfg.kernel()?;
        let policy = NafPolicy::new(kernel.clone(), action_low, action_high, cfg.l0)?;
        Ok(Self {
            policy,
            cache: GramCache::new(kernel),
            budget: CompressionBudget::new(cfg.epsilon)?,
            cfg,
            updates: 0,
        })
    }

    pub fn policy(&self) -> &NafPolicy {
        &self.policy
    }

    pub fn into_policy(self) -> NafPolicy {
        self.policy
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Gradient step followed by joint compression; returns the TD error.
    pub fn update(&mut self, t: &Transition) -> Result<f64> {
        let info = self.policy.apply_gradient(t, &self.cfg)?;
        self.updates += 1;
        self.check_finite()?;
        if !self.cfg.skip_compression {
            if info.appended {
                self.cache.push(&t.s);
            }
            if self.updates.is_multiple_of(REFRESH_EVERY) {
                self.cache.refresh_inverse();
            }
            let width = self.policy.model.output_dim();
            let mut weights = self.policy.model.weights_flat().to_vec();
            let removed = self.cache.prune(&mut weights, width, self.budget);
            if removed > 0 {
                let centers = self.cache.centers_flat().to_vec();
                self.policy.model.replace(centers, weights);
            }
        }
        self.check_finite()?;
        Ok(info.delta)
    }

    fn check_finite(&self) -> Result<()> {
        if let Some(bad) = self
            .policy
            .model
            .weights_flat()
            .iter()
            .position(|w| !w.is_finite())
        {
            return Err(Error::NonFinite {
                step: self.updates,
                detail: format!(
                    "weight {} of center {} is {}",
                    bad % self.policy.model.output_dim(),
                    bad / self.policy.model.output_dim(),
                    self.policy.model.weights_flat()[bad]
                ),
            });
        }
        Ok(())
    }
}

/// Runs online KNAF training for `cfg.max_steps` environment steps.
pub fn train<E: Environment + ?Sized>(
    env: &mut E,
    cfg: &TrainConfig,
) -> Result<(NafPolicy, TrainMetrics)> {
    train_with(env, cfg, |_, _| {})
}

/// As [`train`], calling `observe` with every transition after it is learned.
pub fn train_with<E, F>(
    env: &mut E,
    cfg: &TrainConfig,
    mut observe: F,
) -> Result<(NafPolicy, TrainMetrics)>
where
    E: Environment + ?Sized,
    F: FnMut(&Transition, &NafPolicy),
{
    use rand::SeedableRng;

    let (low, high) = env.action_bounds();
    let mut learner = Learner::new(cfg.clone(), low, high)?;
    check_dim(
        env.state_dim(),
        learner.policy.state_dim(),
        "environment state vs bandwidth",
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut metrics = TrainMetrics::default();
    if cfg.max_steps == 0 {
        return Ok((learner.into_policy(), metrics));
    }

    let mut s = env.reset()?;
    let mut episode = 0;
    let mut ep_reward = 0.0;
    let mut ep_len = 0;
    for step in 0..cfg.max_steps {
        let a = learner
            .policy
            .explore_action(&s, &cfg.sigma_explore, &mut rng)?;
        let out = env.step(&a)?;
        check_dim(learner.policy.state_dim(), out.obs.len(), "observation")?;
        let t = Transition {
            s,
            a,
            r: out.reward,
            s_next: out.obs,
            done: out.done,
        };
        let delta = learner.update(&t)?;
        observe(&t, &learner.policy);
        ep_reward += t.r;
        ep_len += 1;
        metrics.steps.push(StepRecord {
            step,
            episode,
            reward: t.r,
            delta,
            model_order: learner.policy.order(),
        });
        if t.done || ep_len >= cfg.episode_max_len {
            metrics.episode_rewards.push(ep_reward);
            metrics.episode_lengths.push(ep_len);
            episode += 1;
            ep_reward = 0.0;
            ep_len = 0;
            s = env.reset()?;
        } else {
            s = t.s_next;
        }
    }
    Ok((learner.into_policy(), metrics))
}
