//! Configuration, policy files, greedy evaluation and cross-validation.

use std::path::Path;

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::knaf::{train, Environment, NafPolicy, TrainConfig, TrainMetrics};
use crate::lidar_sim::{maps, LidarEnv, SimConfig, WorldMap};

pub mod policy_file;

pub use policy_file::{PolicyFile, Provenance};

/// Offset separating the simulator's spawn stream from the exploration stream.
const ENV_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn env_seed(seed: u64) -> u64 {
    seed ^ ENV_SEED_SALT
}

/// Reads a training config from TOML (or JSON for `.json` paths); absent
/// fields take their defaults.
pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let cfg: TrainConfig = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?
    } else {
        toml::from_str(&text).map_err(|e| Error::InvalidParameter(format!("config: {e}")))?
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a map from a file path, falling back to a builtin name.
pub fn resolve_map(spec: &str) -> Result<WorldMap> {
    let path = Path::new(spec);
    if path.is_file() {
        let map = WorldMap::parse(&std::fs::read_to_string(path)?)?;
        map.validate(&SimConfig::default())?;
        return Ok(map);
    }
    maps::builtin(spec).ok_or_else(|| {
        Error::InvalidParameter(format!("'{spec}' is neither a map file nor a builtin map"))
    })
}

/// Trains on `map` and wraps the result with its provenance.
pub fn train_on_map(map: &WorldMap, cfg: &TrainConfig) -> Result<(PolicyFile, TrainMetrics)> {
    let mut env = LidarEnv::new(map.clone(), SimConfig::default(), env_seed(cfg.seed))?;
    let (policy, metrics) = train(&mut env, cfg)?;
    let prov = Provenance {
        map: map.name.clone(),
        steps: cfg.max_steps as u64,
        seed: cfg.seed,
    };
    Ok((PolicyFile::new(policy, prov), metrics))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub total_reward: i64,
    pub crashes: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceRow>>,
}

impl EvalReport {
    /// `total_reward == (steps − crashes)·r_alive + crashes·r_crash`.
    pub fn accounting_holds(&self, cfg: &SimConfig) -> bool {
        let alive = (self.steps - self.crashes) as f64 * cfg.r_alive;
        let crash = self.crashes as f64 * cfg.r_crash;
        (alive + crash) as i64 == self.total_reward
    }
}

/// Greedy rollout for `steps` steps, respawning after every crash.
pub fn evaluate(policy: &NafPolicy, map: &WorldMap, steps: usize, seed: u64) -> Result<EvalReport> {
    evaluate_with(policy, map, &SimConfig::default(), steps, seed, false)
}

pub fn evaluate_with(
    policy: &NafPolicy,
    map: &WorldMap,
    cfg: &SimConfig,
    steps: usize,
    seed: u64,
    record_trace: bool,
) -> Result<EvalReport> {
    let mut env = LidarEnv::new(map.clone(), cfg.clone(), seed)?;
    check_dim(
        env.state_dim(),
        policy.state_dim(),
        "policy state dimension vs simulator",
    )?;
    check_dim(
        env.action_bounds().0.len(),
        policy.action_dim(),
        "policy action dimension vs simulator",
    )?;
    let mut trace = record_trace.then(Vec::new);
    let mut report = EvalReport {
        total_reward: 0,
        crashes: 0,
        steps,
        trace: None,
    };
    if steps == 0 {
        report.trace = trace;
        return Ok(report);
    }
    let mut s = env.reset()?;
    let mut total = 0.0;
    for step in 0..steps {
        let a = policy.greedy_action(&s)?;
        let out = env.step(&a)?;
        total += out.reward;
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                step,
                obs: s.clone(),
                action: a,
                reward: out.reward,
                done: out.done,
            });
        }
        if out.done {
            report.crashes += 1;
            s = env.reset()?;
        } else {
            s = out.obs;
        }
    }
    report.total_reward = total.round() as i64;
    report.trace = trace;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RewardMatrix {
    pub policies: Vec<String>,
    pub maps: Vec<String>,
    /// `values[i][j]`: reward of policy `i` on map `j`.
    pub values: Vec<Vec<i64>>,
}

impl RewardMatrix {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("policy");
        for m in &self.maps {
            out.push(',');
            out.push_str(m);
        }
        out.push('\n');
        for (name, row) in self.policies.iter().zip(&self.values) {
            out.push_str(name);
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates every policy on every map with the same seed. Cells run on
/// scoped threads, one per policy.
pub fn cross_validate(
    policies: &[(String, NafPolicy)],
    maps: &[WorldMap],
    steps: usize,
    seed: u64,
) -> Result<RewardMatrix> {
    let rows: Vec<Result<Vec<i64>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = policies
            .iter()
            .map(|(_, p)| {
                scope.spawn(move || {
                    maps.iter()
                        .map(|m| evaluate(p, m, steps, seed).map(|r| r.total_reward))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("evaluation thread panicked"))
            .collect()
    });
    Ok(RewardMatrix {
        policies: policies.iter().map(|(n, _)| n.clone()).collect(),
        maps: maps.iter().map(|m| m.name.clone()).collect(),
        values: rows.into_iter().collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rkhs::KernelParams;

    fn zero_policy() -> NafPolicy {
        NafPolicy::new(
            KernelParams::isotropic(5, 0.75).unwrap(),
            vec![-0.3],
            vec![0.3],
            0.01,
        )
        .unwrap()
    }

    #[test]
    fn zero_steps_report_is_empty() {
        let r = evaluate(&zero_policy(), &maps::round(), 0, 1).unwrap();
        assert_eq!((r.total_reward, r.crashes, r.steps), (0, 0, 0));
    }

    #[test]
    fn accounting_identity_examples() {
        let cfg = SimConfig::default();
        let clean = EvalReport {
            total_reward: 1000,
            crashes: 0,
            steps: 1000,
            trace: None,
        };
        assert!(clean.accounting_holds(&cfg));
        let three = EvalReport {
            total_reward: 997 - 3 * 200,
            crashes: 3,
            steps: 1000,
            trace: None,
        };
        assert_eq!(three.total_reward, 397);
        assert!(three.accounting_holds(&cfg));
    }

    #[test]
    fn straight_driver_crashes_and_accounting_holds() {
        let r = evaluate_with(
            &zero_policy(),
            &maps::round(),
            &SimConfig::default(),
            1000,
            4,
            true,
        )
        .unwrap();
        assert!(r.crashes > 0);
        assert!(r.accounting_holds(&SimConfig::default()));
        assert_eq!(r.trace.as_ref().unwrap().len(), 1000);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let p = NafPolicy::new(
            KernelParams::isotropic(3, 0.75).unwrap(),
            vec![-0.3],
            vec![0.3],
            0.01,
        )
        .unwrap();
        assert!(matches!(
            evaluate(&p, &maps::round(), 10, 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn one_by_one_matrix() {
        let p = zero_policy();
        let m = maps::round();
        let direct = evaluate(&p, &m, 300, 7).unwrap().total_reward;
        let mat = cross_validate(&[("zero".into(), p)], &[m], 300, 7).unwrap();
        assert_eq!(mat.values, vec![vec![direct]]);
        assert_eq!(mat.to_csv(), format!("policy,Round\nzero,{direct}\n"));
    }

    #[test]
    fn resolve_map_prefers_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("box.map");
        let mut m = maps::round();
        m.name = "FromFile".into();
        std::fs::write(&path, m.to_text()).unwrap();
        assert_eq!(
            resolve_map(path.to_str().unwrap()).unwrap().name,
            "FromFile"
        );
        assert_eq!(resolve_map("Maze").unwrap().name, "Maze");
        assert!(resolve_map("nowhere").is_err());
    }
}
