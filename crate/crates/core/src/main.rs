use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use knaf::compose::{compose_with, CandidateSet, ComposeOptions, DensityMode};
use knaf::harness::{self, PolicyFile, Provenance};
use knaf::knaf::TrainConfig;
use knaf::lidar_sim::{builtin_maps, SimConfig};

#[derive(Parser)]
#[command(
    name = "knaf",
    version,
    about = "Kernel NAF training, composition and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a policy on one map.
    Train {
        #[arg(long)]
        map: String,
        /// TOML (or .json) training config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-step CSV metrics (step, episode, reward, delta, model_order).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Overrides the config's max_steps.
        #[arg(long)]
        steps: Option<usize>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Greedy evaluation of a policy, printed as one JSON line.
    Eval {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        map: String,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Writes the per-step trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compose several policies into one.
    Compose {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "kme")]
        density: String,
        #[arg(long, default_value_t = 3.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Interpolation passes; values above 1 repeat until residuals fall below --tolerance.
        #[arg(long, default_value_t = 1)]
        passes: usize,
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
        /// Writes the accept/reject log as JSON lines.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(required = true)]
        policies: Vec<PathBuf>,
    },
    /// Evaluate every policy on every map and print the reward matrix as CSV.
    Crossval {
        #[arg(long, num_args = 1.., required = true)]
        maps: Vec<String>,
        #[arg(long, num_args = 1.., required = true)]
        policies: Vec<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List builtin maps, optionally exporting them as map files.
    Maps {
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

fn label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_policy(path: &Path) -> Result<PolicyFile> {
    PolicyFile::load(path).with_context(|| format!("reading policy {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Train {
            map,
            config,
            out,
            metrics,
            steps,
            seed,
        } => {
            let mut cfg = match config {
                Some(p) => harness::load_config(&p)
                    .with_context(|| format!("reading config {}", p.display()))?,
                None => TrainConfig::default(),
            };
            if let Some(s) = steps {
                cfg.max_steps = s;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let map = harness::resolve_map(&map)?;
            let (file, m) = harness::train_on_map(&map, &cfg)?;
            file.save(&out)
                .with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = metrics {
                m.write_csv(BufWriter::new(File::create(&path)?))?;
            }
            println!(
                "{}",
                json!({
                    "map": map.name,
                    "steps": cfg.max_steps,
                    "episodes": m.episode_rewards.len(),
                    "model_order": file.policy.order(),
                    "mean_last10_episode_reward": m.recent_mean_episode_reward(10),
                })
            );
        }
        Cmd::Eval {
            policy,
            map,
            steps,
            seed,
            trace,
        } => {
            let p = load_policy(&policy)?;
            let map = harness::resolve_map(&map)?;
            let report = harness::evaluate_with(
                &p.policy,
                &map,
                &SimConfig::default(),
                steps,
                seed,
                trace.is_some(),
            )?;
            if let (Some(path), Some(rows)) = (trace, report.trace.as_ref()) {
                let mut w = BufWriter::new(File::create(&path)?);
                for r in rows {
                    writeln!(w, "{}", serde_json::to_string(r)?)?;
                }
            }
            println!(
                "{}",
                json!({
                    "policy": label(&policy),
                    "map": map.name,
                    "total_reward": report.total_reward,
                    "crashes": report.crashes,
                    "steps": report.steps,
                })
            );
        }
        Cmd::Compose {
            out,
            density,
            epsilon,
            seed,
            passes,
            tolerance,
            log,
            policies,
        } => {
            let density: DensityMode = density.parse()?;
            if passes == 0 {
                bail!("--passes must be at least 1");
            }
            let files = policies
                .iter()
                .map(|p| load_policy(p))
                .collect::<Result<Vec<_>>>()?;
            let names: Vec<String> = files.iter().map(|f| f.provenance.map.clone()).collect();
            let set = CandidateSet::new(files.into_iter().map(|f| f.policy).collect(), seed)?;
            let opts = ComposeOptions {
                epsilon,
                density,
                max_passes: passes,
                tolerance,
            };
            let c = compose_with(&set, &opts)?;
            let prov = Provenance {
                map: names.join(" / "),
                steps: 0,
                seed,
            };
            PolicyFile::new(c.policy.clone(), prov).save(&out)?;
            if let Some(path) = log {
                let mut w = BufWriter::new(File::create(&path)?);
                for d in &c.log {
                    writeln!(
                        w,
                        "{}",
                        json!({
                            "policy": d.policy,
                            "center": d.center,
                            "own_density": d.own_density,
                            "rival_density": if d.rival_density.is_finite() { json!(d.rival_density) } else { json!(null) },
                            "accepted": d.accepted,
                            "tie": d.tie,
                        })
                    )?;
                }
            }
            let accepted = c.log.iter().filter(|d| d.accepted).count();
            println!(
                "{}",
                json!({
                    "inputs": policies.len(),
                    "points": c.log.len(),
                    "accepted": accepted,
                    "rejected": c.log.len() - accepted,
                    "ties": c.log.iter().filter(|d| d.tie).count(),
                    "passes": c.passes,
                    "model_order": c.policy.order(),
                })
            );
        }
        Cmd::Crossval {
            maps,
            policies,
            steps,
            seed,
            out,
        } => {
            let maps = maps
                .iter()
                .map(|m| harness::resolve_map(m))
                .collect::<knaf::Result<Vec<_>>>()?;
            let pols = policies
                .iter()
                .map(|p| Ok((label(p), load_policy(p)?.policy)))
                .collect::<Result<Vec<_>>>()?;
            let csv = harness::cross_validate(&pols, &maps, steps, seed)?.to_csv();
            match out {
                Some(path) => std::fs::write(&path, csv)?,
                None => print!("{csv}"),
            }
        }
        Cmd::Maps { export } => {
            for m in builtin_maps() {
                match &export {
                    Some(dir) => {
                        std::fs::create_dir_all(dir)?;
                        let path = dir.join(format!("{}.map", m.name.to_lowercase()));
                        std::fs::write(&path, m.to_text())?;
                        println!("{}", path.display());
                    }
                    None => println!(
                        "{}\tsegments={}\tspawns={}",
                        m.name,
                        m.segments.len(),
                        m.spawn_poses.len()
                    ),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
