//! Ablation grids: one training run per (arm, seed), plus per-arm summaries.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::bank::build_toy_bank_with;
use super::train::{evaluate, train, Metrics, ProbeModel, TrainConfig, TrainData};
use super::world::{generate_world, World, WorldSpec};
use crate::alignment::LossReport;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::io::{write_json_atomic, write_jsonl_atomic};
use crate::prototypes::Strategy;
use crate::ARTIFACT_VERSION;

pub const SWEEP_K: [usize; 4] = [3, 5, 7, 9];
pub const SWEEP_L: [usize; 4] = [3, 5, 7, 9];
pub const SWEEP_TAU: [f64; 4] = [0.0, 0.1, 0.25, 0.4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridKind {
    /// baseline, +SESP, +SAPP, full.
    Components,
    K,
    L,
    Tau,
    Aggregator,
}

impl GridKind {
    pub const ALL: [GridKind; 5] = [GridKind::Components, GridKind::K, GridKind::L, GridKind::Tau, GridKind::Aggregator];

    pub fn as_str(self) -> &'static str {
        match self {
            GridKind::Components => "components",
            GridKind::K => "k",
            GridKind::L => "l",
            GridKind::Tau => "tau",
            GridKind::Aggregator => "aggregator",
        }
    }
}

impl fmt::Display for GridKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GridKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GridKind::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown grid {s:?} (expected components, k, l, tau or aggregator)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub config: TrainConfig,
}

/// Arms of a grid, each derived from `base` by changing one axis.
pub fn grid_arms(kind: GridKind, base: &TrainConfig) -> Vec<Arm> {
    let arm = |name: String, config: TrainConfig| Arm { name, config };
    match kind {
        GridKind::Components => [("baseline", false, false), ("+sesp", true, false), ("+sapp", false, true), ("full", true, true)]
            .into_iter()
            .map(|(name, use_sesp, use_sapp)| {
                arm(
                    name.to_string(),
                    TrainConfig {
                        use_sesp,
                        use_sapp,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        GridKind::K => SWEEP_K
            .into_iter()
            .map(|k| arm(format!("k={k}"), TrainConfig { k, ..base.clone() }))
            .collect(),
        GridKind::L => SWEEP_L
            .into_iter()
            .map(|l| arm(format!("l={l}"), TrainConfig { l, ..base.clone() }))
            .collect(),
        GridKind::Tau => SWEEP_TAU
            .into_iter()
            .map(|tau| arm(format!("tau={tau}"), TrainConfig { tau, ..base.clone() }))
            .collect(),
        GridKind::Aggregator => Strategy::ALL
            .into_iter()
            .map(|aggregator| arm(format!("aggregator={aggregator}"), TrainConfig { aggregator, ..base.clone() }))
            .collect(),
    }
}

/// `n` consecutive seeds starting at the world's root seed.
pub fn seeds_from_root(root: u64, n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| root.wrapping_add(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub initial_total: f64,
    pub final_total: f64,
    pub min_total: f64,
    pub final_report: LossReport,
    pub steps: usize,
}

impl LossSummary {
    pub fn from_trace(trace: &[LossReport]) -> Option<Self> {
        let first = trace.first()?;
        let last = trace.last()?;
        Some(LossSummary {
            initial_total: first.total,
            final_total: last.total,
            min_total: trace.iter().map(|r| r.total).fold(f64::INFINITY, f64::min),
            final_report: *last,
            steps: trace.len(),
        })
    }
}

/// One results-file record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationRow {
    pub artifact_version: String,
    pub grid: String,
    pub arm: String,
    pub seed: u64,
    pub world: WorldSpec,
    pub train: TrainConfig,
    pub metrics: Metrics,
    pub loss: LossSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single seed.
    pub std: f64,
}

impl MeanStd {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        if xs.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() < 2 {
            0.0
        } else {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

/// Root-mean-square of two seed standard deviations.
pub fn pooled_std(a: &MeanStd, b: &MeanStd) -> f64 {
    ((a.std * a.std + b.std * b.std) / 2.0).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: usize,
    pub acc_novel: MeanStd,
    pub acc_base: MeanStd,
    pub acc_all: MeanStd,
    pub final_total: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub artifact_version: String,
    pub grid: String,
    pub seeds: Vec<u64>,
    pub arms: Vec<ArmSummary>,
}

impl AblationSummary {
    pub fn arm(&self, name: &str) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.arm == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub summary: AblationSummary,
}

impl AblationResult {
    pub fn write(&self, results: &Path, summary: &Path) -> Result<()> {
        write_jsonl_atomic(results, &self.rows)?;
        write_json_atomic(summary, &self.summary)
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub probe: ProbeModel,
    pub trace: Vec<LossReport>,
    pub metrics: Metrics,
}

/// Builds the bank for `config`, trains an identity-initialised probe on
/// `world` and evaluates it on the world's test split.
pub fn run_single(world: &World, config: &TrainConfig, seed: u64) -> Result<RunOutcome> {
    config.validate()?;
    let bank = build_toy_bank_with(world, config.desc_mode, &config.bank_options(), Execution::Sequential)?;
    let data = TrainData::from_world(world)?;
    let dim = world.spec.dim;
    let probe = ProbeModel::init(config.probe_init, dim, dim, seed)?;
    let (probe, trace) = train(&probe, &data, &bank, config, seed)?;
    let metrics = evaluate(&probe, &bank, &world.test, world.spec.n_base, config.temperature)?;
    Ok(RunOutcome { probe, trace, metrics })
}

/// Runs every (arm, seed) pair. The world for seed `s` is `spec` with its
/// seed replaced by `s`; every arm sees the same world for a given seed.
/// Runs execute in parallel under `exec` and are joined in (arm, seed)
/// order, so the output does not depend on scheduling.
pub fn run_ablation(
    spec: &WorldSpec,
    grid: &str,
    arms: &[Arm],
    seeds: &[u64],
    exec: Execution,
) -> Result<AblationResult> {
    if arms.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one arm and one seed".into()));
    }
    for arm in arms {
        arm.config.validate()?;
    }
    let worlds = exec.try_map(seeds, |&seed| generate_world(&WorldSpec { seed, ..spec.clone() }))?;
    let jobs: Vec<(usize, usize)> = (0..arms.len()).flat_map(|a| (0..seeds.len()).map(move |s| (a, s))).collect();
    let rows = exec.try_map(&jobs, |&(a, s)| {
        let arm = &arms[a];
        let world = &worlds[s];
        let out = run_single(world, &arm.config, seeds[s])?;
        Ok(AblationRow {
            artifact_version: ARTIFACT_VERSION.to_string(),
            grid: grid.to_string(),
            arm: arm.name.clone(),
            seed: seeds[s],
            world: world.spec.clone(),
            train: arm.config.clone(),
            metrics: out.metrics,
            loss: LossSummary::from_trace(&out.trace).expect("validated configs run at least one step"),
        })
    })?;
    let summary = summarize(grid, arms, seeds, &rows);
    Ok(AblationResult { rows, summary })
}

fn summarize(grid: &str, arms: &[Arm], seeds: &[u64], rows: &[AblationRow]) -> AblationSummary {
    let arms = arms
        .iter()
        .map(|arm| {
            let mine: Vec<&AblationRow> = rows.iter().filter(|r| r.arm == arm.name).collect();
            let stat = |f: fn(&AblationRow) -> f64| MeanStd::of(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            ArmSummary {
                arm: arm.name.clone(),
                seeds: mine.len(),
                acc_novel: stat(|r| r.metrics.acc_novel),
                acc_base: stat(|r| r.metrics.acc_base),
                acc_all: stat(|r| r.metrics.acc_all),
                final_total: stat(|r| r.loss.final_total),
            }
        })
        .collect();
    AblationSummary {
        artifact_version: ARTIFACT_VERSION.to_string(),
        grid: grid.to_string(),
        seeds: seeds.to_vec(),
        arms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> WorldSpec {
        WorldSpec {
            dim: 32,
            n_classes: 6,
            n_base: 3,
            k_states: 3,
            l_scenes: 3,
            det_per_class: 5,
            weak_per_class: 5,
            test_per_class: 10,
            ..Default::default()
        }
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            k: 3,
            l: 3,
            steps: 10,
            ..Default::default()
        }
    }

    #[test]
    fn grid_shapes() {
        let base = TrainConfig::default();
        assert_eq!(grid_arms(GridKind::Components, &base).len(), 4);
        for kind in [GridKind::K, GridKind::L, GridKind::Tau, GridKind::Aggregator] {
            assert_eq!(grid_arms(kind, &base).len(), 4);
        }
        let ks: Vec<usize> = grid_arms(GridKind::K, &base).iter().map(|a| a.config.k).collect();
        assert_eq!(ks, vec![3, 5, 7, 9]);
        let comps = grid_arms(GridKind::Components, &base);
        assert!(!comps[0].config.use_sesp && !comps[0].config.use_sapp);
        assert!(comps[3].config.use_sesp && comps[3].config.use_sapp);
        for g in GridKind::ALL {
            assert_eq!(g.as_str().parse::<GridKind>().unwrap(), g);
        }
        assert!("bogus".parse::<GridKind>().is_err());
    }

    #[test]
    fn components_grid_emits_arm_times_seed_rows() {
        let arms = grid_arms(GridKind::Components, &small_cfg());
        let seeds = seeds_from_root(0, 3);
        let r = run_ablation(&small_spec(), "components", &arms, &seeds, Execution::default()).unwrap();
        assert_eq!(r.rows.len(), 12);
        assert_eq!(r.summary.arms.len(), 4);
        assert!(r.summary.arms.iter().all(|a| a.seeds == 3));
        assert_eq!((r.rows[0].arm.as_str(), r.rows[0].seed), ("baseline", 0));
        assert_eq!((r.rows[5].arm.as_str(), r.rows[5].seed), ("+sesp", 2));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let arms = grid_arms(GridKind::Tau, &small_cfg());
        let seeds = seeds_from_root(4, 2);
        let a = run_ablation(&small_spec(), "tau", &arms, &seeds, Execution::Sequential).unwrap();
        let b = run_ablation(&small_spec(), "tau", &arms, &seeds, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disabled_components_match_their_switches() {
        let world = generate_world(&small_spec()).unwrap();
        let off = run_single(&world, &TrainConfig { use_sapp: false, ..small_cfg() }, 0).unwrap();
        let zero = run_single(&world, &TrainConfig { lambda: 0.0, ..small_cfg() }, 0).unwrap();
        assert_eq!(off, zero);
    }

    #[test]
    fn mean_std_matches_hand_values() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        assert!((m.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanStd::of(&[7.0]).std, 0.0);
        let p = pooled_std(&MeanStd { mean: 0.0, std: 3.0 }, &MeanStd { mean: 0.0, std: 4.0 });
        assert!((p - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let r = run_ablation(&small_spec(), "k", &[], &[0], Execution::Sequential);
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }
}
