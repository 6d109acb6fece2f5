//! Paired treatment/control experiments and average treatment effects.
//!
//! Both arms train on the same scenario, one with risk-prone background traffic. Each
//! trained agent is then scored on the same seeded perturbed and regular test worlds.
//! An episode's score is its return divided by the full-episode step count, with steps
//! skipped by arriving early counted as full reward, so scores lie in `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{greedy_action, train, TrainConfig, TrainOutcome};
use crate::env::{Cause, DrivingEnv, EnvConfig};
use crate::error::{Error, Result};
use crate::neural::NetworkParams;
use crate::road::{apply_treatment, ScenarioConfig, Task, TrafficLevel};
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Treatment,
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSpec {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub arm: Arm,
}

impl ArmSpec {
    /// Treatment and control arms built from one control scenario.
    pub fn pair(control: &ScenarioConfig, train: &TrainConfig) -> (ArmSpec, ArmSpec) {
        let control = ScenarioConfig {
            treatment: false,
            ..control.clone()
        };
        (
            ArmSpec {
                scenario: apply_treatment(&control),
                train: train.clone(),
                arm: Arm::Treatment,
            },
            ArmSpec {
                scenario: control,
                train: train.clone(),
                arm: Arm::Control,
            },
        )
    }
}

/// What two arms may differ in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    /// Only the treatment flag of the scenario.
    Treatment,
    /// Two control arms that differ only in the training seed.
    Null,
}

/// Rejects arm pairs that differ in anything besides what `pairing` allows.
pub fn check_comparable(a: &ArmSpec, b: &ArmSpec, pairing: Pairing) -> Result<()> {
    let fail = |m: String| Err(Error::Comparability(m));
    match pairing {
        Pairing::Treatment => {
            if a.arm != Arm::Treatment || b.arm != Arm::Control {
                return fail("expected a treatment arm followed by a control arm".into());
            }
            if !a.scenario.treatment || b.scenario.treatment {
                return fail("treatment flags must be set on the treatment arm only".into());
            }
            if a.train != b.train {
                return fail("training configurations differ between arms".into());
            }
        }
        Pairing::Null => {
            if a.arm != Arm::Control
                || b.arm != Arm::Control
                || a.scenario.treatment
                || b.scenario.treatment
            {
                return fail("null experiments compare two control arms".into());
            }
            let same_but_seed = TrainConfig {
                seed: b.train.seed,
                ..a.train.clone()
            };
            if same_but_seed != b.train {
                return fail("null arms may differ only in the training seed".into());
            }
        }
    }
    let a_cmp = ScenarioConfig {
        treatment: false,
        ..a.scenario.clone()
    };
    if let Some(field) = first_difference(&a_cmp, &b.scenario) {
        return fail(format!("scenarios differ in `{field}`"));
    }
    Ok(())
}

fn first_difference(a: &ScenarioConfig, b: &ScenarioConfig) -> Option<String> {
    let left = serde_json::to_value(a).ok()?;
    let right = serde_json::to_value(b).ok()?;
    let (l, r) = (left.as_object()?, right.as_object()?);
    l.iter()
        .find(|(k, v)| r.get(*k) != Some(v))
        .map(|(k, _)| k.clone())
}

/// Per-seed episode scores: rows are arms, columns the test environment type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMatrix {
    pub seeds: Vec<u64>,
    pub treatment_perturbed: Vec<f64>,
    pub treatment_regular: Vec<f64>,
    pub control_perturbed: Vec<f64>,
    pub control_regular: Vec<f64>,
}

impl EvalMatrix {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.seeds.len();
        let cols = [
            &self.treatment_perturbed,
            &self.treatment_regular,
            &self.control_perturbed,
            &self.control_regular,
        ];
        if n == 0 || cols.iter().any(|c| c.len() != n) {
            return Err(Error::Contract(format!(
                "evaluation vectors must all have length {n} > 0, got {:?}",
                cols.map(|c| c.len())
            )));
        }
        if cols.iter().any(|c| c.iter().any(|x| !x.is_finite())) {
            return Err(Error::Contract("non-finite evaluation score".into()));
        }
        Ok(())
    }

    /// Stacks replicate matrices seed-wise.
    pub fn concat(parts: &[EvalMatrix]) -> EvalMatrix {
        let cat = |f: fn(&EvalMatrix) -> &Vec<f64>| {
            parts.iter().flat_map(|m| f(m).iter().copied()).collect()
        };
        EvalMatrix {
            seeds: parts.iter().flat_map(|m| m.seeds.iter().copied()).collect(),
            treatment_perturbed: cat(|m| &m.treatment_perturbed),
            treatment_regular: cat(|m| &m.treatment_regular),
            control_perturbed: cat(|m| &m.control_perturbed),
            control_regular: cat(|m| &m.control_regular),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteRecord {
    pub task: Task,
    pub traffic_level: String,
    /// `treatment/control`, or `control/control` for null experiments.
    pub arms: String,
    pub ate: f64,
    pub ate_percent: f64,
    pub std_error: f64,
    pub n: usize,
    pub mean_t_perturbed: f64,
    pub mean_t_regular: f64,
    pub mean_c_perturbed: f64,
    pub mean_c_regular: f64,
}

impl AteRecord {
    /// Whether the effect lies within `k` standard errors of zero.
    pub fn within(&self, k: f64) -> bool {
        self.ate.abs() <= k * self.std_error
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pooled treatment mean minus pooled control mean, with a standard error from the
/// per-seed paired differences.
pub fn compute_ate(task: Task, traffic_level: &str, m: &EvalMatrix) -> Result<AteRecord> {
    m.validate()?;
    let n = m.len();
    let diffs: Vec<f64> = (0..n)
        .map(|i| {
            0.5 * (m.treatment_perturbed[i] + m.treatment_regular[i])
                - 0.5 * (m.control_perturbed[i] + m.control_regular[i])
        })
        .collect();
    let (tp, tr, cp, cr) = (
        mean(&m.treatment_perturbed),
        mean(&m.treatment_regular),
        mean(&m.control_perturbed),
        mean(&m.control_regular),
    );
    let ate = 0.5 * (tp + tr) - 0.5 * (cp + cr);
    let std_error = if n > 1 {
        let d_mean = mean(&diffs);
        let var = diffs.iter().map(|d| (d - d_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    Ok(AteRecord {
        task,
        traffic_level: traffic_level.to_string(),
        arms: "treatment/control".into(),
        ate,
        ate_percent: 100.0 * ate,
        std_error,
        n,
        mean_t_perturbed: tp,
        mean_t_regular: tr,
        mean_c_perturbed: cp,
        mean_c_regular: cr,
    })
}

/// Greedy episode score in `[0, 1]`.
pub fn episode_score(
    params: &NetworkParams,
    scenario: &ScenarioConfig,
    env_cfg: &EnvConfig,
    seed: u64,
) -> Result<f64> {
    let (mut env, mut obs) = DrivingEnv::reset(scenario, env_cfg, seed)?;
    let max_steps = env.max_steps().max(1);
    let mut total = 0.0;
    loop {
        let out = env.step(crate::env::Action::from_index(greedy_action(
            &params.q_values(obs.as_slice())?,
        ))?)?;
        total += out.reward;
        if out.done {
            if out.cause == Some(Cause::Arrived) {
                total += max_steps.saturating_sub(out.info.step) as f64;
            }
            return Ok((total / max_steps as f64).clamp(0.0, 1.0));
        }
        obs = out.observation;
    }
}

/// Scores on `seeds` in the perturbed and the regular version of `control`.
pub fn score_both(
    params: &NetworkParams,
    control: &ScenarioConfig,
    env_cfg: &EnvConfig,
    seeds: &[u64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let regular = ScenarioConfig {
        treatment: false,
        ..control.clone()
    };
    let perturbed = apply_treatment(&regular);
    let run = |s: &ScenarioConfig| {
        seeds
            .iter()
            .map(|&seed| episode_score(params, s, env_cfg, seed))
            .collect::<Result<Vec<_>>>()
    };
    Ok((run(&perturbed)?, run(&regular)?))
}

/// Test-environment seeds shared by both arms.
pub fn evaluation_seeds(scenario_seed: u64, eval_n: usize) -> Vec<u64> {
    let base = seeding::mix(scenario_seed, 0xE7A1);
    (0..eval_n as u64).map(|i| base.wrapping_add(i)).collect()
}

#[derive(Debug, Clone)]
pub struct PairOutcome {
    pub matrix: EvalMatrix,
    pub first: TrainOutcome,
    pub second: TrainOutcome,
}

/// Trains both arms and scores each on the shared perturbed and regular test seeds.
pub fn run_pair(
    a: &ArmSpec,
    b: &ArmSpec,
    pairing: Pairing,
    env_cfg: &EnvConfig,
    eval_n: usize,
) -> Result<PairOutcome> {
    check_comparable(a, b, pairing)?;
    if eval_n == 0 {
        return Err(Error::Config("eval_n must be at least 1".into()));
    }
    let first = train(&a.scenario, env_cfg, &a.train)?;
    let second = train(&b.scenario, env_cfg, &b.train)?;
    let seeds = evaluation_seeds(b.scenario.seed, eval_n);
    let matrix = score_pair(
        first.params(),
        second.params(),
        &b.scenario,
        env_cfg,
        &seeds,
    )?;
    Ok(PairOutcome {
        matrix,
        first,
        second,
    })
}

/// Evaluation matrix for two already trained policies.
pub fn score_pair(
    first: &NetworkParams,
    second: &NetworkParams,
    control: &ScenarioConfig,
    env_cfg: &EnvConfig,
    seeds: &[u64],
) -> Result<EvalMatrix> {
    let (tp, tr) = score_both(first, control, env_cfg, seeds)?;
    let (cp, cr) = score_both(second, control, env_cfg, seeds)?;
    Ok(EvalMatrix {
        seeds: seeds.to_vec(),
        treatment_perturbed: tp,
        treatment_regular: tr,
        control_perturbed: cp,
        control_regular: cr,
    })
}

/// Experiment-wide knobs shared by ATE runs and sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Test seeds per environment type.
    pub eval_n: usize,
    /// Independent training-seed pairs per traffic level.
    pub replicates: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            eval_n: 100,
            replicates: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_n == 0 {
            return Err(Error::Config("eval_n must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one traffic level: the pooled effect, replicate effects and the raw scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResult {
    pub record: AteRecord,
    pub replicates: Vec<AteRecord>,
    pub matrix: EvalMatrix,
}

fn replicate_seed(train_seed: u64, r: usize) -> u64 {
    if r == 0 {
        train_seed
    } else {
        seeding::mix(train_seed, r as u64)
    }
}

/// Runs every replicate pair for one control scenario.
pub fn run_level(
    control: &ScenarioConfig,
    tc: &TrainConfig,
    env_cfg: &EnvConfig,
    exp: &ExperimentConfig,
) -> Result<(LevelResult, Vec<PairOutcome>)> {
    let (t, c) = ArmSpec::pair(control, tc);
    run_replicates(&t, &c, env_cfg, exp)
}

/// Replicates a treatment/control pair over derived training seeds and pools the scores.
pub fn run_replicates(
    t: &ArmSpec,
    c: &ArmSpec,
    env_cfg: &EnvConfig,
    exp: &ExperimentConfig,
) -> Result<(LevelResult, Vec<PairOutcome>)> {
    exp.validate()?;
    check_comparable(t, c, Pairing::Treatment)?;
    let task = c.scenario.task;
    let level = c.scenario.level().to_string();
    let mut pairs = Vec::with_capacity(exp.replicates);
    let mut replicates = Vec::with_capacity(exp.replicates);
    for r in 0..exp.replicates {
        let reseed = |a: &ArmSpec| ArmSpec {
            train: TrainConfig {
                seed: replicate_seed(a.train.seed, r),
                ..a.train.clone()
            },
            ..a.clone()
        };
        let out = run_pair(
            &reseed(t),
            &reseed(c),
            Pairing::Treatment,
            env_cfg,
            exp.eval_n,
        )?;
        replicates.push(compute_ate(task, &level, &out.matrix)?);
        pairs.push(out);
    }
    let matrices: Vec<EvalMatrix> = pairs.iter().map(|p| p.matrix.clone()).collect();
    let matrix = EvalMatrix::concat(&matrices);
    let record = compute_ate(task, &level, &matrix)?;
    Ok((
        LevelResult {
            record,
            replicates,
            matrix,
        },
        pairs,
    ))
}

/// One fresh pair of agents per traffic level; results keep level order for any `jobs`.
pub fn density_sweep(
    base: &ScenarioConfig,
    levels: &[TrafficLevel],
    tc: &TrainConfig,
    env_cfg: &EnvConfig,
    exp: &ExperimentConfig,
    jobs: usize,
    on_level: impl Fn(usize, &LevelResult, &[PairOutcome]) -> Result<()> + Sync,
) -> Result<Vec<LevelResult>> {
    if levels.is_empty() {
        return Err(Error::Config(
            "sweep needs at least one traffic level".into(),
        ));
    }
    let scenarios: Vec<ScenarioConfig> = levels
        .iter()
        .map(|l| {
            let s = base.clone().with_level(l);
            s.validate().map(|_| s)
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        scenarios
            .par_iter()
            .enumerate()
            .map(|(i, s)| {
                let (r, pairs) = run_level(s, tc, env_cfg, exp)?;
                on_level(i, &r, &pairs)?;
                Ok(r)
            })
            .collect()
    })
}

/// Two independently trained control agents; the effect should vanish up to noise.
pub fn null_experiment(
    control: &ScenarioConfig,
    tc: &TrainConfig,
    env_cfg: &EnvConfig,
    eval_n: usize,
) -> Result<AteRecord> {
    let control = ScenarioConfig {
        treatment: false,
        ..control.clone()
    };
    let a = ArmSpec {
        scenario: control.clone(),
        train: tc.clone(),
        arm: Arm::Control,
    };
    let b = ArmSpec {
        train: TrainConfig {
            seed: seeding::mix(tc.seed, 0x4E55),
            ..tc.clone()
        },
        ..a.clone()
    };
    let out = run_pair(&a, &b, Pairing::Null, env_cfg, eval_n)?;
    null_record(&control, &out.matrix)
}

/// Labels an evaluation of two control policies.
pub fn null_record(control: &ScenarioConfig, m: &EvalMatrix) -> Result<AteRecord> {
    let mut rec = compute_ate(control.task, &control.level().to_string(), m)?;
    rec.arms = "control/control".into();
    Ok(rec)
}

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_JSON: &str = "results.json";

const CSV_HEADER: [&str; 11] = [
    "task",
    "traffic_level",
    "ate",
    "ate_percent",
    "std_error",
    "n",
    "mean_T_perturbed",
    "mean_T_regular",
    "mean_C_perturbed",
    "mean_C_regular",
    "arms",
];

/// Scientific notation with 17 significant digits.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `results.csv` (one row per level) and `results.json` (the full results) into `dir`.
pub fn write_results(results: &[LevelResult], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if results.is_empty() {
        return Err(Error::Contract("no results to write".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(RESULTS_CSV);
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(CSV_HEADER)?;
    for r in results {
        let a = &r.record;
        w.write_record([
            a.task.to_string(),
            a.traffic_level.clone(),
            format_float(a.ate),
            format_float(a.ate_percent),
            format_float(a.std_error),
            a.n.to_string(),
            format_float(a.mean_t_perturbed),
            format_float(a.mean_t_regular),
            format_float(a.mean_c_perturbed),
            format_float(a.mean_c_regular),
            a.arms.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join(RESULTS_JSON);
    let text = serde_json::to_string_pretty(results)?;
    fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Reads the scalar columns of a results CSV back.
pub fn read_results_csv(path: &Path) -> Result<Vec<AteRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for row in r.records() {
        let row = row?;
        let f = |i: usize| -> Result<f64> {
            row[i].parse().map_err(|_| {
                Error::Config(format!("bad number {:?} in {}", &row[i], path.display()))
            })
        };
        out.push(AteRecord {
            task: row[0].parse()?,
            traffic_level: row[1].to_string(),
            ate: f(2)?,
            ate_percent: f(3)?,
            std_error: f(4)?,
            n: row[5]
                .parse()
                .map_err(|_| Error::Config(format!("bad count {:?}", &row[5])))?,
            mean_t_perturbed: f(6)?,
            mean_t_regular: f(7)?,
            mean_c_perturbed: f(8)?,
            mean_c_regular: f(9)?,
            arms: row[10].to_string(),
        });
    }
    Ok(out)
}
