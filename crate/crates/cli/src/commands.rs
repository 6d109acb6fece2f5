use std::fs;
use std::path::{Path, PathBuf};

use riskdrive::agent::{greedy_action, train_with_progress, TrainOutcome};
use riskdrive::config::SEED_ENV_VAR;
use riskdrive::env::StepOutcome;
use riskdrive::experiment::{self, ArmSpec, LevelResult, PairOutcome};
use riskdrive::neural::{load_checkpoint, save_checkpoint};
use riskdrive::road::{apply_treatment, trace, ScenarioConfig};
use riskdrive::{Action, DrivingEnv, RunConfig};

use crate::{AteArgs, Common, EvaluateArgs, Failure, SweepArgs, TrainArgs, ValidateArgs};

pub const INCOMPLETE: &str = "INCOMPLETE";

type Outcome = Result<(), Failure>;

fn usage(m: impl Into<String>) -> Failure {
    Failure::Usage(m.into())
}

fn runtime(m: impl Into<String>) -> Failure {
    Failure::Runtime(m.into())
}

/// Loads the configuration, applies overrides and the seed precedence, then validates.
fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path).map_err(|e| usage(e.to_string()))?,
        None => {
            let task = common
                .task
                .ok_or_else(|| usage("either --config or --task is required"))?;
            RunConfig::new(ScenarioConfig::new(task))
        }
    };
    if let Some(task) = common.task {
        if task != cfg.scenario.task {
            cfg.scenario.task = task;
            cfg.levels = None;
        }
    }
    let env = std::env::var(SEED_ENV_VAR).ok();
    cfg.resolve_seed(common.seed, env.as_deref())?;
    Ok(cfg)
}

fn checked(cfg: RunConfig) -> Result<RunConfig, Failure> {
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig, fallback: &str) -> PathBuf {
    flag.clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(fallback))
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn save_run(dir: &Path, run: &TrainOutcome) -> Outcome {
    create_dir(dir)?;
    run.curve.save_csv(&dir.join("curve.csv"))?;
    save_checkpoint(&dir.join("checkpoint.json"), &run.learner.checkpoint())?;
    Ok(())
}

fn save_pairs(dir: &Path, pairs: &[PairOutcome]) -> Outcome {
    for (r, p) in pairs.iter().enumerate() {
        let rep = dir.join(format!("replicate_{r}"));
        save_run(&rep.join("treatment"), &p.first)?;
        save_run(&rep.join("control"), &p.second)?;
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Outcome {
    let cfg = checked(load(&args.common)?)?;
    let scenario = if args.treatment {
        apply_treatment(&cfg.scenario)
    } else {
        cfg.scenario.clone()
    };
    let env = cfg.env_config();
    let total = cfg.train.episodes;
    let run = train_with_progress(&scenario, &env, &cfg.train, |row| {
        if (row.episode + 1) % 100 == 0 {
            eprintln!("episode {}/{total}: return {:.3}", row.episode + 1, row.ret);
        }
    })?;
    let dir = out_dir(&args.out, &cfg, "runs/train");
    save_run(&dir, &run)?;
    match run.curve.tail_mean(50) {
        Some(m) => println!("trained {total} episodes; mean return of the last 50: {m:.4}"),
        None => println!("trained {total} episodes"),
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn evaluate(args: EvaluateArgs) -> Outcome {
    let cfg = checked(load(&args.common)?)?;
    if args.episodes == 0 {
        return Err(usage("--episodes must be at least 1"));
    }
    let ckpt = load_checkpoint(&args.checkpoint).map_err(|e| usage(e.to_string()))?;
    let scenario = if args.treatment {
        apply_treatment(&cfg.scenario)
    } else {
        cfg.scenario.clone()
    };
    let env_cfg = cfg.env_config();
    if ckpt.params.spec.input_dim != env_cfg.observation_len() {
        return Err(usage(format!(
            "checkpoint expects {} inputs but the environment produces {}",
            ckpt.params.spec.input_dim,
            env_cfg.observation_len()
        )));
    }
    let mut rows = String::from("episode,seed,return,steps,cause\n");
    let mut sum = 0.0;
    for i in 0..args.episodes {
        let seed = scenario.seed.wrapping_add(i as u64);
        let (mut env, mut obs) = DrivingEnv::reset(&scenario, &env_cfg, seed)?;
        if i == 0 && args.trace.is_some() {
            env.enable_trace();
        }
        let mut ret = 0.0;
        let last: StepOutcome = loop {
            let a = Action::from_index(greedy_action(&ckpt.params.q_values(obs.as_slice())?))?;
            let out = env.step(a)?;
            ret += out.reward;
            if out.done {
                break out;
            }
            obs = out.observation;
        };
        if i == 0 {
            if let Some(path) = &args.trace {
                let mut buf = Vec::new();
                trace::write_records(&mut buf, &env.take_trace())
                    .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
                fs::write(path, buf).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            }
        }
        sum += ret;
        let cause = last.cause.map(|c| c.to_string()).unwrap_or_default();
        rows.push_str(&format!(
            "{i},{seed},{},{},{cause}\n",
            experiment::format_float(ret),
            last.info.step
        ));
    }
    let dir = out_dir(&args.out, &cfg, "runs/evaluate");
    create_dir(&dir)?;
    write_file(&dir.join("evaluation.csv"), &rows)?;
    println!(
        "mean return over {} episodes: {:.4}",
        args.episodes,
        sum / args.episodes as f64
    );
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn ate(args: AteArgs) -> Outcome {
    let mut cfg = load(&args.common)?;
    if let Some(n) = args.level {
        cfg.scenario.vehicle_count = n;
        cfg.scenario.opposite_count = None;
    }
    if let Some(n) = args.eval_n {
        if n == 0 {
            return Err(usage("--eval-n must be at least 1"));
        }
        cfg.experiment.eval_n = n;
    }
    let cfg = checked(cfg)?;
    let (mut t, c) = ArmSpec::pair(&cfg.scenario, &cfg.train);
    if let Some(s) = &cfg.treatment_scenario {
        t.scenario = s.clone();
    }
    let (result, pairs) = experiment::run_replicates(&t, &c, &cfg.env_config(), &cfg.experiment)?;
    let dir = out_dir(&args.out, &cfg, "runs/ate");
    save_pairs(&dir, &pairs)?;
    experiment::write_results(std::slice::from_ref(&result), &dir)?;
    print_record(&result);
    println!("wrote {}", dir.display());
    Ok(())
}

fn print_record(r: &LevelResult) {
    let a = &r.record;
    println!(
        "{} level {}: ATE {:+.4} ({:+.2}%) ± {:.4} over n = {}",
        a.task, a.traffic_level, a.ate, a.ate_percent, a.std_error, a.n
    );
}

pub fn sweep(args: SweepArgs) -> Outcome {
    let mut cfg = load(&args.common)?;
    if let Some(j) = args.jobs {
        if j == 0 {
            return Err(usage("--jobs must be at least 1"));
        }
        cfg.jobs = j;
    }
    let cfg = checked(cfg)?;
    let dir = out_dir(&args.out, &cfg, "runs/sweep");
    create_dir(&dir)?;
    let sentinel = dir.join(INCOMPLETE);
    write_file(
        &sentinel,
        "sweep in progress or interrupted; results are partial\n",
    )?;
    let levels = cfg.sweep_levels();
    let results = experiment::density_sweep(
        &cfg.scenario,
        &levels,
        &cfg.train,
        &cfg.env_config(),
        &cfg.experiment,
        cfg.jobs,
        |i, result, pairs| {
            let level_dir = dir.join(format!("level_{i:02}"));
            save_pairs(&level_dir, pairs).map_err(|f| match f {
                Failure::Usage(m) | Failure::Runtime(m) => riskdrive::Error::Contract(m),
            })?;
            let text = serde_json::to_string_pretty(result)?;
            fs::write(level_dir.join("result.json"), text + "\n")
                .map_err(|e| riskdrive::Error::Contract(format!("{}: {e}", level_dir.display())))?;
            eprintln!("level {} done", result.record.traffic_level);
            Ok(())
        },
    )?;
    experiment::write_results(&results, &dir)?;
    fs::remove_file(&sentinel).map_err(|e| runtime(format!("{}: {e}", sentinel.display())))?;
    for r in &results {
        print_record(r);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

pub fn validate_config(args: ValidateArgs) -> Outcome {
    let cfg = RunConfig::load(&args.config).map_err(|e| usage(e.to_string()))?;
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if let Some(t) = &cfg.treatment_scenario {
        let (mut arm, control) = ArmSpec::pair(&cfg.scenario, &cfg.train);
        arm.scenario = t.clone();
        experiment::check_comparable(&arm, &control, experiment::Pairing::Treatment)
            .map_err(|e| usage(e.to_string()))?;
    }
    println!(
        "{}: valid {} configuration, {} sweep levels",
        args.config.display(),
        cfg.scenario.task,
        cfg.sweep_levels().len()
    );
    Ok(())
}
