//! Subcommand implementations.
//!
//! Every file this module writes goes through a temp-file-plus-rename, and
//! every stochastic draw comes from a per-sample counter-based substream, so
//! outputs are byte-identical across runs and across `EBRIDGE_THREADS`
//! settings. The one exception is wall-clock timing (the `wall_ms` CSV column
//! and log field), which is informational and excluded from the determinism
//! contract.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ebridge_core::checkpoint::{self, CheckpointMeta};
use ebridge_core::numcore::{Denoiser, EpsModel, SeededRng, Tensor};
use ebridge_core::solver::{consistency_sample, ode_sample, SampleSchedule, ScheduleKind};
use ebridge_core::tasks::{energy_distance, eval_metrics, gen_pairs, PairedSet, TaskSpec};
use ebridge_core::training::{train, TrainConfig};
use ebridge_core::verify::{run_verification, VerifyOptions};
use ebridge_core::{Error, Result};

use crate::config::{worker_threads, RunConfig, SamplerKind};
use crate::report::{fmt12, verification_report_json};

/// Salt separating restoration-noise substreams from dataset substreams.
const RESTORE_NOISE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;
/// Salt for the fixed start-point diagnostic draw in sweeps.
const SWEEP_DIAG_SALT: u64 = 0x5EED_0001;

pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub steps: Option<usize>,
    pub pretrain_steps: Option<usize>,
}

pub fn cmd_train(
    config_path: &Path,
    out_path: &Path,
    log_path: Option<&PathBuf>,
    ov: &TrainOverrides,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let task = cfg.task()?;
    let mut train_cfg: TrainConfig = cfg.train()?.clone();
    if let Some(seed) = ov.seed {
        train_cfg.seed = seed;
    }
    if let Some(steps) = ov.steps {
        train_cfg.steps = steps;
    }
    if let Some(p) = ov.pretrain_steps {
        train_cfg.pretrain_steps = p;
    }
    train_cfg.validate()?;
    task.validate()?;

    let data = gen_pairs(task)?;
    let mut log_file = match log_path {
        Some(p) => Some(std::fs::File::create(p)?),
        None => None,
    };
    let stdout = std::io::stdout();
    let net = train(&train_cfg, &data, |rec| {
        let line = serde_json::to_string(rec).expect("log record serializes");
        match log_file.as_mut() {
            Some(f) => {
                let _ = writeln!(f, "{line}");
            }
            None => {
                let _ = writeln!(stdout.lock(), "{line}");
            }
        }
    })?;
    let meta = CheckpointMeta {
        ema_decay: train_cfg.ema_decay,
        trained_steps: (train_cfg.pretrain_steps + train_cfg.steps) as u64,
        seed: train_cfg.seed,
    };
    checkpoint::save_atomic(out_path, &net, &meta)?;
    Ok(())
}

pub struct RestoreOverrides {
    pub nfe: Option<usize>,
    pub t0: Option<f64>,
    pub sampler: Option<SamplerKind>,
    pub seed: Option<u64>,
}

/// Restores every sample of the evaluation set and writes per-sample
/// predictions and metrics to CSV. Prints a one-line JSON summary with the
/// aggregate metrics and the function-evaluation count, which must equal the
/// requested budget.
pub fn cmd_restore(
    ckpt_path: &Path,
    config_path: &Path,
    out_path: &Path,
    ov: &RestoreOverrides,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let task = cfg.task()?;
    let restore = cfg.restore()?;
    let nfe = ov.nfe.unwrap_or(restore.nfe);
    let t0 = ov.t0.unwrap_or(restore.t0);
    let sampler = ov.sampler.unwrap_or(restore.sampler);
    let seed = ov.seed.unwrap_or(restore.eval_seed);
    if !(t0 > 0.0 && t0 <= 1.0) {
        return Err(Error::Config(format!("t0 = {t0} outside (0, 1]")));
    }
    if nfe == 0 {
        return Err(Error::Config("nfe must be >= 1".into()));
    }

    let (net, _meta) = checkpoint::load(ckpt_path)?;
    if let Some(train_cfg) = cfg.train.as_ref() {
        let (lo, hi) = train_cfg.t0_range;
        if t0 < lo || t0 > hi {
            eprintln!("warning: t0 = {t0} lies outside the trained horizon range ({lo}, {hi})");
        }
    }

    let eval = eval_set(task, restore.n_eval, seed)?;
    let schedule = match restore.schedule.as_str() {
        "uniform" => ScheduleKind::Uniform,
        "geometric" => ScheduleKind::Geometric,
        other => {
            return Err(Error::Config(format!(
                "unknown schedule {other:?} (expected uniform|geometric)"
            )))
        }
    };

    net.reset_evals();
    let preds = restore_all(&net, &eval, t0, nfe, sampler, schedule, seed)?;
    let total_evals = net.eval_count();
    let expected = (eval.len() * nfe) as u64;
    if total_evals != expected {
        return Err(Error::Numeric(format!(
            "evaluation counter {total_evals} does not match the requested budget {expected}"
        )));
    }

    let metrics = eval_metrics(&preds, &eval.clean)?;
    let mut csv = String::from("idx,mse,psnr");
    for d in 0..eval.clean[0].len() {
        csv.push_str(&format!(",pred_{d}"));
    }
    csv.push('\n');
    for (i, p) in preds.iter().enumerate() {
        let dim = p.len() as f64;
        let mse = p.sub(&eval.clean[i]).sq_norm() / dim;
        let psnr = if mse == 0.0 {
            f64::INFINITY
        } else {
            10.0 * (1.0 / mse).log10()
        };
        csv.push_str(&format!("{i},{},{}", fmt12(mse), fmt12(psnr)));
        for v in p.data() {
            csv.push_str(&format!(",{}", fmt12(*v)));
        }
        csv.push('\n');
    }
    checkpoint::write_atomic(out_path, csv.as_bytes())?;

    println!(
        "{{\"n_samples\":{},\"nfe_per_sample\":{},\"total_evals\":{},\"mse\":{},\"psnr\":{},\"energy_distance\":{}}}",
        eval.len(),
        nfe,
        total_evals,
        fmt12(metrics.mse),
        fmt12(metrics.psnr),
        fmt12(metrics.energy_distance)
    );
    Ok(())
}

/// Runs the proposition suite, writes the JSON report (propositions plus
/// per-family energy summaries), prints one line per proposition, and
/// returns whether everything passed.
pub fn cmd_verify(out_path: &Path, perturb_coeffs: f64, seed: u64) -> Result<bool> {
    let results = run_verification(&VerifyOptions {
        perturb_coeffs,
        seed,
    })?;
    let energy = ebridge_core::verify::family_energy_reports()?;
    checkpoint::write_atomic(
        out_path,
        verification_report_json(&results, &energy).as_bytes(),
    )?;
    let mut all = true;
    for r in &results {
        println!(
            "{} {} value={} reference={} tolerance={}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            fmt12(r.value),
            fmt12(r.reference),
            fmt12(r.tolerance)
        );
        all &= r.passed;
    }
    for e in &energy {
        println!(
            "{} energy_report_{:?} kinetic={} control={} jensen_gap={}",
            if e.passed { "PASS" } else { "FAIL" },
            e.kind,
            fmt12(e.kinetic_energy),
            fmt12(e.control_energy),
            fmt12(e.jensen_gap)
        );
        all &= e.passed;
    }
    Ok(all)
}

pub struct SweepOverrides {
    pub grid: Option<Vec<f64>>,
    pub nfe_list: Option<Vec<usize>>,
    pub seed: Option<u64>,
}

/// Horizon sweep: one CSV row per `(t0, nfe)` cell using the consistency
/// sampler, plus one stdout diagnostic line per horizon reporting the
/// distance between the restoration starting point and the observation at a
/// fixed noise draw.
pub fn cmd_sweep_t0(
    ckpt_path: &Path,
    config_path: &Path,
    out_path: &Path,
    ov: &SweepOverrides,
) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let task = cfg.task()?;
    let sweep = cfg.sweep()?;
    let grid = ov.grid.clone().unwrap_or_else(|| sweep.grid.clone());
    let nfe_list = ov
        .nfe_list
        .clone()
        .unwrap_or_else(|| sweep.nfe_list.clone());
    let seed = ov
        .seed
        .or_else(|| cfg.restore.as_ref().map(|r| r.eval_seed))
        .unwrap_or(777);
    if grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(Error::Config("sweep grid values must lie in (0, 1]".into()));
    }
    if nfe_list.contains(&0) {
        return Err(Error::Config("nfe values must be >= 1".into()));
    }

    let (net, _) = checkpoint::load(ckpt_path)?;
    let n_eval = cfg.restore.as_ref().map(|r| r.n_eval).unwrap_or(256);
    let eval = eval_set(task, n_eval, seed)?;

    let mut csv = String::from("t0,nfe,mse,psnr,energy_distance,wall_ms,seed\n");
    for &t0 in &grid {
        let mut diag_rng = SeededRng::substream(seed ^ SWEEP_DIAG_SALT, 0);
        let (start, _) =
            ebridge_core::trajectory::start_point(&eval.degraded[0], t0, &mut diag_rng)?;
        println!(
            "{{\"t0\":{},\"start_dist\":{}}}",
            fmt12(t0),
            fmt12(start.sub(&eval.degraded[0]).norm())
        );
        for &nfe in &nfe_list {
            let started = Instant::now();
            net.reset_evals();
            let preds = restore_all(
                &net,
                &eval,
                t0,
                nfe,
                SamplerKind::Consistency,
                ScheduleKind::Uniform,
                seed,
            )?;
            let wall_ms = started.elapsed().as_millis();
            let m = eval_metrics(&preds, &eval.clean)?;
            let ed = energy_distance(&preds, &eval.clean);
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt12(t0),
                nfe,
                fmt12(m.mse),
                fmt12(m.psnr),
                fmt12(ed),
                wall_ms,
                seed
            ));
        }
    }
    checkpoint::write_atomic(out_path, csv.as_bytes())?;
    Ok(())
}

/// Dumps the paired dataset as CSV with one clean and one degraded row per
/// sample.
pub fn cmd_gen_data(config_path: &Path, out_path: &Path) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let task = cfg.task()?;
    let data = gen_pairs(task)?;
    let dim = data.clean[0].len();
    let mut csv = String::from("idx,role");
    for d in 0..dim {
        csv.push_str(&format!(",v{d}"));
    }
    csv.push('\n');
    for i in 0..data.len() {
        for (role, t) in [("clean", &data.clean[i]), ("degraded", &data.degraded[i])] {
            csv.push_str(&format!("{i},{role}"));
            for v in t.data() {
                csv.push_str(&format!(",{}", fmt12(*v)));
            }
            csv.push('\n');
        }
    }
    checkpoint::write_atomic(out_path, csv.as_bytes())?;
    println!("wrote {} samples ({} rows)", data.len(), 2 * data.len());
    Ok(())
}

/// Evaluation set: the configured task with the sample count and seed of the
/// evaluation run.
fn eval_set(task: &TaskSpec, n_eval: usize, seed: u64) -> Result<PairedSet> {
    let mut spec = task.clone();
    spec.n_samples = n_eval;
    spec.seed = seed;
    gen_pairs(&spec)
}

/// Restores every sample, fanning out over at most `EBRIDGE_THREADS` workers.
/// Sample `i` always draws from substream `i` of the salted seed, so the
/// result is independent of the worker count.
fn restore_all(
    net: &Denoiser,
    eval: &PairedSet,
    t0: f64,
    nfe: usize,
    sampler: SamplerKind,
    schedule: ScheduleKind,
    seed: u64,
) -> Result<Vec<Tensor>> {
    let n = eval.len();
    let workers = worker_threads().min(n.max(1));
    let restore_one = |i: usize| -> Result<Tensor> {
        let mut rng = SeededRng::substream(seed ^ RESTORE_NOISE_SALT, i as u64);
        let y = &eval.degraded[i];
        match sampler {
            SamplerKind::Consistency => {
                let sched = SampleSchedule::new(schedule, t0, nfe)?;
                consistency_sample(net, y, t0, &sched, &mut rng)
            }
            SamplerKind::Ode => ode_sample(net, y, t0, nfe, &mut rng),
        }
    };

    if workers <= 1 {
        return (0..n).map(restore_one).collect();
    }

    let mut slots: Vec<Option<Result<Tensor>>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let restore_one = &restore_one;
            handles.push(scope.spawn(move || -> Vec<(usize, Result<Tensor>)> {
                (w..n)
                    .step_by(workers)
                    .map(|i| (i, restore_one(i)))
                    .collect()
            }));
        }
        for h in handles {
            for (i, r) in h.join().expect("restore worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every index restored"))
        .collect()
}
