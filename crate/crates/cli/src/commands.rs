use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gorqat::checkpoint::Checkpoint;
use gorqat::data::{ingest, Provenance};
use gorqat::dynamics::{basin_scan, log_grid, simulate, LossScript, Trajectory, Variant};
use gorqat::quant::{QuantSpec, RangeSource};
use gorqat::regularizer::GorState;
use gorqat::train::{self, static_sweep, write_metrics_csv, TrainError};
use gorqat::{Error, TeacherEnsemble};
use serde_json::{json, Value};

use crate::config::{BasinSection, RunConfig, VariantChoice};
use crate::plot::{heat_map, line_plot, Series};
use crate::{Common, DynamicsArgs, EvaluateArgs, InspectArgs, RunArgs};

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn run_dir(common: &Common, name: &str) -> Result<PathBuf> {
    let dir = match &common.out {
        Some(p) => p.clone(),
        None => std::env::var_os("GORQAT_OUT")
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join(name),
    };
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn jobs(common: &Common) -> usize {
    common
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

fn apply_overrides(cfg: &mut RunConfig, a: &RunArgs, sweeping: bool) -> Result<()> {
    let t = &mut cfg.train;
    if let Some(v) = a.common.seed {
        t.seed = v;
    }
    if let Some(v) = &a.mode {
        t.mode = v.clone();
    }
    if let Some(v) = a.wbits {
        t.wbits = v;
    }
    if let Some(v) = a.abits {
        t.abits = v;
    }
    if let Some(v) = a.eta_theta {
        t.eta_theta = v;
    }
    if let Some(v) = a.eta_alpha {
        t.eta_alpha = v;
    }
    if let Some(v) = a.tau {
        t.tau = v;
    }
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if !a.teachers.is_empty() {
        t.teachers = a.teachers.clone();
    }
    match (sweeping, a.alpha.as_slice()) {
        (_, []) => {}
        (true, grid) => cfg.sweep.grid = grid.to_vec(),
        (false, [alpha]) => t.alpha = Some(*alpha),
        (false, _) => return Err(config_error("train takes a single --alpha")),
    }
    Ok(())
}

fn load_teachers(paths: &[PathBuf]) -> Result<TeacherEnsemble> {
    let mut models = Vec::with_capacity(paths.len());
    for p in paths {
        if !p.is_file() {
            return Err(config_error(format!("teacher checkpoint {} not found", p.display())));
        }
        let ck = Checkpoint::load(p).with_context(|| format!("loading teacher {}", p.display()))?;
        models.push(ck.model);
    }
    Ok(TeacherEnsemble::new(models)?)
}

fn load_data(source: &Provenance) -> Result<gorqat::Dataset> {
    ingest(source).context("loading data")
}

pub fn train(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    apply_overrides(&mut cfg, &a, false)?;
    let tc = cfg.train.resolve()?;
    let teachers = match tc.mode.teachers() {
        0 => {
            if !cfg.train.teachers.is_empty() {
                log::warn!("{} does not use teachers; ignoring {} path(s)", tc.mode.name(), cfg.train.teachers.len());
            }
            None
        }
        _ if cfg.train.teachers.is_empty() => {
            return Err(config_error(format!("{} needs --teachers", tc.mode.name())))
        }
        _ => Some(load_teachers(&cfg.train.teachers)?),
    };
    let data = load_data(&cfg.data)?;
    let dir = run_dir(&a.common, &format!("{}-seed{}", tc.mode.name(), tc.seed))?;
    write(&dir, "config.toml", cfg.to_toml())?;

    let out = match train::train(&tc, &data, teachers.as_ref()) {
        Ok(out) => out,
        Err(e) => {
            if let TrainError::Diverged { last_good, .. } = &e {
                last_good
                    .save(&dir.join("last_good.ckpt"), None)
                    .context("saving last good state")?;
            }
            return Err(e.into());
        }
    };
    let mut csv = Vec::new();
    write_metrics_csv(&mut csv, &out.metrics)?;
    write(&dir, "metrics.csv", csv)?;
    let summary = serde_json::to_value(&out.summary)?;
    write(&dir, "summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    out.checkpoint()
        .save(&dir.join("model.ckpt"), Some(&summary))
        .context("saving checkpoint")?;

    if a.common.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        let s = &out.summary;
        println!(
            "{} seed {}: test {:.2}% train {:.2}% after {} steps, scalars ({:.4}, {:.4})",
            s.mode,
            s.seed,
            100.0 * s.test_acc,
            100.0 * s.train_acc,
            s.steps,
            s.alpha_task,
            s.alpha_kd
        );
        if let Some(fp) = s.fp_test_acc {
            println!("full precision before quantization: {:.2}%", 100.0 * fp);
        }
        println!("run directory: {}", dir.display());
    }
    Ok(())
}

pub fn sweep(a: RunArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    apply_overrides(&mut cfg, &a, true)?;
    // every arm sets its own mode
    cfg.train.mode = "qat_kd_gor".into();
    cfg.train.alpha = None;
    let base = cfg.train.resolve()?;
    if cfg.train.teachers.len() != 1 {
        return Err(config_error(format!(
            "sweep needs exactly one teacher, got {}",
            cfg.train.teachers.len()
        )));
    }
    if cfg.sweep.seeds == 0 {
        return Err(config_error("sweep.seeds must be at least 1"));
    }
    let teacher = load_teachers(&cfg.train.teachers)?;
    let data = load_data(&cfg.data)?;
    let dir = run_dir(&a.common, &format!("sweep-seed{}", base.seed))?;
    write(&dir, "config.toml", cfg.to_toml())?;

    let seeds: Vec<u64> = (0..cfg.sweep.seeds as u64).map(|i| base.seed + i).collect();
    let report = static_sweep(&base, &data, &teacher, &cfg.sweep.grid, &seeds, cfg.sweep.include_gor, jobs(&a.common))?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write(&dir, "sweep.csv", csv)?;
    let table = report.render();
    write(&dir, "sweep.txt", &table)?;

    let arms: Vec<Value> = report
        .arms
        .iter()
        .map(|arm| json!({"arm": arm.label, "alpha": arm.alpha, "mean_test_acc": arm.mean(), "std": arm.std(), "test_acc": arm.accs}))
        .collect();
    let best = report.best_static();
    let gap = match (report.arm("gor"), best) {
        (Some(g), Some(b)) => Some(100.0 * (g.mean() - b.mean())),
        _ => None,
    };
    let summary = json!({
        "seeds": seeds,
        "arms": arms,
        "best_static": best.map(|b| b.label.clone()),
        "learnable_minus_best_static_pp": gap,
    });
    write(&dir, "summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    if a.common.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{table}");
        if let Some(gap) = gap {
            println!("learnable minus best static: {gap:+.2} pp");
        }
        println!("run directory: {}", dir.display());
    }
    Ok(())
}

fn trajectory_summary(t: &Trajectory, script: &LossScript) -> Value {
    let last = t.last();
    match t.variant {
        Variant::Gor => {
            let expected = match script {
                LossScript::Constant { loss_task, loss_kd } if *loss_kd > 0.0 => Some((loss_task / loss_kd).sqrt()),
                _ => None,
            };
            json!({
                "variant": "gor",
                "steps": t.points.len(),
                "alpha_task": last.alpha_task,
                "alpha_kd": last.alpha_kd,
                "ratio_kd_over_task": t.final_ratio(),
                "expected_ratio": expected,
                "eq_residual": last.eq_residual,
                "clipped": t.any_clipped(),
            })
        }
        Variant::SingleScalar => json!({
            "variant": "single_scalar",
            "steps": t.points.len(),
            "beta": last.alpha_kd,
            "clipped": t.any_clipped(),
            "strictly_increasing": t.points.windows(2).all(|w| w[1].alpha_kd > w[0].alpha_kd),
            "strictly_decreasing": t.points.windows(2).all(|w| w[1].alpha_kd < w[0].alpha_kd),
        }),
    }
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Gor => "gor",
        Variant::SingleScalar => "single_scalar",
    }
}

pub fn dynamics(a: DynamicsArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    let d = &mut cfg.dynamics;
    if let Some(v) = a.eta_alpha {
        d.eta_alpha = v;
    }
    if let Some(v) = a.steps {
        d.steps = v;
    }
    if let Some(v) = &a.variant {
        d.variant = match v.as_str() {
            "gor" => VariantChoice::Gor,
            "single_scalar" => VariantChoice::SingleScalar,
            "both" => VariantChoice::Both,
            other => return Err(config_error(format!("unknown variant {other:?}"))),
        };
    }
    if let (Some(s), LossScript::Noisy { seed, .. }) = (a.common.seed, &mut d.script) {
        *seed = s;
    }
    if a.basin && d.basin.is_none() {
        d.basin = Some(BasinSection::default());
    }
    if d.steps == 0 {
        return Err(config_error("dynamics.steps must be at least 1"));
    }
    d.script.validate().map_err(|e| config_error(e.to_string()))?;
    let d = cfg.dynamics.clone();
    let init = GorState::new(d.eta_alpha).with_alphas(d.alpha_task, d.alpha_kd);
    init.validate().map_err(|e| config_error(e.to_string()))?;
    let dir = run_dir(&a.common, "dynamics")?;
    write(&dir, "config.toml", cfg.to_toml())?;

    let mut runs = Vec::new();
    for variant in d.variant.variants() {
        let t = simulate(&init, &d.script, d.steps, variant)?;
        let name = variant_name(variant);
        let mut csv = Vec::new();
        t.write_csv(&mut csv)?;
        write(&dir, &format!("trajectory_{name}.csv"), csv)?;
        if a.plot {
            let steps = |f: &dyn Fn(&gorqat::dynamics::TrajectoryPoint) -> Option<f64>| -> Vec<(f64, f64)> {
                t.points.iter().filter_map(|p| f(p).map(|v| (p.step as f64, v))).collect()
            };
            let series = match variant {
                Variant::Gor => vec![
                    Series { label: "alpha_task", points: steps(&|p| p.alpha_task) },
                    Series { label: "alpha_kd", points: steps(&|p| Some(p.alpha_kd)) },
                ],
                Variant::SingleScalar => vec![Series { label: "beta", points: steps(&|p| Some(p.alpha_kd)) }],
            };
            write(&dir, &format!("trajectory_{name}.svg"), line_plot(&format!("{name} scalars"), "step", &series))?;
        }
        runs.push(trajectory_summary(&t, &d.script));
    }

    let mut basin = Value::Null;
    if let Some(b) = &d.basin {
        let axis = log_grid(b.lo, b.hi, b.points).map_err(|e| config_error(e.to_string()))?;
        let scan = basin_scan(&axis, &axis, d.eta_alpha, &d.script, d.steps, jobs(&a.common))?;
        let mut csv = Vec::new();
        scan.write_csv(&mut csv)?;
        write(&dir, "basin.csv", csv)?;
        if a.plot {
            let residuals: Vec<f64> = scan.cells.iter().map(|c| c.residual).collect();
            write(&dir, "basin.svg", heat_map("final equilibrium residual", &axis, &axis, &residuals))?;
        }
        basin = json!({
            "cells": scan.cells.len(),
            "tolerance": b.tolerance,
            "fraction_within_tolerance": scan.fraction_within(b.tolerance),
        });
    }
    let summary = json!({"trajectories": runs, "basin": basin});
    write(&dir, "summary.json", serde_json::to_string_pretty(&summary)? + "\n")?;
    if a.common.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        for r in &runs {
            match r["variant"].as_str() {
                Some("gor") => println!(
                    "gor: scalars ({:.6}, {:.6}), ratio {:.6}, residual {:.3e}",
                    r["alpha_task"].as_f64().unwrap_or(f64::NAN),
                    r["alpha_kd"].as_f64().unwrap_or(f64::NAN),
                    r["ratio_kd_over_task"].as_f64().unwrap_or(f64::NAN),
                    r["eq_residual"].as_f64().unwrap_or(f64::NAN),
                ),
                _ => println!(
                    "single_scalar: beta {:.6}, clipped {}",
                    r["beta"].as_f64().unwrap_or(f64::NAN),
                    r["clipped"]
                ),
            }
        }
        if let Some(f) = summary["basin"]["fraction_within_tolerance"].as_f64() {
            println!("basin: {:.1}% of starts within tolerance", 100.0 * f);
        }
        println!("run directory: {}", dir.display());
    }
    Ok(())
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let data = load_data(&cfg.data)?;
    let plan = ck.quant.as_ref();
    let train_acc = train::evaluate(&ck.model, &data.train, plan)?;
    let test_acc = train::evaluate(&ck.model, &data.test, plan)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({"train_acc": train_acc, "test_acc": test_acc, "quantized": plan.is_some_and(|p| !p.is_pass_through())}))?
        );
    } else {
        println!("train {:.2}%  test {:.2}%", 100.0 * train_acc, 100.0 * test_acc);
    }
    Ok(())
}

fn spec_json(s: &QuantSpec) -> Value {
    let source = match s.range_source {
        RangeSource::PerTensorMinMax => "per_tensor_min_max".to_string(),
        RangeSource::RunningMinMax { momentum } => format!("running_min_max({momentum})"),
    };
    json!({
        "bits": s.bits,
        "scale": s.scale(),
        "x_min": s.x_min,
        "x_max": s.x_max,
        "range_source": source,
        "observed": s.observed,
    })
}

pub fn inspect(a: InspectArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint).with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let m = &ck.model;
    let layers: Vec<Value> = m
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let q = ck.quant.as_ref();
            json!({
                "name": l.name,
                "in": l.in_dim(),
                "out": l.out_dim(),
                "activation": l.activation,
                "weight_quant": q.and_then(|p| p.weights[i].as_ref()).map(spec_json),
                "input_quant": q.and_then(|p| p.activations[i].as_ref()).map(spec_json),
            })
        })
        .collect();
    let report = json!({
        "role": m.role,
        "frozen": m.frozen,
        "params": m.param_count(),
        "layers": layers,
        "scalars": ck.gor.map(|g| json!({
            "alpha_task": g.alpha_task,
            "alpha_kd": g.alpha_kd,
            "lr": g.lr,
            "clip_floor": g.clip_floor,
            "steps": g.step_count,
        })),
    });
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
        return Ok(());
    }
    println!(
        "{:?} model, {} layers, {} parameters{}",
        m.role,
        m.layers.len(),
        m.param_count(),
        if m.frozen { ", frozen" } else { "" }
    );
    for l in &layers {
        println!(
            "  {:<6} {:>4} -> {:<4} {}",
            l["name"].as_str().unwrap_or("?"),
            l["in"],
            l["out"],
            l["activation"].as_str().unwrap_or("?")
        );
        for key in ["weight_quant", "input_quant"] {
            let q = &l[key];
            if q.is_null() {
                continue;
            }
            println!(
                "         {:<12} n={} s={:.6} range [{:.6}, {:.6}] {}",
                key,
                q["bits"],
                q["scale"].as_f64().unwrap_or(f64::NAN),
                q["x_min"].as_f64().unwrap_or(f64::NAN),
                q["x_max"].as_f64().unwrap_or(f64::NAN),
                q["range_source"].as_str().unwrap_or("")
            );
        }
    }
    match ck.gor {
        Some(g) => println!(
            "scalars: alpha_task={} alpha_kd={} lr={} after {} steps",
            g.alpha_task, g.alpha_kd, g.lr, g.step_count
        ),
        None => println!("scalars: none"),
    }
    Ok(())
}
