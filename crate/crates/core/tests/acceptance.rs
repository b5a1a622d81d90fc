//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

mod common;

use std::time::{Duration, Instant};

use gorqat::dynamics::{basin_scan, log_grid, simulate, LossScript, Variant};
use gorqat::quant::{fake_quant, QuantSpec};
use gorqat::regularizer::{gor_step, GorState, CLIP_FLOOR};
use gorqat::train::{
    evaluate, run_parallel, static_sweep, train, train_full_precision, write_metrics_csv, Mode, TrainConfig,
};
use gorqat::{Dataset, Tape, TeacherEnsemble, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, ok: bool, elapsed: Duration, budget: Duration, detail: String) {
        let within = elapsed <= budget;
        let pass = ok && within;
        if !pass {
            self.failed += 1;
        }
        println!(
            "[{}] criterion {id}: {name} | {detail} | {:.2}s of {:.0}s",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs_f64(),
        );
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn gradient_fidelity(r: &mut Report) {
    let t = Instant::now();
    let g = common::gradcheck(100, 2024);
    r.line(
        1,
        "gradient fidelity",
        g.alpha_rel <= 1e-10 && g.theta_rel <= 1e-5,
        t.elapsed(),
        Duration::from_secs(30),
        format!(
            "{} configs, scalar rel err {:.2e} (<= 1e-10), network rel err {:.2e} (<= 1e-5)",
            g.configs, g.alpha_rel, g.theta_rel
        ),
    );
}

fn equilibrium_law(r: &mut Report) {
    let t = Instant::now();
    let traj = simulate(&GorState::new(1e-2), &LossScript::constant(4.0, 1.0), 10_000, Variant::Gor).unwrap();
    let p = traj.last();
    let residual = p.eq_residual.unwrap();
    let ratio = traj.final_ratio().unwrap();
    r.line(
        2,
        "equilibrium law",
        residual <= 0.01 && (ratio / 2.0 - 1.0).abs() <= 0.01,
        t.elapsed(),
        Duration::from_secs(5),
        format!(
            "residual {residual:.2e} (<= 0.01), alpha_kd/alpha_task {ratio:.5} (2 +/- 1%), final ({:.4}, {:.4})",
            p.alpha_task.unwrap(),
            p.alpha_kd
        ),
    );
}

fn single_scalar_instability(r: &mut Report) {
    let t = Instant::now();
    let script = LossScript::constant(4.0, 1.0);
    let single = simulate(&GorState::new(1e-2), &script, 10_000, Variant::SingleScalar).unwrap();
    let increasing = single.points.windows(2).all(|w| w[1].alpha_kd > w[0].alpha_kd)
        && single.points[0].alpha_kd > 0.5;
    let stationary = single.points.iter().any(|p| p.grad_kd == 0.0);
    let drift = (single.any_clipped() || increasing) && !stationary;
    let gor = simulate(&GorState::new(1e-2), &script, 10_000, Variant::Gor).unwrap();
    let converged = gor.last().eq_residual.unwrap() <= 0.01;
    r.line(
        3,
        "single-scalar instability",
        drift && converged,
        t.elapsed(),
        Duration::from_secs(5),
        format!(
            "beta 0.5 -> {:.2} strictly increasing={increasing} clipped={}, two-scalar residual {:.2e}",
            single.last().alpha_kd,
            single.any_clipped(),
            gor.last().eq_residual.unwrap()
        ),
    );
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn student_cfg() -> TrainConfig {
    TrainConfig {
        widths: vec![2, 16, 2],
        epochs: 10,
        ..TrainConfig::default()
    }
}

fn static_vs_learnable(r: &mut Report, data: &Dataset) {
    let t = Instant::now();
    let teacher = train_full_precision(&[2, 64, 64, 2], data, 20, 1).unwrap();
    let teacher_acc = evaluate(&teacher, &data.test, None).unwrap();
    let ens = TeacherEnsemble::new(vec![teacher]).unwrap();
    let rep = static_sweep(&student_cfg(), data, &ens, &[0.0, 0.25, 0.5, 0.75, 1.0], &SEEDS, true, jobs()).unwrap();
    let best = rep.best_static().unwrap();
    let gor = rep.arm("gor").unwrap();
    r.line(
        4,
        "static-vs-learnable sweep",
        teacher_acc >= 0.97 && gor.mean() >= best.mean() - 0.005,
        t.elapsed(),
        Duration::from_secs(300),
        format!(
            "teacher {:.2}% (>= 97%), learnable {:.2}% vs best static {} {:.2}% (margin -0.5 pp)",
            100.0 * teacher_acc,
            100.0 * gor.mean(),
            best.label,
            100.0 * best.mean()
        ),
    );
}

fn csv_bytes(out: &gorqat::TrainOutcome) -> Vec<u8> {
    let mut buf = Vec::new();
    write_metrics_csv(&mut buf, &out.metrics).unwrap();
    buf
}

fn ensemble_reduction(r: &mut Report, data: &Dataset) {
    let t = Instant::now();
    let ens = TeacherEnsemble::new(vec![train_full_precision(&[2, 64, 64, 2], data, 10, 3).unwrap()]).unwrap();
    let kd = train(&TrainConfig { mode: Mode::QatKdGor, seed: 5, ..student_cfg() }, data, Some(&ens)).unwrap();
    let ekd = train(
        &TrainConfig {
            mode: Mode::QatEkdGor { teachers: 1 },
            seed: 5,
            ..student_cfg()
        },
        data,
        Some(&ens),
    )
    .unwrap();
    let (a, b) = (csv_bytes(&kd), csv_bytes(&ekd));
    r.line(
        5,
        "ensemble reduction at n=1",
        a == b,
        t.elapsed(),
        Duration::from_secs(60),
        format!("{} metric rows, byte-identical={}", kd.metrics.len(), a == b),
    );
}

fn ensemble_sanity(r: &mut Report, data: &Dataset) {
    let t = Instant::now();
    let widths = [32usize, 64, 128];
    let teachers: Vec<_> = widths
        .iter()
        .zip(10u64..)
        .map(|(&w, seed)| train_full_precision(&[2, w, w, 2], data, 20, seed).unwrap())
        .collect();
    let singles: Vec<TeacherEnsemble> = teachers
        .iter()
        .map(|m| TeacherEnsemble::new(vec![m.clone()]).unwrap())
        .collect();
    let all = TeacherEnsemble::new(teachers).unwrap();

    let mut tasks: Vec<(TrainConfig, &TeacherEnsemble)> = Vec::new();
    for single in &singles {
        for &seed in &SEEDS {
            tasks.push((TrainConfig { mode: Mode::QatKdGor, seed, ..student_cfg() }, single));
        }
    }
    for &seed in &SEEDS {
        tasks.push((
            TrainConfig {
                mode: Mode::QatEkdGor { teachers: 3 },
                seed,
                ..student_cfg()
            },
            &all,
        ));
    }
    let accs: Vec<f64> = run_parallel(tasks, jobs(), |(cfg, ens)| train(&cfg, data, Some(ens)))
        .unwrap()
        .into_iter()
        .map(|o| o.unwrap().summary.test_acc)
        .collect();
    let arm_means: Vec<f64> = accs.chunks(SEEDS.len()).map(mean).collect();
    let best_single = arm_means[..3].iter().copied().fold(f64::MIN, f64::max);
    let ensemble = arm_means[3];
    r.line(
        6,
        "ensemble sanity",
        ensemble >= best_single - 0.005,
        t.elapsed(),
        Duration::from_secs(600),
        format!(
            "ensemble {:.2}% vs single teachers {:.2}/{:.2}/{:.2}% (margin -0.5 pp)",
            100.0 * ensemble,
            100.0 * arm_means[0],
            100.0 * arm_means[1],
            100.0 * arm_means[2]
        ),
    );
}

fn quantizer_contract(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst_ratio = 0.0f64;
    let (mut idem_fail, mut mono_fail) = (0usize, 0usize);
    for bits in [2u8, 4, 8] {
        for _ in 0..1_000 {
            let lo = rng.random_range(-100.0..100.0);
            let spec = QuantSpec::with_range(bits, lo, lo + rng.random_range(1e-3..200.0)).unwrap();
            let p = spec.params().unwrap();
            let s = spec.scale();
            let mut prev = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            let mut xs: Vec<f64> = (0..1_000).map(|_| rng.random_range(p.x_min..=p.x_max)).collect();
            xs.sort_by(f64::total_cmp);
            for x in xs {
                let q = p.apply(x);
                worst_ratio = worst_ratio.max((x - q).abs() / (s / 2.0));
                if p.apply(q) != q {
                    idem_fail += 1;
                }
                if x >= prev.0 && q < prev.1 {
                    mono_fail += 1;
                }
                prev = (x, q);
            }
        }
    }
    // straight-through Jacobian over points straddling the range
    let spec = QuantSpec::with_range(4, -1.0, 1.0).unwrap();
    let xs: Vec<f64> = (0..10_000).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(xs.clone()));
    let q = fake_quant(&mut tape, x, &spec).unwrap();
    let sum = tape.sum(q);
    tape.backward(sum).unwrap();
    let ste_fail = xs
        .iter()
        .zip(tape.grad(x).unwrap())
        .filter(|(v, g)| **g != if (-1.0..=1.0).contains(*v) { 1.0 } else { 0.0 })
        .count();
    r.line(
        7,
        "quantizer contract",
        worst_ratio <= 1.0 && idem_fail == 0 && mono_fail == 0 && ste_fail == 0,
        t.elapsed(),
        Duration::from_secs(30),
        format!(
            "3x10^6 points: max |x-q|/(s/2) {worst_ratio:.6}, idempotence failures {idem_fail}, \
             monotonicity failures {mono_fail}; STE mismatches {ste_fail}/10^4"
        ),
    );
}

fn adversarial_loss(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => f64::MIN_POSITIVE * rng.random::<f64>(),
        2 => 10f64.powf(rng.random_range(-300.0..300.0)),
        3 => rng.random_range(0.0..1e-3),
        4 => rng.random_range(0.0..1e6),
        _ => f64::MAX * rng.random::<f64>(),
    }
}

fn clipping_invariant(r: &mut Report) {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut state = GorState::new(1e-2);
    let (mut below, mut rejected) = (0usize, 0usize);
    for i in 0..100_000 {
        if i % 1_000 == 0 {
            state = GorState::new(10f64.powf(rng.random_range(-4.0..1.0))).with_alphas(
                10f64.powf(rng.random_range(-4.0..3.0)),
                10f64.powf(rng.random_range(-4.0..3.0)),
            );
        }
        match gor_step(&state, adversarial_loss(&mut rng), adversarial_loss(&mut rng)) {
            Ok(s) => {
                if s.state.alpha_task < CLIP_FLOOR || s.state.alpha_kd < CLIP_FLOOR {
                    below += 1;
                }
                state = s.state;
            }
            // overflowing updates are refused and leave the state as it was
            Err(_) => rejected += 1,
        }
    }
    r.line(
        8,
        "clipping invariant",
        below == 0,
        t.elapsed(),
        Duration::from_secs(10),
        format!("10^5 steps, {below} below floor, {rejected} refused as non-finite"),
    );
}

fn determinism(r: &mut Report) {
    let t = Instant::now();
    let small = gorqat::data::blobs(2, 400, 0.9, 11, 2, 2.0).unwrap();
    let ens = TeacherEnsemble::new(vec![train_full_precision(&[2, 32, 2], &small, 5, 2).unwrap()]).unwrap();
    let cfg = TrainConfig { epochs: 3, ..student_cfg() };
    let train_same = csv_bytes(&train(&cfg, &small, Some(&ens)).unwrap())
        == csv_bytes(&train(&cfg, &small, Some(&ens)).unwrap());

    let sweep = |jobs| {
        let rep = static_sweep(&cfg, &small, &ens, &[0.0, 0.5, 1.0], &[0, 1], true, jobs).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        buf
    };
    let sweep_same = sweep(1) == sweep(jobs());

    let script = LossScript::Noisy {
        loss_task: 4.0,
        loss_kd: 1.0,
        sigma: 0.5,
        seed: 3,
    };
    let traj = || {
        let mut buf = Vec::new();
        simulate(&GorState::new(1e-2), &script, 5_000, Variant::Gor)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        buf
    };
    let grid = log_grid(0.1, 10.0, 5).unwrap();
    let scan = |jobs| {
        let mut buf = Vec::new();
        basin_scan(&grid, &grid, 1e-2, &script, 2_000, jobs)
            .unwrap()
            .write_csv(&mut buf)
            .unwrap();
        buf
    };
    let dyn_same = traj() == traj() && scan(1) == scan(jobs());
    r.line(
        9,
        "determinism",
        train_same && sweep_same && dyn_same,
        t.elapsed(),
        Duration::from_secs(120),
        format!("train={train_same} sweep={sweep_same} dynamics={dyn_same} (byte-identical CSV)"),
    );
}

fn main() {
    let mut r = Report { failed: 0 };
    let data = common::blob_data();
    gradient_fidelity(&mut r);
    equilibrium_law(&mut r);
    single_scalar_instability(&mut r);
    static_vs_learnable(&mut r, &data);
    ensemble_reduction(&mut r, &data);
    ensemble_sanity(&mut r, &data);
    quantizer_contract(&mut r);
    clipping_invariant(&mut r);
    determinism(&mut r);
    if r.failed > 0 {
        println!("{} criteria failed", r.failed);
        std::process::exit(1);
    }
    println!("all 9 criteria passed");
}
