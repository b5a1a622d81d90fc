#![allow(dead_code)]

use gorqat::data::blobs;
use gorqat::losses::KdConfig;
use gorqat::model::{ModelParams, Role};
use gorqat::quant::{QuantConfig, QuantPlan};
use gorqat::regularizer::GorState;
use gorqat::tape::FakeQuantParams;
use gorqat::train::{build_step, calibrate_activations, Objective};
use gorqat::{Dataset, Split, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Fake-quant linearised around a reference point: value frozen at
/// `fq(x0)`, slope 1 where `x0` lies in range and 0 elsewhere. Its exact
/// derivative is the straight-through gradient.
struct Linearised {
    base: Vec<f64>,
    at: Vec<f64>,
    mask: Vec<f64>,
}

impl Linearised {
    fn new(p: &FakeQuantParams, x0: &[f64]) -> Self {
        Self {
            base: x0.iter().map(|&x| p.apply(x)).collect(),
            at: x0.to_vec(),
            mask: x0
                .iter()
                .map(|&x| if p.x_max > p.x_min && x >= p.x_min && x <= p.x_max { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| self.base[i] + self.mask[i] * (v - self.at[i]))
            .collect()
    }
}

fn minmax_params(w: &[f64], bits: u8) -> FakeQuantParams {
    let lo = w.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    FakeQuantParams {
        x_min: lo,
        x_max: hi,
        levels: (1u32 << bits) - 1,
        clip_gradient: true,
    }
}

fn log_softmax(row: &[f64], t: f64) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
    let lse = m + row.iter().map(|v| (v / t - m).exp()).sum::<f64>().ln();
    row.iter().map(|v| v / t - lse).collect()
}

/// Independent plain-f64 forward of a 2-layer student with frozen quantizer
/// linearisations, followed by cross-entropy, τ²-scaled KL and the
/// two-scalar combination.
struct Surrogate {
    x: Vec<f64>,
    y: Vec<usize>,
    teacher: Vec<f64>,
    dims: Vec<usize>,
    weight_q: Vec<Linearised>,
    act_q: Vec<Linearised>,
    tau: f64,
}

impl Surrogate {
    /// `theta` is `[w0, b0, w1, b1, ...]` flattened; `alphas` are (task, kd).
    fn loss(&self, theta: &[Vec<f64>], alphas: (f64, f64)) -> f64 {
        let rows = self.y.len();
        let mut h = self.x.clone();
        let layers = self.dims.len() - 1;
        for l in 0..layers {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let a = self.act_q[l].eval(&h);
            let w = self.weight_q[l].eval(&theta[2 * l]);
            let b = &theta[2 * l + 1];
            let mut z = vec![0.0; rows * dout];
            for r in 0..rows {
                for j in 0..dout {
                    let mut acc = 0.0;
                    for k in 0..din {
                        acc += a[r * din + k] * w[k * dout + j];
                    }
                    z[r * dout + j] = acc + b[j];
                }
            }
            if l + 1 < layers {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = z;
        }
        let c = *self.dims.last().unwrap();
        let (mut ce, mut kl) = (0.0, 0.0);
        for r in 0..rows {
            let zs = &h[r * c..(r + 1) * c];
            ce -= log_softmax(zs, 1.0)[self.y[r]];
            let ls = log_softmax(zs, self.tau);
            let lt = log_softmax(&self.teacher[r * c..(r + 1) * c], self.tau);
            kl += lt.iter().zip(&ls).map(|(t, s)| t.exp() * (t - s)).sum::<f64>();
        }
        let (lt, lk) = (ce / rows as f64, self.tau * self.tau * kl / rows as f64);
        (alphas.0 / alphas.1) * lt + (alphas.1 / alphas.0) * lk
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct GradCheck {
    pub configs: usize,
    /// Worst relative error of the scalar gradients against closed forms.
    pub alpha_rel: f64,
    /// Worst elementwise relative error of network gradients against
    /// central differences of the straight-through surrogate.
    pub theta_rel: f64,
    /// Worst |surrogate − recorded| total loss at the reference point.
    pub value_gap: f64,
}

/// Relative-error denominators are floored at this fraction of the
/// largest gradient entry, so entries that are zero up to rounding are
/// compared on the scale of the gradient rather than their own.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor).max(f64::MIN_POSITIVE)
}

/// Central difference with the step chosen from the data: the largest `h`
/// whose estimate agrees with the one at `h / 2`. A step that straddles a
/// ReLU kink fails that agreement and a smaller one is tried.
/// `loss` sets the rounding-noise level `ε·|L|/h` of each estimate.
fn stable_difference(f: impl Fn(f64) -> f64, loss: f64) -> f64 {
    let mut last = 0.0;
    for h in [1e-4, 1e-5, 1e-6, 1e-7] {
        let (a, b) = (f(h), f(h / 2.0));
        let noise = 64.0 * f64::EPSILON * loss.abs() / h;
        if (a - b).abs() <= 1e-7 * a.abs().max(b.abs()) + noise {
            return b;
        }
        last = b;
    }
    last
}

/// Random [2,8,2] students with random bit widths, batches, teacher logits
/// and scalar values.
pub fn gradcheck(configs: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck {
        configs,
        ..Default::default()
    };
    let bits = [2u8, 4, 8];
    for c in 0..configs {
        let dims = vec![2usize, 8, 2];
        let student = ModelParams::build_mlp(&dims, rng.random(), Role::Student).unwrap();
        let rows = rng.random_range(4..=12);
        let x: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let y: Vec<usize> = (0..rows).map(|_| rng.random_range(0..2)).collect();
        let teacher: Vec<f64> = (0..rows * 2).map(|_| rng.random_range(-4.0..4.0)).collect();
        let (at, ak) = (rng.random_range(0.2..5.0), rng.random_range(0.2..5.0));
        let qc = QuantConfig::new(bits[c % 3], bits[(c / 3) % 3]);
        let xt = Tensor::new(vec![rows, 2], x.clone()).unwrap();
        let tt = Tensor::new(vec![rows, 2], teacher.clone()).unwrap();

        let mut plan = QuantPlan::new(2, &qc).unwrap();
        let split = Split {
            features: 2,
            x: x.clone(),
            y: y.clone(),
        };
        calibrate_activations(&student, &mut plan, &split, rows, 1).unwrap();
        let frozen_plan = plan.clone();
        let kd = KdConfig::default();
        let state = GorState::new(1e-3).with_alphas(at, ak);
        let g = build_step(&student, Some(&mut plan), false, &xt, &y, Some(&tt), Objective::Gor(state), &kd)
            .unwrap();

        // closed-form scalar gradients
        let (lt, lk) = (g.bundle.loss_task, g.bundle.loss_kd);
        let want_t = lt / ak - ak * lk / (at * at);
        let want_k = lk / at - at * lt / (ak * ak);
        let terms = g.gor.unwrap();
        out.alpha_rel = out
            .alpha_rel
            .max(rel(g.tape.grad(terms.alpha_task).unwrap()[0], want_t, 0.0))
            .max(rel(g.tape.grad(terms.alpha_kd).unwrap()[0], want_k, 0.0));

        // reference activations for the linearisation, summed in the same
        // order as the tape so boundary elements land on the same side
        let w0 = student.layers[0].weight.data();
        let mut h1 = vec![0.0; rows * 8];
        let a0p = frozen_plan.activations[0].as_ref().unwrap().params().unwrap();
        let w0p = minmax_params(w0, qc.wbits);
        let a0 = Linearised::new(&a0p, &x);
        let wq0 = Linearised::new(&w0p, w0);
        let (aq, wq) = (a0.eval(&x), wq0.eval(w0));
        for r in 0..rows {
            for j in 0..8 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += aq[r * 2 + k] * wq[k * 8 + j];
                }
                h1[r * 8 + j] = (acc + student.layers[0].bias.data()[j]).max(0.0);
            }
        }
        let a1p = frozen_plan.activations[1].as_ref().unwrap().params().unwrap();
        let w1 = student.layers[1].weight.data();
        let sur = Surrogate {
            x: x.clone(),
            y: y.clone(),
            teacher,
            dims: dims.clone(),
            weight_q: vec![wq0, Linearised::new(&minmax_params(w1, qc.wbits), w1)],
            act_q: vec![a0, Linearised::new(&a1p, &h1)],
            tau: kd.temperature,
        };
        let theta: Vec<Vec<f64>> = student
            .layers
            .iter()
            .flat_map(|l| [l.weight.data().to_vec(), l.bias.data().to_vec()])
            .collect();
        out.value_gap = out.value_gap.max((sur.loss(&theta, (at, ak)) - g.bundle.loss_total).abs());

        let grads: Vec<Vec<f64>> = g.param_grads().into_iter().flat_map(|(w, b)| [w, b]).collect();
        let mut fds = Vec::new();
        for (t, p) in theta.iter().enumerate() {
            for i in 0..p.len() {
                let f = |h: f64| {
                    let mut p = theta.clone();
                    p[t][i] += h;
                    let up = sur.loss(&p, (at, ak));
                    p[t][i] -= 2.0 * h;
                    (up - sur.loss(&p, (at, ak))) / (2.0 * h)
                };
                fds.push(stable_difference(f, g.bundle.loss_total));
            }
        }
        let floor = REL_FLOOR * fds.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (ad, fd) in grads.iter().flatten().zip(&fds) {
            out.theta_rel = out.theta_rel.max(rel(*ad, *fd, floor));
        }
    }
    out
}

/// Two-class blobs used by the comparative runs.
pub fn blob_data() -> Dataset {
    blobs(2, 2000, 0.9, 7, 2, 2.0).unwrap()
}
