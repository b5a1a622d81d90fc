//! WebAssembly bindings behind `www/index.html`.
//!
//! Each export returns a flat `Float64Array` so the page can draw it without
//! any glue beyond what wasm-bindgen generates. The plain functions below the
//! exports do the work and are what the native tests exercise.

use gorqat::dynamics::{basin_scan, log_grid, simulate, LossScript, Variant};
use gorqat::quant::QuantSpec;
use gorqat::regularizer::GorState;
use gorqat::error::Result;
use wasm_bindgen::prelude::*;

fn js(e: gorqat::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Rows of `[alpha_task, alpha_kd, beta]`, one per step, under constant losses.
/// `beta` is the single learnable weight started from the same point.
#[wasm_bindgen]
pub fn simulate_game(
    alpha_task: f64,
    alpha_kd: f64,
    loss_task: f64,
    loss_kd: f64,
    lr: f64,
    steps: usize,
) -> Result<Vec<f64>, JsError> {
    game(alpha_task, alpha_kd, loss_task, loss_kd, lr, steps).map_err(js)
}

/// Rows of `[x, fake_quant(x), ste_gradient(x)]` across the range padded by a
/// quarter on each side, so clipping is visible.
#[wasm_bindgen]
pub fn fake_quant_curve(bits: u8, x_min: f64, x_max: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    quant_curve(bits, x_min, x_max, samples).map_err(js)
}

/// Final equilibrium residuals over a `points × points` log grid of starts,
/// row-major with `alpha_task` on the rows.
#[wasm_bindgen]
pub fn basin(lo: f64, hi: f64, points: usize, loss_task: f64, loss_kd: f64, lr: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    basin_residuals(lo, hi, points, loss_task, loss_kd, lr, steps).map_err(js)
}

pub fn game(alpha_task: f64, alpha_kd: f64, loss_task: f64, loss_kd: f64, lr: f64, steps: usize) -> Result<Vec<f64>> {
    let start = GorState::new(lr).with_alphas(alpha_task, alpha_kd);
    let script = LossScript::constant(loss_task, loss_kd);
    let pair = simulate(&start, &script, steps, Variant::Gor)?;
    let single = simulate(&start, &script, steps, Variant::SingleScalar)?;
    Ok(pair
        .points
        .iter()
        .zip(&single.points)
        .flat_map(|(p, s)| [p.alpha_task.unwrap_or(f64::NAN), p.alpha_kd, s.alpha_kd])
        .collect())
}

pub fn quant_curve(bits: u8, x_min: f64, x_max: f64, samples: usize) -> Result<Vec<f64>> {
    let params = QuantSpec::with_range(bits, x_min, x_max)?.params()?;
    let pad = 0.25 * (x_max - x_min);
    let n = samples.max(2);
    Ok((0..n)
        .flat_map(|i| {
            let x = x_min - pad + (x_max - x_min + 2.0 * pad) * i as f64 / (n - 1) as f64;
            [x, params.apply(x), params.ste(x)]
        })
        .collect())
}

pub fn basin_residuals(lo: f64, hi: f64, points: usize, loss_task: f64, loss_kd: f64, lr: f64, steps: usize) -> Result<Vec<f64>> {
    let axis = log_grid(lo, hi, points)?;
    // one job: browsers give us a single thread
    let scan = basin_scan(&axis, &axis, lr, &LossScript::constant(loss_task, loss_kd), steps, 1)?;
    Ok(scan.cells.iter().map(|c| c.residual).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn game_rows_settle_at_the_square_root_ratio() {
        let rows = game(1.0, 1.0, 4.0, 1.0, 1e-2, 10_000).unwrap();
        assert_eq!(rows.len(), 3 * 10_000);
        let last = &rows[rows.len() - 3..];
        assert!((last[1] / last[0] - 2.0).abs() < 0.02);
        // the single weight keeps climbing
        assert!(last[2] > 100.0);
    }

    #[test]
    fn quant_curve_has_two_to_the_bits_levels() {
        let rows = quant_curve(2, -1.0, 1.0, 401).unwrap();
        let mut ys: Vec<f64> = rows.chunks(3).map(|r| r[1]).collect();
        ys.sort_by(f64::total_cmp);
        ys.dedup();
        assert_eq!(ys.len(), 4);
        // outside the range the straight-through gradient is zero
        assert_eq!(rows[2], 0.0);
        assert_eq!(rows[3 * 200 + 2], 1.0);
    }

    #[test]
    fn bad_inputs_are_errors_not_panics() {
        assert!(quant_curve(1, 0.0, 1.0, 10).is_err());
        assert!(game(0.0, 1.0, 1.0, 1.0, 1e-2, 10).is_err());
        assert!(basin_residuals(0.0, 1.0, 3, 1.0, 1.0, 1e-2, 10).is_err());
    }

    #[test]
    fn basin_is_square_and_mostly_converged() {
        let r = basin_residuals(0.1, 10.0, 4, 4.0, 1.0, 1e-2, 5000).unwrap();
        assert_eq!(r.len(), 16);
        assert!(r.iter().filter(|&&v| v < 0.05).count() >= 8, "{r:?}");
    }
}
