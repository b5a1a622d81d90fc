use gorqat::quant::{fake_quant, QuantSpec};
use gorqat::{Tape, Tensor};
use proptest::prelude::*;

fn spec_strategy() -> impl Strategy<Value = QuantSpec> {
    (2u8..=8, -50.0f64..50.0, 1e-3f64..100.0)
        .prop_map(|(bits, lo, width)| QuantSpec::with_range(bits, lo, lo + width).unwrap())
}

proptest! {
    #[test]
    fn in_range_error_is_at_most_half_a_step(spec in spec_strategy(), u in 0.0f64..=1.0) {
        let x = spec.x_min + u * (spec.x_max - spec.x_min);
        let q = spec.apply(x).unwrap();
        prop_assert!((x - q).abs() <= spec.scale() / 2.0, "x={x} q={q} s={}", spec.scale());
    }

    #[test]
    fn quantizing_twice_changes_nothing(spec in spec_strategy(), x in -200.0f64..200.0) {
        let once = spec.apply(x).unwrap();
        prop_assert_eq!(spec.apply(once).unwrap(), once);
    }

    #[test]
    fn order_is_preserved(spec in spec_strategy(), a in -200.0f64..200.0, b in -200.0f64..200.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(spec.apply(lo).unwrap() <= spec.apply(hi).unwrap());
    }

    #[test]
    fn codes_stay_in_range(spec in spec_strategy(), x in -1e6f64..1e6) {
        prop_assert!(spec.code(x).unwrap() <= spec.levels());
        let q = spec.apply(x).unwrap();
        prop_assert!(q >= spec.x_min - 1e-9 * spec.x_min.abs().max(1.0));
        prop_assert!(q <= spec.x_max + 1e-9 * spec.x_max.abs().max(1.0));
    }
}

#[test]
fn straight_through_gradient_is_an_indicator() {
    let spec = QuantSpec::with_range(4, -1.0, 2.0).unwrap();
    let xs: Vec<f64> = (0..2001).map(|i| -3.0 + 6.0 * i as f64 / 2000.0).collect();
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(xs.clone()));
    let q = fake_quant(&mut tape, x, &spec).unwrap();
    let s = tape.sum(q);
    tape.backward(s).unwrap();
    for (v, g) in xs.iter().zip(tape.grad(x).unwrap()) {
        let want = if (-1.0..=2.0).contains(v) { 1.0 } else { 0.0 };
        assert_eq!(*g, want, "x={v}");
    }
}

#[test]
fn unclipped_gradient_passes_everywhere() {
    let mut spec = QuantSpec::with_range(3, 0.0, 1.0).unwrap();
    spec.clip_gradient = false;
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![-5.0, 0.5, 5.0]));
    let q = fake_quant(&mut tape, x, &spec).unwrap();
    let s = tape.sum(q);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn constant_tensor_calibrates_to_a_degenerate_pass() {
    let spec = QuantSpec::per_tensor(4)
        .unwrap()
        .calibrate(&Tensor::vector(vec![0.3; 5]))
        .unwrap();
    assert!(spec.is_degenerate());
    let mut tape = Tape::new();
    let x = tape.param(Tensor::vector(vec![0.3; 5]));
    let q = fake_quant(&mut tape, x, &spec).unwrap();
    assert!(tape.value(q).data().iter().all(|&v| v == 0.3));
    let s = tape.sum(q);
    tape.backward(s).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|&g| g == 0.0));
}
