use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use upseg_core::autodiff::{Tape, Var};
use upseg_core::loss::{l_sum, LossConfig};
use upseg_core::ops::cross_entropy;
use upseg_core::{Mask, Tensor64};

/// Random logits for taps 0..=m of a binary head at base resolution `r`.
fn taps(m: usize, r: usize, seed: u64) -> Vec<Tensor64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..=m)
        .map(|i| Tensor64::from_fn(&[2, 1, r << i, r << i], |_| rng.random_range(-3.0..3.0)))
        .collect()
}

fn random_mask(n: usize, res: usize, seed: u64) -> Mask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mask::new(n, res, res, (0..n * res * res).map(|_| rng.random_range(0..2u8)).collect()).unwrap()
}

fn record(logits: &[Tensor64], gt: &Mask, cfg: &LossConfig) -> (Tape<f64>, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = logits.iter().map(|t| tape.param(t.clone())).collect();
    let l = l_sum(&mut tape, &vars, gt, cfg).unwrap();
    (tape, vars, l)
}

/// Stage loss computed pixel by pixel with the top-left sampling written out.
fn oracle_stage(logits: &Tensor64, gt: &Mask, factor: usize) -> f64 {
    let (n, _, h, w) = logits.dims4().unwrap();
    let mut total = 0.0;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                let z = logits.data()[(b * h + y) * w + x];
                let t = gt.get(b, y * factor, x * factor) as f64;
                total += (1.0 + z.exp()).ln() - t * z;
            }
        }
    }
    total / (n * h * w) as f64
}

#[test]
fn l_sum_equals_weighted_per_stage_oracle() {
    let m = 3;
    let logits = taps(m, 2, 1);
    let gt = random_mask(2, 2 << m, 2);
    let cfg = LossConfig {
        stage_weights: vec![0.25, 1.0, 0.5, 2.0],
        ..LossConfig::uniform(m)
    };
    let (tape, _, l) = record(&logits, &gt, &cfg);
    let want: f64 = (0..=m)
        .map(|i| cfg.stage_weights[i] * oracle_stage(&logits[i], &gt, 1 << (m - i)))
        .sum();
    assert!((tape.value(l).item().unwrap() - want).abs() < 1e-12);
}

#[test]
fn m0_is_bitwise_plain_cross_entropy() {
    let logits = taps(0, 8, 3);
    let gt = random_mask(2, 8, 4);
    let (tape, _, l) = record(&logits, &gt, &LossConfig::uniform(0));
    let plain = cross_entropy(&logits[0], &gt).unwrap();
    assert_eq!(tape.value(l).item().unwrap().to_bits(), plain.to_bits());
}

#[test]
fn zero_logits_give_ln2_per_stage() {
    let m = 2;
    let logits: Vec<Tensor64> = (0..=m).map(|i| Tensor64::zeros(&[1, 1, 4 << i, 4 << i])).collect();
    let gt = random_mask(1, 4 << m, 5);
    let (tape, _, l) = record(&logits, &gt, &LossConfig::uniform(m));
    assert!((tape.value(l).item().unwrap() - 3.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn zero_weight_stage_contributes_no_gradient() {
    let m = 2;
    let logits = taps(m, 2, 6);
    let gt = random_mask(2, 2 << m, 7);
    let weights = vec![1.0, 0.0, 1.5];
    let (tape, vars, l) = record(
        &logits,
        &gt,
        &LossConfig {
            stage_weights: weights,
            ..LossConfig::uniform(m)
        },
    );
    let g = tape.backward(l).unwrap();
    assert!(g.wrt(vars[1]).unwrap().data().iter().all(|&v| v == 0.0));

    // Gradients of the weighted taps equal those of their own terms alone.
    for (i, w) in [(0usize, 1.0), (2, 1.5)] {
        let mut t = Tape::new();
        let v = t.param(logits[i].clone());
        let target = upseg_core::loss::resize_target(&gt, i, m).unwrap();
        let ce = t.cross_entropy(v, &target).unwrap();
        let s = t.weighted_sum(&[(ce, w)]).unwrap();
        let alone = t.backward(s).unwrap().wrt(v).unwrap();
        let joint = g.wrt(vars[i]).unwrap();
        assert!(joint.max_abs_diff(&alone).unwrap() < 1e-10);
    }
}

#[test]
fn weight_count_must_match_taps() {
    let logits = taps(2, 2, 8);
    let gt = random_mask(2, 8, 9);
    let mut tape = Tape::new();
    let vars: Vec<Var> = logits.iter().map(|t| tape.param(t.clone())).collect();
    assert!(l_sum(&mut tape, &vars, &gt, &LossConfig::uniform(1)).is_err());
    let negative = LossConfig {
        stage_weights: vec![1.0, -1.0, 1.0],
        ..LossConfig::uniform(2)
    };
    assert!(l_sum(&mut tape, &vars, &gt, &negative).is_err());
}
