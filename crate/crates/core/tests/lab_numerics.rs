mod common;

use common::{gradient_check, loop_forward, rng};
use rand::Rng;
use speclens::freq_lab::{eval_grid, explained_variance, forward, init_mlp, train, LabConfig, BANDS};

#[test]
fn analytic_gradients_match_central_differences() {
    let check = gradient_check(21, 120);
    assert!(check.checked > 20 * check.skipped, "{} checked, {} skipped", check.checked, check.skipped);
    assert!(check.max_err < 1e-6, "max error {:e}", check.max_err);
}

#[test]
fn forward_matches_loop_oracle() {
    let p = init_mlp(5, 24);
    let mut r = rng(22);
    let xs: Vec<f64> = (0..50).map(|_| r.random_range(0.0..6.3)).collect();
    let (expected, _) = loop_forward(&p, &xs);
    for (a, b) in forward(&p, &xs).iter().zip(&expected) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
    }
}

#[test]
fn harmonic_scores_are_orthogonal() {
    let grid = eval_grid(2048);
    for &j in &BANDS {
        let samples: Vec<f64> = grid.iter().map(|x| (j as f64 * x).sin()).collect();
        for &k in &BANDS {
            let ev = explained_variance(&samples, k).unwrap();
            let expected = if j == k { 1.0 } else { 0.0 };
            assert!((ev - expected).abs() < 1e-10, "j={j} k={k}: {ev}");
        }
    }
}

#[test]
fn target_itself_scores_one_everywhere() {
    let grid = eval_grid(2048);
    let y: Vec<f64> = grid.iter().map(|&x| speclens::freq_lab::target(x)).collect();
    for &k in &BANDS {
        assert!((explained_variance(&y, k).unwrap() - 1.0).abs() < 1e-10);
    }
}

fn short(lambda: f64, seed: u64) -> LabConfig {
    LabConfig {
        hidden: 32,
        steps: 300,
        record_every: 100,
        ..LabConfig::with_lambda(lambda, seed)
    }
}

#[test]
fn training_is_deterministic() {
    let a = train(&short(1e-3, 4)).unwrap();
    let b = train(&short(1e-3, 4)).unwrap();
    assert_eq!(a, b);
    let steps: Vec<usize> = a.curves[0].iter().map(|p| p.step).collect();
    assert_eq!(steps, vec![0, 100, 200, 300]);
    assert_eq!(a.train_loss_curve.len(), 4);
}

#[test]
fn training_reduces_loss() {
    let r = train(&short(0.0, 1)).unwrap();
    let first = r.train_loss_curve.first().unwrap().1;
    let last = r.train_loss_curve.last().unwrap().1;
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn penalty_shrinks_weights() {
    let norms: Vec<f64> = [0.0, 1e-3, 1e-2]
        .iter()
        .map(|&l| train(&short(l, 3)).unwrap().weight_norm_sq)
        .collect();
    assert!(norms[0] >= norms[1] && norms[1] >= norms[2], "{norms:?}");
}

#[test]
fn final_record_is_taken_off_schedule() {
    let config = LabConfig {
        steps: 130,
        ..short(0.0, 0)
    };
    let r = train(&config).unwrap();
    let steps: Vec<usize> = r.curves[2].iter().map(|p| p.step).collect();
    assert_eq!(steps, vec![0, 100, 130]);
    assert_eq!(r.ev_final[2], r.curves[2].last().unwrap().ev);
}
