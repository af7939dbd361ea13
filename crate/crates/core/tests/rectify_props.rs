mod common;

use common::{random_distribution, random_unit_rows};
use krdistill::data::ClassCounts;
use krdistill::numerics::{dot, Matrix, RngState};
use krdistill::rectify::*;
use krdistill::KrdError;

#[test]
fn rectification_contract_on_random_pairs() {
    let mut rng = RngState::new(21);
    for _ in 0..100_000 {
        let c = 2 + rng.below(49);
        let s = 0.5 + 3.0 * rng.uniform();
        let p = random_distribution(&mut rng, c, s);
        let t = rng.below(c);
        let r = rectify_prediction(&p, t).unwrap();
        let q = &r.probs;
        let sum: f64 = q.iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9);
        assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(q[t], m);
        if !r.was_rectified {
            assert_eq!(q, &p);
        } else {
            // non-target order preserved
            for i in 0..c {
                for j in 0..c {
                    if i != t && j != t && p[i] < p[j] {
                        assert!(q[i] <= q[j]);
                    }
                }
            }
        }
        let again = rectify_prediction(q, t).unwrap();
        assert!(!again.was_rectified);
        assert_eq!(&again.probs, q);
    }
}

#[test]
fn correct_predictions_pass_through() {
    let p = [0.2, 0.7, 0.1];
    let r = rectify_prediction(&p, 1).unwrap();
    assert_eq!(r.probs, p.to_vec());
    assert_eq!(r.scale, 1.0);
}

#[test]
fn tie_with_max_counts_as_correct() {
    let r = rectify_prediction(&[0.4, 0.4, 0.2], 1).unwrap();
    assert!(!r.was_rectified);
}

#[test]
fn confident_wrong_becomes_one_hot() {
    let r = rectify_prediction(&[1.0, 0.0, 0.0], 2).unwrap();
    assert_eq!(r.probs, vec![0.0, 0.0, 1.0]);
    assert_eq!(r.scale, 0.0);
}

#[test]
fn non_stochastic_input_rejected() {
    assert!(rectify_prediction(&[0.5, 0.6], 0).is_err());
    assert!(rectify_prediction(&[0.5, 0.5], 2).is_err());
}

#[test]
fn class_weights_have_unit_mean() {
    let mut rng = RngState::new(22);
    for _ in 0..10_000 {
        let c = 1 + rng.below(50);
        let counts: Vec<usize> = (0..c).map(|_| 1 + rng.below(5000)).collect();
        let w = class_weights(&ClassCounts(counts.clone())).unwrap();
        let mean = w.as_slice().iter().sum::<f64>() / c as f64;
        assert!((mean - 1.0).abs() <= 1e-12, "mean {mean}");

        let mut sorted = counts;
        sorted.sort_unstable();
        let ws = class_weights(&ClassCounts(sorted)).unwrap();
        assert!(ws.as_slice().windows(2).all(|p| p[0] >= p[1]));
    }
}

#[test]
fn class_weight_examples() {
    let w = class_weights(&ClassCounts(vec![100, 10])).unwrap();
    assert!((w.get(0) - 2.0 / 11.0).abs() <= 1e-12);
    assert!((w.get(1) - 20.0 / 11.0).abs() <= 1e-12);
    let b = class_weights(&ClassCounts(vec![37; 7])).unwrap();
    assert!(b.as_slice().iter().all(|&v| v == 1.0));
    assert!(class_weights(&ClassCounts(vec![3, 0])).is_err());
}

fn min_max_dot(m: &Matrix) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..m.rows() {
        for j in 0..i {
            worst = worst.max(dot(m.row(i), m.row(j)));
        }
    }
    worst
}

#[test]
fn ideal_means_objective_monotone_and_near_simplex() {
    for (seed, c, d) in [(1, 2, 4), (2, 3, 2), (3, 5, 8), (4, 4, 3), (5, 10, 64)] {
        let mut rng = RngState::new(seed);
        let init = random_unit_rows(&mut rng, c, d);
        let run = optimize_ideal_means_from(&init, DEFAULT_IDEAL_STEPS, DEFAULT_IDEAL_STEP_SIZE)
            .unwrap();
        assert!(run.objective_trace.windows(2).all(|w| w[1] <= w[0]));
        let bound = -1.0 / (c as f64 - 1.0);
        let worst = run.means.max_pairwise_dot();
        assert!(worst <= bound + 1e-2, "C={c} d={d}: {worst} vs {bound}");
        assert!((min_max_dot(run.means.targets()) - worst).abs() <= 1e-12);
        for row in run.means.targets().iter_rows() {
            assert!((dot(row, row) - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn planar_three_classes_match_angle_grid() {
    // Brute-force the objective over angle pairs on the circle; the optimum
    // places the three means 120° apart.
    let steps = 360;
    let mut best = f64::INFINITY;
    for a in 0..steps {
        for b in 0..steps {
            let ta = a as f64 * std::f64::consts::TAU / steps as f64;
            let tb = b as f64 * std::f64::consts::TAU / steps as f64;
            let m = Matrix::from_rows(&[[1.0, 0.0], [ta.cos(), ta.sin()], [tb.cos(), tb.sin()]])
                .unwrap();
            best = best.min(ideal_means_objective(&m));
        }
    }
    let mut rng = RngState::new(9);
    let run = optimize_ideal_means_from(&random_unit_rows(&mut rng, 3, 2), 2000, 0.1).unwrap();
    let last = *run.objective_trace.last().unwrap();
    assert!(last <= best + 1e-9, "{last} vs grid {best}");
    assert!((run.means.max_pairwise_dot() + 0.5).abs() <= 1e-2);
}

#[test]
fn zero_mean_is_degenerate() {
    let m = Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]).unwrap();
    assert!(matches!(
        optimize_ideal_means_from(&m, 10, 0.1),
        Err(KrdError::Degenerate(_))
    ));
}

#[test]
fn ema_class_means_and_missing_class() {
    let mut s = ClassStats::new(3, 2, 0.8).unwrap();
    s.ema_update(0, &[1.0, 0.0]).unwrap();
    s.ema_update(0, &[0.0, 1.0]).unwrap();
    let m = s.mean(0).unwrap();
    assert!((m[0] - 0.8).abs() <= 1e-15 && (m[1] - 0.2).abs() <= 1e-15);
    assert!(matches!(s.means(), Err(KrdError::MissingClass { class: 1 })));
    assert!(ClassStats::new(3, 2, 1.0).is_err());
}

#[test]
fn rectified_features_add_weighted_means() {
    let ideal = IdealMeans::new(Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap()).unwrap();
    let f = Matrix::from_rows(&[[0.6, 0.8], [0.6, 0.8]]).unwrap();
    let w = ClassWeights(vec![0.5, 2.0]);
    let out = rectify_features(&f, &[0, 1], &ideal, &w).unwrap();
    assert_eq!(out.row(0), &[1.1, 0.8]);
    assert_eq!(out.row(1), &[0.6, 2.8]);
}

#[test]
fn ideal_means_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("means.txt");
    let mut rng = RngState::new(3);
    let ideal = IdealMeans::new(random_unit_rows(&mut rng, 4, 5)).unwrap();
    ideal.save(&path).unwrap();
    let back = IdealMeans::load(&path).unwrap();
    assert_eq!(back.targets().as_slice(), ideal.targets().as_slice());
}
