use milt_core::svm::{train_binary, train_binary_dual, train_multiclass, DualSolution, LinearModel, SvmConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn kernel(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

/// W(a) = sum a - 1/2 sum_ij a_i a_j y_i y_j <x_i, x_j>
fn dual_objective(x: &[Vec<f64>], y: &[i8], a: &[f64]) -> f64 {
    let mut quad = 0.0;
    for i in 0..x.len() {
        for j in 0..x.len() {
            quad += a[i] * a[j] * f64::from(y[i]) * f64::from(y[j]) * kernel(&x[i], &x[j]);
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Maximizes the C-SVC dual of a 4-point problem on a grid over
/// (a0, a1, a2), with a3 fixed by the equality constraint. Each pass
/// shrinks the grid around the incumbent.
fn grid_dual_optimum(x: &[Vec<f64>], y: &[i8], c: f64) -> f64 {
    assert_eq!(x.len(), 4);
    let steps = 40;
    let mut center = [c / 2.0; 3];
    let mut half = c / 2.0;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..60 {
        let mut best_at = center;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let pick = |t: usize, m: f64| (m - half + 2.0 * half * t as f64 / steps as f64).clamp(0.0, c);
                    let a = [pick(i, center[0]), pick(j, center[1]), pick(k, center[2])];
                    let s: f64 = (0..3).map(|t| a[t] * f64::from(y[t])).sum();
                    let a3 = -s * f64::from(y[3]);
                    if !(0.0..=c).contains(&a3) {
                        continue;
                    }
                    let w = dual_objective(x, y, &[a[0], a[1], a[2], a3]);
                    if w > best {
                        best = w;
                        best_at = a;
                    }
                }
            }
        }
        center = best_at;
        half *= 0.6;
    }
    best
}

#[test]
fn symmetric_pair_is_exact() {
    let x = vec![vec![-1.0], vec![1.0]];
    let m = train_binary(&x, &[-1, 1], &SvmConfig::c_svc(1.0)).unwrap();
    assert_eq!(m.weights, vec![1.0]);
    assert_eq!(m.bias, 0.0);
    assert_eq!(m.support_indices, vec![0, 1]);
    assert_eq!(m.decision(&[0.0]), 0.0);
}

#[test]
fn four_point_dual_matches_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..10 {
        let x: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect())
            .collect();
        let y = [-1, -1, 1, 1];
        let c = if case % 2 == 0 { 1.0 } else { 0.3 };
        let cfg = SvmConfig {
            tolerance: 1e-9,
            ..SvmConfig::c_svc(c)
        };
        let (_, dual) = train_binary_dual(&x, &y, &cfg).unwrap();
        let ours = dual_objective(&x, &y, &dual.alpha);
        let oracle = grid_dual_optimum(&x, &y, c);
        assert!(ours >= oracle - 1e-6, "case {case}: {ours} < {oracle}");
        assert!((ours - oracle).abs() <= 1e-6, "case {case}: {ours} vs {oracle}");
    }
}

fn blobs(rng: &mut ChaCha8Rng, n: usize, dim: usize, gap: f64) -> (Vec<Vec<f64>>, Vec<i8>) {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = kernel(&dir, &dir).sqrt();
    let mut x = Vec::new();
    let mut y = Vec::new();
    while x.len() < n {
        let p: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
        let side = kernel(&p, &dir) / norm;
        if side.abs() < gap / 2.0 {
            continue;
        }
        y.push(if side > 0.0 { 1 } else { -1 });
        x.push(p);
    }
    if !y.contains(&1) || !y.contains(&-1) {
        return blobs(rng, n, dim, gap);
    }
    (x, y)
}

/// Largest complementary-slackness violation in margin units.
fn kkt_residual(x: &[Vec<f64>], y: &[i8], m: &LinearModel, dual: &DualSolution) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let margin = f64::from(y[i]) * m.decision(&x[i]);
        let a = dual.alpha[i];
        if a < dual.upper {
            worst = worst.max(1.0 - margin);
        }
        if a > 0.0 {
            worst = worst.max(margin - 1.0);
        }
    }
    worst
}

#[test]
fn kkt_holds_on_separable_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..50 {
        let dim = 2 + case % 4;
        let (x, y) = blobs(&mut rng, 40, dim, 2.0);
        let (m, dual) = train_binary_dual(&x, &y, &SvmConfig::c_svc(1.0)).unwrap();
        assert!(dual.converged);
        let r = kkt_residual(&x, &y, &m, &dual);
        assert!(r <= 1e-3, "case {case}: residual {r}");
        for (xi, &yi) in x.iter().zip(&y) {
            assert_eq!(m.decision(xi) >= 0.0, yi == 1, "case {case}");
        }
        let balance: f64 = dual.alpha.iter().zip(&y).map(|(a, &v)| a * f64::from(v)).sum();
        assert!(balance.abs() < 1e-9);
        assert!(dual.alpha.iter().all(|&a| (0.0..=1.0).contains(&a)));
    }
}

#[test]
fn nu_bounds_fractions_of_errors_and_support_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for case in 0..50 {
        let (mut x, y) = blobs(&mut rng, 50, 3, if case % 2 == 0 { 2.0 } else { 0.0 });
        if case % 2 == 1 {
            for p in x.iter_mut() {
                for v in p.iter_mut() {
                    let noise: f64 = StandardNormal.sample(&mut rng);
                    *v += 2.0 * noise;
                }
            }
        }
        let n = x.len() as f64;
        let n_pos = y.iter().filter(|&&v| v == 1).count() as f64;
        let nu = 0.5f64.min(2.0 * n_pos.min(n - n_pos) / n);
        let cfg = SvmConfig::nu_svc(nu);
        let (m, dual) = train_binary_dual(&x, &y, &cfg).unwrap();
        let sv = dual.alpha.iter().filter(|&&a| a > 0.0).count() as f64;
        let margin_errors = x
            .iter()
            .zip(&y)
            // margin error: y f < rho - tol in the solver's unscaled units
            .filter(|(xi, &yi)| f64::from(yi) * m.decision(xi) < 1.0 - cfg.tolerance / dual.r)
            .count() as f64;
        let at_bound = dual.alpha.iter().filter(|&&a| a >= 1.0).count() as f64;
        assert!(margin_errors / n <= nu + 1e-12, "case {case}: {} > {nu}", margin_errors / n);
        assert!(at_bound / n <= nu + 1e-12, "case {case}");
        assert!(nu <= sv / n + 1e-12, "case {case}: {nu} > {}", sv / n);
        let sum: f64 = dual.alpha.iter().sum();
        assert!((sum - nu * n).abs() < 1e-9);
    }
}

#[test]
fn scaling_features_keeps_training_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (x, y) = blobs(&mut rng, 30, 3, 2.0);
        // a large C keeps the shrunken copies in the hard-margin regime
        for cfg in [SvmConfig::c_svc(1e4), SvmConfig::nu_svc(0.3)] {
            let base = train_binary(&x, &y, &cfg).unwrap();
            for s in [0.1, 3.0, 50.0] {
                let xs: Vec<Vec<f64>> = x.iter().map(|p| p.iter().map(|v| v * s).collect()).collect();
                let m = train_binary(&xs, &y, &cfg).unwrap();
                for (a, b) in x.iter().zip(&xs) {
                    assert_eq!(base.decision(a) >= 0.0, m.decision(b) >= 0.0);
                }
            }
        }
    }
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (x, y) = blobs(&mut rng, 60, 4, 0.5);
    for cfg in [SvmConfig::c_svc(1.0), SvmConfig::nu_svc(0.4)] {
        assert_eq!(train_binary(&x, &y, &cfg).unwrap(), train_binary(&x, &y, &cfg).unwrap());
    }
}

#[test]
fn two_class_multiclass_equals_binary() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (x, y) = blobs(&mut rng, 40, 3, 1.0);
    let labels: Vec<usize> = y.iter().map(|&v| usize::from(v == 1)).collect();
    for cfg in [SvmConfig::c_svc(1.0), SvmConfig::nu_svc(0.4)] {
        let bin = train_binary(&x, &y, &cfg).unwrap();
        let multi = train_multiclass(&x, &labels, 2, &cfg).unwrap();
        for _ in 0..100 {
            let p: Vec<f64> = (0..3).map(|_| rng.random::<f64>() * 10.0 - 5.0).collect();
            let (class, dv) = multi.predict(&p).unwrap();
            assert_eq!(class, usize::from(bin.decision(&p) >= 0.0));
            assert_eq!(dv, vec![-bin.decision(&p), bin.decision(&p)]);
        }
        let batch = multi.predict_batch(&x).unwrap();
        let single: Vec<usize> = x.iter().map(|p| multi.predict(p).unwrap().0).collect();
        assert_eq!(batch, single);
    }
}

#[test]
fn three_gaussian_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let centers = [[6.0, 0.0], [-3.0, 5.2], [-3.0, -5.2]];
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..40 {
            let p: Vec<f64> = center
                .iter()
                .map(|&m| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect();
            x.push(p);
            labels.push(c);
        }
    }
    for cfg in [SvmConfig::c_svc(1.0), SvmConfig::nu_svc(0.3)] {
        let m = train_multiclass(&x, &labels, 3, &cfg).unwrap();
        let pred = m.predict_batch(&x).unwrap();
        let correct = pred.iter().zip(&labels).filter(|(a, b)| a == b).count();
        assert!(correct as f64 >= 0.95 * x.len() as f64, "{correct}");
    }
}

#[test]
fn multiclass_ties_go_to_lowest_class() {
    let x = vec![vec![0.0], vec![1.0], vec![2.0]];
    let mut m = train_multiclass(&x, &[0, 1, 2], 3, &SvmConfig::c_svc(1.0)).unwrap();
    m.weights = vec![vec![0.0]; 3];
    m.bias = vec![0.5, 0.5, 0.5];
    assert_eq!(m.predict(&[3.0]).unwrap().0, 0);
    m.bias = vec![0.1, 0.5, 0.5];
    assert_eq!(m.predict(&[3.0]).unwrap().0, 1);
}
