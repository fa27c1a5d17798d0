//! Statistical oracles and hypothesis tests used by the test suites.
//!
//! Everything here is deliberately independent of the production code paths
//! it checks: the grid filter integrates the state-space recursion
//! numerically instead of using closed forms, and the eigensolver is a plain
//! cyclic Jacobi iteration. Compiled for tests and, via the `testutil`
//! feature, for integration and acceptance suites.

use crate::math::{ln_gamma, log_sum_exp};
use crate::models::{Lgssm, Model};
use crate::state::{Dataset, Theta};

/// Survival function of the Kolmogorov distribution: `P(sup |B(t)| > x)`
/// for the Brownian-bridge limit, accurate to ~1e-14 on both tails.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // Jacobi-theta form converges fast for small arguments.
        let f = std::f64::consts::PI * std::f64::consts::PI / (8.0 * x * x);
        let mut cdf = 0.0;
        for k in 0..5 {
            let odd = (2 * k + 1) as f64;
            cdf += (-odd * odd * f).exp();
        }
        cdf *= (2.0 * std::f64::consts::PI).sqrt() / x;
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let mut sf = 0.0;
        for k in 1..=100 {
            let term = (-2.0 * (k * k) as f64 * x * x).exp();
            if term < 1e-16 {
                break;
            }
            sf += if k % 2 == 1 { 2.0 * term } else { -2.0 * term };
        }
        sf.clamp(0.0, 1.0)
    }
}

fn ks_p_value(d: f64, n_effective: f64) -> f64 {
    let sqrt_n = n_effective.sqrt();
    kolmogorov_sf((sqrt_n + 0.12 + 0.11 / sqrt_n) * d)
}

/// One-sample Kolmogorov-Smirnov test against the CDF `cdf`.
/// Returns (statistic, asymptotic p-value).
pub fn ks_one_sample(sample: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    assert!(!sample.is_empty(), "empty sample");
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    (d, ks_p_value(d, n))
}

/// Two-sample Kolmogorov-Smirnov test.
/// Returns (statistic, asymptotic p-value).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = xs[i];
        let y = ys[j];
        let v = x.min(y);
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_e = (n * m) as f64 / (n + m) as f64;
    (d, ks_p_value(d, n_e))
}

/// Regularized upper incomplete gamma function Q(a, x) = Γ(a, x) / Γ(a).
/// Series expansion below the diagonal, Lentz continued fraction above.
pub fn gamma_cdf_upper(a: f64, x: f64) -> f64 {
    assert!(a > 0.0 && x >= 0.0, "invalid incomplete-gamma arguments");
    if x == 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        // Q = 1 - P with P by power series.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..500 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-15 {
                break;
            }
        }
        let p = sum * (-x + a * x.ln() - ln_gamma(a)).exp();
        (1.0 - p).clamp(0.0, 1.0)
    } else {
        // Modified Lentz evaluation of the continued fraction.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-15 {
                break;
            }
        }
        (h * (-x + a * x.ln() - ln_gamma(a)).exp()).clamp(0.0, 1.0)
    }
}

/// Chi-square goodness-of-fit test of observed `counts` against cell
/// probabilities `probs`. Returns (statistic, p-value with k-1 degrees of
/// freedom).
pub fn chi_square_gof(counts: &[u64], probs: &[f64]) -> (f64, f64) {
    assert_eq!(counts.len(), probs.len(), "cell count mismatch");
    assert!(counts.len() >= 2, "need at least two cells");
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    for (&c, &p) in counts.iter().zip(probs) {
        let expected = total as f64 * p;
        assert!(expected > 0.0, "cell with zero expected count");
        let diff = c as f64 - expected;
        stat += diff * diff / expected;
    }
    let df = (counts.len() - 1) as f64;
    (stat, gamma_cdf_upper(df / 2.0, stat / 2.0))
}

/// Total variation distance between two finite distributions on the same
/// support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "support mismatch");
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Marginal log likelihood of a one-dimensional state-space model computed
/// by brute force: the filtering recursion on a fixed quadrature grid with
/// trapezoid weights. Independent of any closed-form filter the model has.
pub fn grid_hmm_loglik(model: &dyn Model, theta: &Theta, data: &Dataset, grid: &[f64]) -> f64 {
    assert_eq!(model.state_dim(), 1, "grid filter handles scalar states");
    let n = grid.len();
    assert!(n >= 3, "grid too coarse");
    let mut log_w = Vec::with_capacity(n);
    for i in 0..n {
        let left = if i == 0 { grid[0] } else { grid[i - 1] };
        let right = if i == n - 1 { grid[n - 1] } else { grid[i + 1] };
        log_w.push(((right - left) / 2.0).ln());
    }
    // Filter density phi (log scale) normalized so sum(exp(phi) * w) = 1.
    let mut phi: Vec<f64> = (0..n)
        .map(|i| {
            model.log_init(theta, &[grid[i]]) + model.log_obs(theta, 0, data.obs()[0], &[grid[i]])
        })
        .collect();
    let scratch: Vec<f64> = phi.iter().zip(&log_w).map(|(p, w)| p + w).collect();
    let mut total = log_sum_exp(&scratch);
    for p in phi.iter_mut() {
        *p -= total;
    }
    let mut weighted = vec![0.0; n];
    let mut predictive = vec![0.0; n];
    for t in 1..=data.t_max() {
        for i in 0..n {
            weighted[i] = phi[i] + log_w[i];
        }
        for (j, pred) in predictive.iter_mut().enumerate() {
            let terms: Vec<f64> = (0..n)
                .map(|i| weighted[i] + model.log_trans(theta, t, &[grid[i]], &[grid[j]]))
                .collect();
            *pred = log_sum_exp(&terms) + model.log_obs(theta, t, data.obs()[t], &[grid[j]]);
        }
        let inc_terms: Vec<f64> = predictive.iter().zip(&log_w).map(|(p, w)| p + w).collect();
        let inc = log_sum_exp(&inc_terms);
        total += inc;
        for (p, u) in phi.iter_mut().zip(&predictive) {
            *p = u - inc;
        }
    }
    total
}

/// Log evidence of the linear-Gaussian model under its flat coefficient
/// prior on (-1, 1): midpoint quadrature of the exact per-parameter
/// likelihood over `n_grid` cells.
pub fn lgssm_grid_log_evidence(model: &Lgssm, data: &Dataset, n_grid: usize) -> f64 {
    // Each midpoint cell carries prior mass (1/2) * (2/n) = 1/n.
    let (_, logliks) = lgssm_grid_points_logposts(model, data, n_grid);
    log_sum_exp(&logliks) - (n_grid as f64).ln()
}

fn lgssm_grid_points_logposts(model: &Lgssm, data: &Dataset, n_grid: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n_grid >= 2, "grid too coarse");
    let mut points = Vec::with_capacity(n_grid);
    let mut logliks = Vec::with_capacity(n_grid);
    for i in 0..n_grid {
        let rho = -1.0 + 2.0 * (i as f64 + 0.5) / n_grid as f64;
        points.push(rho);
        logliks.push(model.kalman_loglik(&Theta::new(vec![rho]), data));
    }
    (points, logliks)
}

/// Posterior of the linear-Gaussian model's coefficient on an `n_grid`-cell
/// midpoint partition of (-1, 1): cell midpoints and normalized cell
/// probabilities. The reference distribution for sampler-correctness checks.
pub fn lgssm_grid_posterior(model: &Lgssm, data: &Dataset, n_grid: usize) -> (Vec<f64>, Vec<f64>) {
    let (points, logliks) = lgssm_grid_points_logposts(model, data, n_grid);
    let z = log_sum_exp(&logliks);
    let probs: Vec<f64> = logliks.iter().map(|l| (l - z).exp()).collect();
    (points, probs)
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// rows. Slow and dependency-free: the oracle for the production solver.
// Rotations update paired columns in place; index loops keep the symmetry
// visible.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigen_sym(matrix: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = matrix.len();
    assert!(n > 0, "empty matrix");
    for row in matrix {
        assert_eq!(row.len(), n, "matrix not square");
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    for i in 0..n {
        for j in 0..n {
            assert!(
                (a[i][j] - a[j][i]).abs() <= 1e-10 * (1.0 + a[i][j].abs()),
                "matrix not symmetric"
            );
        }
    }
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _sweep in 0..200 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i][j] * a[i][j];
            }
        }
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-28 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let evals: Vec<f64> = order.iter().map(|&i| a[i][i]).collect();
    let evecs: Vec<Vec<f64>> = order
        .iter()
        .map(|&col| (0..n).map(|row| v[row][col]).collect())
        .collect();
    (evals, evecs)
}
