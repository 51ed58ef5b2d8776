//! Small dense optimizers for the few-parameter fits.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead simplex minimization with the usual coefficients
/// (reflection 1, expansion 2, contraction ½, shrink ½).
pub fn nelder_mead<F>(f: F, x0: &[f64], steps: &[f64], tol: f64, max_iter: usize) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += steps[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();
        let spread = values[n] - values[0];
        let size =
            simplex[1..].iter().flat_map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs())).fold(0.0, f64::max);
        if spread.abs() <= tol * (1.0 + values[0].abs()) && size <= tol.sqrt() {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let towards = |t: f64| -> Vec<f64> { centroid.iter().zip(&simplex[n]).map(|(c, w)| c + t * (w - c)).collect() };
        let xr = towards(-1.0);
        let fr = f(&xr);
        if fr < values[0] {
            let xe = towards(-2.0);
            let fe = f(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            let (xc, fc) = if fr < values[n] {
                let xc = towards(-0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = towards(0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                let best = simplex[0].clone();
                for i in 1..=n {
                    simplex[i] = simplex[i].iter().zip(&best).map(|(v, b)| b + 0.5 * (v - b)).collect();
                    values[i] = f(&simplex[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    Minimum { x: simplex[best].clone(), value: values[best], iterations, converged }
}

#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: Vec<f64>,
    pub chi2: f64,
    pub iterations: usize,
    pub converged: bool,
    /// JᵀJ at the solution.
    pub normal_matrix: DMatrix<f64>,
}

/// Levenberg–Marquardt on Σ rᵢ(x)²; `model` returns residuals and Jacobian.
pub fn levenberg_marquardt<F>(model: F, x0: &[f64], max_iter: usize) -> LeastSquares
where
    F: Fn(&[f64]) -> (DVector<f64>, DMatrix<f64>),
{
    let mut x = x0.to_vec();
    let (mut r, mut j) = model(&x);
    let mut chi2 = r.norm_squared();
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        let mut improved = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for i in 0..a.nrows() {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-300);
            }
            let Some(step) = a.clone().cholesky().map(|c| c.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let (tr, tj) = model(&trial);
            let tchi2 = tr.norm_squared();
            if tchi2.is_finite() && tchi2 <= chi2 {
                let rel_step = step.iter().zip(&x).map(|(s, v)| s.abs() / (v.abs() + 1e-12)).fold(0.0, f64::max);
                let small = chi2 - tchi2 <= 1e-15 * chi2.max(1e-300) || rel_step < 1e-14;
                x = trial;
                r = tr;
                j = tj;
                chi2 = tchi2;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if small {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no decrease at any damping: stationary to working precision
            converged = g.norm() <= 1e-6 * (1.0 + chi2.sqrt()) * (1.0 + jtj.diagonal().amax().sqrt());
            break;
        }
        if converged {
            break;
        }
    }
    let normal_matrix = j.transpose() * &j;
    LeastSquares { x, chi2, iterations, converged, normal_matrix }
}
