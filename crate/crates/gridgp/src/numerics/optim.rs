//! Derivative-free optimizers shared by the fitting routines: a Nelder-Mead
//! simplex for the low-dimensional covariance searches and a golden-section
//! line search for the one-dimensional profiles.

/// Outcome of a simplex minimization.
#[derive(Clone, Debug)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Nelder-Mead minimization. `scale` sets the initial simplex edge per
/// coordinate; convergence is declared when the simplex function spread
/// drops below `tol`.
pub fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    scale: f64,
    tol: f64,
    max_eval: usize,
) -> SimplexResult {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| -> f64 {
        *evals += 1;
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let v0 = eval(x0, &mut evals);
    simplex.push((x0.to_vec(), v0));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += if x[i].abs() > 1.0 { scale * x[i].abs() } else { scale };
        let v = eval(&x, &mut evals);
        simplex.push((x, v));
    }

    let mut converged = false;
    while evals < max_eval {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let spread = simplex[n].1 - simplex[0].1;
        if spread.abs() < tol {
            converged = true;
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|d| simplex[..n].iter().map(|(x, _)| x[d]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflected: Vec<f64> = (0..n)
            .map(|d| centroid[d] + alpha * (centroid[d] - worst.0[d]))
            .collect();
        let fr = eval(&reflected, &mut evals);
        if fr < simplex[0].1 {
            let expanded: Vec<f64> = (0..n)
                .map(|d| centroid[d] + gamma * (reflected[d] - centroid[d]))
                .collect();
            let fe = eval(&expanded, &mut evals);
            simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (reflected, fr);
        } else {
            let contracted: Vec<f64> = (0..n)
                .map(|d| centroid[d] + rho * (worst.0[d] - centroid[d]))
                .collect();
            let fc = eval(&contracted, &mut evals);
            if fc < worst.1 {
                simplex[n] = (contracted, fc);
            } else {
                // Shrink toward the best vertex.
                let best = simplex[0].0.clone();
                for vtx in simplex.iter_mut().skip(1) {
                    for d in 0..n {
                        vtx.0[d] = best[d] + sigma * (vtx.0[d] - best[d]);
                    }
                    vtx.1 = eval(&vtx.0, &mut evals);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let best = simplex.remove(0);
    SimplexResult { x: best.0, value: best.1, evaluations: evals, converged }
}

/// Golden-section minimization of a unimodal function on `[lo, hi]`.
/// Returns the abscissa of the minimum.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let res = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + 2.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            0.5,
            1e-10,
            2000,
        );
        assert!(res.converged);
        assert!((res.x[0] - 1.5).abs() < 1e-4);
        assert!((res.x[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_two_dim() {
        let res = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            0.5,
            1e-12,
            5000,
        );
        assert!((res.x[0] - 1.0).abs() < 1e-3, "{:?}", res.x);
        assert!((res.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn golden_section_finds_minimum() {
        let x = golden_section(|t| (t - 0.7).powi(2) + 3.0, 0.0, 2.0, 1e-8);
        assert!((x - 0.7).abs() < 1e-6);
    }
}
