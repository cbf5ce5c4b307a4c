//! Derivative-free minimisers: a Nelder–Mead simplex for the multi-parameter
//! fits, golden-section search for allocation problems, and bisection.

/// Stopping rule for [`nelder_mead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Converged once max f - min f over the simplex falls below this.
    pub ftol: f64,
    pub max_evals: usize,
    /// Fresh simplices rebuilt around the best point after convergence,
    /// to escape premature collapse.
    pub restarts: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            ftol: 1e-10,
            max_evals: 50_000,
            restarts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimises `f` from `x0` with initial simplex edges `steps`. Uses the
/// dimension-adaptive coefficients of Gao and Han, which behave better than
/// the classic ones beyond a handful of parameters. NaN counts as +inf.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    steps: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let n = x0.len();
    assert_eq!(steps.len(), n, "one step per coordinate");
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };
    if n == 0 {
        let v = eval(x0, &mut evals);
        return SimplexResult {
            x: Vec::new(),
            f: v,
            evals,
            converged: true,
        };
    }

    let nf = n as f64;
    let (alpha, gamma, rho, sigma) = if n >= 2 {
        (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf)
    } else {
        (1.0, 2.0, 0.5, 0.5)
    };

    let mut best_x = x0.to_vec();
    let mut best_f = eval(x0, &mut evals);
    let mut converged = false;

    for round in 0..=opts.restarts {
        let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
        let mut values: Vec<f64> = Vec::with_capacity(n + 1);
        simplex.push(best_x.clone());
        values.push(best_f);
        for i in 0..n {
            let mut v = best_x.clone();
            let step = if steps[i] != 0.0 { steps[i] } else { 1e-3 };
            v[i] += step;
            values.push(eval(&v, &mut evals));
            simplex.push(v);
        }

        let mut order: Vec<usize> = (0..=n).collect();
        let mut centroid = vec![0.0; n];
        let mut trial = vec![0.0; n];
        let mut trial2 = vec![0.0; n];
        converged = false;
        loop {
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            let (lo, hi, second) = (order[0], order[n], order[n - 1]);
            if values[hi] - values[lo] < opts.ftol
                || (values[hi].is_infinite() && values[lo].is_infinite())
            {
                converged = values[lo].is_finite();
                break;
            }
            if evals >= opts.max_evals {
                break;
            }

            centroid.iter_mut().for_each(|c| *c = 0.0);
            for &j in &order[..n] {
                for (c, x) in centroid.iter_mut().zip(&simplex[j]) {
                    *c += x;
                }
            }
            centroid.iter_mut().for_each(|c| *c /= nf);

            for k in 0..n {
                trial[k] = centroid[k] + alpha * (centroid[k] - simplex[hi][k]);
            }
            let fr = eval(&trial, &mut evals);
            if fr < values[lo] {
                for k in 0..n {
                    trial2[k] = centroid[k] + gamma * (trial[k] - centroid[k]);
                }
                let fe = eval(&trial2, &mut evals);
                if fe < fr {
                    simplex[hi].copy_from_slice(&trial2);
                    values[hi] = fe;
                } else {
                    simplex[hi].copy_from_slice(&trial);
                    values[hi] = fr;
                }
                continue;
            }
            if fr < values[second] {
                simplex[hi].copy_from_slice(&trial);
                values[hi] = fr;
                continue;
            }
            let outside = fr < values[hi];
            for k in 0..n {
                trial2[k] = if outside {
                    centroid[k] + rho * (trial[k] - centroid[k])
                } else {
                    centroid[k] - rho * (centroid[k] - simplex[hi][k])
                };
            }
            let fc = eval(&trial2, &mut evals);
            if (outside && fc <= fr) || (!outside && fc < values[hi]) {
                simplex[hi].copy_from_slice(&trial2);
                values[hi] = fc;
                continue;
            }
            let anchor = simplex[lo].clone();
            for &j in &order[1..] {
                for k in 0..n {
                    simplex[j][k] = anchor[k] + sigma * (simplex[j][k] - anchor[k]);
                }
                values[j] = eval(&simplex[j], &mut evals);
            }
        }

        let lo = (0..=n)
            .min_by(|&a, &b| values[a].total_cmp(&values[b]))
            .expect("nonempty simplex");
        let improved = best_f - values[lo];
        if values[lo] <= best_f {
            best_f = values[lo];
            best_x.clone_from(&simplex[lo]);
        }
        if evals >= opts.max_evals {
            break;
        }
        // a restart that finds nothing new confirms the optimum
        if round > 0 && improved < opts.ftol {
            break;
        }
    }

    SimplexResult {
        x: best_x,
        f: best_f,
        evals,
        converged,
    }
}

/// Minimum of a unimodal `f` on `[a, b]`; returns `(x, f(x))`.
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
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
    let x = 0.5 * (a + b);
    let fx = f(x);
    if fx <= fc.min(fd) {
        (x, fx)
    } else if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Root of `f` on `[a, b]` given a sign change. `None` without one.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> Option<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Some(a);
    }
    if fb == 0.0 {
        return Some(b);
    }
    if !(fa.is_finite() && fb.is_finite()) || fa.signum() == fb.signum() {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol {
            return Some(m);
        }
        let fm = f(m);
        if fm == 0.0 {
            return Some(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn simplex_finds_rosenbrock_minimum() {
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn simplex_handles_ten_dimensions() {
        let target: Vec<f64> = (0..10).map(|i| i as f64 * 0.1 - 0.3).collect();
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&target)
                .enumerate()
                .map(|(i, (a, b))| (1.0 + i as f64) * (a - b).powi(2))
                .sum()
        };
        let r = nelder_mead(f, &[0.0; 10], &[0.2; 10], &SimplexOptions::default());
        assert!(r.converged);
        for (a, b) in r.x.iter().zip(&target) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn simplex_respects_eval_budget() {
        let opts = SimplexOptions { max_evals: 50, ..Default::default() };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &[0.1, 0.1], &opts);
        assert!(!r.converged);
        assert!(r.evals <= 50 + 3);
    }

    #[test]
    fn simplex_treats_nan_as_infinite() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 2.0).powi(2) };
        let r = nelder_mead(f, &[0.5], &[0.5], &SimplexOptions::default());
        assert!((r.x[0] - 2.0).abs() < 1e-4);
    }

    #[test]
    fn golden_section_quadratic() {
        let (x, fx) = golden_section(|x| (x - 1.3).powi(2) + 2.0, -10.0, 10.0, 1e-10);
        // flatness near the minimum limits x to about sqrt(eps)
        assert!((x - 1.3).abs() < 1e-6);
        assert!((fx - 2.0).abs() < 1e-14);
    }

    #[test]
    fn bisect_sqrt_two() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-12);
        assert!(bisect(|x| x * x + 1.0, -1.0, 1.0, 1e-12).is_none());
    }
}
