//! Small unconstrained minimisers for low-dimensional likelihood problems.

/// A smooth objective. `gradient` fills `grad` and returns the value.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> f64;
    fn gradient(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    /// Stop once an iteration lowers the objective by less than
    /// `ftol * (|f| + ftol)`.
    pub ftol: f64,
    /// Stop once the largest gradient component falls below this.
    pub gtol: f64,
    pub max_iter: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            ftol: 1e-10,
            gtol: 1e-9,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// BFGS on the inverse Hessian with backtracking (Armijo) line search.
pub fn bfgs<O: Objective>(objective: &mut O, x0: &[f64], tol: Tolerance) -> Minimum {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = objective.gradient(&x, &mut g);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Minimum {
            x,
            value: f,
            iterations: 0,
            converged: false,
        };
    }

    let mut inv_h = identity(n);
    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut fresh_metric = true;

    for iter in 1..=tol.max_iter {
        if inf_norm(&g) <= tol.gtol {
            return Minimum {
                x,
                value: f,
                iterations: iter - 1,
                converged: true,
            };
        }

        for i in 0..n {
            dir[i] = -(0..n).map(|j| inv_h[i * n + j] * g[j]).sum::<f64>();
        }
        let mut slope = dot(&dir, &g);
        if slope >= 0.0 {
            // Metric lost positive definiteness; fall back to steepest descent.
            inv_h = identity(n);
            fresh_metric = true;
            for i in 0..n {
                dir[i] = -g[i];
            }
            slope = dot(&dir, &g);
        }

        // Armijo backtracking.
        let mut step = if fresh_metric {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            let f_try = objective.value(&x_new);
            if f_try.is_finite() && f_try <= f + 1e-4 * step * slope {
                accepted = Some(f_try);
                break;
            }
            step *= 0.5;
        }
        let Some(_) = accepted else {
            if fresh_metric {
                // No descent possible along the gradient: stationary to working precision.
                return Minimum {
                    x,
                    value: f,
                    iterations: iter,
                    converged: inf_norm(&g) <= tol.gtol.sqrt(),
                };
            }
            inv_h = identity(n);
            fresh_metric = true;
            continue;
        };

        let f_new = objective.gradient(&x_new, &mut g_new);
        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        let decrease = f - f_new;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        f = f_new;

        if decrease.abs() <= tol.ftol * (f.abs() + tol.ftol) {
            return Minimum {
                x,
                value: f,
                iterations: iter,
                converged: true,
            };
        }

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh_metric {
                // Scale the initial metric (Nocedal & Wright 6.20).
                let scale = sy / dot(&y, &y);
                for v in inv_h.iter_mut() {
                    *v *= scale;
                }
                fresh_metric = false;
            }
            update_inverse_hessian(&mut inv_h, &s, &y, sy);
        }
    }

    Minimum {
        x,
        value: f,
        iterations: tol.max_iter,
        converged: false,
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn update_inverse_hessian(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum())
        .collect();
    let yhy = dot(y, &hy);
    let c = (1.0 + rho * yhy) * rho;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

/// Derivative-free simplex search (Nelder-Mead with standard coefficients).
pub fn nelder_mead<F>(mut f: F, x0: &[f64], step: &[f64], tol: Tolerance) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |f: &mut F, x: &[f64]| {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += step[i];
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(&mut f, v)).collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < tol.max_iter {
        iterations += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let best = values[0];
        let worst = values[n];
        if worst.is_finite() && (worst - best).abs() <= tol.ftol * (best.abs() + tol.ftol) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        let toward = |t: f64| -> Vec<f64> {
            (0..n)
                .map(|j| centroid[j] + t * (simplex[n][j] - centroid[j]))
                .collect()
        };

        let reflected = toward(-1.0);
        let f_r = eval(&mut f, &reflected);
        if f_r < values[0] {
            let expanded = toward(-2.0);
            let f_e = eval(&mut f, &expanded);
            if f_e < f_r {
                simplex[n] = expanded;
                values[n] = f_e;
            } else {
                simplex[n] = reflected;
                values[n] = f_r;
            }
        } else if f_r < values[n - 1] {
            simplex[n] = reflected;
            values[n] = f_r;
        } else {
            let (contracted, f_c) = if f_r < values[n] {
                let c = toward(-0.5);
                let fc = eval(&mut f, &c);
                (c, fc)
            } else {
                let c = toward(0.5);
                let fc = eval(&mut f, &c);
                (c, fc)
            };
            if f_c < values[n].min(f_r) {
                simplex[n] = contracted;
                values[n] = f_c;
            } else {
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    }
                    values[i] = eval(&mut f, &simplex[i]);
                }
            }
        }
    }

    let best = (0..=n)
        .min_by(|&a, &b| values[a].total_cmp(&values[b]))
        .unwrap_or(0);
    Minimum {
        x: simplex[best].clone(),
        value: values[best],
        iterations,
        converged,
    }
}
