//! Levenberg–Marquardt trust-region least squares.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct LsqOptions {
    pub max_iterations: usize,
    /// Convergence when every free Jacobian column makes an angle with the
    /// residual whose cosine is below `gtol`.
    pub gtol: f64,
    /// Convergence when the residual norm falls below this absolute floor.
    pub residual_floor: f64,
    /// Stop when the relative step size falls below `xtol`.
    pub xtol: f64,
    /// Parameters with `false` are held at their initial value.
    pub free: Option<Vec<bool>>,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gtol: 1e-6,
            residual_floor: 0.0,
            xtol: 1e-14,
            free: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqResult {
    pub params: DVector<f64>,
    /// Standard errors from s²(JᵀJ)⁻¹; zero for fixed parameters, +∞ for
    /// directions the data do not constrain.
    pub std_errors: DVector<f64>,
    /// ½‖r‖².
    pub cost: f64,
    pub residual_norm: f64,
    /// Largest column cosine |J_iᵀ r| / (‖J_i‖ ‖r‖) at the solution.
    pub gradient_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Forward-difference Jacobian with relative step `h`.
pub fn numerical_jacobian<R>(residual: &R, x: &DVector<f64>, h: f64) -> DMatrix<f64>
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
{
    let r0 = residual(x);
    let mut j = DMatrix::zeros(r0.len(), x.len());
    for k in 0..x.len() {
        let step = h * x[k].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let col = (residual(&xp) - residual(&xm)) / (2.0 * step);
        j.set_column(k, &col);
    }
    j
}

fn gradient_cosine(j: &DMatrix<f64>, r: &DVector<f64>) -> f64 {
    let rn = r.norm();
    if rn == 0.0 {
        return 0.0;
    }
    (0..j.ncols())
        .map(|k| {
            let c = j.column(k);
            let cn = c.norm();
            if cn == 0.0 {
                0.0
            } else {
                (c.dot(r) / (cn * rn)).abs()
            }
        })
        .fold(0.0, f64::max)
}

/// Minimise ½‖r(x)‖² from `x0` with analytic Jacobian `jacobian`.
pub fn levenberg_marquardt<R, J>(residual: R, jacobian: J, x0: DVector<f64>, opts: &LsqOptions) -> LsqResult
where
    R: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let n = x0.len();
    let free: Vec<usize> = match &opts.free {
        Some(mask) => (0..n).filter(|&k| mask.get(k).copied().unwrap_or(true)).collect(),
        None => (0..n).collect(),
    };
    let reduce = |jf: &DMatrix<f64>| DMatrix::from_fn(jf.nrows(), free.len(), |i, k| jf[(i, free[k])]);

    let mut x = x0;
    let mut r = residual(&x);
    let mut cost = 0.5 * r.norm_squared();
    let mut evaluations = 1;
    let mut history = vec![cost];
    let mut jac = reduce(&jacobian(&x));
    let mut lambda = 1e-3;
    let mut nu = 2.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut diag = DVector::from_fn(free.len(), |k, _| jac.column(k).norm().max(1e-300));

    while iterations < opts.max_iterations {
        if !cost.is_finite() {
            break;
        }
        if r.norm() <= opts.residual_floor || gradient_cosine(&jac, &r) <= opts.gtol || free.is_empty() {
            converged = true;
            break;
        }
        iterations += 1;
        for k in 0..free.len() {
            diag[k] = diag[k].max(jac.column(k).norm());
        }
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let mut accepted = false;
        let mut small_step = false;
        for _ in 0..60 {
            let mut a = jtj.clone();
            for k in 0..free.len() {
                a[(k, k)] += lambda * diag[k] * diag[k];
            }
            let Some(chol) = a.cholesky() else {
                lambda *= nu;
                nu *= 2.0;
                continue;
            };
            let delta = chol.solve(&(-&g));
            let mut xn = x.clone();
            for (k, &p) in free.iter().enumerate() {
                xn[p] += delta[k];
            }
            let rn = residual(&xn);
            evaluations += 1;
            let cost_new = 0.5 * rn.norm_squared();
            let predicted = -(g.dot(&delta) + 0.5 * delta.dot(&(&jtj * &delta)));
            let rho = if predicted > 0.0 { (cost - cost_new) / predicted } else { -1.0 };
            let step_rel = delta.norm() / (free.iter().map(|&p| x[p] * x[p]).sum::<f64>().sqrt() + opts.xtol);
            if cost_new.is_finite() && rho > 1e-4 && cost_new <= cost {
                x = xn;
                r = rn;
                cost = cost_new;
                history.push(cost);
                jac = reduce(&jacobian(&x));
                lambda *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                nu = 2.0;
                accepted = true;
                small_step = step_rel <= opts.xtol;
                break;
            }
            if step_rel <= opts.xtol {
                small_step = true;
                break;
            }
            lambda *= nu;
            nu *= 2.0;
        }
        if !accepted || small_step {
            // No further progress possible; report whether the gradient test holds.
            converged = r.norm() <= opts.residual_floor || gradient_cosine(&jac, &r) <= opts.gtol;
            break;
        }
    }

    let m = r.len();
    let dof = m.saturating_sub(free.len()).max(1) as f64;
    let s2 = 2.0 * cost / dof;
    let mut std_errors = DVector::zeros(n);
    let jtj = jac.transpose() * &jac;
    let inv = jtj.clone().try_inverse().filter(|inv| inv.iter().all(|v| v.is_finite()));
    for (k, &p) in free.iter().enumerate() {
        std_errors[p] = match &inv {
            Some(inv) if inv[(k, k)] >= 0.0 => (s2 * inv[(k, k)]).sqrt(),
            _ => f64::INFINITY,
        };
    }
    LsqResult {
        gradient_norm: gradient_cosine(&jac, &r),
        params: x,
        std_errors,
        cost,
        residual_norm: r.norm(),
        iterations,
        evaluations,
        converged,
        cost_history: history,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let res = |x: &DVector<f64>| DVector::from_vec(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]]);
        let jac = |x: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[-20.0 * x[0], 10.0, -1.0, 0.0]);
        let out = levenberg_marquardt(res, jac, DVector::from_vec(vec![-1.2, 1.0]), &LsqOptions {
            residual_floor: 1e-14,
            ..Default::default()
        });
        assert!(out.converged);
        assert!((out.params[0] - 1.0).abs() < 1e-8 && (out.params[1] - 1.0).abs() < 1e-8);
        assert!(out.cost_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn fixed_parameters_stay_put() {
        let res = |x: &DVector<f64>| DVector::from_vec(vec![x[0] - 3.0, x[1] - 4.0]);
        let jac = |_: &DVector<f64>| DMatrix::identity(2, 2);
        let out = levenberg_marquardt(res, jac, DVector::from_vec(vec![0.0, 0.0]), &LsqOptions {
            free: Some(vec![true, false]),
            gtol: 1e-12,
            residual_floor: 1e-12,
            ..Default::default()
        });
        assert!((out.params[0] - 3.0).abs() < 1e-7);
        assert_eq!(out.params[1], 0.0);
        assert_eq!(out.std_errors[1], 0.0);
    }

    #[test]
    fn numerical_jacobian_matches_analytic() {
        let res = |x: &DVector<f64>| DVector::from_vec(vec![x[0].sin() * x[1], x[1].exp()]);
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let j = numerical_jacobian(&res, &x, 1e-6);
        let a = DMatrix::from_row_slice(2, 2, &[0.3f64.cos() * -0.7, 0.3f64.sin(), 0.0, (-0.7f64).exp()]);
        assert!((j - a).abs().max() < 1e-9);
    }
}
