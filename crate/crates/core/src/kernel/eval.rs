use std::f64::consts::PI;

use nalgebra::DMatrix;

use super::expr::{BaseKind, KernelExpr, Operator};
use crate::error::{Error, Result};

impl BaseKind {
    /// k(t, u) for this base kernel; callers guarantee valid parameters.
    pub fn eval(self, p: &[f64; 3], t: f64, u: f64) -> f64 {
        match self {
            BaseKind::Linear => {
                let (a, b) = (t - p[2], u - p[2]);
                p[0] + p[1] * (a * b)
            }
            BaseKind::Periodic => {
                let s = (PI * (t - u).abs() / p[2]).sin();
                p[0] * (-2.0 * (s * s) / (p[1] * p[1])).exp()
            }
            BaseKind::GammaExponential => {
                let r = (t - u).abs();
                if r == 0.0 {
                    return p[0];
                }
                p[0] * (-(r / p[1]).powf(p[2])).exp()
            }
        }
    }

    /// k(t, u) together with the analytic partial derivatives in `grad`.
    pub fn eval_grad(self, p: &[f64; 3], t: f64, u: f64, grad: &mut [f64]) -> f64 {
        match self {
            BaseKind::Linear => {
                let (a, b) = (t - p[2], u - p[2]);
                grad[0] = 1.0;
                grad[1] = a * b;
                grad[2] = -p[1] * (a + b);
                p[0] + p[1] * (a * b)
            }
            BaseKind::Periodic => {
                let arg = PI * (t - u).abs() / p[2];
                let (s, c) = arg.sin_cos();
                let e = (-2.0 * (s * s) / (p[1] * p[1])).exp();
                let v = p[0] * e;
                grad[0] = e;
                grad[1] = v * 4.0 * s * s / (p[1] * p[1] * p[1]);
                grad[2] = v * 4.0 * s * c * arg / (p[1] * p[1] * p[2]);
                v
            }
            BaseKind::GammaExponential => {
                let r = (t - u).abs();
                if r == 0.0 {
                    grad[0] = 1.0;
                    grad[1] = 0.0;
                    grad[2] = 0.0;
                    return p[0];
                }
                let x = r / p[1];
                let z = x.powf(p[2]);
                let e = (-z).exp();
                let v = p[0] * e;
                grad[0] = e;
                grad[1] = v * p[2] * z / p[1];
                grad[2] = -v * z * x.ln();
                v
            }
        }
    }
}

/// Changepoint switch value (1 + tanh((t - loc) / width)) / 2.
fn switch(loc: f64, width: f64, t: f64) -> f64 {
    0.5 * (1.0 + ((t - loc) / width).tanh())
}

impl KernelExpr {
    /// k(t, u) without validation.
    pub fn eval(&self, t: f64, u: f64) -> f64 {
        match self {
            KernelExpr::Base { kind, params } => kind.eval(params, t, u),
            KernelExpr::Node { op, children } => {
                let (l, r) = (&children[0], &children[1]);
                match op {
                    Operator::Sum => l.eval(t, u) + r.eval(t, u),
                    Operator::Product => l.eval(t, u) * r.eval(t, u),
                    Operator::ChangePoint([loc, width]) => {
                        let (s1, s2) = (switch(*loc, *width, t), switch(*loc, *width, u));
                        (s1 * s2) * l.eval(t, u) + ((1.0 - s1) * (1.0 - s2)) * r.eval(t, u)
                    }
                }
            }
        }
    }

    /// k(t, u) and its gradient with respect to all parameters in canonical
    /// order; `grad.len()` must equal `param_count()`.
    pub fn eval_grad(&self, t: f64, u: f64, grad: &mut [f64]) -> f64 {
        match self {
            KernelExpr::Base { kind, params } => kind.eval_grad(params, t, u, grad),
            KernelExpr::Node { op, children } => {
                let own = op.params().len();
                let dl = children[0].param_count();
                let (head, rest) = grad.split_at_mut(own);
                let (gl, gr) = rest.split_at_mut(dl);
                let vl = children[0].eval_grad(t, u, gl);
                let vr = children[1].eval_grad(t, u, gr);
                match op {
                    Operator::Sum => vl + vr,
                    Operator::Product => {
                        gl.iter_mut().for_each(|g| *g *= vr);
                        gr.iter_mut().for_each(|g| *g *= vl);
                        vl * vr
                    }
                    Operator::ChangePoint([loc, width]) => {
                        let (zt, zu) = ((t - loc) / width, (u - loc) / width);
                        let (s1, s2) = (0.5 * (1.0 + zt.tanh()), 0.5 * (1.0 + zu.tanh()));
                        // d s / d loc = -sech^2(z) / (2 w), d s / d w = -z sech^2(z) / (2 w)
                        let (h1, h2) = (1.0 - zt.tanh().powi(2), 1.0 - zu.tanh().powi(2));
                        let ds1 = [-0.5 * h1 / width, -0.5 * h1 * zt / width];
                        let ds2 = [-0.5 * h2 / width, -0.5 * h2 * zu / width];
                        for i in 0..2 {
                            let d_on = ds1[i] * s2 + s1 * ds2[i];
                            let d_off = -(ds1[i] * (1.0 - s2) + (1.0 - s1) * ds2[i]);
                            head[i] = d_on * vl + d_off * vr;
                        }
                        let (w_on, w_off) = (s1 * s2, (1.0 - s1) * (1.0 - s2));
                        gl.iter_mut().for_each(|g| *g *= w_on);
                        gr.iter_mut().for_each(|g| *g *= w_off);
                        w_on * vl + w_off * vr
                    }
                }
            }
        }
    }
}

/// Validated kernel evaluation.
pub fn eval_kernel(expr: &KernelExpr, t: f64, u: f64) -> Result<f64> {
    if !t.is_finite() || !u.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "non-finite time argument ({t}, {u})"
        )));
    }
    expr.validate()?;
    Ok(expr.eval(t, u))
}

/// Gram matrix `K[i][j] = k(times[i], times[j])`; symmetric by construction.
pub fn cov_matrix(expr: &KernelExpr, times: &[f64]) -> DMatrix<f64> {
    let n = times.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..=j {
            let v = expr.eval(times[i], times[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `K[i][j] = k(rows[i], cols[j])`.
pub fn cross_cov_matrix(expr: &KernelExpr, rows: &[f64], cols: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| expr.eval(rows[i], cols[j]))
}

/// `sum_ij w[i][j] * dK[i][j] / d theta` for every parameter, with `w` symmetric.
pub(crate) fn weighted_gradient(expr: &KernelExpr, times: &[f64], w: &DMatrix<f64>) -> Vec<f64> {
    let d = expr.param_count();
    let mut acc = vec![0.0; d];
    let mut g = vec![0.0; d];
    let n = times.len();
    for j in 0..n {
        for i in 0..=j {
            expr.eval_grad(times[i], times[j], &mut g);
            let weight = if i == j { w[(i, j)] } else { 2.0 * w[(i, j)] };
            for (a, gi) in acc.iter_mut().zip(&g) {
                *a += weight * gi;
            }
        }
    }
    acc
}
