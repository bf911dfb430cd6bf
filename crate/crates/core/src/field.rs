//! Smooth scalar maps with optional analytic gradients.

use std::sync::Arc;

use crate::ad::{seed3, Dual3, Real};
use crate::error::{Error, Result};
use crate::expr::Expr;

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A smooth scalar map on n coordinates (Hamiltonians, volume weights,
/// densities). When no analytic gradient is attached, callers fall back to
/// fourth-order central differences with step `1e-4 * max(1, |x_k|)`.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    name: String,
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
}

/// Default finite-difference base step.
pub const FD_BASE_STEP: f64 = 1e-4;

/// Per-axis step scaling used by every finite-difference fallback.
pub fn fd_step(h: f64, coord: f64) -> f64 {
    h * coord.abs().max(1.0)
}

impl ScalarField {
    pub fn new<F>(dim: usize, name: &str, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            name: name.to_string(),
            eval: Arc::new(eval),
            grad: None,
        }
    }

    pub fn with_grad<F, G>(dim: usize, name: &str, eval: F, grad: G) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            name: name.to_string(),
            eval: Arc::new(eval),
            grad: Some(Arc::new(grad)),
        }
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        ScalarField::with_grad(dim, &format!("const({value})"), move |_| value, |_, g| {
            g.fill(0.0)
        })
    }

    pub fn zero(dim: usize) -> Self {
        ScalarField::constant(dim, 0.0)
    }

    /// Three-coordinate field from a parsed expression; the gradient is
    /// propagated analytically through dual numbers.
    pub fn from_expr3(name: &str, expr: Expr) -> Self {
        let e1 = expr.clone();
        let e2 = expr;
        ScalarField::with_grad(
            3,
            name,
            move |x: &[f64]| e1.eval(&[x[0], x[1], x[2]]),
            move |x: &[f64], out: &mut [f64]| {
                let d = e2.eval(&seed3([x[0], x[1], x[2]]));
                out.copy_from_slice(&d.dx);
            },
        )
    }

    /// Parse `text` over coordinates `x, y, z`.
    pub fn parse3(name: &str, text: &str) -> Result<Self> {
        Ok(ScalarField::from_expr3(
            name,
            Expr::parse(text, &["x", "y", "z"])?,
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        (self.eval)(x)
    }

    /// Gradient into `out`; analytic when available, FD fallback otherwise.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match &self.grad {
            Some(g) => g(x, out),
            None => {
                let mut p = x.to_vec();
                for k in 0..self.dim {
                    let h = fd_step(FD_BASE_STEP, x[k]);
                    out[k] = central4(
                        |v| {
                            p[k] = v;
                            let r = (self.eval)(&p);
                            p[k] = x[k];
                            r
                        },
                        x[k],
                        h,
                    );
                }
            }
        }
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.grad_into(x, &mut out);
        out
    }

    /// Check the analytic gradient against second-order central differences
    /// at step 1e-5 (relative error at most 1e-6 on each sample).
    pub fn validate_grad(&self, samples: &[Vec<f64>]) -> Result<()> {
        let g = match &self.grad {
            Some(g) => g,
            None => return Ok(()),
        };
        let mut buf = vec![0.0; self.dim];
        for x in samples {
            if x.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: x.len(),
                    context: "validate_grad sample",
                });
            }
            g(x, &mut buf);
            let mut p = x.clone();
            for k in 0..self.dim {
                let h = 1e-5;
                p[k] = x[k] + h;
                let fp = (self.eval)(&p);
                p[k] = x[k] - h;
                let fm = (self.eval)(&p);
                p[k] = x[k];
                let fd = (fp - fm) / (2.0 * h);
                let scale = buf[k].abs().max(fd.abs()).max(1.0);
                if (buf[k] - fd).abs() > 1e-6 * scale {
                    return Err(Error::Expr(format!(
                        "gradient of '{}' disagrees with central differences at {:?}: axis {k}, analytic {} vs fd {}",
                        self.name, x, buf[k], fd
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Fourth-order central difference of a 1-D closure.
pub fn central4<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

/// Second-order central difference of a 1-D closure.
pub fn central2<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

type TimeEvalFn = dyn Fn(&[f64], f64) -> f64 + Send + Sync;
type TimeGradFn = dyn Fn(&[f64], f64, &mut [f64]) + Send + Sync;

/// A scalar map with explicit time dependence and an optional time-derivative
/// evaluator; used to monitor the ensemble average of the drive rate.
#[derive(Clone)]
pub struct TimeDependentField {
    dim: usize,
    name: String,
    eval: Arc<TimeEvalFn>,
    grad: Arc<TimeGradFn>,
    time_derivative: Option<Arc<TimeEvalFn>>,
}

impl TimeDependentField {
    pub fn new<F, G, T>(dim: usize, name: &str, eval: F, grad: G, time_derivative: T) -> Self
    where
        F: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], f64, &mut [f64]) + Send + Sync + 'static,
        T: Fn(&[f64], f64) -> f64 + Send + Sync + 'static,
    {
        TimeDependentField {
            dim,
            name: name.to_string(),
            eval: Arc::new(eval),
            grad: Arc::new(grad),
            time_derivative: Some(Arc::new(time_derivative)),
        }
    }

    /// Wrap a time-independent field; its time derivative is identically zero.
    pub fn steady(f: &ScalarField) -> Self {
        let f1 = f.clone();
        let f2 = f.clone();
        TimeDependentField {
            dim: f.dim(),
            name: f.name().to_string(),
            eval: Arc::new(move |x, _| f1.eval(x)),
            grad: Arc::new(move |x, _, out| f2.grad_into(x, out)),
            time_derivative: Some(Arc::new(|_, _| 0.0)),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &[f64], t: f64) -> f64 {
        (self.eval)(x, t)
    }

    pub fn grad_into(&self, x: &[f64], t: f64, out: &mut [f64]) {
        (self.grad)(x, t, out)
    }

    pub fn time_derivative(&self, x: &[f64], t: f64) -> Result<f64> {
        match &self.time_derivative {
            Some(d) => Ok(d(x, t)),
            None => Err(Error::MissingTimeDerivative(self.name.clone())),
        }
    }
}

/// A smooth function of one variable evaluated generically, so that catalog
/// constructions can differentiate through it.
pub trait Profile: Send + Sync + 'static {
    fn eval<T: Real>(&self, t: T) -> T;
    fn label(&self) -> String;

    /// Derivative through a dual-number pass.
    fn deriv(&self, t: f64) -> f64
    where
        Self: Sized,
    {
        self.eval(Dual3::variable(t, 0)).dx[0]
    }
}

/// u(t) = t
pub struct IdentityProfile;

impl Profile for IdentityProfile {
    fn eval<T: Real>(&self, t: T) -> T {
        t
    }
    fn label(&self) -> String {
        "t".into()
    }
}

/// u(t) = a t
pub struct ScaleProfile(pub f64);

impl Profile for ScaleProfile {
    fn eval<T: Real>(&self, t: T) -> T {
        t * T::from_f64(self.0)
    }
    fn label(&self) -> String {
        format!("{}*t", self.0)
    }
}

/// u(t) = c
pub struct ConstProfile(pub f64);

impl Profile for ConstProfile {
    fn eval<T: Real>(&self, t: T) -> T {
        let _ = t;
        T::from_f64(self.0)
    }
    fn label(&self) -> String {
        format!("{}", self.0)
    }
}

/// Expression in the single variable `t`.
pub struct ExprProfile(pub Expr);

impl ExprProfile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(ExprProfile(Expr::parse(text, &["t"])?))
    }
}

impl Profile for ExprProfile {
    fn eval<T: Real>(&self, t: T) -> T {
        self.0.eval(&[t])
    }
    fn label(&self) -> String {
        "expr(t)".into()
    }
}
