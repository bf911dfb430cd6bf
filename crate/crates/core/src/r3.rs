//! Vector fields on R^3 and their identification with antisymmetric
//! operators.
//!
//! The correspondence is J v = w x v, i.e. w_x = J^{zy}, w_y = J^{xz},
//! w_z = J^{yx}. Under it the operator's Beltrami residual equals the field
//! force w x (curl w), the first-index divergence d_i J^{ij} equals
//! (curl w)_j, and the helicity density satisfies h^{xyz} = -w . curl w.

use std::sync::Arc;

use crate::ad::{seed3, Real};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::field::{central4, fd_step, FD_BASE_STEP};
use crate::operator::AntisymOperator;

pub fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

/// A component definition evaluable both in plain and dual arithmetic, so a
/// single description yields values and exact Jacobians.
pub trait VectorExpr: Send + Sync + 'static {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3];
}

impl VectorExpr for [Expr; 3] {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        [
            self[0].eval(&x),
            self[1].eval(&x),
            self[2].eval(&x),
        ]
    }
}

type EvalFn = dyn Fn([f64; 3]) -> [f64; 3] + Send + Sync;
/// Returns (w, M) with M[i][j] = d_j w_i.
type JacFn = dyn Fn([f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) + Send + Sync;
type GuardFn = dyn Fn([f64; 3]) -> bool + Send + Sync;

/// A smooth vector field w on (a guarded subdomain of) R^3.
#[derive(Clone)]
pub struct VectorField3 {
    name: String,
    eval: Arc<EvalFn>,
    jacobian: Option<Arc<JacFn>>,
    guard: Option<Arc<GuardFn>>,
}

impl VectorField3 {
    pub fn new<F>(name: &str, eval: F) -> Self
    where
        F: Fn([f64; 3]) -> [f64; 3] + Send + Sync + 'static,
    {
        VectorField3 {
            name: name.to_string(),
            eval: Arc::new(eval),
            jacobian: None,
            guard: None,
        }
    }

    pub fn with_jacobian<J>(mut self, jac: J) -> Self
    where
        J: Fn([f64; 3]) -> ([f64; 3], [[f64; 3]; 3]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_guard<G>(mut self, guard: G) -> Self
    where
        G: Fn([f64; 3]) -> bool + Send + Sync + 'static,
    {
        self.guard = Some(Arc::new(guard));
        self
    }

    /// Build from a generic component description: the value path runs in
    /// f64, the Jacobian path through dual numbers.
    pub fn from_vector_expr<E: VectorExpr>(name: &str, expr: E) -> Self {
        let e = Arc::new(expr);
        let e2 = e.clone();
        VectorField3::new(name, move |x| e.eval(x)).with_jacobian(move |x| {
            let d = e2.eval(seed3(x));
            (
                [d[0].re, d[1].re, d[2].re],
                [d[0].dx, d[1].dx, d[2].dx],
            )
        })
    }

    /// Parse three component expressions over coordinates `x, y, z`.
    pub fn from_exprs(name: &str, wx: &str, wy: &str, wz: &str) -> Result<Self> {
        let vars = ["x", "y", "z"];
        let comps = [
            Expr::parse(wx, &vars)?,
            Expr::parse(wy, &vars)?,
            Expr::parse(wz, &vars)?,
        ];
        Ok(VectorField3::from_vector_expr(name, comps))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_jacobian(&self) -> bool {
        self.jacobian.is_some()
    }

    pub fn guard_ok(&self, x: [f64; 3]) -> bool {
        match &self.guard {
            Some(g) => g(x),
            None => true,
        }
    }

    fn check_guard(&self, x: [f64; 3]) -> Result<()> {
        if self.guard_ok(x) {
            Ok(())
        } else {
            Err(Error::DomainGuard {
                name: self.name.clone(),
                point: x.to_vec(),
            })
        }
    }

    pub fn eval(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        self.check_guard(x)?;
        Ok((self.eval)(x))
    }

    /// Value and Jacobian `M[i][j] = d_j w_i`, analytic when available,
    /// fourth-order finite differences otherwise.
    pub fn eval_with_jacobian(&self, x: [f64; 3]) -> Result<([f64; 3], [[f64; 3]; 3])> {
        self.check_guard(x)?;
        match &self.jacobian {
            Some(j) => Ok(j(x)),
            None => {
                let w = (self.eval)(x);
                let mut m = [[0.0; 3]; 3];
                for j in 0..3 {
                    let h = fd_step(FD_BASE_STEP, x[j]);
                    for i in 0..3 {
                        let mut p = x;
                        m[i][j] = central4(
                            |v| {
                                p[j] = v;
                                (self.eval)(p)[i]
                            },
                            x[j],
                            h,
                        );
                    }
                }
                Ok((w, m))
            }
        }
    }

    pub fn curl(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let (_, m) = self.eval_with_jacobian(x)?;
        Ok(curl_of(&m))
    }

    pub fn divergence(&self, x: [f64; 3]) -> Result<f64> {
        let (_, m) = self.eval_with_jacobian(x)?;
        Ok(m[0][0] + m[1][1] + m[2][2])
    }

    /// Field force b = w x (curl w).
    pub fn field_force(&self, x: [f64; 3]) -> Result<[f64; 3]> {
        let (w, m) = self.eval_with_jacobian(x)?;
        Ok(cross(w, curl_of(&m)))
    }

    /// Field charge div b, by fourth-order differences of the field force
    /// (each sample of b uses the analytic Jacobian when present).
    pub fn field_charge(&self, x: [f64; 3]) -> Result<f64> {
        self.check_guard(x)?;
        let mut div = 0.0;
        for k in 0..3 {
            let h = fd_step(FD_BASE_STEP, x[k]);
            let mut err = None;
            let mut comp = |v: f64| -> f64 {
                let mut p = x;
                p[k] = v;
                match self.field_force(p) {
                    Ok(b) => b[k],
                    Err(e) => {
                        err = Some(e);
                        f64::NAN
                    }
                }
            };
            div += central4(&mut comp, x[k], h);
            if let Some(e) = err {
                return Err(e);
            }
        }
        Ok(div)
    }

    /// The operator with J v = w x v. Partials are derived from the
    /// Jacobian when present; the domain guard carries over.
    pub fn to_operator(&self) -> AntisymOperator {
        let eval = self.eval.clone();
        let mut op = AntisymOperator::new(3, &self.name, move |x, out| {
            let w = eval([x[0], x[1], x[2]]);
            hat_into(w, out);
        });
        if let Some(jac) = &self.jacobian {
            let jac = jac.clone();
            op = op.with_partials(move |x, out| {
                let (_, m) = jac([x[0], x[1], x[2]]);
                for k in 0..3 {
                    let col = [m[0][k], m[1][k], m[2][k]];
                    hat_into(col, &mut out[k * 9..(k + 1) * 9]);
                }
            });
        }
        if let Some(g) = &self.guard {
            let g = g.clone();
            op = op.with_guard(move |x| g([x[0], x[1], x[2]]));
        }
        op
    }

    /// Inverse of [`VectorField3::to_operator`]; rejected for n != 3.
    pub fn from_operator(op: &AntisymOperator) -> Result<Self> {
        if op.dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                actual: op.dim(),
                context: "operator_to_w",
            });
        }
        let op1 = op.clone();
        let mut w = VectorField3::new(op.name(), move |x| {
            let j = op1.components(&x);
            [j[2 * 3 + 1], j[2], j[3]]
        });
        if op.has_partials() {
            let op2 = op.clone();
            w = w.with_jacobian(move |x| {
                let j = op2.components(&x);
                let mut dj = vec![0.0; 27];
                op2.partials_into(&x, &mut dj).expect("partials available");
                let mut m = [[0.0; 3]; 3];
                for (k, row) in [(2usize, 1usize), (0, 2), (1, 0)].iter().enumerate() {
                    for a in 0..3 {
                        m[k][a] = dj[(a * 3 + row.0) * 3 + row.1];
                    }
                }
                ([j[7], j[2], j[3]], m)
            });
        }
        let op3 = op.clone();
        w = w.with_guard(move |x| op3.guard_ok(&x));
        Ok(w)
    }
}

/// Fill a 3x3 buffer with the cross-product matrix of w (J v = w x v).
pub fn hat_into(w: [f64; 3], out: &mut [f64]) {
    out[0] = 0.0;
    out[1] = -w[2];
    out[2] = w[1];
    out[3] = w[2];
    out[4] = 0.0;
    out[5] = -w[0];
    out[6] = -w[1];
    out[7] = w[0];
    out[8] = 0.0;
}

/// Curl from a Jacobian with M[i][j] = d_j w_i.
pub fn curl_of(m: &[[f64; 3]; 3]) -> [f64; 3] {
    [
        m[2][1] - m[1][2],
        m[0][2] - m[2][0],
        m[1][0] - m[0][1],
    ]
}

/// Classical fourth-order Runge-Kutta integration of the streamline
/// dx/dt = w(x); fails if any stage leaves the domain guard.
pub fn rk4_flow(w: &VectorField3, x0: [f64; 3], dt: f64, steps: u64) -> Result<[f64; 3]> {
    let mut x = x0;
    for _ in 0..steps {
        let k1 = w.eval(x)?;
        let k2 = w.eval(add_scaled(x, k1, 0.5 * dt))?;
        let k3 = w.eval(add_scaled(x, k2, 0.5 * dt))?;
        let k4 = w.eval(add_scaled(x, k3, dt))?;
        for i in 0..3 {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    Ok(x)
}

fn add_scaled(x: [f64; 3], v: [f64; 3], s: f64) -> [f64; 3] {
    [x[0] + s * v[0], x[1] + s * v[1], x[2] + s * v[2]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::ScalarField;
    use approx::assert_relative_eq;

    fn classical() -> VectorField3 {
        VectorField3::from_exprs("classical", "sin(z)", "cos(z)", "0").unwrap()
    }

    #[test]
    fn apply_is_cross_product() {
        // w = (sin z, cos z, 0), H = z at the origin: w x e_z = (1, 0, 0)
        let op = classical().to_operator();
        let h = ScalarField::parse3("z", "z").unwrap();
        let v = op.apply(&h, &[0.0, 0.0, 0.0]).unwrap();
        assert_relative_eq!(v[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(v[1], 0.0, epsilon = 1e-14);
        assert_relative_eq!(v[2], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn apply_matches_bruteforce_cross_product() {
        let w = VectorField3::from_exprs("mixed", "x*y", "cos(z) - y", "exp(0.2*x)").unwrap();
        let op = w.to_operator();
        let h = ScalarField::parse3("h", "sin(x) + y*y - z*x").unwrap();
        for x in [[0.3, -0.8, 1.2], [1.0, 0.4, -0.2]] {
            let lhs = op.apply(&h, &x).unwrap();
            let wv = w.eval(x).unwrap();
            let gh = h.grad(&x);
            let rhs = cross(wv, [gh[0], gh[1], gh[2]]);
            for i in 0..3 {
                assert_relative_eq!(lhs[i], rhs[i], epsilon = 1e-13, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn hat_map_signs() {
        // w = (0,0,1): J^{xy} = -1, J^{xz} = 0, J^{yz} = 0
        let mut j = [0.0; 9];
        hat_into([0.0, 0.0, 1.0], &mut j);
        assert_eq!(j[1], -1.0);
        assert_eq!(j[2], 0.0);
        assert_eq!(j[5], 0.0);
        assert_eq!(j[3], 1.0);
    }

    #[test]
    fn operator_roundtrip_is_identity() {
        let w = VectorField3::from_exprs("rt", "y*z", "sin(x)", "x - z*z").unwrap();
        let back = VectorField3::from_operator(&w.to_operator()).unwrap();
        for x in [[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]] {
            let a = w.eval(x).unwrap();
            let b = back.eval(x).unwrap();
            for i in 0..3 {
                assert_eq!(a[i], b[i]);
            }
            let (_, ma) = w.eval_with_jacobian(x).unwrap();
            let (_, mb) = back.eval_with_jacobian(x).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(ma[i][j], mb[i][j]);
                }
            }
        }
    }

    #[test]
    fn bracket_triple_product_value() {
        // constant w = (1,0,0), f = y, g = z: f_i J^{ij} g_j = grad f . (w x grad g) = -1
        let w = VectorField3::from_exprs("const-x", "1", "0", "0").unwrap();
        let op = w.to_operator();
        let f = ScalarField::parse3("y", "y").unwrap();
        let g = ScalarField::parse3("z", "z").unwrap();
        let v = op.bracket(&f, &g, &[0.4, 1.0, -0.7]).unwrap();
        // oracle: brute-force matrix contraction
        let j = op.components(&[0.4, 1.0, -0.7]);
        let mut oracle = 0.0;
        let gf = [0.0, 1.0, 0.0];
        let gg = [0.0, 0.0, 1.0];
        for i in 0..3 {
            for jj in 0..3 {
                oracle += gf[i] * j[i * 3 + jj] * gg[jj];
            }
        }
        assert_relative_eq!(v, oracle, max_relative = 1e-15);
        assert_relative_eq!(v, -1.0, max_relative = 1e-15);
        // and the triple-product identity f_i J^{ij} g_j = w . (grad g x grad f)
        let wv = w.eval([0.4, 1.0, -0.7]).unwrap();
        assert_relative_eq!(v, dot(wv, cross(gg, gf)), max_relative = 1e-15);
    }

    #[test]
    fn helicity_density_sign_convention() {
        // with J v = w x v the helicity density satisfies h^{xyz} = -w.(curl w)
        let w = classical();
        let op = w.to_operator();
        for x in [[0.0, 0.0, 0.0], [1.0, 2.0, 0.7], [-0.3, 0.9, 2.1]] {
            let h = op.jacobiator(&x).unwrap().get(0, 1, 2);
            let wv = w.eval(x).unwrap();
            let c = w.curl(x).unwrap();
            assert_relative_eq!(h, -dot(wv, c), max_relative = 1e-12);
            assert_relative_eq!(h, -1.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn cocurrent_is_curl() {
        // d_i J^{ij} = (curl w)_j; for the classical field curl w = w
        let w = classical();
        let op = w.to_operator();
        let g1 = ScalarField::constant(3, 1.0);
        for x in [[0.2, 0.5, 1.3], [0.0, 0.0, -0.4]] {
            let c = op.cocurrent(&g1, &x).unwrap();
            let curl = w.curl(x).unwrap();
            let wv = w.eval(x).unwrap();
            for j in 0..3 {
                assert_relative_eq!(c[j], curl[j], epsilon = 1e-12);
                assert_relative_eq!(c[j], wv[j], epsilon = 1e-12);
            }
        }
        // oracle: brute-force finite differences of the components
        let x = [0.2, 0.5, 1.3];
        let dj = op.fd_partials(&x, 4, 1e-4).unwrap();
        for j in 0..3 {
            let mut s = 0.0;
            for i in 0..3 {
                s += dj[(i * 3 + i) * 3 + j];
            }
            let curl = w.curl(x).unwrap();
            assert_relative_eq!(s, curl[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn beltrami_residual_equals_field_force() {
        let w = VectorField3::from_exprs("nb-simple", "1", "0", "y").unwrap();
        let op = w.to_operator();
        // b = y grad y at (0, 1, 0)
        let r = op.beltrami_residual(&[0.0, 1.0, 0.0]).unwrap();
        assert_relative_eq!(r[0], 0.0, epsilon = 1e-14);
        assert_relative_eq!(r[1], 1.0, max_relative = 1e-14);
        assert_relative_eq!(r[2], 0.0, epsilon = 1e-14);
        for x in [[0.3, -0.6, 0.9], [1.0, 2.0, -0.5]] {
            let r = op.beltrami_residual(&x).unwrap();
            let b = w.field_force(x).unwrap();
            for i in 0..3 {
                assert_relative_eq!(r[i], b[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn field_charge_of_simple_fields() {
        let w = VectorField3::from_exprs("nb-simple", "1", "0", "y").unwrap();
        for x in [[0.0, 0.0, 0.0], [0.7, -1.1, 0.4]] {
            assert_relative_eq!(w.field_charge(x).unwrap(), 1.0, max_relative = 1e-9);
        }
        let b1 = classical();
        assert_relative_eq!(b1.field_charge([0.4, 0.2, 1.0]).unwrap(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn guard_propagates_to_operator() {
        let w = VectorField3::from_exprs("guarded", "x", "0", "0")
            .unwrap()
            .with_guard(|x| x[0] > 0.0);
        assert!(w.eval([-1.0, 0.0, 0.0]).is_err());
        let op = w.to_operator();
        let h = ScalarField::constant(3, 1.0);
        assert!(matches!(
            op.apply(&h, &[-1.0, 0.0, 0.0]),
            Err(Error::DomainGuard { .. })
        ));
        assert!(op.apply(&h, &[1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn rk4_preserves_circular_orbit_radius() {
        // dx/dt = (-y, x, 0): circles; radius is conserved
        let w = VectorField3::from_exprs("rot", "-y", "x", "0").unwrap();
        let x = rk4_flow(&w, [1.0, 0.0, 0.0], 1e-3, 6283).unwrap();
        assert_relative_eq!(norm(x), 1.0, max_relative = 1e-10);
    }
}
