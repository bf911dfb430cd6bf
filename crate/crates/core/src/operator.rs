//! Antisymmetric operators in n dimensions and their geometric invariants.
//!
//! An operator is a bivector field J^{ij}(x) = -J^{ji}(x). Acting on the
//! differential of a Hamiltonian it generates conservative dynamics
//! X^i = J^{ij} H_j. The quantities computed here classify an operator as
//! Poisson (vanishing helicity density), measure preserving (vanishing
//! cocurrent), Beltrami (vanishing residual J^{ij} d_l J^{lj}) or weak
//! Beltrami (vanishing field charge).

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{central2, central4, fd_step, ScalarField, FD_BASE_STEP};

type ComponentsFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type PartialsFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;
type GuardFn = dyn Fn(&[f64]) -> bool + Send + Sync;

/// An n-dimensional antisymmetric matrix field with optional analytic
/// partial derivatives and an optional domain guard.
///
/// `components` fills a row-major n*n buffer with J^{ij}(x); `partials`
/// fills an n*n*n buffer laid out as `[k][i][j]` with d_k J^{ij}(x).
#[derive(Clone)]
pub struct AntisymOperator {
    dim: usize,
    name: String,
    components: Arc<ComponentsFn>,
    partials: Option<Arc<PartialsFn>>,
    guard: Option<Arc<GuardFn>>,
}

impl AntisymOperator {
    pub fn new<C>(dim: usize, name: &str, components: C) -> Self
    where
        C: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        AntisymOperator {
            dim,
            name: name.to_string(),
            components: Arc::new(components),
            partials: None,
            guard: None,
        }
    }

    pub fn with_partials<P>(mut self, partials: P) -> Self
    where
        P: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.partials = Some(Arc::new(partials));
        self
    }

    pub fn with_guard<G>(mut self, guard: G) -> Self
    where
        G: Fn(&[f64]) -> bool + Send + Sync + 'static,
    {
        self.guard = Some(Arc::new(guard));
        self
    }

    /// Constant-coefficient operator (all partials vanish identically).
    pub fn constant(dim: usize, name: &str, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: matrix.len(),
                context: "constant operator matrix",
            });
        }
        for i in 0..dim {
            for j in 0..dim {
                if (matrix[i * dim + j] + matrix[j * dim + i]).abs() != 0.0 {
                    return Err(Error::Expr(format!(
                        "constant operator '{name}' is not antisymmetric at ({i},{j})"
                    )));
                }
            }
        }
        let m = matrix.clone();
        Ok(
            AntisymOperator::new(dim, name, move |_x, out| out.copy_from_slice(&m))
                .with_partials(move |_x, out| out.fill(0.0)),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn has_partials(&self) -> bool {
        self.partials.is_some()
    }

    pub fn guard_ok(&self, x: &[f64]) -> bool {
        match &self.guard {
            Some(g) => g(x),
            None => true,
        }
    }

    fn check_guard(&self, x: &[f64]) -> Result<()> {
        if self.guard_ok(x) {
            Ok(())
        } else {
            Err(Error::DomainGuard {
                name: self.name.clone(),
                point: x.to_vec(),
            })
        }
    }

    fn check_dim(&self, len: usize, context: &'static str) -> Result<()> {
        if len == self.dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: len,
                context,
            })
        }
    }

    /// Fill `out` (n*n) with J(x).
    pub fn components_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim * self.dim);
        (self.components)(x, out);
    }

    pub fn components(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.components_into(x, &mut out);
        out
    }

    /// Fill `out` (n*n*n, layout `[k][i][j]`) with d_k J^{ij}(x), using the
    /// analytic closure when present and `fd_partials` otherwise.
    pub fn partials_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.dim.pow(3));
        match &self.partials {
            Some(p) => {
                p(x, out);
                Ok(())
            }
            None => self.fd_partials_into(x, 4, FD_BASE_STEP, out),
        }
    }

    /// Central-difference estimate of the partial derivatives. The sampled
    /// components are antisymmetrized before differencing so the result is
    /// exactly antisymmetric in (i, j). The per-axis step is
    /// `h * max(1, |x_k|)`.
    pub fn fd_partials(&self, x: &[f64], order: usize, h: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim.pow(3)];
        self.fd_partials_into(x, order, h, &mut out)?;
        Ok(out)
    }

    pub fn fd_partials_into(
        &self,
        x: &[f64],
        order: usize,
        h: f64,
        out: &mut [f64],
    ) -> Result<()> {
        let n = self.dim;
        self.check_dim(x.len(), "fd_partials point")?;
        if h < 1e-12 {
            return Err(Error::StepUnderflow { h });
        }
        assert!(order == 2 || order == 4, "fd order must be 2 or 4");
        let mut p = x.to_vec();
        let mut buf = vec![0.0; n * n];
        let mut anti = vec![0.0; n * n];
        // component (i,j) of the antisymmetrized matrix at the displaced point
        let sample = |p: &[f64], anti: &mut [f64], buf: &mut [f64]| -> Result<()> {
            self.check_guard(p)?;
            (self.components)(p, buf);
            for i in 0..n {
                for j in 0..n {
                    anti[i * n + j] = 0.5 * (buf[i * n + j] - buf[j * n + i]);
                }
            }
            Ok(())
        };
        let mut stencil = vec![0.0; n * n * 4];
        for k in 0..n {
            let hk = fd_step(h, x[k]);
            let offsets: &[(f64, usize)] = if order == 4 {
                &[(-2.0, 0), (-1.0, 1), (1.0, 2), (2.0, 3)]
            } else {
                &[(-1.0, 1), (1.0, 2)]
            };
            for (mult, slot) in offsets {
                p[k] = x[k] + mult * hk;
                sample(&p, &mut anti, &mut buf)?;
                stencil[slot * n * n..(slot + 1) * n * n].copy_from_slice(&anti);
            }
            p[k] = x[k];
            for ij in 0..n * n {
                let d = if order == 4 {
                    (-stencil[3 * n * n + ij] + 8.0 * stencil[2 * n * n + ij]
                        - 8.0 * stencil[n * n + ij]
                        + stencil[ij])
                        / (12.0 * hk)
                } else {
                    (stencil[2 * n * n + ij] - stencil[n * n + ij]) / (2.0 * hk)
                };
                out[k * n * n + ij] = d;
            }
        }
        Ok(())
    }

    /// X^i = J^{ij} H_j at `x`.
    pub fn apply(&self, h: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len(), "apply point")?;
        self.check_dim(h.dim(), "apply Hamiltonian")?;
        self.check_guard(x)?;
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        self.components_into(x, &mut j);
        let mut gh = vec![0.0; n];
        h.grad_into(x, &mut gh);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for (jj, &g) in gh.iter().enumerate() {
                s += j[i * n + jj] * g;
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// Antisymmetric bilinear form f_i J^{ij} g_j at `x`.
    pub fn bracket(&self, f: &ScalarField, g: &ScalarField, x: &[f64]) -> Result<f64> {
        self.check_dim(f.dim(), "bracket lhs")?;
        let jg = self.apply(g, x)?;
        let gf = f.grad(x);
        Ok(gf.iter().zip(jg.iter()).map(|(a, b)| a * b).sum())
    }

    /// Helicity density h^{ijk} = J^{im} d_m J^{jk} + J^{jm} d_m J^{ki}
    /// + J^{km} d_m J^{ij} for every i < j < k.
    pub fn jacobiator(&self, x: &[f64]) -> Result<Jacobiator> {
        self.check_dim(x.len(), "jacobiator point")?;
        self.check_guard(x)?;
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        self.components_into(x, &mut j);
        let mut dj = vec![0.0; n * n * n];
        self.partials_into(x, &mut dj)?;
        let d = |m: usize, a: usize, b: usize| dj[(m * n + a) * n + b];
        let mut values = Vec::new();
        for i in 0..n {
            for jj in (i + 1)..n {
                for k in (jj + 1)..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += j[i * n + m] * d(m, jj, k)
                            + j[jj * n + m] * d(m, k, i)
                            + j[k * n + m] * d(m, i, jj);
                    }
                    values.push(s);
                }
            }
        }
        Ok(Jacobiator { dim: n, values })
    }

    /// Cocurrent vector c^j = d_i (g J^{ij}).
    pub fn cocurrent(&self, g: &ScalarField, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len(), "cocurrent point")?;
        self.check_dim(g.dim(), "cocurrent weight")?;
        self.check_guard(x)?;
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        self.components_into(x, &mut j);
        let mut dj = vec![0.0; n * n * n];
        self.partials_into(x, &mut dj)?;
        let gv = g.eval(x);
        let gg = g.grad(x);
        let mut out = vec![0.0; n];
        for jj in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                s += gg[i] * j[i * n + jj] + gv * dj[(i * n + i) * n + jj];
            }
            out[jj] = s;
        }
        Ok(out)
    }

    /// Covorticity coefficients g J^{ij} for i < j. Rejects |g| < 1e-12.
    pub fn covorticity(&self, g: &ScalarField, x: &[f64]) -> Result<Vec<((usize, usize), f64)>> {
        self.check_dim(x.len(), "covorticity point")?;
        self.check_guard(x)?;
        let gv = g.eval(x);
        if gv.abs() < 1e-12 {
            return Err(Error::DegenerateWeight {
                value: gv,
                point: x.to_vec(),
            });
        }
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        self.components_into(x, &mut j);
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for jj in (i + 1)..n {
                out.push(((i, jj), gv * j[i * n + jj]));
            }
        }
        Ok(out)
    }

    /// Residual r^i = J^{ij} d_l J^{lj}; the zero vector exactly when the
    /// (g = 1) Beltrami condition holds at `x`. In three dimensions this is
    /// the field force w x (curl w).
    pub fn beltrami_residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len(), "beltrami_residual point")?;
        self.check_guard(x)?;
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        self.components_into(x, &mut j);
        let mut dj = vec![0.0; n * n * n];
        self.partials_into(x, &mut dj)?;
        // first-index divergence d_l J^{lj}
        let mut div = vec![0.0; n];
        for jj in 0..n {
            let mut s = 0.0;
            for l in 0..n {
                s += dj[(l * n + l) * n + jj];
            }
            div[jj] = s;
        }
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut s = 0.0;
            for (jj, &d) in div.iter().enumerate() {
                s += j[i * n + jj] * d;
            }
            out[i] = s;
        }
        Ok(out)
    }

    /// Field charge: divergence of the Beltrami residual, by central
    /// differences of `beltrami_residual`.
    pub fn field_charge(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x.len(), "field_charge point")?;
        let n = self.dim;
        let mut p = x.to_vec();
        let mut div = 0.0;
        for k in 0..n {
            let hk = fd_step(FD_BASE_STEP, x[k]);
            let mut err = None;
            let mut comp = |v: f64| -> f64 {
                p[k] = v;
                let r = match self.beltrami_residual(&p) {
                    Ok(r) => r[k],
                    Err(e) => {
                        err = Some(e);
                        f64::NAN
                    }
                };
                p[k] = x[k];
                r
            };
            div += central4(&mut comp, x[k], hk);
            if let Some(e) = err {
                return Err(e);
            }
        }
        Ok(div)
    }

    /// Classify the operator over a sample set against a tolerance.
    pub fn classify(
        &self,
        samples: &[Vec<f64>],
        g: &ScalarField,
        tol: f64,
    ) -> Result<ClassificationReport> {
        if samples.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut max_jac = 0.0f64;
        let mut max_coc = 0.0f64;
        let mut max_res = 0.0f64;
        let mut max_charge = 0.0f64;
        for x in samples {
            self.check_guard(x)?;
            max_jac = max_jac.max(self.jacobiator(x)?.max_abs());
            let c = self.cocurrent(g, x)?;
            max_coc = max_coc.max(c.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            let r = self.beltrami_residual(x)?;
            max_res = max_res.max(r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            max_charge = max_charge.max(self.field_charge(x)?.abs());
        }
        Ok(ClassificationReport::from_residuals(
            max_jac,
            max_coc,
            max_res,
            max_charge,
            tol,
            samples.len(),
        ))
    }
}

/// Totally antisymmetric helicity-density values, stored for i < j < k in
/// lexicographic order.
#[derive(Clone, Debug)]
pub struct Jacobiator {
    dim: usize,
    values: Vec<f64>,
}

impl Jacobiator {
    /// h^{ijk} for an arbitrary index triple, with the permutation sign;
    /// zero when two indices coincide.
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        if i == j || j == k || i == k {
            return 0.0;
        }
        let mut idx = [i, j, k];
        let mut sign = 1.0;
        // 3-element sort, tracking parity
        if idx[0] > idx[1] {
            idx.swap(0, 1);
            sign = -sign;
        }
        if idx[1] > idx[2] {
            idx.swap(1, 2);
            sign = -sign;
        }
        if idx[0] > idx[1] {
            idx.swap(0, 1);
            sign = -sign;
        }
        sign * self.values[self.flat(idx[0], idx[1], idx[2])]
    }

    fn flat(&self, i: usize, j: usize, k: usize) -> usize {
        // rank of (i,j,k), i<j<k, in lexicographic enumeration
        let n = self.dim;
        let mut r = 0;
        for a in 0..i {
            r += (n - 1 - a) * (n - 2 - a) / 2;
        }
        for b in (i + 1)..j {
            r += n - 1 - b;
        }
        r + (k - j - 1)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Residual magnitudes and verdicts from [`AntisymOperator::classify`].
#[derive(Clone, Debug, Serialize)]
pub struct ClassificationReport {
    pub max_jacobiator: f64,
    pub max_cocurrent: f64,
    pub max_beltrami_residual: f64,
    pub max_field_charge: f64,
    pub is_poisson: bool,
    pub is_measure_preserving: bool,
    pub is_beltrami: bool,
    pub is_weak_beltrami: bool,
    pub is_nontrivial: bool,
    pub tolerance: f64,
    pub sample_count: usize,
}

impl ClassificationReport {
    pub fn from_residuals(
        max_jacobiator: f64,
        max_cocurrent: f64,
        max_beltrami_residual: f64,
        max_field_charge: f64,
        tol: f64,
        sample_count: usize,
    ) -> Self {
        let is_beltrami = max_beltrami_residual <= tol;
        ClassificationReport {
            max_jacobiator,
            max_cocurrent,
            max_beltrami_residual,
            max_field_charge,
            is_poisson: max_jacobiator <= tol,
            is_measure_preserving: max_cocurrent <= tol,
            is_beltrami,
            is_weak_beltrami: max_field_charge <= tol,
            is_nontrivial: is_beltrami && max_jacobiator > tol,
            tolerance: tol,
            sample_count,
        }
    }
}

/// Default classification tolerance with analytic partials.
pub const CLASSIFY_TOL_ANALYTIC: f64 = 1e-8;
/// Default classification tolerance with finite-difference partials.
pub const CLASSIFY_TOL_FD: f64 = 1e-5;

/// Gradient of a scalar closure by second-order central differences
/// (used by test oracles and validation helpers).
pub fn fd_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    let mut out = vec![0.0; x.len()];
    for k in 0..x.len() {
        out[k] = central2(
            |v| {
                p[k] = v;
                let r = f(&p);
                p[k] = x[k];
                r
            },
            x[k],
            h,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // brute-force oracle: triple sum over m with no shared code path
    fn jacobiator_oracle(op: &AntisymOperator, x: &[f64], i: usize, j: usize, k: usize) -> f64 {
        let n = op.dim();
        let jm = op.components(x);
        let dj = op.fd_partials(x, 4, 1e-4).unwrap();
        let d = |m: usize, a: usize, b: usize| dj[(m * n + a) * n + b];
        let mut s = 0.0;
        for m in 0..n {
            s += jm[i * n + m] * d(m, j, k);
            s += jm[j * n + m] * d(m, k, i);
            s += jm[k * n + m] * d(m, i, j);
        }
        s
    }

    // smooth synthetic 4-D operator used by the general-n tests
    fn test_operator4() -> AntisymOperator {
        AntisymOperator::new(4, "smooth4", |x, out| {
            let n = 4;
            let vals = [
                (0, 1, (x[2] * x[3]).sin()),
                (0, 2, x[1] * x[1] - x[3]),
                (0, 3, (0.3 * x[0]).exp() * x[2]),
                (1, 2, x[0] + x[3] * x[3]),
                (1, 3, (x[0] * x[1]).cos()),
                (2, 3, x[1] * x[2] * 0.5),
            ];
            out.fill(0.0);
            for (i, j, v) in vals {
                out[i * n + j] = v;
                out[j * n + i] = -v;
            }
        })
    }

    #[test]
    fn constant_operator_has_zero_invariants() {
        let j = AntisymOperator::constant(
            3,
            "const",
            vec![0.0, 2.0, -1.0, -2.0, 0.0, 0.5, 1.0, -0.5, 0.0],
        )
        .unwrap();
        let x = [0.3, 1.0, -2.0];
        assert_eq!(j.jacobiator(&x).unwrap().max_abs(), 0.0);
        let r = j.beltrami_residual(&x).unwrap();
        assert!(r.iter().all(|v| *v == 0.0));
        let g = ScalarField::constant(3, 1.0);
        let c = j.cocurrent(&g, &x).unwrap();
        assert!(c.iter().all(|v| *v == 0.0));
        let report = j
            .classify(&[vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0]], &g, 1e-8)
            .unwrap();
        assert!(report.is_poisson);
        assert!(report.is_measure_preserving);
        assert!(report.is_beltrami);
        assert!(report.is_weak_beltrami);
        assert!(!report.is_nontrivial);
    }

    #[test]
    fn bracket_is_antisymmetric_and_diagonal_free() {
        let op = test_operator4();
        let f = ScalarField::new(4, "f", |x: &[f64]| x[0] * x[1] + x[2].sin());
        let g = ScalarField::new(4, "g", |x: &[f64]| x[3] * x[3] - x[0]);
        let x = [0.2, -0.4, 0.9, 1.1];
        let fg = op.bracket(&f, &g, &x).unwrap();
        let gf = op.bracket(&g, &f, &x).unwrap();
        assert_relative_eq!(fg, -gf, max_relative = 1e-9, epsilon = 1e-10);
        let ff = op.bracket(&f, &f, &x).unwrap();
        assert_relative_eq!(ff, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn conservativity_grad_h_orthogonal_to_flow() {
        let op = test_operator4();
        let h = ScalarField::new(4, "h", |x: &[f64]| {
            (x[0] + x[1] * x[2]).sin() + 0.5 * x[3] * x[3]
        });
        for x in [
            [0.1, 0.2, 0.3, 0.4],
            [-1.0, 0.5, 2.0, -0.3],
            [0.7, -0.7, 0.7, -0.7],
        ] {
            let flow = op.apply(&h, &x).unwrap();
            let gh = h.grad(&x);
            let dot: f64 = flow.iter().zip(gh.iter()).map(|(a, b)| a * b).sum();
            assert_relative_eq!(dot, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_gradient_gives_zero_flow() {
        let op = test_operator4();
        let h = ScalarField::constant(4, 42.0);
        let flow = op.apply(&h, &[0.5, 0.5, 0.5, 0.5]).unwrap();
        assert!(flow.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn jacobiator_matches_bruteforce_triple_sum() {
        let op = test_operator4();
        let pts = [[0.3, -0.2, 0.8, 0.5], [1.0, 0.1, -0.4, -0.9]];
        for x in pts {
            let jac = op.jacobiator(&x).unwrap();
            for (i, j, k) in [(0usize, 1usize, 2usize), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
                let oracle = jacobiator_oracle(&op, &x, i, j, k);
                assert_relative_eq!(jac.get(i, j, k), oracle, epsilon = 1e-10, max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn jacobiator_total_antisymmetry() {
        let op = test_operator4();
        let x = [0.4, 0.9, -0.3, 0.2];
        let jac = op.jacobiator(&x).unwrap();
        let base = jac.get(0, 1, 3);
        assert_relative_eq!(jac.get(1, 0, 3), -base, max_relative = 1e-12);
        assert_relative_eq!(jac.get(3, 1, 0), -base, max_relative = 1e-12);
        assert_relative_eq!(jac.get(1, 3, 0), base, max_relative = 1e-12);
        assert_relative_eq!(jac.get(3, 0, 1), base, max_relative = 1e-12);
        assert_eq!(jac.get(1, 1, 2), 0.0);
    }

    #[test]
    fn fd_partials_exact_for_linear_components() {
        // J^{02} = y must give d_1 J^{02} = 1 exactly at order 2
        let op = AntisymOperator::new(3, "linear", |x, out| {
            out.fill(0.0);
            out[2] = x[1];
            out[6] = -x[1];
        });
        let dj = op.fd_partials(&[0.2, 0.7, -0.1], 2, 1e-4).unwrap();
        // no truncation error for degree <= 2; only representation roundoff
        assert_relative_eq!(dj[(1 * 3 + 0) * 3 + 2], 1.0, max_relative = 1e-12);
        assert_eq!(dj[(0 * 3 + 0) * 3 + 2], 0.0);
        let dj4 = op.fd_partials(&[0.2, 0.7, -0.1], 4, 1e-4).unwrap();
        assert_relative_eq!(dj4[(1 * 3 + 0) * 3 + 2], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn fd_partials_step_underflow_rejected() {
        let op = test_operator4();
        assert!(matches!(
            op.fd_partials(&[0.0; 4], 4, 1e-13),
            Err(Error::StepUnderflow { .. })
        ));
    }

    #[test]
    fn covorticity_scales_linearly_and_rejects_zero_weight() {
        let op = test_operator4();
        let x = [0.3, 0.1, -0.5, 0.8];
        let g1 = ScalarField::constant(4, 1.0);
        let g2 = ScalarField::constant(4, 2.0);
        let c1 = op.covorticity(&g1, &x).unwrap();
        let c2 = op.covorticity(&g2, &x).unwrap();
        for (a, b) in c1.iter().zip(c2.iter()) {
            assert_relative_eq!(2.0 * a.1, b.1, max_relative = 1e-15);
        }
        let g0 = ScalarField::constant(4, 0.0);
        assert!(matches!(
            op.covorticity(&g0, &x),
            Err(Error::DegenerateWeight { .. })
        ));
    }

    #[test]
    fn dimension_mismatch_reported() {
        let op = test_operator4();
        let h3 = ScalarField::constant(3, 1.0);
        assert!(matches!(
            op.apply(&h3, &[0.0; 4]),
            Err(Error::DimensionMismatch { .. })
        ));
        let h4 = ScalarField::constant(4, 1.0);
        assert!(matches!(
            op.apply(&h4, &[0.0; 3]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn classification_monotone_in_tolerance() {
        let op = test_operator4();
        let g = ScalarField::constant(4, 1.0);
        let samples: Vec<Vec<f64>> = (0..8)
            .map(|i| {
                let t = i as f64 / 8.0;
                vec![t, 0.3 - t, t * t, 0.5 * t]
            })
            .collect();
        let loose = op.classify(&samples, &g, 1e-2).unwrap();
        let tight = op.classify(&samples, &g, 1e-10).unwrap();
        // shrinking tol never flips a residual-based verdict from false to true
        for (a, b) in [
            (loose.is_poisson, tight.is_poisson),
            (loose.is_measure_preserving, tight.is_measure_preserving),
            (loose.is_beltrami, tight.is_beltrami),
            (loose.is_weak_beltrami, tight.is_weak_beltrami),
        ] {
            assert!(a || !b);
        }
        assert!(matches!(
            op.classify(&[], &g, 1e-8),
            Err(Error::EmptySamples)
        ));
    }
}
