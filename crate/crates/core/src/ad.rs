//! Forward-mode dual numbers over 3 coordinates.
//!
//! Catalog fields and user expressions are written once, generically over
//! [`Real`], and instantiated with `f64` for plain evaluation or with
//! [`Dual3<f64>`] for exact first derivatives. Nesting (`Dual3<Dual3<f64>>`)
//! yields the second derivatives needed when a field's components are
//! themselves built from gradients of scalar maps.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar abstraction shared by plain and dual evaluation paths.
pub trait Real:
    Copy
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    /// Underlying primal value (all derivative parts stripped).
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn powi(self, n: i32) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sin(self) -> Self {
        f64::sin(self)
    }
    fn cos(self) -> Self {
        f64::cos(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    fn powi(self, n: i32) -> Self {
        f64::powi(self, n)
    }
}

/// Value plus partial derivatives with respect to three coordinates.
#[derive(Clone, Copy, Debug)]
pub struct Dual3<T> {
    pub re: T,
    pub dx: [T; 3],
}

impl<T: Real> Dual3<T> {
    pub fn constant(v: T) -> Self {
        Dual3 {
            re: v,
            dx: [T::zero(); 3],
        }
    }

    /// Seed coordinate `axis` as the independent variable.
    pub fn variable(v: T, axis: usize) -> Self {
        let mut dx = [T::zero(); 3];
        dx[axis] = T::one();
        Dual3 { re: v, dx }
    }

    fn lift(re: T, scale: T, dx: [T; 3]) -> Self {
        Dual3 {
            re,
            dx: [dx[0] * scale, dx[1] * scale, dx[2] * scale],
        }
    }
}

/// Seed a point so that evaluation produces value plus gradient.
pub fn seed3<T: Real>(x: [T; 3]) -> [Dual3<T>; 3] {
    [
        Dual3::variable(x[0], 0),
        Dual3::variable(x[1], 1),
        Dual3::variable(x[2], 2),
    ]
}

impl<T: Real> Add for Dual3<T> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Dual3 {
            re: self.re + o.re,
            dx: [
                self.dx[0] + o.dx[0],
                self.dx[1] + o.dx[1],
                self.dx[2] + o.dx[2],
            ],
        }
    }
}

impl<T: Real> Sub for Dual3<T> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Dual3 {
            re: self.re - o.re,
            dx: [
                self.dx[0] - o.dx[0],
                self.dx[1] - o.dx[1],
                self.dx[2] - o.dx[2],
            ],
        }
    }
}

impl<T: Real> Mul for Dual3<T> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Dual3 {
            re: self.re * o.re,
            dx: [
                self.dx[0] * o.re + o.dx[0] * self.re,
                self.dx[1] * o.re + o.dx[1] * self.re,
                self.dx[2] * o.re + o.dx[2] * self.re,
            ],
        }
    }
}

impl<T: Real> Div for Dual3<T> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.re;
        let re = self.re * inv;
        // d(u/v) = (du - (u/v) dv) / v
        Dual3 {
            re,
            dx: [
                (self.dx[0] - o.dx[0] * re) * inv,
                (self.dx[1] - o.dx[1] * re) * inv,
                (self.dx[2] - o.dx[2] * re) * inv,
            ],
        }
    }
}

impl<T: Real> Neg for Dual3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Dual3 {
            re: -self.re,
            dx: [-self.dx[0], -self.dx[1], -self.dx[2]],
        }
    }
}

impl<T: Real> Real for Dual3<T> {
    fn from_f64(v: f64) -> Self {
        Dual3::constant(T::from_f64(v))
    }
    fn value(self) -> f64 {
        self.re.value()
    }
    fn sin(self) -> Self {
        Dual3::lift(self.re.sin(), self.re.cos(), self.dx)
    }
    fn cos(self) -> Self {
        Dual3::lift(self.re.cos(), -self.re.sin(), self.dx)
    }
    fn exp(self) -> Self {
        let e = self.re.exp();
        Dual3::lift(e, e, self.dx)
    }
    fn ln(self) -> Self {
        Dual3::lift(self.re.ln(), T::one() / self.re, self.dx)
    }
    fn sqrt(self) -> Self {
        let r = self.re.sqrt();
        Dual3::lift(r, T::from_f64(0.5) / r, self.dx)
    }
    fn atan2(self, x: Self) -> Self {
        // d atan2(y, x) = (x dy - y dx) / (x^2 + y^2)
        let y = self;
        let denom = T::one() / (x.re * x.re + y.re * y.re);
        Dual3 {
            re: y.re.atan2(x.re),
            dx: [
                (x.re * y.dx[0] - y.re * x.dx[0]) * denom,
                (x.re * y.dx[1] - y.re * x.dx[1]) * denom,
                (x.re * y.dx[2] - y.re * x.dx[2]) * denom,
            ],
        }
    }
    fn powi(self, n: i32) -> Self {
        let scale = T::from_f64(n as f64) * self.re.powi(n - 1);
        Dual3::lift(self.re.powi(n), scale, self.dx)
    }
}

/// Gradient of a generic scalar map at `x`, exact to roundoff.
pub fn grad3<F>(f: F, x: [f64; 3]) -> [f64; 3]
where
    F: Fn([Dual3<f64>; 3]) -> Dual3<f64>,
{
    f(seed3(x)).dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn trial<T: Real>(x: [T; 3]) -> T {
        // mixes every primitive the grammar supports
        let [a, b, c] = x;
        (a * b).sin() + (c * T::from_f64(0.5)).exp() / (T::one() + b * b).sqrt()
            - a.atan2(c + T::from_f64(2.0))
            + (a * a + T::one()).ln() * c.powi(3)
    }

    fn fd_grad(x: [f64; 3], h: f64) -> [f64; 3] {
        let mut g = [0.0; 3];
        for k in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[k] += h;
            xm[k] -= h;
            g[k] = (trial(xp) - trial(xm)) / (2.0 * h);
        }
        g
    }

    #[test]
    fn gradient_matches_central_differences() {
        let pts = [[0.3, -0.7, 1.1], [1.2, 0.4, -0.6], [-0.8, 0.9, 0.2]];
        for x in pts {
            let g = grad3(trial::<Dual3<f64>>, x);
            let fd = fd_grad(x, 1e-6);
            for k in 0..3 {
                assert_relative_eq!(g[k], fd[k], max_relative = 1e-8, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn nested_duals_give_second_derivatives() {
        // f = sin(x*y): d2f/dxdy = cos(xy) - xy sin(xy)
        let f = |p: [Dual3<Dual3<f64>>; 3]| (p[0] * p[1]).sin();
        let x = 0.7;
        let y = -0.4;
        let outer = seed3([
            Dual3::variable(x, 0),
            Dual3::variable(y, 1),
            Dual3::constant(0.0),
        ]);
        let r = f(outer);
        // outer axis 1 of inner axis 0 => d/dy d/dx
        let d2 = r.dx[1].dx[0];
        let exact = (x * y).cos() - x * y * (x * y).sin();
        assert_relative_eq!(d2, exact, max_relative = 1e-12);
    }

    #[test]
    fn division_and_sqrt_chain() {
        let f = |p: [Dual3<f64>; 3]| p[0] / (p[1] * p[1] + p[2] * p[2]).sqrt();
        let g = grad3(f, [1.0, 3.0, 4.0]);
        // d/dx = 1/5, d/dy = -x*y/r^3 = -3/125, d/dz = -4/125
        assert_relative_eq!(g[0], 0.2, max_relative = 1e-14);
        assert_relative_eq!(g[1], -3.0 / 125.0, max_relative = 1e-14);
        assert_relative_eq!(g[2], -4.0 / 125.0, max_relative = 1e-14);
    }
}
