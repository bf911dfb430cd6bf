//! The catalog of reference vector fields, with analytic Jacobians, domain
//! guards, curl-proportionality factors and known equilibria.
//!
//! Canonical names: `b1-classical`, `b2-sigma`, `b3-orthogonal`,
//! `b4-parabolic`, `b5-weak`, `exp-beltrami`, `nb2-family`, `nb-simple`,
//! `b3-dual`.

use std::sync::Arc;

use crate::ad::{seed3, Dual3, Real};
use crate::error::{Error, Result};
use crate::field::{Profile, ScalarField};
use crate::operator::ClassificationReport;
use crate::r3::{VectorExpr, VectorField3};

/// Default safety margin for guarded domains: the guard quantity must
/// exceed this value.
pub const GUARD_MARGIN: f64 = 1e-6;

/// An orthogonal coordinate triple (ell, psi, theta) with analytic
/// gradients and |grad ell| = |grad psi|.
pub struct OrthogonalCoords {
    pub ell: ScalarField,
    pub psi: ScalarField,
    pub theta: ScalarField,
    pub name: String,
}

impl OrthogonalCoords {
    /// Check pairwise orthogonality and the equal-norm requirement at the
    /// sampled points (tolerance 1e-10).
    pub fn validate(&self, samples: &[[f64; 3]]) -> Result<()> {
        for x in samples {
            let gl = self.ell.grad(x);
            let gp = self.psi.grad(x);
            let gt = self.theta.grad(x);
            let d = |a: &[f64], b: &[f64]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            let checks = [
                ("grad ell . grad psi", d(&gl, &gp)),
                ("grad ell . grad theta", d(&gl, &gt)),
                ("grad psi . grad theta", d(&gp, &gt)),
                (
                    "|grad ell| - |grad psi|",
                    d(&gl, &gl).sqrt() - d(&gp, &gp).sqrt(),
                ),
            ];
            for (what, v) in checks {
                if v.abs() > 1e-10 {
                    return Err(Error::CoordsNotOrthogonal(format!(
                        "{} = {v:e} at {x:?} for '{}'",
                        what, self.name
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Coordinate map evaluable in plain or dual arithmetic.
pub trait CoordMap: Send + Sync + 'static {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3];
    fn label(&self) -> String;
}

/// (ell, psi, theta) = (x, y, z)
pub struct CartesianCoords;

impl CoordMap for CartesianCoords {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        x
    }
    fn label(&self) -> String {
        "cartesian".into()
    }
}

/// (ell, psi, theta) = (sqrt(rho + z), sqrt(rho - z), atan2(y, x)) with
/// rho^2 = x^2 + y^2 + z^2. Orthogonal, with |grad ell|^2 = |grad psi|^2
/// = 1/(2 rho) and |grad theta| = 1/sqrt(x^2 + y^2).
pub struct ParabolicCoords;

impl CoordMap for ParabolicCoords {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        let rho = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        [
            (rho + x[2]).sqrt(),
            (rho - x[2]).sqrt(),
            x[1].atan2(x[0]),
        ]
    }
    fn label(&self) -> String {
        "parabolic".into()
    }
}

fn coord_scalar<C: CoordMap>(c: &Arc<C>, idx: usize, name: &str) -> ScalarField {
    let c1 = c.clone();
    let c2 = c.clone();
    ScalarField::with_grad(
        3,
        name,
        move |x: &[f64]| c1.eval([x[0], x[1], x[2]])[idx].value(),
        move |x: &[f64], out: &mut [f64]| {
            let d = c2.eval(seed3([x[0], x[1], x[2]]));
            out.copy_from_slice(&d[idx].dx);
        },
    )
}

fn coords_struct<C: CoordMap>(c: &Arc<C>) -> OrthogonalCoords {
    OrthogonalCoords {
        ell: coord_scalar(c, 0, "ell"),
        psi: coord_scalar(c, 1, "psi"),
        theta: coord_scalar(c, 2, "theta"),
        name: c.label(),
    }
}

/// Expected classification verdicts for a catalog entry.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExpectedClass {
    pub poisson: bool,
    pub measure_preserving: bool,
    pub beltrami: bool,
    pub weak_beltrami: bool,
    pub nontrivial: bool,
}

impl ExpectedClass {
    pub fn matches(&self, r: &ClassificationReport) -> bool {
        self.poisson == r.is_poisson
            && self.measure_preserving == r.is_measure_preserving
            && self.beltrami == r.is_beltrami
            && self.weak_beltrami == r.is_weak_beltrami
            && self.nontrivial == r.is_nontrivial
    }
}

const BELTRAMI_NONTRIVIAL: ExpectedClass = ExpectedClass {
    poisson: false,
    measure_preserving: false,
    beltrami: true,
    weak_beltrami: true,
    nontrivial: true,
};

const NON_BELTRAMI: ExpectedClass = ExpectedClass {
    poisson: false,
    measure_preserving: false,
    beltrami: false,
    weak_beltrami: false,
    nontrivial: false,
};

/// A reference field together with everything tests need to use it as an
/// oracle.
pub struct CatalogEntry {
    pub name: String,
    pub field: VectorField3,
    pub expected: ExpectedClass,
    /// Curl-proportionality factor: curl w = proportionality * w.
    pub proportionality: Option<ScalarField>,
    /// Known stationary density of the pure diffusion process, up to
    /// normalization.
    pub equilibrium: Option<ScalarField>,
    pub coords: Option<OrthogonalCoords>,
    /// Guarded box on which classification and property tests sample.
    pub sample_box: [[f64; 2]; 3],
    pub notes: String,
}

struct SigmaField<P: Profile> {
    sigma: Arc<P>,
}

impl<P: Profile> VectorExpr for SigmaField<P> {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        let s = self.sigma.eval(x[2]);
        [s.sin(), s.cos(), T::zero()]
    }
}

/// w = (sin z, cos z, 0): curl w = w, |w| = 1, div w = 0.
pub fn classical_beltrami() -> CatalogEntry {
    let field = VectorField3::from_vector_expr(
        "b1-classical",
        SigmaField {
            sigma: Arc::new(crate::field::IdentityProfile),
        },
    );
    CatalogEntry {
        name: "b1-classical".into(),
        field,
        expected: BELTRAMI_NONTRIVIAL,
        proportionality: Some(ScalarField::constant(3, 1.0)),
        equilibrium: Some(ScalarField::constant(3, 1.0)),
        coords: None,
        sample_box: [[0.0, TAU], [0.0, TAU], [0.0, TAU]],
        notes: "unit-norm solenoidal curl eigenfield, eigenvalue 1".into(),
    }
}

const TAU: f64 = std::f64::consts::TAU;

/// w = (sin sigma(z), cos sigma(z), 0): curl w = sigma'(z) w.
pub fn sigma_beltrami<P: Profile>(sigma: P) -> CatalogEntry {
    let sigma = Arc::new(sigma);
    let hprof = sigma.clone();
    let field = VectorField3::from_vector_expr(
        "b2-sigma",
        SigmaField {
            sigma: sigma.clone(),
        },
    );
    CatalogEntry {
        name: "b2-sigma".into(),
        field,
        expected: BELTRAMI_NONTRIVIAL,
        proportionality: Some(ScalarField::new(3, "sigma_z", move |x: &[f64]| {
            hprof.eval(Dual3::variable(x[2], 0)).dx[0]
        })),
        equilibrium: Some(ScalarField::constant(3, 1.0)),
        coords: None,
        sample_box: [[0.0, TAU], [0.0, TAU], [0.0, TAU]],
        notes: format!("profile sigma(z) = {}", sigma.label()),
    }
}

struct OrthogonalField<C: CoordMap, P: Profile> {
    coords: Arc<C>,
    u: Arc<P>,
    /// false: w = cos u grad psi + sin u grad ell (curl w = +h w)
    /// true:  w = sin u grad psi + cos u grad ell (curl w = -h w)
    dual: bool,
}

impl<C: CoordMap, P: Profile> VectorExpr for OrthogonalField<C, P> {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        let cd = self.coords.eval(seed3(x));
        let u = self.u.eval(cd[2].re);
        let (a, b) = if self.dual {
            (u.sin(), u.cos())
        } else {
            (u.cos(), u.sin())
        };
        [
            a * cd[1].dx[0] + b * cd[0].dx[0],
            a * cd[1].dx[1] + b * cd[0].dx[1],
            a * cd[1].dx[2] + b * cd[0].dx[2],
        ]
    }
}

struct NbField<C: CoordMap, P: Profile> {
    coords: Arc<C>,
    u: Arc<P>,
}

impl<C: CoordMap, P: Profile> VectorExpr for NbField<C, P> {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        let cd = self.coords.eval(seed3(x));
        let u = self.u.eval(cd[2].re);
        [
            cd[1].dx[0] + u * cd[0].dx[0],
            cd[1].dx[1] + u * cd[0].dx[1],
            cd[1].dx[2] + u * cd[0].dx[2],
        ]
    }
}

fn proportionality_field<C: CoordMap, P: Profile>(
    coords: &Arc<C>,
    u: &Arc<P>,
    sign: f64,
) -> ScalarField {
    let c = coords.clone();
    let p = u.clone();
    // u_theta(theta) |grad theta|
    ScalarField::new(3, "u_theta*|grad theta|", move |x: &[f64]| {
        let cd = c.eval(seed3([x[0], x[1], x[2]]));
        let g = cd[2].dx;
        let du = p.eval(Dual3::variable(cd[2].re, 0)).dx[0];
        sign * du * (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt()
    })
}

fn build_orthogonal<C: CoordMap, P: Profile>(
    name: &str,
    coords: C,
    u: P,
    dual: bool,
    guard: Option<Arc<dyn Fn([f64; 3]) -> bool + Send + Sync>>,
    sample_box: [[f64; 2]; 3],
    notes: &str,
) -> Result<CatalogEntry> {
    let coords = Arc::new(coords);
    let u = Arc::new(u);
    let cs = coords_struct(&coords);
    let sample_pts: Vec<[f64; 3]> = crate::sampling::sample_box(
        &sample_box,
        64,
        |p| match &guard {
            Some(g) => g([p[0], p[1], p[2]]),
            None => true,
        },
    )?
    .into_iter()
    .map(|p| [p[0], p[1], p[2]])
    .collect();
    cs.validate(&sample_pts)?;
    let mut field = VectorField3::from_vector_expr(
        name,
        OrthogonalField {
            coords: coords.clone(),
            u: u.clone(),
            dual,
        },
    );
    if let Some(g) = &guard {
        let g = g.clone();
        field = field.with_guard(move |x| g(x));
    }
    let sign = if dual { -1.0 } else { 1.0 };
    Ok(CatalogEntry {
        name: name.into(),
        field,
        expected: BELTRAMI_NONTRIVIAL,
        proportionality: Some(proportionality_field(&coords, &u, sign)),
        equilibrium: Some(ScalarField::constant(3, 1.0)),
        coords: Some(cs),
        sample_box,
        notes: notes.into(),
    })
}

/// w = cos u grad psi + sin u grad ell on an orthogonal system with
/// |grad ell| = |grad psi|; curl w = u_theta |grad theta| w.
pub fn orthogonal_beltrami<C: CoordMap, P: Profile>(
    name: &str,
    coords: C,
    u: P,
    sample_box: [[f64; 2]; 3],
) -> Result<CatalogEntry> {
    build_orthogonal(
        name,
        coords,
        u,
        false,
        None,
        sample_box,
        "curl eigenfield built from an orthogonal coordinate system",
    )
}

/// Dual combination w* = sin u grad psi + cos u grad ell; proportionality
/// factor flips sign.
pub fn dual_field<C: CoordMap, P: Profile>(
    name: &str,
    coords: C,
    u: P,
    sample_box: [[f64; 2]; 3],
) -> Result<CatalogEntry> {
    build_orthogonal(
        name,
        coords,
        u,
        true,
        None,
        sample_box,
        "dual combination with opposite proportionality factor",
    )
}

/// Parabolic-coordinates instance with proportionality 1/sqrt(x^2+y^2).
/// The guard excludes the axis x^2 + y^2 <= margin and a band around the
/// branch cut of the azimuth on the half-plane x <= 0.
pub fn parabolic_beltrami_with_margin(margin: f64) -> Result<CatalogEntry> {
    let band = margin.sqrt();
    let guard: Arc<dyn Fn([f64; 3]) -> bool + Send + Sync> = Arc::new(move |x: [f64; 3]| {
        x[0] * x[0] + x[1] * x[1] > margin && (x[0] > 0.0 || x[1].abs() > band)
    });
    let mut entry = build_orthogonal(
        "b4-parabolic",
        ParabolicCoords,
        crate::field::IdentityProfile,
        false,
        Some(guard),
        [[0.4, 1.2], [0.4, 1.2], [0.4, 1.2]],
        "parabolic coordinates; streamlines preserve theta and ell*cos(theta) - psi*sin(theta)",
    )?;
    entry.proportionality = Some(ScalarField::parse3(
        "1/sqrt(x^2+y^2)",
        "1/sqrt(x*x + y*y)",
    )?);
    Ok(entry)
}

pub fn parabolic_beltrami() -> Result<CatalogEntry> {
    parabolic_beltrami_with_margin(GUARD_MARGIN)
}

struct ExpField;

impl VectorExpr for ExpField {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        let r2 = T::from_f64(std::f64::consts::SQRT_2);
        let phi = (x[0] + x[1]).exp() / r2;
        let a = phi.cos() / r2;
        [a, -a, phi.sin()]
    }
}

/// Solenoidal unit-norm field with exponential proportionality factor
/// exp(x + y).
pub fn exp_beltrami() -> Result<CatalogEntry> {
    Ok(CatalogEntry {
        name: "exp-beltrami".into(),
        field: VectorField3::from_vector_expr("exp-beltrami", ExpField),
        expected: BELTRAMI_NONTRIVIAL,
        proportionality: Some(ScalarField::parse3("exp(x+y)", "exp(x+y)")?),
        equilibrium: Some(ScalarField::constant(3, 1.0)),
        coords: None,
        sample_box: [[-1.0, 1.0], [-1.0, 1.0], [-1.0, 1.0]],
        notes: "eikonal-style construction with prescribed proportionality".into(),
    })
}

struct WeakField;

impl VectorExpr for WeakField {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        [(x[1] * x[1] - T::from_f64(2.0) * x[2] * x[2]).sqrt(), x[2], T::zero()]
    }
}

/// w = (sqrt(y^2 - 2 z^2), z, 0): nonzero field force with vanishing field
/// charge. Guarded to y^2 - 2 z^2 > margin.
pub fn weak_beltrami_example_with_margin(margin: f64) -> CatalogEntry {
    let field = VectorField3::from_vector_expr("b5-weak", WeakField)
        .with_guard(move |x| x[1] * x[1] - 2.0 * x[2] * x[2] > margin);
    CatalogEntry {
        name: "b5-weak".into(),
        field,
        expected: ExpectedClass {
            poisson: false,
            measure_preserving: false,
            beltrami: false,
            weak_beltrami: true,
            nontrivial: false,
        },
        proportionality: None,
        equilibrium: None,
        coords: None,
        sample_box: [[-1.0, 1.0], [2.0, 3.0], [-0.5, 0.5]],
        notes: "field force (1/2) grad(y^2 - z^2) - (z y / sqrt(y^2 - 2 z^2)) grad x".into(),
    }
}

pub fn weak_beltrami_example() -> CatalogEntry {
    weak_beltrami_example_with_margin(GUARD_MARGIN)
}

/// w = grad psi + u grad ell; g w is a curl eigenfield for
/// g = 1/sqrt(1 + u^2), which is the stationary density of the pure
/// diffusion process.
pub fn nb_family<C: CoordMap, P: Profile>(
    name: &str,
    coords: C,
    u: P,
    sample_box: [[f64; 2]; 3],
) -> Result<CatalogEntry> {
    let coords = Arc::new(coords);
    let u = Arc::new(u);
    let cs = coords_struct(&coords);
    let sample_pts: Vec<[f64; 3]> = crate::sampling::sample_box(&sample_box, 64, |_| true)?
        .into_iter()
        .map(|p| [p[0], p[1], p[2]])
        .collect();
    cs.validate(&sample_pts)?;
    let field = VectorField3::from_vector_expr(
        name,
        NbField {
            coords: coords.clone(),
            u: u.clone(),
        },
    );
    let c = coords.clone();
    let p = u.clone();
    let c2 = coords.clone();
    let p2 = u.clone();
    let equilibrium = ScalarField::with_grad(
        3,
        "1/sqrt(1+u^2)",
        move |x: &[f64]| {
            let th = c.eval([x[0], x[1], x[2]])[2].value();
            1.0 / (1.0 + p.eval(th).powi(2)).sqrt()
        },
        move |x: &[f64], out: &mut [f64]| {
            let cd = c2.eval(seed3([x[0], x[1], x[2]]));
            let uu = p2.eval(cd[2]);
            let g = (Dual3::constant(1.0) + uu * uu).sqrt();
            let val = Dual3::constant(1.0) / g;
            out.copy_from_slice(&val.dx);
        },
    );
    Ok(CatalogEntry {
        name: name.into(),
        field,
        expected: NON_BELTRAMI,
        proportionality: None,
        equilibrium: Some(equilibrium),
        coords: Some(cs),
        sample_box,
        notes: "rescaling by 1/sqrt(1+u^2) restores the curl-eigenfield form with sigma = arctan u"
            .into(),
    })
}

struct NbSimpleField;

impl VectorExpr for NbSimpleField {
    fn eval<T: Real>(&self, x: [T; 3]) -> [T; 3] {
        [T::one(), T::zero(), x[1]]
    }
}

/// w = (1, 0, y): field force y grad y, field charge 1, pure-diffusion
/// equilibrium proportional to 1/sqrt(1 + y^2).
pub fn nb_simple() -> Result<CatalogEntry> {
    Ok(CatalogEntry {
        name: "nb-simple".into(),
        field: VectorField3::from_vector_expr("nb-simple", NbSimpleField),
        expected: NON_BELTRAMI,
        proportionality: None,
        equilibrium: Some(ScalarField::parse3(
            "1/sqrt(1+y^2)",
            "1/sqrt(1 + y*y)",
        )?),
        coords: None,
        sample_box: [[-1.0, 1.0], [-3.0, 3.0], [-1.0, 1.0]],
        notes: "heterogeneous equilibrium driven by unit field charge".into(),
    })
}

/// Canonical entry names accepted by [`by_name`].
pub const CATALOG_NAMES: [&str; 9] = [
    "b1-classical",
    "b2-sigma",
    "b3-orthogonal",
    "b4-parabolic",
    "b5-weak",
    "exp-beltrami",
    "nb2-family",
    "nb-simple",
    "b3-dual",
];

/// Look up a catalog entry by canonical name. Parameterized families are
/// instantiated with their reference parameters (sigma = 2z for `b2-sigma`;
/// Cartesian coordinates with u = theta for `b3-orthogonal`, `b3-dual` and
/// `nb2-family`).
pub fn by_name(name: &str) -> Result<CatalogEntry> {
    let cart_box = [[0.0, TAU], [0.0, TAU], [0.0, TAU]];
    match name {
        "b1-classical" => Ok(classical_beltrami()),
        "b2-sigma" => Ok(sigma_beltrami(crate::field::ScaleProfile(2.0))),
        "b3-orthogonal" => orthogonal_beltrami(
            "b3-orthogonal",
            CartesianCoords,
            crate::field::IdentityProfile,
            cart_box,
        ),
        "b4-parabolic" => parabolic_beltrami(),
        "b5-weak" => Ok(weak_beltrami_example()),
        "exp-beltrami" => exp_beltrami(),
        "nb2-family" => nb_family(
            "nb2-family",
            CartesianCoords,
            crate::field::IdentityProfile,
            [[-1.0, 1.0], [-1.0, 1.0], [-2.0, 2.0]],
        ),
        "nb-simple" => nb_simple(),
        "b3-dual" => dual_field(
            "b3-dual",
            CartesianCoords,
            crate::field::IdentityProfile,
            cart_box,
        ),
        other => Err(Error::Expr(format!(
            "unknown catalog field '{other}' (known: {})",
            CATALOG_NAMES.join(", ")
        ))),
    }
}

/// All canonical entries.
pub fn all() -> Result<Vec<CatalogEntry>> {
    CATALOG_NAMES.iter().map(|n| by_name(n)).collect()
}
