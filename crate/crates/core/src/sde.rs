//! Stochastic particle ensembles driven by an antisymmetric operator.
//!
//! Equation of motion per particle:
//!
//! ```text
//! dX^i = [(J^{ij} - gamma J^{ik} J^{jk}) H0_j - kappa d_j J^{ij}] dt
//!        + sqrt(D) J^{ij} o dW_j            (Stratonovich)
//! ```
//!
//! The default integrator is the Heun predictor-corrector with the same
//! Gaussian increments in both stages, which is consistent with the
//! Stratonovich convention. An Euler-Maruyama scheme with the explicit
//! Ito correction (D/2) J^{kj} d_k J^{ij} is available behind
//! [`Scheme::ItoEuler`]; the two must agree in law.
//!
//! Randomness is a counter-style ChaCha stream per particle (stream id =
//! particle index, fixed draws per step), so results are reproducible and
//! independent of how the particle loop is parallelized.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::operator::AntisymOperator;

/// Diffusion / friction / damping parameters and integration controls.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SdeParams {
    pub d: f64,
    pub gamma: f64,
    pub kappa: f64,
    pub dt: f64,
    pub steps: u64,
    pub seed: u64,
}

impl SdeParams {
    /// Preset enforcing kappa = beta^-1 = D / (2 gamma).
    pub fn h_theorem(d: f64, gamma: f64, dt: f64, steps: u64, seed: u64) -> Self {
        SdeParams {
            d,
            gamma,
            kappa: d / (2.0 * gamma),
            dt,
            steps,
            seed,
        }
    }

    /// beta = 2 gamma / D.
    pub fn beta(&self) -> f64 {
        2.0 * self.gamma / self.d
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.d >= 0.0) {
            errs.push(format!("D must be >= 0, got {}", self.d));
        }
        if !(self.gamma >= 0.0) {
            errs.push(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if !(self.kappa >= 0.0) {
            errs.push(format!("kappa must be >= 0, got {}", self.kappa));
        }
        if !(self.dt > 0.0) {
            errs.push(format!("dt must be > 0, got {}", self.dt));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryKind {
    Periodic,
    Reflecting,
}

/// Axis-aligned box with a boundary rule per axis. Reflection realizes the
/// zero-normal-flux closure; periodic wrapping suits periodic fields.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DomainSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub kind: Vec<BoundaryKind>,
}

impl DomainSpec {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, kind: Vec<BoundaryKind>) -> Result<Self> {
        let d = DomainSpec { lo, hi, kind };
        d.validate()?;
        Ok(d)
    }

    pub fn periodic(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let kind = vec![BoundaryKind::Periodic; lo.len()];
        DomainSpec::new(lo, hi, kind)
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.hi.len() != self.lo.len() || self.kind.len() != self.lo.len() {
            errs.push("domain lo/hi/kind lengths disagree".to_string());
        } else {
            for a in 0..self.lo.len() {
                if !(self.lo[a] < self.hi[a]) {
                    errs.push(format!(
                        "axis {a}: lower bound {} not below upper {}",
                        self.lo[a], self.hi[a]
                    ));
                }
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errs))
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(v, (lo, hi))| v >= lo && v <= hi)
    }
}

/// Wrap or reflect a point into the domain, axis by axis. Displacements
/// beyond one reflection are reported as errors (the step was too large).
pub fn apply_boundary(x: &mut [f64], domain: &DomainSpec) -> Result<()> {
    for a in 0..domain.dim() {
        let lo = domain.lo[a];
        let hi = domain.hi[a];
        match domain.kind[a] {
            BoundaryKind::Periodic => {
                if x[a] < lo || x[a] >= hi {
                    x[a] = lo + (x[a] - lo).rem_euclid(hi - lo);
                }
            }
            BoundaryKind::Reflecting => {
                if x[a] < lo {
                    x[a] = 2.0 * lo - x[a];
                } else if x[a] > hi {
                    x[a] = 2.0 * hi - x[a];
                }
                if x[a] < lo || x[a] > hi {
                    return Err(Error::BoundaryOvershoot { axis: a });
                }
            }
        }
    }
    Ok(())
}

/// Particle positions plus per-particle generator state.
#[derive(Clone)]
pub struct EnsembleState {
    dim: usize,
    pub positions: Vec<f64>,
    pub time: f64,
    pub step_index: u64,
    rngs: Vec<ChaCha8Rng>,
}

impl EnsembleState {
    /// One ChaCha stream per particle: same 64-bit seed, stream id equal to
    /// the particle index.
    pub fn from_positions(dim: usize, positions: Vec<f64>, seed: u64) -> Result<Self> {
        if positions.len() % dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: positions.len(),
                context: "ensemble positions length not a multiple of dim",
            });
        }
        let n = positions.len() / dim;
        let rngs = (0..n)
            .map(|p| {
                let mut r = ChaCha8Rng::seed_from_u64(seed);
                r.set_stream(p as u64);
                r
            })
            .collect();
        Ok(EnsembleState {
            dim,
            positions,
            time: 0.0,
            step_index: 0,
            rngs,
        })
    }

    /// All particles at one point.
    pub fn all_at(dim: usize, n: usize, point: &[f64], seed: u64) -> Result<Self> {
        if point.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: point.len(),
                context: "ensemble seed point",
            });
        }
        let mut positions = Vec::with_capacity(n * dim);
        for _ in 0..n {
            positions.extend_from_slice(point);
        }
        EnsembleState::from_positions(dim, positions, seed)
    }

    /// Particles drawn uniformly in the domain (stream id `n`, so particle
    /// streams stay untouched).
    pub fn uniform_in(domain: &DomainSpec, n: usize, seed: u64) -> Result<Self> {
        let dim = domain.dim();
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        r.set_stream(n as u64);
        let mut positions = Vec::with_capacity(n * dim);
        for _ in 0..n {
            for a in 0..dim {
                let u = uniform_closed_open(r.next_u64());
                positions.push(domain.lo[a] + u * (domain.hi[a] - domain.lo[a]));
            }
        }
        EnsembleState::from_positions(dim, positions, seed)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_particles(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        &self.positions[p * self.dim..(p + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Heun predictor-corrector, shared noise across stages
    /// (Stratonovich-consistent).
    StratonovichHeun,
    /// Euler-Maruyama plus the explicit drift correction
    /// (D/2) J^{kj} d_k J^{ij}.
    ItoEuler,
}

fn uniform_closed_open(v: u64) -> f64 {
    // [0, 1)
    (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_open_closed(v: u64) -> f64 {
    // (0, 1], safe under ln
    ((v >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Fill `out` with standard normal draws by Box-Muller. Consumption is
/// fixed at 2 * ceil(n/2) words per call, keeping the per-particle streams
/// aligned with the step counter.
pub fn fill_standard_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    let n = out.len();
    let mut i = 0;
    while i < n {
        let u1 = uniform_open_closed(rng.next_u64());
        let u2 = uniform_closed_open(rng.next_u64());
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
        out[i] = r * c;
        if i + 1 < n {
            out[i + 1] = r * s;
        }
        i += 2;
    }
}

/// Deterministic part of the equation of motion:
/// (J^{ij} - gamma J^{ik} J^{jk}) H0_j - kappa d_j J^{ij}.
pub fn drift(
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    x: &[f64],
) -> Result<Vec<f64>> {
    let n = op.dim();
    if x.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: x.len(),
            context: "drift point",
        });
    }
    if h0.dim() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: h0.dim(),
            context: "drift Hamiltonian",
        });
    }
    let mut scratch = Scratch::new(n);
    let mut out = vec![0.0; n];
    drift_into(op, h0, params, x, &mut scratch, &mut out)?;
    Ok(out)
}

/// sqrt(D) J(x), the matrix contracted with the Gaussian increments.
pub fn noise_amplitude(op: &AntisymOperator, d: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            actual: x.len(),
            context: "noise_amplitude point",
        });
    }
    if !op.guard_ok(x) {
        return Err(Error::DomainGuard {
            name: op.name().to_string(),
            point: x.to_vec(),
        });
    }
    let mut j = op.components(x);
    let s = d.sqrt();
    for v in j.iter_mut() {
        *v *= s;
    }
    Ok(j)
}

struct Scratch {
    j0: Vec<f64>,
    j1: Vec<f64>,
    dj: Vec<f64>,
    gh: Vec<f64>,
    jt: Vec<f64>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    xi: Vec<f64>,
    pred: Vec<f64>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            j0: vec![0.0; n * n],
            j1: vec![0.0; n * n],
            dj: vec![0.0; n * n * n],
            gh: vec![0.0; n],
            jt: vec![0.0; n],
            a0: vec![0.0; n],
            a1: vec![0.0; n],
            xi: vec![0.0; n],
            pred: vec![0.0; n],
        }
    }
}

fn guard_check(op: &AntisymOperator, x: &[f64]) -> Result<()> {
    if op.guard_ok(x) {
        Ok(())
    } else {
        Err(Error::DomainGuard {
            name: op.name().to_string(),
            point: x.to_vec(),
        })
    }
}

/// Drift and J at `x` into caller scratch; partials are only evaluated when
/// the kappa term needs them.
fn coefficients(
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    x: &[f64],
    j: &mut [f64],
    dj: &mut [f64],
    gh: &mut [f64],
    jt: &mut [f64],
    a: &mut [f64],
) -> Result<()> {
    guard_check(op, x)?;
    let n = op.dim();
    op.components_into(x, j);
    h0.grad_into(x, gh);
    // jt_k = J^{jk} H0_j (transpose contraction reused by the friction term)
    for k in 0..n {
        let mut s = 0.0;
        for jj in 0..n {
            s += j[jj * n + k] * gh[jj];
        }
        jt[k] = s;
    }
    let need_partials = params.kappa != 0.0;
    if need_partials {
        op.partials_into(x, dj)?;
    }
    for i in 0..n {
        let mut s = 0.0;
        for jj in 0..n {
            s += j[i * n + jj] * (gh[jj] - params.gamma * jt[jj]);
        }
        if need_partials {
            for jj in 0..n {
                s -= params.kappa * dj[(jj * n + i) * n + jj];
            }
        }
        a[i] = s;
    }
    Ok(())
}

fn drift_into(
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    x: &[f64],
    sc: &mut Scratch,
    out: &mut [f64],
) -> Result<()> {
    let (j0, dj, gh, jt) = (&mut sc.j0, &mut sc.dj, &mut sc.gh, &mut sc.jt);
    coefficients(op, h0, params, x, j0, dj, gh, jt, out)
}

fn step_particle(
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    domain: &DomainSpec,
    scheme: Scheme,
    x: &mut [f64],
    rng: &mut ChaCha8Rng,
    sc: &mut Scratch,
) -> Result<()> {
    let n = op.dim();
    let dt = params.dt;
    let sqdt = (params.d * dt).sqrt();
    fill_standard_normals(rng, &mut sc.xi);
    coefficients(
        op, h0, params, x, &mut sc.j0, &mut sc.dj, &mut sc.gh, &mut sc.jt, &mut sc.a0,
    )?;
    match scheme {
        Scheme::StratonovichHeun => {
            for i in 0..n {
                let mut noise = 0.0;
                for jj in 0..n {
                    noise += sc.j0[i * n + jj] * sc.xi[jj];
                }
                sc.pred[i] = x[i] + sc.a0[i] * dt + sqdt * noise;
            }
            coefficients(
                op,
                h0,
                params,
                &sc.pred,
                &mut sc.j1,
                &mut sc.dj,
                &mut sc.gh,
                &mut sc.jt,
                &mut sc.a1,
            )?;
            for i in 0..n {
                let mut noise = 0.0;
                for jj in 0..n {
                    noise += 0.5 * (sc.j0[i * n + jj] + sc.j1[i * n + jj]) * sc.xi[jj];
                }
                x[i] += 0.5 * (sc.a0[i] + sc.a1[i]) * dt + sqdt * noise;
            }
        }
        Scheme::ItoEuler => {
            // correction (D/2) J^{kj} d_k J^{ij} converts the Stratonovich
            // drift to the Ito one
            if params.kappa == 0.0 {
                op.partials_into(x, &mut sc.dj)?;
            }
            for i in 0..n {
                let mut corr = 0.0;
                for k in 0..n {
                    for jj in 0..n {
                        corr += sc.j0[k * n + jj] * sc.dj[(k * n + i) * n + jj];
                    }
                }
                let mut noise = 0.0;
                for jj in 0..n {
                    noise += sc.j0[i * n + jj] * sc.xi[jj];
                }
                x[i] += (sc.a0[i] + 0.5 * params.d * corr) * dt + sqdt * noise;
            }
        }
    }
    apply_boundary(x, domain)?;
    Ok(())
}

/// Advance the whole ensemble one step (Heun scheme). Particle updates are
/// independent and run in parallel; the result is bitwise identical for any
/// thread count.
pub fn step_stratonovich_heun(
    state: &mut EnsembleState,
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    domain: &DomainSpec,
) -> Result<()> {
    step_ensemble(state, op, h0, params, domain, Scheme::StratonovichHeun)
}

/// One ensemble step under the chosen scheme.
pub fn step_ensemble(
    state: &mut EnsembleState,
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    domain: &DomainSpec,
    scheme: Scheme,
) -> Result<()> {
    let n = state.dim;
    let step_now = state.step_index;
    state
        .positions
        .par_chunks_mut(n)
        .zip(state.rngs.par_iter_mut())
        .enumerate()
        .try_for_each_init(
            || Scratch::new(n),
            |sc, (p, (x, rng))| -> Result<()> {
                step_particle(op, h0, params, domain, scheme, x, rng, sc)?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinitePosition {
                        particle: p,
                        step: step_now,
                    });
                }
                Ok(())
            },
        )?;
    state.step_index += 1;
    state.time += params.dt;
    Ok(())
}

/// Drive `params.steps` steps, invoking `on_snapshot` on the initial state
/// and then after every `snapshot_stride` steps.
pub fn simulate<F>(
    state: &mut EnsembleState,
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    domain: &DomainSpec,
    scheme: Scheme,
    snapshot_stride: u64,
    mut on_snapshot: F,
) -> Result<()>
where
    F: FnMut(&EnsembleState) -> Result<()>,
{
    params.validate()?;
    domain.validate()?;
    if state.dim != domain.dim() || state.dim != op.dim() {
        return Err(Error::DimensionMismatch {
            expected: op.dim(),
            actual: state.dim,
            context: "simulate state/operator/domain dimensions",
        });
    }
    let stride = snapshot_stride.max(1);
    on_snapshot(state)?;
    for s in 0..params.steps {
        step_ensemble(state, op, h0, params, domain, scheme)?;
        if (s + 1) % stride == 0 {
            on_snapshot(state)?;
        }
    }
    Ok(())
}

/// Collected particle positions at a point in time.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub time: f64,
    pub positions: Vec<f64>,
}

/// Convenience wrapper returning collected snapshots.
#[allow(clippy::too_many_arguments)]
pub fn simulate_collect(
    state: &mut EnsembleState,
    op: &AntisymOperator,
    h0: &ScalarField,
    params: &SdeParams,
    domain: &DomainSpec,
    scheme: Scheme,
    snapshot_stride: u64,
) -> Result<Vec<Snapshot>> {
    let mut out = Vec::new();
    simulate(
        state,
        op,
        h0,
        params,
        domain,
        scheme,
        snapshot_stride,
        |s| {
            out.push(Snapshot {
                time: s.time,
                positions: s.positions.clone(),
            });
            Ok(())
        },
    )?;
    Ok(out)
}
