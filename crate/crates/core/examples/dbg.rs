use beltrami::grid::*;
use beltrami::fpe::*;
use beltrami::field::ScalarField;
use beltrami::catalog;
use std::time::Instant;

fn main() {
    let tau = std::f64::consts::TAU;
    let e = catalog::nb_simple().unwrap();
    let g = Grid3::new([32,64,32],[0.0,-3.0,0.0],[tau,3.0,tau],
        [GridBoundary::Periodic, GridBoundary::ZeroFlux, GridBoundary::Periodic]).unwrap();
    let prob = FpeProblem::new(g.clone(), &e.field, &ScalarField::zero(3), 1.0, 0.0, 0.0).unwrap();
    println!("stable_dt = {:.3e}", prob.stable_dt());
    let f0 = DensityField::uniform(g);
    let t0 = Instant::now();
    let mut last_print = 0u64;
    let out = prob.steady_state(&f0,
        &SteadyOpts { tol: 1e-7, max_steps: 400_000, observe_stride: 5000, ..Default::default() },
        |rec, f| {
            if rec.step != last_print {
                last_print = rec.step;
                let err = f.linf_relative_error(|x| 1.0/(1.0+x[1]*x[1]).sqrt());
                println!("  step {:>7} t={:6.2} residual {:.3e} err {:.4} [{:.1}s]",
                    rec.step, rec.time, rec.residual, err, t0.elapsed().as_secs_f64());
            }
            Ok(())
        }).unwrap();
    let err = out.density.linf_relative_error(|x| 1.0/(1.0+x[1]*x[1]).sqrt());
    println!("final: steps {} conv {} residual {:.2e} err {:.4} time {:.1}s",
        out.steps, out.converged, out.residual, err, t0.elapsed().as_secs_f64());
}
