use beltrami::catalog;
use beltrami::field::ScalarField;
use beltrami::sde::*;
use std::time::Instant;

fn main() {
    let op = catalog::classical_beltrami().field.to_operator();
    let t = std::f64::consts::TAU;
    let domain = DomainSpec::periodic(vec![0.0;3], vec![t;3]).unwrap();
    let h0 = ScalarField::zero(3);
    let p = SdeParams { d: 1.0, gamma: 0.0, kappa: 0.0, dt: 5e-3, steps: 200, seed: 1 };
    let mut st = EnsembleState::uniform_in(&domain, 100_000, 1).unwrap();
    let t0 = Instant::now();
    simulate(&mut st, &op, &h0, &p, &domain, Scheme::StratonovichHeun, 1<<40, |_| Ok(())).unwrap();
    let el = t0.elapsed().as_secs_f64();
    println!("pure diffusion: {:.3} s for 2e7 particle-steps => {:.1} M particle-steps/s", el, 20.0/el);

    // with friction + kappa (partials path)
    let h0c = ScalarField::parse3("h0","cos(x)").unwrap();
    let p2 = SdeParams { d: 1.0, gamma: 0.5, kappa: 1.0, dt: 5e-3, steps: 200, seed: 1 };
    let mut st2 = EnsembleState::uniform_in(&domain, 100_000, 1).unwrap();
    let t0 = Instant::now();
    simulate(&mut st2, &op, &h0c, &p2, &domain, Scheme::StratonovichHeun, 1<<40, |_| Ok(())).unwrap();
    let el2 = t0.elapsed().as_secs_f64();
    println!("full drift:     {:.3} s for 2e7 particle-steps => {:.1} M particle-steps/s", el2, 20.0/el2);
}
