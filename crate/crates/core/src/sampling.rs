//! Deterministic low-discrepancy point sets for classification sampling.

use crate::error::{Error, Result};

const PRIMES: [u64; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Van der Corput radical inverse in the given base.
fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut r = 0.0;
    let mut scale = inv;
    while i > 0 {
        r += (i % base) as f64 * scale;
        i /= base;
        scale *= inv;
    }
    r
}

/// The `i`-th Halton point in the unit cube of the given dimension
/// (leading entries skipped to decorrelate low indices).
pub fn halton(i: u64, dim: usize) -> Vec<f64> {
    assert!(dim <= PRIMES.len(), "halton supports up to 8 dimensions");
    (0..dim)
        .map(|d| radical_inverse(i + 20, PRIMES[d]))
        .collect()
}

/// `count` low-discrepancy points inside the box, skipping points rejected
/// by `guard`. Fails if the guard discards too much of the box.
pub fn sample_box(
    bounds: &[[f64; 2]],
    count: usize,
    guard: impl Fn(&[f64]) -> bool,
) -> Result<Vec<Vec<f64>>> {
    let dim = bounds.len();
    let mut out = Vec::with_capacity(count);
    let mut i = 0u64;
    let budget = (count as u64) * 1000 + 1000;
    while out.len() < count {
        if i > budget {
            return Err(Error::Expr(format!(
                "domain guard rejected nearly all of the sampling box ({} of {count} accepted)",
                out.len()
            )));
        }
        let u = halton(i, dim);
        let p: Vec<f64> = (0..dim)
            .map(|d| bounds[d][0] + u[d] * (bounds[d][1] - bounds[d][0]))
            .collect();
        if guard(&p) {
            out.push(p);
        }
        i += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_cover_the_box_evenly() {
        let pts = sample_box(&[[0.0, 1.0], [0.0, 1.0], [0.0, 1.0]], 1000, |_| true).unwrap();
        assert_eq!(pts.len(), 1000);
        // every octant should hold roughly 125 points
        let mut counts = [0usize; 8];
        for p in &pts {
            let idx = (p[0] > 0.5) as usize | ((p[1] > 0.5) as usize) << 1 | ((p[2] > 0.5) as usize) << 2;
            counts[idx] += 1;
        }
        for c in counts {
            assert!((100..150).contains(&c), "octant count {c}");
        }
    }

    #[test]
    fn sequence_is_deterministic() {
        assert_eq!(halton(17, 3), halton(17, 3));
        assert_eq!(radical_inverse(1, 2), 0.5);
        assert_eq!(radical_inverse(3, 2), 0.75);
    }

    #[test]
    fn guard_rejection_reported() {
        let r = sample_box(&[[0.0, 1.0]], 10, |_| false);
        assert!(r.is_err());
    }
}
