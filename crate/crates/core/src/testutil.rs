//! Finite-difference gradient checking shared by unit tests.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::Parameters;

/// Compares `analytic` against central differences of `loss` on up to 100
/// randomly chosen coordinates of `params`. Relative error uses a floor of
/// 1e-3 on the denominator so near-zero gradients are judged absolutely.
pub(crate) fn finite_difference_check<P, F>(
    params: &mut P,
    analytic: &P,
    loss: F,
    step: f64,
    tol: f64,
    seed: u64,
) where
    P: Parameters,
    F: Fn(&P) -> f64,
{
    let shape: Vec<usize> = params.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut coords: Vec<(usize, usize)> = shape
        .iter()
        .enumerate()
        .flat_map(|(t, &len)| (0..len).map(move |i| (t, i)))
        .collect();
    coords.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    coords.truncate(100);
    let analytic_t = analytic.tensors();
    for (t, i) in coords {
        let original = params.tensors()[t].1[i];
        params.tensors_mut()[t].1[i] = original + step;
        let up = loss(params);
        params.tensors_mut()[t].1[i] = original - step;
        let down = loss(params);
        params.tensors_mut()[t].1[i] = original;
        let fd = (up - down) / (2.0 * step);
        let a = analytic_t[t].1[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
        assert!(
            rel < tol,
            "{}[{i}]: analytic {a} vs finite difference {fd} (rel {rel})",
            analytic_t[t].0
        );
    }
}
