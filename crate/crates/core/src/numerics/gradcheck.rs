//! Central finite differences for validating analytic gradients.

/// Default step for central differences in double precision.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `point`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i - b_i| / max(1, |b_i|)`
pub fn max_relative_error(analytic: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(analytic.len(), reference.len());
    analytic
        .iter()
        .zip(reference)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares the analytic gradient returned by `loss_fn` at `point` against
/// central differences of its value, returning the max relative error.
pub fn finite_diff_check(
    mut loss_fn: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    point: &[f64],
    h: f64,
) -> f64 {
    let (_, analytic) = loss_fn(point);
    let fd = central_difference(|x| loss_fn(x).0, point, h);
    max_relative_error(&analytic, &fd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng::SeedStream;
    use rand::Rng;

    #[test]
    fn quadratic_is_exact() {
        let mut rng = SeedStream::new(3).rng();
        let x: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let err = finite_diff_check(
            |p| (p.iter().map(|v| v * v).sum(), p.iter().map(|v| 2.0 * v).collect()),
            &x,
            DEFAULT_STEP,
        );
        assert!(err <= 1e-8, "{err}");
    }

    #[test]
    fn linear_is_exact() {
        let c = [0.5, -1.25, 3.0, 0.0];
        let err = finite_diff_check(
            |p| (p.iter().zip(&c).map(|(a, b)| a * b).sum(), c.to_vec()),
            &[1.0, 2.0, -0.5, 7.0],
            DEFAULT_STEP,
        );
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn detects_wrong_gradient() {
        let err = finite_diff_check(|p| (p[0] * p[0], vec![p[0]]), &[2.0], DEFAULT_STEP);
        assert!(err > 0.5);
    }
}
