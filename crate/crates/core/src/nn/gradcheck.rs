//! Central finite-difference checks of analytic gradients (64-bit).

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so vanishing gradients are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Numeric derivative of `f` with respect to coordinate `i` of `x`.
pub fn central_difference(f: &mut impl FnMut(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut probe = x.to_vec();
    probe[i] = x[i] + h;
    let up = f(&probe);
    probe[i] = x[i] - h;
    let down = f(&probe);
    (up - down) / (2.0 * h)
}

/// Largest relative error between `analytic` and central differences of `f`
/// over the probed coordinates.
pub fn grad_check(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    probes: &[usize],
) -> f64 {
    assert_eq!(x.len(), analytic.len());
    probes
        .iter()
        .map(|&i| relative_error(analytic[i], central_difference(&mut f, x, i, FD_STEP)))
        .fold(0.0, f64::max)
}
