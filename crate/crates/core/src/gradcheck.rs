//! Central finite differences for checking hand-written backward passes.

use crate::params::ParamSet;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `∂f/∂x_i ≈ (f(x + h e_i) − f(x − h e_i)) / 2h` for every coordinate.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / (‖a‖ + ‖b‖)`, zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient length mismatch");
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Numerical gradient of `loss` w.r.t. every parameter of `params`.
pub fn numeric_param_grad<P: ParamSet + Clone>(params: &P, loss: impl Fn(&P) -> f64, h: f64) -> Vec<f64> {
    let base = params.flatten();
    let mut probe = params.clone();
    central_difference(
        |x| {
            probe.load_flat(x);
            loss(&probe)
        },
        &base,
        h,
    )
}

/// Relative error between an analytic parameter gradient and finite differences.
pub fn check_param_grad<P: ParamSet + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64, h: f64) -> f64 {
    relative_error(&analytic.flatten(), &numeric_param_grad(params, loss, h))
}
