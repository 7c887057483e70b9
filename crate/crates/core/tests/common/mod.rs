//! Independent oracles shared by the integration tests.

/// Error variance of the infinite-lag (non-causal Wiener) smoother for an OU
/// field observed through its integral, `p = -mu int B`, read out as
/// `kappa p` plus white noise of spectral density 1/2:
///
/// `(1/pi) int_0^inf sigma w^2 / (w^2 (w^2 + gamma^2) + 2 kappa^2 mu^2 sigma) dw`.
///
/// Evaluated with `w = c tan(theta)` and composite Simpson on `[0, pi/2]`.
#[allow(dead_code)]
pub fn wiener_smoother_variance(kappa_sq: f64, mu: f64, gamma_b: f64, sigma_b: f64) -> f64 {
    let drive = 2.0 * kappa_sq * mu * mu * sigma_b;
    let c = drive.powf(0.25);
    let f = |theta: f64| {
        if theta >= std::f64::consts::FRAC_PI_2 {
            // limit of the transformed integrand
            return sigma_b / c;
        }
        let w = c * theta.tan();
        let sec2 = 1.0 / theta.cos().powi(2);
        sigma_b * w * w / (w * w * (w * w + gamma_b * gamma_b) + drive) * c * sec2
    };
    let n = 20_000;
    let h = std::f64::consts::FRAC_PI_2 / n as f64;
    let mut sum = f(0.0) + f(std::f64::consts::FRAC_PI_2);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * f(i as f64 * h);
    }
    sum * h / 3.0 / std::f64::consts::PI
}
