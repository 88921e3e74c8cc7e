//! Closed-form oracles: heat kernel, Fisher front speed, Wick-rotation map,
//! sigmoid derivative.

use serde::{Deserialize, Serialize};

use crate::error::{NpdeError, Result};
use crate::solver::sigmoid;

/// `amplitude · exp(−(x − center)² / (2 sigma2))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianProfile {
    pub amplitude: f64,
    pub center: f64,
    pub sigma2: f64,
}

impl GaussianProfile {
    pub fn new(amplitude: f64, center: f64, sigma2: f64) -> Result<Self> {
        if !(sigma2.is_finite() && sigma2 > 0.0) {
            return Err(NpdeError::invalid("sigma2", "must be finite and > 0"));
        }
        if !(amplitude.is_finite() && center.is_finite()) {
            return Err(NpdeError::NonFinite("gaussian parameters".into()));
        }
        Ok(GaussianProfile {
            amplitude,
            center,
            sigma2,
        })
    }

    pub fn eval(&self, x: f64) -> f64 {
        let d = x - self.center;
        self.amplitude * (-d * d / (2.0 * self.sigma2)).exp()
    }

    /// Sum over periodic images on a domain of the given width.
    pub fn eval_periodic(&self, x: f64, width: f64) -> f64 {
        let reach = ((12.0 * self.sigma2.sqrt()) / width).ceil() as i64 + 1;
        (-reach..=reach).map(|m| self.eval(x + m as f64 * width)).sum()
    }

    /// `∫ profile dx`
    pub fn mass(&self) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * self.sigma2).sqrt()
    }
}

/// Exact solution of `u_t = D u_xx` on the line starting from `p`.
pub fn heat_kernel_evolve(p: GaussianProfile, d: f64, t: f64) -> Result<GaussianProfile> {
    if !(d.is_finite() && d >= 0.0) {
        return Err(NpdeError::invalid("D", "must be ≥ 0"));
    }
    if !(t.is_finite() && t >= 0.0) {
        return Err(NpdeError::invalid("T", "must be ≥ 0"));
    }
    let sigma2 = p.sigma2 + 2.0 * d * t;
    Ok(GaussianProfile {
        amplitude: p.amplitude * (p.sigma2 / sigma2).sqrt(),
        center: p.center,
        sigma2,
    })
}

/// Minimal travelling-wave speed `2√(rD)` of `u_t = D u_xx + r u(1 − u)`.
pub fn fisher_min_front_speed(r: f64, d: f64) -> Result<f64> {
    if !(r.is_finite() && r >= 0.0) {
        return Err(NpdeError::invalid("r", "must be ≥ 0"));
    }
    if !(d.is_finite() && d >= 0.0) {
        return Err(NpdeError::invalid("D", "must be ≥ 0"));
    }
    Ok(2.0 * (r * d).sqrt())
}

/// Diffusion coefficient `ħ/(2m)` of the imaginary-time Schrödinger equation.
pub fn wick_coefficient(hbar: f64, m: f64) -> Result<f64> {
    if !(m.is_finite() && m > 0.0) {
        return Err(NpdeError::invalid("m", "must be > 0"));
    }
    Ok(hbar / (2.0 * m))
}

/// Mass of the free particle whose Wick-rotated equation has diffusion `alpha2` (ħ = 1).
pub fn wick_mass(alpha2: f64) -> Result<f64> {
    if !(alpha2.is_finite() && alpha2 > 0.0) {
        return Err(NpdeError::invalid("alpha2", "must be > 0"));
    }
    Ok(1.0 / (2.0 * alpha2))
}

/// `(d/dx σ(rx), r σ(rx)(1 − σ(rx)))`; the left side is evaluated from the
/// exponential form so the two sides are computed independently.
pub fn sigmoid_derivative_identity(r: f64, x: f64) -> (f64, f64) {
    let z = r * x;
    let e = (-z.abs()).exp();
    let lhs = r * e / ((1.0 + e) * (1.0 + e));
    let u = sigmoid(z);
    (lhs, r * u * (1.0 - u))
}

/// Leftmost position where `values` falls through 0.5, linearly interpolated.
pub fn front_position(values: &[f64], h: f64) -> Option<f64> {
    values.windows(2).enumerate().find_map(|(j, w)| {
        (w[0] >= 0.5 && w[1] < 0.5).then(|| h * (j as f64 + (w[0] - 0.5) / (w[0] - w[1])))
    })
}

/// Least-squares slope of `positions` against `times` over the second half of the record.
pub fn estimate_front_speed(times: &[f64], positions: &[f64]) -> Result<f64> {
    if times.len() != positions.len() {
        return Err(NpdeError::shape(format!("{} positions", times.len()), positions.len()));
    }
    let start = times.len() / 2;
    let (t, x) = (&times[start..], &positions[start..]);
    if t.len() < 2 {
        return Err(NpdeError::invalid("times", "need at least four samples"));
    }
    let n = t.len() as f64;
    let tm = t.iter().sum::<f64>() / n;
    let xm = x.iter().sum::<f64>() / n;
    let cov: f64 = t.iter().zip(x).map(|(a, b)| (a - tm) * (b - xm)).sum();
    let var: f64 = t.iter().map(|a| (a - tm) * (a - tm)).sum();
    if var == 0.0 {
        return Err(NpdeError::invalid("times", "must not all be equal"));
    }
    Ok(cov / var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn heat_kernel_examples() {
        let p = GaussianProfile::new(1.0, 0.0, 1.0).unwrap();
        assert_eq!(heat_kernel_evolve(p, 1.0, 0.0).unwrap(), p);
        assert_eq!(heat_kernel_evolve(p, 0.0, 3.0).unwrap(), p);
        let q = heat_kernel_evolve(p, 1.0, 0.5).unwrap();
        assert_eq!(q.sigma2, 2.0);
        assert!((q.amplitude - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((q.mass() - p.mass()).abs() < 1e-14);
        assert!(GaussianProfile::new(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn heat_kernel_solves_the_heat_equation() {
        let p = GaussianProfile::new(1.3, 0.4, 0.7).unwrap();
        let (d, t, x) = (0.8, 0.6, 1.1);
        let u = |x: f64, t: f64| heat_kernel_evolve(p, d, t).unwrap().eval(x);
        let (dt, dx) = (1e-5, 1e-4);
        let ut = (u(x, t + dt) - u(x, t - dt)) / (2.0 * dt);
        let uxx = (u(x + dx, t) - 2.0 * u(x, t) + u(x - dx, t)) / (dx * dx);
        assert!((ut - d * uxx).abs() < 1e-6);
    }

    #[test]
    fn fisher_and_wick_examples() {
        assert_eq!(fisher_min_front_speed(1.0, 1.0).unwrap(), 2.0);
        assert_eq!(fisher_min_front_speed(4.0, 1.0).unwrap(), 4.0);
        assert_eq!(fisher_min_front_speed(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(wick_coefficient(1.0, 0.5).unwrap(), 1.0);
        assert_eq!(wick_coefficient(2.0, 1.0).unwrap(), 1.0);
        assert!(wick_coefficient(1.0, 0.0).is_err());
        let m = 0.37;
        assert!((wick_mass(wick_coefficient(1.0, m).unwrap()).unwrap() - m).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_identity_examples() {
        assert_eq!(sigmoid_derivative_identity(1.0, 0.0), (0.25, 0.25));
        let (l, r) = sigmoid_derivative_identity(2.0, 0.0);
        assert_eq!((l, r), (0.5, 0.5));
        let (l, r) = sigmoid_derivative_identity(3.0, 400.0);
        assert!(l.abs() < 1e-300 && r.abs() < 1e-300);
    }

    #[test]
    fn front_tracking() {
        let v = [1.0, 1.0, 0.8, 0.2, 0.0];
        assert!((front_position(&v, 0.5).unwrap() - 0.5 * 2.5).abs() < 1e-15);
        assert_eq!(front_position(&[0.0, 0.0], 1.0), None);
        let t: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let x: Vec<f64> = t.iter().map(|t| 3.0 + 2.0 * t + if *t < 5.0 { 7.0 } else { 0.0 }).collect();
        assert!((estimate_front_speed(&t, &x).unwrap() - 2.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn sigmoid_identity_holds(r in -20.0..20.0f64, x in -50.0..50.0f64) {
            let (l, rhs) = sigmoid_derivative_identity(r, x);
            prop_assert!((l - rhs).abs() <= 1e-12);
        }

        #[test]
        fn heat_kernel_composes(s in 0.1..5.0f64, d in 0.0..3.0f64, t1 in 0.0..2.0f64, t2 in 0.0..2.0f64) {
            let p = GaussianProfile::new(1.0, 0.0, s).unwrap();
            let a = heat_kernel_evolve(heat_kernel_evolve(p, d, t1).unwrap(), d, t2).unwrap();
            let b = heat_kernel_evolve(p, d, t1 + t2).unwrap();
            prop_assert!((a.sigma2 - b.sigma2).abs() < 1e-12);
            prop_assert!((a.amplitude - b.amplitude).abs() < 1e-12);
        }
    }
}
