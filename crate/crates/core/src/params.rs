//! Experimental constants and per-run protocol parameters.

use std::f64::consts::{LN_10, PI};

use crate::error::{invalid, Result};

/// Anything below this is treated as numerically dead and flushed to zero.
/// Products of deep-loss gains can underflow long before the rate itself does.
pub const FLUSH_THRESHOLD: f64 = 1e-300;

/// Flush a magnitude below [`FLUSH_THRESHOLD`] to exactly zero.
/// Returns the (possibly flushed) value and whether flushing happened.
pub fn flush_tiny(x: f64) -> (f64, bool) {
    if x != 0.0 && x.abs() < FLUSH_THRESHOLD {
        (0.0, true)
    } else {
        (x, false)
    }
}

/// Fixed experimental constants of the setup.
///
/// Defaults reproduce the reference parameter set: eta_d = 56%, p_d = 1e-8,
/// e_d_x = 3.5%, alpha = 0.167 dB/km, f = 1.1, delta = pi/18.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SystemParams {
    /// Detector efficiency, in (0, 1].
    pub eta_d: f64,
    /// Dark count probability per detector per gate, in [0, 1).
    pub p_d: f64,
    /// Misalignment rate of the X basis, in [0, 0.5).
    pub e_d_x: f64,
    /// Fiber attenuation in dB/km, > 0.
    pub alpha: f64,
    /// Error-correction inefficiency, >= 1.
    pub f: f64,
    /// Phase-slice half-width in radians, in (0, pi/4].
    pub delta: f64,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            eta_d: 0.56,
            p_d: 1e-8,
            e_d_x: 0.035,
            alpha: 0.167,
            f: 1.1,
            delta: PI / 18.0,
        }
    }
}

impl SystemParams {
    pub fn new(eta_d: f64, p_d: f64, e_d_x: f64, alpha: f64, f: f64, delta: f64) -> Result<Self> {
        if !(eta_d > 0.0 && eta_d <= 1.0) {
            return Err(invalid("eta_d", eta_d, "must be in (0, 1]"));
        }
        if !(0.0..1.0).contains(&p_d) {
            return Err(invalid("p_d", p_d, "must be in [0, 1)"));
        }
        if !(0.0..0.5).contains(&e_d_x) {
            return Err(invalid("e_d_x", e_d_x, "must be in [0, 0.5)"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha", alpha, "must be > 0"));
        }
        if !(f >= 1.0 && f.is_finite()) {
            return Err(invalid("f", f, "must be >= 1"));
        }
        // The closed-form phase-matched gains are only valid up to pi/4.
        if !(delta > 0.0 && delta <= PI / 4.0) {
            return Err(invalid("delta", delta, "must be in (0, pi/4]"));
        }
        Ok(Self {
            eta_d,
            p_d,
            e_d_x,
            alpha,
            f,
            delta,
        })
    }

    /// Per-arm transmittance sqrt(eta) = eta_d * 10^(-alpha L / 20).
    ///
    /// L is the total Alice-to-Bob distance; each arm spans L/2.
    pub fn sqrt_eta(&self, l_km: f64) -> Result<f64> {
        sqrt_eta(self, l_km)
    }

    /// Probability that a uniformly random phase pair lands in the
    /// post-selection window: 2 delta / pi.
    pub fn p_pm(&self) -> f64 {
        p_pm(self.delta)
    }

    pub fn channel_point(&self, l_km: f64) -> Result<ChannelPoint> {
        Ok(ChannelPoint {
            l_km,
            sqrt_eta: self.sqrt_eta(l_km)?,
        })
    }
}

/// Per-arm transmittance including detector efficiency.
pub fn sqrt_eta(sys: &SystemParams, l_km: f64) -> Result<f64> {
    if !(l_km >= 0.0 && l_km.is_finite()) {
        return Err(invalid("L_km", l_km, "distance must be >= 0"));
    }
    Ok(sys.eta_d * (-sys.alpha * l_km / 20.0 * LN_10).exp())
}

/// Post-selected phase-matching probability 2 delta / pi.
/// Panics outside (0, pi/4]; construction of `SystemParams` already enforces it.
pub fn p_pm(delta: f64) -> f64 {
    assert!(
        delta > 0.0 && delta <= PI / 4.0,
        "p_pm: delta {delta} outside (0, pi/4]"
    );
    2.0 * delta / PI
}

/// Free variables optimized per distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Z-basis sending probability, in (0, 1).
    pub t: f64,
    /// Signal intensity (mean photon number), > 0.
    pub mu: f64,
    /// Decoy intensity, 0 < nu < mu.
    pub nu: f64,
}

impl ProtocolParams {
    pub fn new(t: f64, mu: f64, nu: f64) -> Result<Self> {
        if !(t > 0.0 && t < 1.0) {
            return Err(invalid("t", t, "must be in (0, 1)"));
        }
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid("mu", mu, "must be > 0"));
        }
        if !(nu > 0.0 && nu < mu) {
            // nu >= mu breaks the decoy denominator mu*nu - nu^2 > 0
            return Err(invalid("nu", nu, "must satisfy 0 < nu < mu"));
        }
        Ok(Self { t, mu, nu })
    }
}

/// A distance sample with its precomputed transmittance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelPoint {
    pub l_km: f64,
    pub sqrt_eta: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sqrt_eta_zero_distance_is_detector_efficiency() {
        let sys = SystemParams::default();
        assert_eq!(sys.sqrt_eta(0.0).unwrap(), 0.56);
        let unit = SystemParams::new(1.0, 1e-8, 0.035, 0.167, 1.1, PI / 18.0).unwrap();
        assert_eq!(unit.sqrt_eta(0.0).unwrap(), 1.0);
    }

    #[test]
    fn sqrt_eta_at_600km_matches_direct_evaluation() {
        // independent route: powf on the base-10 form
        let sys = SystemParams::default();
        let got = sys.sqrt_eta(600.0).unwrap();
        let oracle = 0.56 * 10f64.powf(-0.167 * 600.0 / 20.0);
        assert!(((got - oracle) / oracle).abs() < 1e-14);
        // frozen value of 0.56 * 10^(-5.01)
        assert!((got - 5.472_528_437_352_54e-6).abs() < 1e-18);
    }

    #[test]
    fn sqrt_eta_rejects_negative_distance() {
        let sys = SystemParams::default();
        assert!(sys.sqrt_eta(-1.0).is_err());
    }

    #[test]
    fn sqrt_eta_scaling_law() {
        // one decade of loss every 20/alpha km
        let sys = SystemParams::default();
        for &l in &[0.0, 37.5, 120.0, 433.0] {
            let a = sys.sqrt_eta(l).unwrap();
            let b = sys.sqrt_eta(l + 20.0 / sys.alpha).unwrap();
            assert!(((a / 10.0 - b) / b).abs() < 1e-12);
        }
    }

    #[test]
    fn p_pm_values() {
        assert!((p_pm(PI / 4.0) - 0.5).abs() < 1e-15);
        assert!((p_pm(PI / 18.0) - 1.0 / 9.0).abs() < 1e-15);
        assert!((p_pm(PI / 8.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    #[should_panic]
    fn p_pm_rejects_out_of_range() {
        p_pm(PI / 2.0);
    }

    #[test]
    fn system_params_validation() {
        assert!(SystemParams::new(0.0, 0.0, 0.0, 0.2, 1.0, 0.1).is_err()); // eta_d
        assert!(SystemParams::new(0.5, 1.0, 0.0, 0.2, 1.0, 0.1).is_err()); // p_d
        assert!(SystemParams::new(0.5, 0.0, 0.5, 0.2, 1.0, 0.1).is_err()); // e_d_x
        assert!(SystemParams::new(0.5, 0.0, 0.0, 0.0, 1.0, 0.1).is_err()); // alpha
        assert!(SystemParams::new(0.5, 0.0, 0.0, 0.2, 0.9, 0.1).is_err()); // f
        assert!(SystemParams::new(0.5, 0.0, 0.0, 0.2, 1.0, PI / 3.0).is_err()); // delta
        assert!(SystemParams::new(0.5, 0.0, 0.0, 0.2, 1.0, PI / 4.0).is_ok());
    }

    #[test]
    fn protocol_params_validation() {
        assert!(ProtocolParams::new(0.1, 0.5, 0.1).is_ok());
        assert!(ProtocolParams::new(0.0, 0.5, 0.1).is_err());
        assert!(ProtocolParams::new(1.0, 0.5, 0.1).is_err());
        assert!(ProtocolParams::new(0.1, 0.5, 0.5).is_err()); // nu == mu
        assert!(ProtocolParams::new(0.1, 0.5, 0.6).is_err()); // nu > mu
        assert!(ProtocolParams::new(0.1, 0.5, 0.0).is_err()); // nu == 0
    }

    #[test]
    fn flush_behavior() {
        assert_eq!(flush_tiny(1e-301), (0.0, true));
        assert_eq!(flush_tiny(0.0), (0.0, false));
        assert_eq!(flush_tiny(1e-299), (1e-299, false));
    }

    #[test]
    fn channel_point_is_recomputable() {
        let sys = SystemParams::default();
        let cp = sys.channel_point(300.0).unwrap();
        assert_eq!(cp.sqrt_eta, sys.sqrt_eta(cp.l_km).unwrap());
    }
}
