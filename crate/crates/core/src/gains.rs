//! Closed-form gains, yields and error rates for both the weak-coherent
//! protocol and the ideal single-photon protocol.
//!
//! Conventions: `sqrt_eta` is the per-arm transmittance (detector efficiency
//! included), intensities are mean photon numbers at the source, and all
//! gains are probabilities per emitted pulse pair conditioned on the relevant
//! basis/intensity choice (no sifting prefactors).

use crate::error::{invalid, Result};
use crate::params::{flush_tiny, p_pm, ProtocolParams, SystemParams};
use crate::special::{bessel_i0, erf, erfi};

fn check_intensity(name: &'static str, k: f64) -> Result<()> {
    if !(k >= 0.0 && k.is_finite()) {
        return Err(invalid(name, k, "intensity must be >= 0"));
    }
    Ok(())
}

fn check_sqrt_eta(s: f64) -> Result<()> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(invalid("sqrt_eta", s, "must be in (0, 1]"));
    }
    Ok(())
}

/// Z-basis gain for the intensity pair (k_a, k_b): probability that exactly
/// one of D1/D2 clicks.
///
/// Q^z = (1-p_d)(e^{-k_a s} + e^{-k_b s}) - 2(1-p_d)^2 e^{-(k_a+k_b)s}
pub fn gain_z_pair(sys: &SystemParams, sqrt_eta: f64, k_a: f64, k_b: f64) -> Result<f64> {
    check_intensity("k_a", k_a)?;
    check_intensity("k_b", k_b)?;
    check_sqrt_eta(sqrt_eta)?;
    let c = 1.0 - sys.p_d;
    let ea = (-k_a * sqrt_eta).exp();
    let eb = (-k_b * sqrt_eta).exp();
    Ok(c * (ea + eb) - 2.0 * c * c * ea * eb)
}

/// X-basis gain for the intensity pair (k_a, k_b), averaged over the uniform
/// global phase difference: probability that exactly one of D3/D4 clicks.
///
/// Q^x = 2(1-p_d) e^{-(k_a+k_b)s/2} [I0(sqrt(k_a k_b) s) - (1-p_d) e^{-(k_a+k_b)s/2}]
pub fn gain_x_pair(sys: &SystemParams, sqrt_eta: f64, k_a: f64, k_b: f64) -> Result<f64> {
    check_intensity("k_a", k_a)?;
    check_intensity("k_b", k_b)?;
    check_sqrt_eta(sqrt_eta)?;
    let c = 1.0 - sys.p_d;
    let half = (-(k_a + k_b) * sqrt_eta / 2.0).exp();
    Ok(2.0 * c * half * (bessel_i0((k_a * k_b).sqrt() * sqrt_eta) - c * half))
}

/// Sifted Z-basis statistics for signal intensity mu sent with probability t.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZBasisStats {
    /// Correct gain t(1-t)(Q^z_{mu,0} + Q^z_{0,mu}).
    pub q_c: f64,
    /// Incorrect gain (1-t)^2 Q^z_{00} + t^2 Q^z_{mu,mu}.
    pub q_e: f64,
    /// Total sifted gain.
    pub q_total: f64,
    /// Pair mismatch ratio Q_e / Q: rate of events where the raw bits of the
    /// two senders disagree.
    pub e_pair: f64,
    /// Marginal bit error rate of one sender against the middle node's
    /// reference key (both marginals are equal in the symmetric channel, so
    /// this is also their maximum). Each pair-mismatch event flips a coin on
    /// which marginal it hits; wrong-detector dark events hit both.
    pub e_marginal: f64,
}

/// Z-basis sifted gain and bit error rates.
pub fn z_basis_statistics(
    sys: &SystemParams,
    pp: &ProtocolParams,
    sqrt_eta: f64,
) -> Result<ZBasisStats> {
    let t = pp.t;
    let q_mu0 = gain_z_pair(sys, sqrt_eta, pp.mu, 0.0)?;
    let q_0mu = gain_z_pair(sys, sqrt_eta, 0.0, pp.mu)?;
    let q_00 = gain_z_pair(sys, sqrt_eta, 0.0, 0.0)?;
    let q_mumu = gain_z_pair(sys, sqrt_eta, pp.mu, pp.mu)?;

    let q_c = t * (1.0 - t) * (q_mu0 + q_0mu);
    let q_e = (1.0 - t) * (1.0 - t) * q_00 + t * t * q_mumu;
    let q_total = q_c + q_e;
    if q_total <= 0.0 {
        return Err(crate::error::Error::NoSignal);
    }
    // Exactly one marginal errs per pair-mismatch event (uniformly), and a
    // dark count firing the opposite detector during a correct-type pair errs
    // this marginal too.
    let wrong_det = sys.p_d * (1.0 - sys.p_d) * (-pp.mu * sqrt_eta).exp();
    let marginal_gain =
        0.5 * ((1.0 - t) * (1.0 - t) * q_00 + t * t * q_mumu) + 2.0 * t * (1.0 - t) * wrong_det;
    Ok(ZBasisStats {
        q_c,
        q_e,
        q_total,
        e_pair: q_e / q_total,
        e_marginal: marginal_gain / q_total,
    })
}

/// Phase-matched X-basis statistics at intensity pair (nu, nu).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XBasisPmStats {
    /// Gain of the interference-correct detector clicking alone.
    pub q_c: f64,
    /// Gain of the opposite detector clicking alone.
    pub q_e: f64,
    pub q_total: f64,
    /// Error rate [e_d_x q_c + (1 - e_d_x) q_e] / q_total.
    pub e_pm: f64,
}

/// Mean over the acceptance window of exp(-+ a theta^2 / 2), i.e. the
/// Gaussian small-angle form the erf/erfi closed forms evaluate.
///
/// (1/delta) * integral_0^delta e^{sign * a theta^2 / 2} dtheta.
/// For tiny a*delta^2 the direct erf expression degrades to 0/0, so a short
/// power series takes over; both branches agree to machine precision at the
/// switch point.
fn window_mean_gauss(a: f64, delta: f64, grow: bool) -> f64 {
    debug_assert!(a >= 0.0);
    let u = a * delta * delta / 2.0;
    if u < 0.25 {
        // sum_k (+-u)^k / (k! (2k+1))
        let s = if grow { 1.0 } else { -1.0 };
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            term *= s * u / k as f64;
            let contrib = term / (2 * k + 1) as f64;
            sum += contrib;
            if contrib.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        let arg = (a / 2.0).sqrt() * delta;
        let g = (std::f64::consts::PI / (2.0 * a)).sqrt() / delta;
        if grow {
            g * erfi(arg)
        } else {
            g * erf(arg)
        }
    }
}

/// Phase-matched gain and error rate via the erf/erfi closed forms.
pub fn x_basis_pm_statistics(
    sys: &SystemParams,
    pp: &ProtocolParams,
    sqrt_eta: f64,
) -> Result<XBasisPmStats> {
    check_sqrt_eta(sqrt_eta)?;
    let a = pp.nu * sqrt_eta;
    let c = 1.0 - sys.p_d;
    let ppm = p_pm(sys.delta);
    let sub = ppm * c * c * (-2.0 * a).exp();

    let q_c = ppm * c * window_mean_gauss(a, sys.delta, false) - sub;
    let q_e = ppm * c * (-2.0 * a).exp() * window_mean_gauss(a, sys.delta, true) - sub;
    assemble_pm_stats(sys, q_c, q_e)
}

/// Phase-matched gain and error rate by numerical quadrature of the exact
/// window integrals (no small-angle approximation). Used as the high-fidelity
/// reference; the closed form above is the default evaluation path.
pub fn x_basis_pm_statistics_exact(
    sys: &SystemParams,
    pp: &ProtocolParams,
    sqrt_eta: f64,
) -> Result<XBasisPmStats> {
    check_sqrt_eta(sqrt_eta)?;
    let a = pp.nu * sqrt_eta;
    let c = 1.0 - sys.p_d;
    let ppm = p_pm(sys.delta);
    let sub = ppm * c * c * (-2.0 * a).exp();

    let mean_c = integrate(|th| (-a * (1.0 - th.cos())).exp(), 0.0, sys.delta) / sys.delta;
    let mean_e = integrate(|th| (-a * (1.0 + th.cos())).exp(), 0.0, sys.delta) / sys.delta;
    let q_c = ppm * c * mean_c - sub;
    let q_e = ppm * c * mean_e - sub;
    assemble_pm_stats(sys, q_c, q_e)
}

fn assemble_pm_stats(sys: &SystemParams, q_c: f64, q_e: f64) -> Result<XBasisPmStats> {
    let (q_c, _) = flush_tiny(q_c.max(0.0));
    let (q_e, _) = flush_tiny(q_e.max(0.0));
    let q_total = q_c + q_e;
    let e_pm = if q_total > 0.0 {
        (sys.e_d_x * q_c + (1.0 - sys.e_d_x) * q_e) / q_total
    } else {
        0.0
    };
    Ok(XBasisPmStats {
        q_c,
        q_e,
        q_total,
        e_pm,
    })
}

/// Adaptive Simpson quadrature; the integrands here are smooth on a short
/// interval, so this converges in a handful of refinements.
fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    fn simpson(a: f64, fa: f64, b: f64, fb: f64, fm: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(a, fa, m, fm, flm);
        let right = simpson(m, fm, b, fb, frm);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, flm, left, tol / 2.0, depth - 1)
                + recurse(f, m, fm, b, fb, frm, right, tol / 2.0, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, fa, b, fb, fm);
    recurse(
        &f,
        a,
        fa,
        b,
        fb,
        fm,
        whole,
        1e-14 * whole.abs().max(1.0),
        40,
    )
}

/// Detection yields for definite joint photon-number inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinglePhotonYields {
    pub y10_z: f64,
    pub y01_z: f64,
    pub y11_z: f64,
    pub y00_z: f64,
    pub y10_x: f64,
    pub y01_x: f64,
    /// Joint single-photon yield (Y10 + Y01)/2, Z basis.
    pub y1_z: f64,
    /// Joint single-photon yield (Y10 + Y01)/2, X basis.
    pub y1_x: f64,
}

/// Yields of the single-photon protocol:
/// Y10 = Y01 = 1 - (1-p_d)(1-2p_d)(1-s), Y11 = 2(1-p_d)(1-s)[1-(1-p_d)(1-s)],
/// Y00 = 2 p_d (1-p_d).
pub fn single_photon_yields(sys: &SystemParams, sqrt_eta: f64) -> Result<SinglePhotonYields> {
    check_sqrt_eta(sqrt_eta)?;
    let c = 1.0 - sys.p_d;
    let s = sqrt_eta;
    let y10 = 1.0 - c * (1.0 - 2.0 * sys.p_d) * (1.0 - s);
    let y11 = 2.0 * c * (1.0 - s) * (1.0 - c * (1.0 - s));
    let y00 = 2.0 * sys.p_d * c;
    Ok(SinglePhotonYields {
        y10_z: y10,
        y01_z: y10,
        y11_z: y11,
        y00_z: y00,
        y10_x: y10,
        y01_x: y10,
        y1_z: y10,
        y1_x: y10,
    })
}

/// Every analytic gain/error quantity for one (system, protocol, channel)
/// triple, evaluated once and shared by the decoy and rate layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainTable {
    pub sqrt_eta: f64,
    // Z-basis pair gains
    pub q_z_mu0: f64,
    pub q_z_0mu: f64,
    pub q_z_nu0: f64,
    pub q_z_0nu: f64,
    pub q_z_mumu: f64,
    pub q_z_00: f64,
    // X-basis pair gains (phase averaged, no post-selection)
    pub q_x_mu0: f64,
    pub q_x_0mu: f64,
    pub q_x_nu0: f64,
    pub q_x_0nu: f64,
    pub q_x_00: f64,
    // Sifted Z statistics
    pub z: ZBasisStats,
    // Phase-matched X statistics at (nu, nu)
    pub x_pm: XBasisPmStats,
    /// Vacuum yields Y_0^d = Q^d_00.
    pub y0_z: f64,
    pub y0_x: f64,
    /// Set when some underflowing quantity was flushed to zero.
    pub flushed: bool,
}

impl GainTable {
    pub fn compute(sys: &SystemParams, pp: &ProtocolParams, sqrt_eta: f64) -> Result<GainTable> {
        let mut flushed = false;
        let mut g = |v: f64| {
            let (v, fl) = flush_tiny(v);
            flushed |= fl;
            v
        };
        let q_z_mu0 = g(gain_z_pair(sys, sqrt_eta, pp.mu, 0.0)?);
        let q_z_0mu = g(gain_z_pair(sys, sqrt_eta, 0.0, pp.mu)?);
        let q_z_nu0 = g(gain_z_pair(sys, sqrt_eta, pp.nu, 0.0)?);
        let q_z_0nu = g(gain_z_pair(sys, sqrt_eta, 0.0, pp.nu)?);
        let q_z_mumu = g(gain_z_pair(sys, sqrt_eta, pp.mu, pp.mu)?);
        let q_z_00 = g(gain_z_pair(sys, sqrt_eta, 0.0, 0.0)?);
        let q_x_mu0 = g(gain_x_pair(sys, sqrt_eta, pp.mu, 0.0)?);
        let q_x_0mu = g(gain_x_pair(sys, sqrt_eta, 0.0, pp.mu)?);
        let q_x_nu0 = g(gain_x_pair(sys, sqrt_eta, pp.nu, 0.0)?);
        let q_x_0nu = g(gain_x_pair(sys, sqrt_eta, 0.0, pp.nu)?);
        let q_x_00 = g(gain_x_pair(sys, sqrt_eta, 0.0, 0.0)?);
        let z = z_basis_statistics(sys, pp, sqrt_eta)?;
        let x_pm = x_basis_pm_statistics(sys, pp, sqrt_eta)?;
        Ok(GainTable {
            sqrt_eta,
            q_z_mu0,
            q_z_0mu,
            q_z_nu0,
            q_z_0nu,
            q_z_mumu,
            q_z_00,
            q_x_mu0,
            q_x_0mu,
            q_x_nu0,
            q_x_0nu,
            q_x_00,
            z,
            x_pm,
            y0_z: q_z_00,
            y0_x: q_x_00,
            flushed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sys_pd0() -> SystemParams {
        SystemParams::new(0.56, 0.0, 0.035, 0.167, 1.1, std::f64::consts::PI / 18.0).unwrap()
    }

    #[test]
    fn z_gain_dark_free_reductions() {
        let sys = sys_pd0();
        let s = 0.3;
        // no light, no darks, no click
        assert_eq!(gain_z_pair(&sys, s, 0.0, 0.0).unwrap(), 0.0);
        // single arm lit: 1 - e^{-mu s}
        let mu = 0.7;
        let got = gain_z_pair(&sys, s, mu, 0.0).unwrap();
        let want = 1.0 - (-mu * s).exp();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn x_gain_dark_free_reductions() {
        let sys = sys_pd0();
        let s = 0.3;
        assert_eq!(gain_x_pair(&sys, s, 0.0, 0.0).unwrap(), 0.0);
        // k_a = 0 reduces I0 to 1
        let kb = 0.4;
        let got = gain_x_pair(&sys, s, 0.0, kb).unwrap();
        let half = (-kb * s / 2.0).exp();
        let want = 2.0 * half * (1.0 - half);
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn gains_reject_bad_inputs() {
        let sys = SystemParams::default();
        assert!(gain_z_pair(&sys, 0.5, -0.1, 0.0).is_err());
        assert!(gain_x_pair(&sys, 0.5, 0.1, -1.0).is_err());
        assert!(gain_z_pair(&sys, 0.0, 0.1, 0.1).is_err());
    }

    #[test]
    fn z_statistics_limits() {
        let sys = sys_pd0();
        let s = 0.2;
        // t -> 1: correct gain vanishes, every event is a coincidence error
        let pp = ProtocolParams::new(1.0 - 1e-12, 0.6, 0.1).unwrap();
        let st = z_basis_statistics(&sys, &pp, s).unwrap();
        assert!(st.q_c < 1e-11);
        assert!((st.e_pair - 1.0).abs() < 1e-9);

        // symmetric t = 0.5 composition
        let pp = ProtocolParams::new(0.5, 0.6, 0.1).unwrap();
        let st = z_basis_statistics(&sys, &pp, s).unwrap();
        let q_mu0 = gain_z_pair(&sys, s, 0.6, 0.0).unwrap();
        let q_mumu = gain_z_pair(&sys, s, 0.6, 0.6).unwrap();
        let want = 0.25 * q_mumu / (0.5 * q_mu0 + 0.25 * q_mumu);
        assert!((st.e_pair - want).abs() < 1e-14);
    }

    #[test]
    fn z_statistics_degenerate_channel() {
        let sys = sys_pd0();
        // p_d = 0 and vanishing light: mu*s underflows the gain to zero
        let pp = ProtocolParams::new(0.5, 1e-305, 1e-306).unwrap();
        assert!(matches!(
            z_basis_statistics(&sys, &pp, 1e-3),
            Err(crate::error::Error::NoSignal)
        ));
    }

    #[test]
    fn marginal_error_is_half_pair_rate_plus_cross_term() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.06, 0.45, 0.02).unwrap();
        let s = 5.47e-6;
        let st = z_basis_statistics(&sys, &pp, s).unwrap();
        let cross = 2.0 * pp.t * (1.0 - pp.t) * sys.p_d * (1.0 - sys.p_d) * (-pp.mu * s).exp();
        let want = (0.5 * st.q_e + cross) / st.q_total;
        assert!((st.e_marginal - want).abs() < 1e-18);
        assert!(st.e_marginal < st.e_pair);
    }

    #[test]
    fn pm_stats_closed_form_matches_exact_quadrature_at_reference_point() {
        // delta = pi/18: the small-angle closed form tracks the exact window
        // integral to ~1e-5 relative on q_c and ~delta^2/20 on q_e.
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.06, 0.45, 0.02).unwrap();
        let s = sys.sqrt_eta(300.0).unwrap();
        let cf = x_basis_pm_statistics(&sys, &pp, s).unwrap();
        let ex = x_basis_pm_statistics_exact(&sys, &pp, s).unwrap();
        assert!(((cf.q_c - ex.q_c) / ex.q_c).abs() < 1e-5);
        let d2 = sys.delta * sys.delta;
        assert!(((cf.q_e - ex.q_e) / ex.q_e).abs() < d2 / 20.0 * 1.2);
    }

    #[test]
    fn pm_error_rate_limits_at_vanishing_transmittance() {
        // Both window integrands approach 1 as nu*s -> 0, but the subtracted
        // no-click product tracks them, so what survives is interference
        // leakage: with e_d = p_d = 0 the error rate tends to delta^2/12, and
        // only dark-count domination drives it to 1/2.
        let delta = 0.15;
        let dark_free = SystemParams::new(0.56, 0.0, 0.0, 0.167, 1.1, delta).unwrap();
        let pp = ProtocolParams::new(0.1, 0.5, 0.05).unwrap();
        let st = x_basis_pm_statistics(&dark_free, &pp, 1e-9).unwrap();
        let slice_floor = delta * delta / 12.0;
        assert!(
            (st.e_pm - slice_floor).abs() < 0.05 * slice_floor,
            "e_pm = {} vs slice floor {slice_floor}",
            st.e_pm
        );

        let darky = SystemParams::new(0.56, 1e-6, 0.0, 0.167, 1.1, delta).unwrap();
        let st = x_basis_pm_statistics(&darky, &pp, 1e-9).unwrap();
        assert!(
            (st.e_pm - 0.5).abs() < 1e-3,
            "dark-dominated e_pm = {}",
            st.e_pm
        );
    }

    #[test]
    fn pm_error_equals_qe_ratio_when_misalignment_zero() {
        let sys = SystemParams::new(0.56, 0.0, 0.0, 0.167, 1.1, 0.2).unwrap();
        let pp = ProtocolParams::new(0.1, 0.5, 0.05).unwrap();
        let st = x_basis_pm_statistics(&sys, &pp, 0.01).unwrap();
        assert_eq!(st.e_pm, st.q_e / st.q_total);
    }

    #[test]
    fn single_photon_yield_reductions() {
        // p_d = 0: Y10 = s, Y00 = 0, Y11 = 2(1-s)s
        let sys = sys_pd0();
        let s = 0.37;
        let y = single_photon_yields(&sys, s).unwrap();
        assert!((y.y10_z - s).abs() < 1e-15);
        assert_eq!(y.y00_z, 0.0);
        assert!((y.y11_z - 2.0 * (1.0 - s) * s).abs() < 1e-15);
        // s = 1: both photons always arrive, never exactly one click
        let y = single_photon_yields(&sys, 1.0).unwrap();
        assert_eq!(y.y11_z, 0.0);
    }

    #[test]
    fn single_photon_yields_match_enumeration_oracle() {
        // Exhaustive two-arm Bernoulli loss + dark-count enumeration. The
        // closed forms carry an O(p_d) absolute offset on Y10 (they count a
        // both-click sliver), so the tolerance is a few p_d.
        let sys = SystemParams::default();
        let s = sys.sqrt_eta(500.0).unwrap();
        let y = single_photon_yields(&sys, s).unwrap();

        let p = sys.p_d;
        // exactly-one-click probability given per-detector photon hit probs
        let one_click = |pa: f64, pb: f64| {
            let c1 = 1.0 - (1.0 - pa) * (1.0 - p); // D1 clicks
            let c2 = 1.0 - (1.0 - pb) * (1.0 - p);
            c1 * (1.0 - c2) + c2 * (1.0 - c1)
        };
        let y10 = one_click(s, 0.0);
        let y11 = one_click(s, s);
        let y00 = one_click(0.0, 0.0);
        assert!((y.y10_z - y10).abs() <= 3.0 * p);
        assert!((y.y11_z - y11).abs() <= 3.0 * p);
        assert!((y.y00_z - y00).abs() <= 3.0 * p * p + 1e-30);
    }

    #[test]
    fn gain_table_is_consistent() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.06, 0.45, 0.02).unwrap();
        let s = sys.sqrt_eta(300.0).unwrap();
        let gt = GainTable::compute(&sys, &pp, s).unwrap();
        assert_eq!(gt.y0_z, gt.q_z_00);
        assert_eq!(gt.y0_x, gt.q_x_00);
        assert!((gt.z.q_total - (gt.z.q_c + gt.z.q_e)).abs() < 1e-20);
        assert!((gt.z.e_pair * gt.z.q_total - gt.z.q_e).abs() < 1e-20);
        assert!((gt.x_pm.q_total - (gt.x_pm.q_c + gt.x_pm.q_e)).abs() < 1e-20);
    }

    proptest! {
        #[test]
        fn pair_gains_are_symmetric_and_bounded(
            ka in 0.0..1.5f64,
            kb in 0.0..1.5f64,
            s in 1e-8..1.0f64,
            pd in 0.0..0.1f64,
        ) {
            let sys = SystemParams::new(0.56, pd, 0.035, 0.167, 1.1, 0.17).unwrap();
            let qz_ab = gain_z_pair(&sys, s, ka, kb).unwrap();
            let qz_ba = gain_z_pair(&sys, s, kb, ka).unwrap();
            prop_assert!((qz_ab - qz_ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&qz_ab));
            let qx_ab = gain_x_pair(&sys, s, ka, kb).unwrap();
            let qx_ba = gain_x_pair(&sys, s, kb, ka).unwrap();
            prop_assert!((qx_ab - qx_ba).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&qx_ab));
        }

        #[test]
        fn error_gains_never_exceed_totals(
            t in 0.01..0.99f64,
            mu in 0.01..1.5f64,
            s in 1e-6..1.0f64,
            pd in 0.0..0.01f64,
        ) {
            let sys = SystemParams::new(0.56, pd, 0.035, 0.167, 1.1, 0.17).unwrap();
            let pp = ProtocolParams::new(t, mu, mu * 0.5).unwrap();
            let st = z_basis_statistics(&sys, &pp, s).unwrap();
            prop_assert!(st.q_e >= 0.0 && st.q_e <= st.q_total);
            prop_assert!((0.0..=1.0).contains(&st.e_pair));
            prop_assert!((0.0..=1.0).contains(&st.e_marginal));
            let pm = x_basis_pm_statistics(&sys, &pp, s).unwrap();
            prop_assert!(pm.q_e >= 0.0 && pm.q_e <= pm.q_total + 1e-18);
            prop_assert!((0.0..=1.0).contains(&pm.e_pm));
        }

        #[test]
        fn pm_closed_form_tracks_gaussian_window_series(
            a in 1e-9..1.0f64,
            delta in 0.01..std::f64::consts::FRAC_PI_4,
        ) {
            // seam check: the erf/erfi route and the series route must agree
            // wherever both are well-conditioned
            let lo = window_mean_gauss(a, delta, false);
            let hi = window_mean_gauss(a, delta, true);
            prop_assert!(lo <= 1.0 + 1e-15 && lo > 0.0);
            prop_assert!(hi >= 1.0 - 1e-15);
        }
    }

    #[test]
    fn window_mean_series_branch_matches_closed_branch() {
        // evaluate both routes at the same (a, delta) just inside the series
        // region, where the erf/erfi route is also well-conditioned
        use crate::special::{erf, erfi};
        for delta in [0.17, 0.3, 0.7] {
            let a = 0.48 / (delta * delta); // u just below the 0.25 switch
            let arg = (a / 2.0f64).sqrt() * delta;
            let g = (std::f64::consts::PI / (2.0 * a)).sqrt() / delta;
            for grow in [false, true] {
                let series = window_mean_gauss(a, delta, grow);
                let closed = if grow { g * erfi(arg) } else { g * erf(arg) };
                assert!(
                    ((series - closed) / closed).abs() < 1e-13,
                    "branch mismatch at delta={delta}, grow={grow}: {series} vs {closed}"
                );
            }
        }
    }
}
