//! Decoy-state bounds: a lower bound on the joint single-photon yield Y1 and
//! an upper bound on the single-photon X-basis bit error rate e1.

use crate::error::{invalid, Error, Result};
use crate::gains::GainTable;
use crate::params::{ProtocolParams, SystemParams};

/// Lower bound on the joint single-photon yield from three-intensity decoy
/// statistics:
///
/// Y1 >= (mu/2)/(mu nu - nu^2) (e^nu Q_nu - (nu^2/mu^2) e^mu Q_mu
///        - (mu^2 - nu^2)/mu^2 Q_0)
///
/// `q_mu`, `q_nu` are the summed one-sided gains Q_k = Q_{k0} + Q_{0k}; `q_0`
/// is that sum at k = 0, i.e. 2 Q_{00}. Negative bounds (numerical
/// cancellation at extreme loss) clamp to zero; the flag reports it.
pub fn y1_lower_bound(q_mu: f64, q_nu: f64, q_0: f64, mu: f64, nu: f64) -> Result<(f64, bool)> {
    for (name, q) in [("Q_mu", q_mu), ("Q_nu", q_nu), ("Q_0", q_0)] {
        if !(0.0..=2.0).contains(&q) {
            return Err(invalid(name, q, "summed gain must be in [0, 2]"));
        }
    }
    if !(nu > 0.0 && nu < mu) {
        return Err(invalid("nu", nu, "decoy bound needs 0 < nu < mu"));
    }
    let raw = (mu / 2.0) / (mu * nu - nu * nu)
        * (nu.exp() * q_nu
            - (nu * nu) / (mu * mu) * mu.exp() * q_mu
            - (mu * mu - nu * nu) / (mu * mu) * q_0);
    if raw < 0.0 {
        Ok((0.0, true))
    } else {
        Ok((raw, false))
    }
}

/// Upper bound on the single-photon X-basis bit error rate:
///
/// e1 <= (e^{2nu} E Q - (p_pm/2) Y0_x) / (2 nu Y1_x p_pm)
///
/// The raw value is preserved; the `bounded` field clamps to [0, 0.5] for
/// entropy evaluation (raw > 0.5 means no extractable key from the
/// single-photon fraction).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct E1xBound {
    pub raw: f64,
    pub bounded: f64,
}

pub fn e1x_upper_bound(
    e_pm: f64,
    q_pm: f64,
    y0_x: f64,
    y1_x: f64,
    nu: f64,
    p_pm: f64,
) -> Result<E1xBound> {
    if !(p_pm > 0.0 && p_pm <= 1.0) {
        return Err(invalid("p_pm", p_pm, "must be in (0, 1]"));
    }
    if !nu.is_finite() || nu <= 0.0 {
        return Err(invalid("nu", nu, "must be > 0"));
    }
    if y1_x <= 0.0 {
        return Err(Error::EstimationFailure(
            "Y1_x bound is zero: no single-photon statistics",
        ));
    }
    let raw = ((2.0 * nu).exp() * e_pm * q_pm - p_pm / 2.0 * y0_x) / (2.0 * nu * y1_x * p_pm);
    Ok(E1xBound {
        raw,
        bounded: raw.clamp(0.0, 0.5),
    })
}

/// Gains consumed by the bounds, kept for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyInputs {
    pub q_mu_z: f64,
    pub q_nu_z: f64,
    pub q_0_z: f64,
    pub q_mu_x: f64,
    pub q_nu_x: f64,
    pub q_0_x: f64,
    pub y0_x: f64,
    pub e_pm: f64,
    pub q_pm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoyEstimate {
    pub y1_z_lower: f64,
    pub y1_x_lower: f64,
    pub e1_x_upper: f64,
    pub e1_x_raw: f64,
    /// A Y1 bound went negative and was clamped to zero.
    pub y1_clamped: bool,
    pub inputs_snapshot: DecoyInputs,
}

/// Run both decoy bounds on an analytic gain table.
pub fn decoy_estimate(
    sys: &SystemParams,
    pp: &ProtocolParams,
    gains: &GainTable,
) -> Result<DecoyEstimate> {
    let inputs = DecoyInputs {
        q_mu_z: gains.q_z_mu0 + gains.q_z_0mu,
        q_nu_z: gains.q_z_nu0 + gains.q_z_0nu,
        q_0_z: 2.0 * gains.q_z_00,
        q_mu_x: gains.q_x_mu0 + gains.q_x_0mu,
        q_nu_x: gains.q_x_nu0 + gains.q_x_0nu,
        q_0_x: 2.0 * gains.q_x_00,
        y0_x: gains.q_x_00,
        e_pm: gains.x_pm.e_pm,
        q_pm: gains.x_pm.q_total,
    };
    let (y1_z, cz) = y1_lower_bound(inputs.q_mu_z, inputs.q_nu_z, inputs.q_0_z, pp.mu, pp.nu)?;
    let (y1_x, cx) = y1_lower_bound(inputs.q_mu_x, inputs.q_nu_x, inputs.q_0_x, pp.mu, pp.nu)?;
    let e1 = e1x_upper_bound(
        inputs.e_pm,
        inputs.q_pm,
        inputs.y0_x,
        y1_x,
        pp.nu,
        sys.p_pm(),
    )?;
    Ok(DecoyEstimate {
        y1_z_lower: y1_z,
        y1_x_lower: y1_x,
        e1_x_upper: e1.bounded,
        e1_x_raw: e1.raw,
        y1_clamped: cz || cx,
        inputs_snapshot: inputs,
    })
}
