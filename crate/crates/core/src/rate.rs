//! Assembles gains and decoy bounds into asymptotic conference key rates.

use crate::decoy::decoy_estimate;
use crate::error::{invalid, Error, Result};
use crate::gains::{single_photon_yields, GainTable};
use crate::params::{ProtocolParams, SystemParams};
use crate::special::binary_entropy;

/// Which Z-basis error rate feeds the error-correction leak lambda_EC.
///
/// `MaxMarginal` is the per-user bit error rate against the middle node's
/// reference key (the larger of the two marginals; they coincide in the
/// symmetric channel). `PairRatio` is the sender-mismatch ratio Q_e/Q, which
/// double-counts coincidence errors relative to what either reconciliation
/// actually corrects. One broadcast syndrome sized for the worse marginal
/// serves both users, so `MaxMarginal` is the default; `PairRatio` is kept
/// for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QberConvention {
    #[default]
    MaxMarginal,
    PairRatio,
}

impl QberConvention {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "marginal" | "max-marginal" => Ok(Self::MaxMarginal),
            "pair" | "pair-ratio" => Ok(Self::PairRatio),
            _ => Err(invalid("qber", f64::NAN, "expected 'marginal' or 'pair'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProtocolKind {
    Practical,
    SinglePhoton,
}

impl std::fmt::Display for ProtocolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProtocolKind::Practical => write!(f, "practical"),
            ProtocolKind::SinglePhoton => write!(f, "single_photon"),
        }
    }
}

/// Status flag carried by a rate point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PointFlag {
    /// Positive key rate.
    #[default]
    Ok,
    /// Raw rate was non-positive; reported rate clamped to zero.
    ZeroRate,
    /// Decoy estimation failed (no single-photon statistics); rate forced to zero.
    EstimationFailure,
}

impl std::fmt::Display for PointFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PointFlag::Ok => write!(f, "ok"),
            PointFlag::ZeroRate => write!(f, "zero_rate"),
            PointFlag::EstimationFailure => write!(f, "est_fail"),
        }
    }
}

impl PointFlag {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ok" => Some(Self::Ok),
            "zero_rate" => Some(Self::ZeroRate),
            "est_fail" => Some(Self::EstimationFailure),
            _ => None,
        }
    }
}

/// Diagnostics of one rate evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateDiagnostics {
    /// Unclamped rate (may be negative past the cutoff distance).
    pub r_raw: f64,
    /// Z-basis error rate used in lambda_EC (per the active convention).
    pub e_z: f64,
    /// Sender-mismatch ratio Q_e/Q, kept alongside whichever convention ran.
    pub e_z_pair: f64,
    /// e1 upper bound as used in the entropy term (clamped to [0, 0.5]).
    pub e1_x: f64,
    pub e1_x_raw: f64,
    /// Y1 lower bound that entered the rate (decoy bound for the practical
    /// protocol, analytic yield for the single-photon protocol).
    pub y1: f64,
    pub q_z_total: f64,
    pub lambda_ec: f64,
    /// Underflow flushing happened somewhere in the gain table.
    pub flushed: bool,
}

/// One evaluated sweep sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatePoint {
    pub l_km: f64,
    /// Key rate per pulse, clamped at zero.
    pub r: f64,
    pub kind: ProtocolKind,
    pub t: f64,
    /// Zero for the single-photon protocol (no intensities to choose).
    pub mu: f64,
    pub nu: f64,
    pub flag: PointFlag,
    pub diag: RateDiagnostics,
}

fn finish_point(
    l_km: f64,
    kind: ProtocolKind,
    t: f64,
    mu: f64,
    nu: f64,
    diag: RateDiagnostics,
) -> RatePoint {
    let (r, flag) = if diag.r_raw > 0.0 {
        (diag.r_raw, PointFlag::Ok)
    } else {
        (0.0, PointFlag::ZeroRate)
    };
    RatePoint {
        l_km,
        r,
        kind,
        t,
        mu,
        nu,
        flag,
        diag,
    }
}

/// Conference key rate of the practical weak-coherent protocol:
///
/// R = 2t(1-t) { e^{-mu} Y0_z + mu e^{-mu} Y1_z [1 - h(e1_x)] } - lambda_EC
///
/// with Y0_z the measured vacuum gain, Y1_z the decoy lower bound, e1_x the
/// decoy upper bound and lambda_EC = Q_z f h(E_z).
pub fn practical_rate(sys: &SystemParams, pp: &ProtocolParams, l_km: f64) -> Result<RatePoint> {
    practical_rate_with(sys, pp, l_km, QberConvention::default())
}

pub fn practical_rate_with(
    sys: &SystemParams,
    pp: &ProtocolParams,
    l_km: f64,
    qber: QberConvention,
) -> Result<RatePoint> {
    let s = sys.sqrt_eta(l_km)?;
    let gains = GainTable::compute(sys, pp, s)?;
    let e_z = match qber {
        QberConvention::MaxMarginal => gains.z.e_marginal,
        QberConvention::PairRatio => gains.z.e_pair,
    };
    let lambda_ec = gains.z.q_total * sys.f * binary_entropy(e_z);

    let decoy = match decoy_estimate(sys, pp, &gains) {
        Ok(d) => d,
        Err(Error::EstimationFailure(_)) => {
            // No single-photon statistics: report a zero-rate point with the tag.
            let diag = RateDiagnostics {
                r_raw: 0.0,
                e_z,
                e_z_pair: gains.z.e_pair,
                e1_x: 0.5,
                e1_x_raw: f64::NAN,
                y1: 0.0,
                q_z_total: gains.z.q_total,
                lambda_ec,
                flushed: gains.flushed,
            };
            let mut point = finish_point(l_km, ProtocolKind::Practical, pp.t, pp.mu, pp.nu, diag);
            point.r = 0.0;
            point.flag = PointFlag::EstimationFailure;
            return Ok(point);
        }
        Err(e) => return Err(e),
    };

    let tt = 2.0 * pp.t * (1.0 - pp.t);
    let key_gain = (-pp.mu).exp()
        * (gains.y0_z + pp.mu * decoy.y1_z_lower * (1.0 - binary_entropy(decoy.e1_x_upper)));
    let r_raw = tt * key_gain - lambda_ec;

    let diag = RateDiagnostics {
        r_raw,
        e_z,
        e_z_pair: gains.z.e_pair,
        e1_x: decoy.e1_x_upper,
        e1_x_raw: decoy.e1_x_raw,
        y1: decoy.y1_z_lower,
        q_z_total: gains.z.q_total,
        lambda_ec,
        flushed: gains.flushed,
    };
    Ok(finish_point(
        l_km,
        ProtocolKind::Practical,
        pp.t,
        pp.mu,
        pp.nu,
        diag,
    ))
}

/// Single-photon X-basis error model: misalignment flips on photon clicks,
/// coin flips on dark-driven clicks.
fn single_photon_e1x(sys: &SystemParams, s: f64) -> f64 {
    let c = 1.0 - sys.p_d;
    let signal = s * c;
    let dark = 2.0 * sys.p_d * c * (1.0 - s);
    if signal + dark == 0.0 {
        return 0.5;
    }
    (sys.e_d_x * signal + 0.5 * dark) / (signal + dark)
}

/// Conference key rate of the ideal single-photon protocol:
///
/// R~ = 2t(1-t) Y1_z [1 - h(e1_x)] - lambda_EC
pub fn single_photon_rate(sys: &SystemParams, t: f64, l_km: f64) -> Result<RatePoint> {
    single_photon_rate_with(sys, t, l_km, QberConvention::default())
}

pub fn single_photon_rate_with(
    sys: &SystemParams,
    t: f64,
    l_km: f64,
    qber: QberConvention,
) -> Result<RatePoint> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("t", t, "must be in [0, 1]"));
    }
    let s = sys.sqrt_eta(l_km)?;
    let y = single_photon_yields(sys, s)?;

    let q_c = t * (1.0 - t) * (y.y10_z + y.y01_z);
    let q_e = (1.0 - t) * (1.0 - t) * y.y00_z + t * t * y.y11_z;
    let q_total = q_c + q_e;
    if q_total <= 0.0 {
        return Err(Error::NoSignal);
    }
    let e_pair = q_e / q_total;
    // Same marginal structure as the coherent case; the wrong-detector cross
    // term uses the Fock no-click probability (1 - s).
    let wrong_det = sys.p_d * (1.0 - sys.p_d) * (1.0 - s);
    let e_marginal = (0.5 * q_e + 2.0 * t * (1.0 - t) * wrong_det) / q_total;
    let e_z = match qber {
        QberConvention::MaxMarginal => e_marginal,
        QberConvention::PairRatio => e_pair,
    };

    let e1 = single_photon_e1x(sys, s);
    let e1_clamped = e1.clamp(0.0, 0.5);
    let lambda_ec = q_total * sys.f * binary_entropy(e_z);
    let r_raw = 2.0 * t * (1.0 - t) * y.y1_z * (1.0 - binary_entropy(e1_clamped)) - lambda_ec;

    let diag = RateDiagnostics {
        r_raw,
        e_z,
        e_z_pair: e_pair,
        e1_x: e1_clamped,
        e1_x_raw: e1,
        y1: y.y1_z,
        q_z_total: q_total,
        lambda_ec,
        flushed: false,
    };
    Ok(finish_point(
        l_km,
        ProtocolKind::SinglePhoton,
        t,
        0.0,
        0.0,
        diag,
    ))
}
