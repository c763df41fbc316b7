//! Pulse-level Monte Carlo oracle.
//!
//! Simulates individual pulse pairs through loss, interference, threshold
//! detection, dark counts and misalignment, estimating by frequency counting
//! every gain and error quantity the analytic module computes in closed form.
//! The only physics shared with the analytic path is Poisson photon
//! statistics and the beam-splitter intensity rule; click probabilities are
//! never evaluated from the closed-form gain expressions.
//!
//! Trials are partitioned into fixed-size chunks, each driven by its own
//! ChaCha stream derived from (seed, chunk index); merged counts are
//! order-independent, so results are identical for any thread count.

use std::f64::consts::TAU;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::gains::{gain_x_pair, gain_z_pair, x_basis_pm_statistics, z_basis_statistics};
use crate::params::{ProtocolParams, SystemParams};

const CHUNK: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
}

/// One simulated pulse-pair outcome.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub basis: Basis,
    pub k_a: f64,
    pub k_b: f64,
    pub theta_a: f64,
    pub theta_b: f64,
    /// X-basis logic bits (unused in the Z basis).
    pub x_a: u8,
    pub x_b: u8,
    /// Phase-slice index for phase-matched events.
    pub r: Option<u8>,
    /// D1..D4 click pattern.
    pub clicks: [bool; 4],
    /// Passed sifting (exactly one click) and, where applicable, the
    /// phase-matching window.
    pub accepted: bool,
}

/// A frequency estimate with its binomial standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct SimEstimate {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub trials: u64,
}

impl SimEstimate {
    fn frequency(name: &str, count: u64, trials: u64) -> Self {
        let p = count as f64 / trials as f64;
        Self {
            name: name.to_string(),
            estimate: p,
            std_error: (p * (1.0 - p) / trials as f64).sqrt(),
            trials,
        }
    }

    /// Ratio of two counts (an error rate conditioned on acceptance).
    fn ratio(name: &str, num: u64, den: u64) -> Self {
        let p = if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        };
        Self {
            name: name.to_string(),
            estimate: p,
            std_error: if den == 0 {
                f64::INFINITY
            } else {
                (p * (1.0 - p) / den as f64).sqrt()
            },
            trials: den,
        }
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let floor = (-lambda).exp();
    let mut k = 0u32;
    let mut p = 1.0f64;
    loop {
        p *= rng.random::<f64>();
        if p <= floor {
            return k;
        }
        k += 1;
    }
}

fn click(rng: &mut ChaCha8Rng, mean_photons: f64, p_d: f64) -> bool {
    let photons = poisson(rng, mean_photons);
    photons > 0 || (p_d > 0.0 && rng.random_bool(p_d))
}

fn check_trials(trials: u64) -> Result<()> {
    if trials == 0 {
        return Err(invalid("trials", 0.0, "must be >= 1"));
    }
    Ok(())
}

/// Deterministic parallel accumulation over trial chunks.
fn accumulate<C, F>(trials: u64, seed: u64, stream_base: u64, trial: F) -> C
where
    C: Default + Send + std::iter::Sum<C>,
    F: Fn(&mut ChaCha8Rng, &mut C) + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_base + ci);
            let n = CHUNK.min(trials - ci * CHUNK);
            let mut acc = C::default();
            for _ in 0..n {
                trial(&mut rng, &mut acc);
            }
            acc
        })
        .sum()
}

macro_rules! count_struct {
    ($name:ident { $($field:ident),+ $(,)? }) => {
        #[derive(Debug, Default, Clone, Copy)]
        struct $name {
            $($field: u64),+
        }
        impl std::iter::Sum for $name {
            fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
                let mut out = Self::default();
                for c in iter {
                    $(out.$field += c.$field;)+
                }
                out
            }
        }
    };
}

count_struct!(OneCount { hits });
count_struct!(SiftCounts {
    correct,
    incorrect,
    err_a,
    err_b,
});
count_struct!(PmCounts {
    in_window,
    corr_click,
    err_click,
    bit_errors,
});
count_struct!(SingleCounts {
    raw,
    photon_one,
    in_window,
    one_click,
    errors,
});

/// Estimate a Z-basis pair gain: exactly one of D1/D2 clicks.
pub fn simulate_z_pair_gain(
    sys: &SystemParams,
    sqrt_eta: f64,
    k_a: f64,
    k_b: f64,
    trials: u64,
    seed: u64,
) -> Result<SimEstimate> {
    check_trials(trials)?;
    let (p_d, ma, mb) = (sys.p_d, k_a * sqrt_eta, k_b * sqrt_eta);
    let counts: OneCount = accumulate(trials, seed, 0, |rng, c: &mut OneCount| {
        let d1 = click(rng, ma, p_d);
        let d2 = click(rng, mb, p_d);
        if d1 != d2 {
            c.hits += 1;
        }
    });
    Ok(SimEstimate::frequency(
        &format!("Q_z({k_a},{k_b})"),
        counts.hits,
        trials,
    ))
}

/// Estimate a phase-averaged X-basis pair gain: exactly one of D3/D4 clicks,
/// global phases drawn uniformly (no post-selection).
pub fn simulate_x_pair_gain(
    sys: &SystemParams,
    sqrt_eta: f64,
    k_a: f64,
    k_b: f64,
    trials: u64,
    seed: u64,
) -> Result<SimEstimate> {
    check_trials(trials)?;
    let p_d = sys.p_d;
    let (sa, sb) = (k_a * sqrt_eta, k_b * sqrt_eta);
    let cross = 2.0 * (k_a * k_b).sqrt() * sqrt_eta;
    let counts: OneCount = accumulate(trials, seed, 0, |rng, c: &mut OneCount| {
        let delta = rng.random_range(0.0..TAU) - rng.random_range(0.0..TAU);
        let i3 = 0.5 * (sa + sb + cross * delta.cos());
        let i4 = 0.5 * (sa + sb - cross * delta.cos());
        let d3 = click(rng, i3, p_d);
        let d4 = click(rng, i4, p_d);
        if d3 != d4 {
            c.hits += 1;
        }
    });
    Ok(SimEstimate::frequency(
        &format!("Q_x({k_a},{k_b})"),
        counts.hits,
        trials,
    ))
}

/// Estimates from the sifted Z basis: correct/incorrect gains and both error
/// conventions, with senders drawing intensities (0, mu) with probability
/// (1-t, t) per pulse.
pub fn simulate_z_sift(
    sys: &SystemParams,
    pp: &ProtocolParams,
    sqrt_eta: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<SimEstimate>> {
    check_trials(trials)?;
    let counts = run_z_sift(sys, pp, sqrt_eta, trials, seed, None);
    let accepted = counts.correct + counts.incorrect;
    Ok(vec![
        SimEstimate::frequency("Q_c^z", counts.correct, trials),
        SimEstimate::frequency("Q_e^z", counts.incorrect, trials),
        SimEstimate::frequency("Q^z", accepted, trials),
        SimEstimate::frequency("E_marg^z*Q^z", counts.err_a.max(counts.err_b), trials),
        SimEstimate::ratio("E_pair^z", counts.incorrect, accepted),
        SimEstimate::ratio("E_marg^z", counts.err_a.max(counts.err_b), accepted),
    ])
}

fn run_z_sift(
    sys: &SystemParams,
    pp: &ProtocolParams,
    sqrt_eta: f64,
    trials: u64,
    seed: u64,
    mut log: Option<&mut dyn FnMut(&TrialRecord)>,
) -> SiftCounts {
    let (p_d, t, mu) = (sys.p_d, pp.t, pp.mu);
    let m = mu * sqrt_eta;
    let trial = |rng: &mut ChaCha8Rng, c: &mut SiftCounts| -> TrialRecord {
        let send_a = rng.random_bool(t);
        let send_b = rng.random_bool(t);
        // global phases are physically present but do not affect Z detection
        let theta_a = rng.random_range(0.0..TAU);
        let theta_b = rng.random_range(0.0..TAU);
        let d1 = click(rng, if send_a { m } else { 0.0 }, p_d);
        let d2 = click(rng, if send_b { m } else { 0.0 }, p_d);
        let accepted = d1 != d2;
        if accepted {
            if send_a != send_b {
                c.correct += 1;
            } else {
                c.incorrect += 1;
            }
            // key bits: sender bit = sent mu, Alice flips hers; D1 -> 0, D2 -> 1
            let a_bit = !send_a;
            let b_bit = send_b;
            let c_bit = d2;
            if a_bit != c_bit {
                c.err_a += 1;
            }
            if b_bit != c_bit {
                c.err_b += 1;
            }
        }
        TrialRecord {
            basis: Basis::Z,
            k_a: if send_a { mu } else { 0.0 },
            k_b: if send_b { mu } else { 0.0 },
            theta_a,
            theta_b,
            x_a: 0,
            x_b: 0,
            r: None,
            clicks: [d1, d2, false, false],
            accepted,
        }
    };
    if let Some(log) = log.as_mut() {
        // sequential path so records come out in chunk order
        let mut counts = SiftCounts::default();
        let chunks = trials.div_ceil(CHUNK);
        for ci in 0..chunks {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci);
            for _ in 0..CHUNK.min(trials - ci * CHUNK) {
                let rec = trial(&mut rng, &mut counts);
                if rec.accepted {
                    log(&rec);
                }
            }
        }
        counts
    } else {
        accumulate(trials, seed, 0, |rng, c: &mut SiftCounts| {
            trial(rng, c);
        })
    }
}

/// Estimates from the phase-matched (nu, nu) X basis. `phi_ab` is the
/// reference-frame offset; the window test subtracts it, so estimates are
/// invariant in it.
pub fn simulate_x_pm(
    sys: &SystemParams,
    nu: f64,
    sqrt_eta: f64,
    phi_ab: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<SimEstimate>> {
    check_trials(trials)?;
    let counts = run_x_pm(sys, nu, sqrt_eta, phi_ab, trials, seed, None);
    let accepted = counts.corr_click + counts.err_click;
    Ok(vec![
        SimEstimate::frequency("p_pm", counts.in_window, trials),
        SimEstimate::frequency("Qpm_c^x", counts.corr_click, trials),
        SimEstimate::frequency("Qpm_e^x", counts.err_click, trials),
        SimEstimate::frequency("Qpm^x", accepted, trials),
        SimEstimate::frequency("Epm^x*Qpm^x", counts.bit_errors, trials),
        SimEstimate::ratio("Epm^x", counts.bit_errors, accepted),
    ])
}

/// Window membership: returns the slice index r if psi falls within delta of
/// 0 or pi (mod 2 pi).
fn slice_index(psi: f64, delta: f64) -> Option<u8> {
    if psi <= delta || psi >= TAU - delta {
        Some(0)
    } else if (psi - std::f64::consts::PI).abs() <= delta {
        Some(1)
    } else {
        None
    }
}

fn run_x_pm(
    sys: &SystemParams,
    nu: f64,
    sqrt_eta: f64,
    phi_ab: f64,
    trials: u64,
    seed: u64,
    mut log: Option<&mut dyn FnMut(&TrialRecord)>,
) -> PmCounts {
    let (p_d, e_d, delta) = (sys.p_d, sys.e_d_x, sys.delta);
    let a = nu * sqrt_eta;
    let trial = |rng: &mut ChaCha8Rng, c: &mut PmCounts| -> TrialRecord {
        let theta_a = rng.random_range(0.0..TAU);
        let theta_b = rng.random_range(0.0..TAU);
        let x_a = rng.random_bool(0.5) as u8;
        let x_b = rng.random_bool(0.5) as u8;
        let psi = (theta_a - theta_b - phi_ab).rem_euclid(TAU);
        let r = slice_index(psi, delta);
        let mut clicks = [false; 4];
        let mut accepted = false;
        if let Some(r) = r {
            c.in_window += 1;
            // encoded phase difference seen by the beam splitter
            let phase = psi + (x_a as f64 - x_b as f64) * std::f64::consts::PI;
            let i3 = a * (1.0 + phase.cos());
            let i4 = a * (1.0 - phase.cos());
            let d3 = click(rng, i3, p_d);
            let d4 = click(rng, i4, p_d);
            clicks = [false, false, d3, d4];
            if d3 != d4 {
                accepted = true;
                let x_c_pre = d4 as u8;
                let ideal = x_a ^ x_b ^ r;
                if x_c_pre == ideal {
                    c.corr_click += 1;
                } else {
                    c.err_click += 1;
                }
                let x_c = if e_d > 0.0 && rng.random_bool(e_d) {
                    1 - x_c_pre
                } else {
                    x_c_pre
                };
                if x_c != ideal {
                    c.bit_errors += 1;
                }
            }
        }
        TrialRecord {
            basis: Basis::X,
            k_a: nu,
            k_b: nu,
            theta_a,
            theta_b,
            x_a,
            x_b,
            r,
            clicks,
            accepted,
        }
    };
    if let Some(log) = log.as_mut() {
        let mut counts = PmCounts::default();
        let chunks = trials.div_ceil(CHUNK);
        for ci in 0..chunks {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(ci);
            for _ in 0..CHUNK.min(trials - ci * CHUNK) {
                let rec = trial(&mut rng, &mut counts);
                if rec.accepted {
                    log(&rec);
                }
            }
        }
        counts
    } else {
        accumulate(trials, seed, 0, |rng, c: &mut PmCounts| {
            trial(rng, c);
        })
    }
}

/// True single-photon X-basis yield and error rate, by conditioning on the
/// one-photon component of the two coherent pulses.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePhotonSim {
    pub y1_x: SimEstimate,
    pub e1_x: SimEstimate,
    /// Trials that carried exactly one photon and fell in the window.
    pub conditioned_trials: u64,
    /// Conditioned trials that produced exactly one click.
    pub clicks: u64,
}

/// Rejection-sampled version: draws Poisson photon numbers per arm and keeps
/// trials whose total is one, as the physical source would produce them.
/// `trials` counts raw source pulses.
pub fn simulate_single_photon_component(
    sys: &SystemParams,
    nu: f64,
    l_km: f64,
    trials: u64,
    seed: u64,
) -> Result<SinglePhotonSim> {
    check_trials(trials)?;
    if !nu.is_finite() || nu <= 0.0 {
        return Err(invalid("nu", nu, "must be > 0"));
    }
    let sqrt_eta = sys.sqrt_eta(l_km)?;
    let counts: SingleCounts = {
        let sys = *sys;
        accumulate(trials, seed, 0, move |rng, c: &mut SingleCounts| {
            c.raw += 1;
            let n_a = poisson(rng, nu);
            let n_b = poisson(rng, nu);
            if n_a + n_b != 1 {
                return;
            }
            c.photon_one += 1;
            let theta_a = rng.random_range(0.0..TAU);
            let theta_b = rng.random_range(0.0..TAU);
            let psi = (theta_a - theta_b).rem_euclid(TAU);
            let Some(r) = slice_index(psi, sys.delta) else {
                return;
            };
            c.in_window += 1;
            single_photon_trial(rng, &sys, sqrt_eta, psi, r, c);
        })
    };
    finish_single_photon(counts)
}

/// Direct conditional sampler: every trial is already a one-photon,
/// in-window event. Statistically identical to the rejection version on the
/// conditioned ensemble, but usable deep in the loss regime where rejection
/// sampling would waste almost every draw.
pub fn simulate_single_photon_component_conditioned(
    sys: &SystemParams,
    l_km: f64,
    trials: u64,
    seed: u64,
) -> Result<SinglePhotonSim> {
    check_trials(trials)?;
    let sqrt_eta = sys.sqrt_eta(l_km)?;
    let counts: SingleCounts = {
        let sys = *sys;
        accumulate(trials, seed, 0, move |rng, c: &mut SingleCounts| {
            c.raw += 1;
            c.photon_one += 1;
            c.in_window += 1;
            let r = rng.random_bool(0.5) as u8;
            let psi = (r as f64 * std::f64::consts::PI + rng.random_range(-sys.delta..=sys.delta))
                .rem_euclid(TAU);
            single_photon_trial(rng, &sys, sqrt_eta, psi, r, c);
        })
    };
    finish_single_photon(counts)
}

fn single_photon_trial(
    rng: &mut ChaCha8Rng,
    sys: &SystemParams,
    sqrt_eta: f64,
    psi: f64,
    r: u8,
    c: &mut SingleCounts,
) {
    let x_a = rng.random_bool(0.5) as u8;
    let x_b = rng.random_bool(0.5) as u8;
    let phase = psi + (x_a as f64 - x_b as f64) * std::f64::consts::PI;
    // the joint one-photon state is (|10> + e^{i phase}|01>)/sqrt(2): the
    // surviving photon exits toward D3 with probability (1 + cos phase)/2
    let survives = rng.random_bool(sqrt_eta);
    let (mut d3, mut d4) = (false, false);
    if survives {
        let p_d3 = (0.5 * (1.0 + phase.cos())).clamp(0.0, 1.0);
        if rng.random_bool(p_d3) {
            d3 = true;
        } else {
            d4 = true;
        }
    }
    if sys.p_d > 0.0 {
        d3 = d3 || rng.random_bool(sys.p_d);
        d4 = d4 || rng.random_bool(sys.p_d);
    }
    if d3 != d4 {
        c.one_click += 1;
        let x_c_pre = d4 as u8;
        let x_c = if sys.e_d_x > 0.0 && rng.random_bool(sys.e_d_x) {
            1 - x_c_pre
        } else {
            x_c_pre
        };
        if x_c != (x_a ^ x_b ^ r) {
            c.errors += 1;
        }
    }
}

fn finish_single_photon(counts: SingleCounts) -> Result<SinglePhotonSim> {
    if counts.one_click == 0 {
        return Err(Error::InsufficientSampling);
    }
    Ok(SinglePhotonSim {
        y1_x: SimEstimate::ratio("Y1^x", counts.one_click, counts.in_window),
        e1_x: SimEstimate::ratio("e1^x", counts.errors, counts.one_click),
        conditioned_trials: counts.in_window,
        clicks: counts.one_click,
    })
}

/// Estimate every gain and error quantity of one (system, protocol,
/// distance) triple by frequency counting: Z pair gains for the decoy
/// intensities, phase-averaged X pair gains, sifted Z statistics and the
/// phase-matched X statistics. Each quantity runs on its own seed stream.
pub fn simulate_gains(
    sys: &SystemParams,
    pp: &ProtocolParams,
    l_km: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<SimEstimate>> {
    check_trials(trials)?;
    let s = sys.sqrt_eta(l_km)?;
    let mut stream = 0u64;
    let mut next_seed = move || {
        stream += 1;
        seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    };
    let mut out = Vec::new();
    for (ka, kb) in [
        (pp.mu, 0.0),
        (0.0, pp.mu),
        (pp.nu, 0.0),
        (0.0, pp.nu),
        (pp.mu, pp.mu),
        (0.0, 0.0),
    ] {
        out.push(simulate_z_pair_gain(sys, s, ka, kb, trials, next_seed())?);
    }
    for (ka, kb) in [(pp.mu, 0.0), (pp.nu, 0.0), (pp.nu, pp.nu), (0.0, 0.0)] {
        out.push(simulate_x_pair_gain(sys, s, ka, kb, trials, next_seed())?);
    }
    out.extend(simulate_z_sift(sys, pp, s, trials, next_seed())?);
    out.extend(simulate_x_pm(sys, pp.nu, s, 0.0, trials, next_seed())?);
    Ok(out)
}

/// One row of the analytic-vs-Monte-Carlo comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRow {
    pub name: String,
    pub analytic: f64,
    pub estimate: f64,
    /// Binomial standard error computed from the analytic probability, so it
    /// stays defined when the empirical count is zero.
    pub std_error: f64,
    pub z: f64,
    /// Five-sigma consistency, Poisson-calibrated where the expected count is
    /// too small for the normal approximation behind the z-score.
    pub pass: bool,
}

/// Two-sided tail probability equivalent of |z| = 5.
const FIVE_SIGMA_TAIL: f64 = 2.867e-7;

/// Whether an observed count is consistent with a Poisson/binomial expectation
/// at the five-sigma level. Uses the normal z when the expected count is
/// large, exact Poisson tails otherwise (a count of 3 against an expectation
/// of 0.2 is unremarkable even though its naive z-score exceeds 5).
fn count_consistent(observed: u64, expected: f64, trials: u64) -> bool {
    if expected <= 0.0 {
        return observed == 0;
    }
    let expected_misses = trials as f64 - expected;
    if expected >= 25.0 && expected_misses >= 25.0 {
        let sigma = (expected * expected_misses / trials as f64).sqrt();
        return ((observed as f64 - expected) / sigma).abs() <= 5.0;
    }
    // exact Poisson tails around the small side
    let lambda = expected.min(expected_misses);
    let k = if expected <= expected_misses {
        observed
    } else {
        trials - observed
    };
    let mut cdf = 0.0f64; // P(X <= k)
    let mut pmf = (-lambda).exp();
    for i in 0..=k.min(200) {
        if i > 0 {
            pmf *= lambda / i as f64;
        }
        cdf += pmf;
    }
    let upper = 1.0 - cdf + pmf; // P(X >= k)
    cdf >= FIVE_SIGMA_TAIL && upper >= FIVE_SIGMA_TAIL
}

fn row(name: &str, analytic: f64, est: &SimEstimate) -> ValidationRow {
    let se = (analytic * (1.0 - analytic) / est.trials as f64).sqrt();
    let z = if se == 0.0 {
        if est.estimate == analytic {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (est.estimate - analytic) / se
    };
    let observed = (est.estimate * est.trials as f64).round() as u64;
    ValidationRow {
        name: name.to_string(),
        analytic,
        estimate: est.estimate,
        std_error: se,
        z,
        pass: count_consistent(observed, analytic * est.trials as f64, est.trials),
    }
}

/// Estimate every per-pair frequency the analytic module predicts and pair it
/// with the closed-form value. All rows are per-trial frequencies, so every
/// z-score is well-defined even where acceptances are rare.
pub fn compare_with_analytic(
    sys: &SystemParams,
    pp: &ProtocolParams,
    l_km: f64,
    trials: u64,
    seed: u64,
) -> Result<Vec<ValidationRow>> {
    check_trials(trials)?;
    let s = sys.sqrt_eta(l_km)?;
    let mut rows = Vec::new();
    let mut stream = 0u64;
    let mut next_seed = move || {
        stream += 1;
        seed.wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    };

    // pair gains, both bases
    let z_pairs = [
        (pp.mu, 0.0),
        (0.0, pp.mu),
        (pp.nu, 0.0),
        (pp.mu, pp.mu),
        (0.0, 0.0),
    ];
    for (ka, kb) in z_pairs {
        let est = simulate_z_pair_gain(sys, s, ka, kb, trials, next_seed())?;
        let name = est.name.clone();
        rows.push(row(&name, gain_z_pair(sys, s, ka, kb)?, &est));
    }
    let x_pairs = [(pp.nu, 0.0), (pp.mu, 0.0), (pp.nu, pp.nu), (0.0, 0.0)];
    for (ka, kb) in x_pairs {
        let est = simulate_x_pair_gain(sys, s, ka, kb, trials, next_seed())?;
        let name = est.name.clone();
        rows.push(row(&name, gain_x_pair(sys, s, ka, kb)?, &est));
    }

    // sifted Z statistics
    let zs = z_basis_statistics(sys, pp, s)?;
    let sift = simulate_z_sift(sys, pp, s, trials, next_seed())?;
    rows.push(row("Q_c^z", zs.q_c, &sift[0]));
    rows.push(row("Q_e^z", zs.q_e, &sift[1]));
    rows.push(row("Q^z", zs.q_total, &sift[2]));
    rows.push(row("E_marg^z*Q^z", zs.e_marginal * zs.q_total, &sift[3]));

    // phase-matched X statistics
    let pm = x_basis_pm_statistics(sys, pp, s)?;
    let pme = simulate_x_pm(sys, pp.nu, s, 0.0, trials, next_seed())?;
    rows.push(row("p_pm", sys.p_pm(), &pme[0]));
    rows.push(row("Qpm_c^x", pm.q_c, &pme[1]));
    rows.push(row("Qpm_e^x", pm.q_e, &pme[2]));
    rows.push(row("Qpm^x", pm.q_total, &pme[3]));
    rows.push(row("Epm^x*Qpm^x", pm.e_pm * pm.q_total, &pme[4]));
    Ok(rows)
}

/// Run the phase-matched X simulation writing one delimited record per
/// accepted event: basis, k_a, k_b, theta_a, theta_b, clicks, accepted.
pub fn write_trial_log<W: std::io::Write>(
    sys: &SystemParams,
    pp: &ProtocolParams,
    l_km: f64,
    trials: u64,
    seed: u64,
    out: &mut W,
) -> Result<u64> {
    let s = sys.sqrt_eta(l_km)?;
    let mut written = 0u64;
    let mut io_err = None;
    {
        let mut log = |rec: &TrialRecord| {
            if io_err.is_some() {
                return;
            }
            let clicks: String = rec
                .clicks
                .iter()
                .map(|&c| if c { '1' } else { '0' })
                .collect();
            let basis = match rec.basis {
                Basis::Z => 'Z',
                Basis::X => 'X',
            };
            if let Err(e) = writeln!(
                out,
                "{basis}\t{}\t{}\t{}\t{}\t{clicks}\t{}",
                rec.k_a, rec.k_b, rec.theta_a, rec.theta_b, rec.accepted
            ) {
                io_err = Some(e);
            } else {
                written += 1;
            }
        };
        run_z_sift(sys, pp, s, trials, seed, Some(&mut log));
        run_x_pm(
            sys,
            pp.nu,
            s,
            0.0,
            trials,
            seed.wrapping_add(1),
            Some(&mut log),
        );
    }
    if io_err.is_some() {
        return Err(invalid("trial_log", 0.0, "failed to write trial log"));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_light_no_darks_gives_zero() {
        let sys = SystemParams::new(0.56, 0.0, 0.035, 0.167, 1.1, 0.17).unwrap();
        let est = simulate_z_pair_gain(&sys, 0.5, 0.0, 0.0, 20_000, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
        let est = simulate_x_pair_gain(&sys, 0.5, 0.0, 0.0, 20_000, 1).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn seed_determinism() {
        let sys = SystemParams::default();
        let a = simulate_z_pair_gain(&sys, 0.1, 0.5, 0.0, 300_000, 9).unwrap();
        let b = simulate_z_pair_gain(&sys, 0.1, 0.5, 0.0, 300_000, 9).unwrap();
        assert_eq!(a, b);
        let c = simulate_z_pair_gain(&sys, 0.1, 0.5, 0.0, 300_000, 10).unwrap();
        assert_ne!(a.estimate, c.estimate);
    }

    #[test]
    fn z_pair_gain_matches_closed_form() {
        let sys = SystemParams::default();
        let s = 0.05;
        let trials = 2_000_000;
        for (ka, kb) in [(0.5, 0.0), (0.5, 0.5), (0.2, 0.7)] {
            let est = simulate_z_pair_gain(&sys, s, ka, kb, trials, 3).unwrap();
            let want = gain_z_pair(&sys, s, ka, kb).unwrap();
            let se = (want * (1.0 - want) / trials as f64).sqrt();
            assert!(
                (est.estimate - want).abs() < 5.0 * se,
                "Q_z({ka},{kb}): {} vs {want}",
                est.estimate
            );
        }
    }

    #[test]
    fn x_pair_gain_matches_bessel_form() {
        let sys = SystemParams::default();
        let s = 0.05;
        let trials = 2_000_000;
        for (ka, kb) in [(0.3, 0.0), (0.3, 0.3), (0.1, 0.6)] {
            let est = simulate_x_pair_gain(&sys, s, ka, kb, trials, 5).unwrap();
            let want = gain_x_pair(&sys, s, ka, kb).unwrap();
            let se = (want * (1.0 - want) / trials as f64).sqrt();
            assert!(
                (est.estimate - want).abs() < 5.0 * se,
                "Q_x({ka},{kb}): {} vs {want}",
                est.estimate
            );
        }
    }

    #[test]
    fn x_pair_gain_matches_bessel_form_at_strong_interference() {
        // high intensity and transmittance, where I0 departs visibly from 1
        // and the phase-averaged no-click probability is genuinely Bessel
        let sys = SystemParams::default();
        let s = 0.56; // zero-distance transmittance
        let trials = 2_000_000;
        for (ka, kb) in [(1.0, 1.0), (1.5, 0.7), (0.8, 0.2)] {
            let est = simulate_x_pair_gain(&sys, s, ka, kb, trials, 6).unwrap();
            let want = gain_x_pair(&sys, s, ka, kb).unwrap();
            let se = (want * (1.0 - want) / trials as f64).sqrt();
            assert!(
                (est.estimate - want).abs() < 5.0 * se,
                "Q_x({ka},{kb}) at s={s}: {} vs {want}",
                est.estimate
            );
        }
    }

    #[test]
    fn perfect_constructive_interference_feeds_one_port() {
        // delta = 0 encoded phase, no darks: D4 sees zero intensity
        let a = 0.4;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let i4 = a * (1.0 - 0f64.cos());
            assert_eq!(poisson(&mut rng, i4), 0);
        }
    }

    #[test]
    fn window_acceptance_matches_p_pm() {
        let sys = SystemParams::default();
        let trials = 1_000_000;
        let est = &simulate_x_pm(&sys, 0.05, 0.1, 0.0, trials, 21).unwrap()[0];
        let want = sys.p_pm();
        let se = (want * (1.0 - want) / trials as f64).sqrt();
        assert!((est.estimate - want).abs() < 5.0 * se);
    }

    #[test]
    fn frame_offset_does_not_shift_estimates() {
        // phi_ab is announced and compensated; only the seed changes outcomes
        let sys = SystemParams::default();
        let trials = 1_000_000;
        let base = simulate_x_pm(&sys, 0.05, 0.1, 0.0, trials, 31).unwrap();
        let offs = simulate_x_pm(&sys, 0.05, 0.1, 1.234, trials, 32).unwrap();
        for (a, b) in base.iter().zip(&offs).take(4) {
            let se = (a.std_error.powi(2) + b.std_error.powi(2)).sqrt();
            assert!(
                (a.estimate - b.estimate).abs() < 5.0 * se,
                "{}: {} vs {}",
                a.name,
                a.estimate,
                b.estimate
            );
        }
    }

    #[test]
    fn arm_swap_symmetry() {
        let sys = SystemParams::default();
        let trials = 1_000_000;
        let ab = simulate_z_pair_gain(&sys, 0.05, 0.5, 0.1, trials, 41).unwrap();
        let ba = simulate_z_pair_gain(&sys, 0.05, 0.1, 0.5, trials, 42).unwrap();
        let se = (ab.std_error.powi(2) + ba.std_error.powi(2)).sqrt();
        assert!((ab.estimate - ba.estimate).abs() < 5.0 * se);
    }

    #[test]
    fn sift_statistics_match_closed_forms() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.1, 0.5, 0.1).unwrap();
        let s = 0.05;
        let trials = 2_000_000;
        let zs = z_basis_statistics(&sys, &pp, s).unwrap();
        let est = simulate_z_sift(&sys, &pp, s, trials, 51).unwrap();
        for (got, want) in est
            .iter()
            .zip([zs.q_c, zs.q_e, zs.q_total, zs.e_marginal * zs.q_total])
        {
            let se = (want * (1.0 - want) / trials as f64).sqrt();
            assert!(
                (got.estimate - want).abs() < 5.0 * se,
                "{}: {} vs {want}",
                got.name,
                got.estimate
            );
        }
    }

    #[test]
    fn pm_statistics_match_closed_forms() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.1, 0.5, 0.1).unwrap();
        let s = 0.05;
        let trials = 2_000_000;
        let pm = x_basis_pm_statistics(&sys, &pp, s).unwrap();
        let est = simulate_x_pm(&sys, pp.nu, s, 0.0, trials, 61).unwrap();
        for (got, want) in
            est.iter()
                .skip(1)
                .zip([pm.q_c, pm.q_e, pm.q_total, pm.e_pm * pm.q_total])
        {
            let se = (want * (1.0 - want) / trials as f64).sqrt();
            assert!(
                (got.estimate - want).abs() < 5.0 * se,
                "{}: {} vs {want}",
                got.name,
                got.estimate
            );
        }
    }

    #[test]
    fn single_photon_ideal_interference_is_error_free() {
        // lossless, dark-free, aligned: phase-matched single photons never err
        // except through the finite slice width; with delta tiny the error
        // rate collapses to ~0
        let sys = SystemParams::new(1.0, 0.0, 0.0, 0.167, 1.1, 1e-4).unwrap();
        let r = simulate_single_photon_component_conditioned(&sys, 0.0, 50_000, 71).unwrap();
        assert!(r.e1_x.estimate < 1e-4, "e1 = {}", r.e1_x.estimate);
        assert!((r.y1_x.estimate - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejection_and_conditioned_samplers_agree() {
        let sys = SystemParams::default();
        let l = 50.0;
        let rej = simulate_single_photon_component(&sys, 0.2, l, 4_000_000, 81).unwrap();
        let con = simulate_single_photon_component_conditioned(&sys, l, 200_000, 82).unwrap();
        let se = (rej.e1_x.std_error.powi(2) + con.e1_x.std_error.powi(2)).sqrt();
        assert!(
            (rej.e1_x.estimate - con.e1_x.estimate).abs() < 5.0 * se,
            "e1: {} vs {}",
            rej.e1_x.estimate,
            con.e1_x.estimate
        );
        let se = (rej.y1_x.std_error.powi(2) + con.y1_x.std_error.powi(2)).sqrt();
        assert!((rej.y1_x.estimate - con.y1_x.estimate).abs() < 5.0 * se);
    }

    #[test]
    fn phase_pi_flips_the_outcome() {
        // psi = pi sits in the r = 1 slice; with x_a = x_b the photon exits D4,
        // which is exactly the ideal bit x_a ^ x_b ^ r = 1: still error-free
        let sys = SystemParams::new(1.0, 0.0, 0.0, 0.167, 1.1, 1e-6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut c = SingleCounts::default();
        for _ in 0..2000 {
            single_photon_trial(&mut rng, &sys, 1.0, std::f64::consts::PI, 1, &mut c);
        }
        assert_eq!(c.errors, 0);
        assert_eq!(c.one_click, 2000);
    }

    #[test]
    fn insufficient_sampling_is_reported() {
        let sys = SystemParams::default();
        // 1 raw trial at enormous loss: no click possible
        let r = simulate_single_photon_component(&sys, 0.05, 900.0, 10, 3);
        assert!(matches!(r, Err(Error::InsufficientSampling)));
    }

    #[test]
    fn validation_rows_are_within_five_sigma_at_short_distance() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.1, 0.5, 0.1).unwrap();
        let rows = compare_with_analytic(&sys, &pp, 50.0, 400_000, 17).unwrap();
        for r in &rows {
            assert!(
                r.pass,
                "{}: z = {} (analytic {}, mc {})",
                r.name, r.z, r.analytic, r.estimate
            );
        }
    }

    #[test]
    fn simulate_gains_covers_all_quantities() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.1, 0.5, 0.1).unwrap();
        let ests = simulate_gains(&sys, &pp, 20.0, 50_000, 4).unwrap();
        assert_eq!(ests.len(), 22);
        assert!(ests.iter().all(|e| (0.0..=1.0).contains(&e.estimate)));
        // std errors follow the binomial formula on their own trial counts
        for e in &ests {
            let want = (e.estimate * (1.0 - e.estimate) / e.trials as f64).sqrt();
            assert!((e.std_error - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn trial_log_writes_accepted_records() {
        let sys = SystemParams::default();
        let pp = ProtocolParams::new(0.3, 0.5, 0.1).unwrap();
        let mut buf = Vec::new();
        let n = write_trial_log(&sys, &pp, 10.0, 20_000, 3, &mut buf).unwrap();
        assert!(n > 0);
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len() as u64, n);
        for line in lines.iter().take(5) {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 7);
            assert!(cols[0] == "Z" || cols[0] == "X");
            assert_eq!(cols[6], "true");
        }
    }
}
