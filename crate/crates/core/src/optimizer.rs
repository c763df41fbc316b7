//! Derivative-free maximization of the key rate over (t, mu, nu) at a fixed
//! distance, and distance sweeps built on top of it.
//!
//! A real-coded evolutionary search: tournament selection, blend crossover,
//! Gaussian mutation with a decaying step. The landscape is a smooth
//! 3-parameter surface, so any reasonable population search lands on the
//! optimum; the test suite pins it against a dense grid search. Runs are
//! deterministic for a fixed seed regardless of thread count: candidate
//! evaluation is parallel but selection consumes a single RNG stream and
//! reductions are by index.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::params::{ProtocolParams, SystemParams};
use crate::rate::{
    practical_rate_with, single_photon_rate_with, ProtocolKind, QberConvention, RatePoint,
};

/// Box constraints for the free parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBounds {
    pub t: (f64, f64),
    pub mu: (f64, f64),
    /// Lower bound for nu; the upper bound is the candidate's own mu
    /// (feasibility is repaired, not rejected).
    pub nu_min: f64,
}

impl Default for SearchBounds {
    fn default() -> Self {
        Self {
            t: (1e-6, 0.5),
            mu: (1e-4, 1.5),
            nu_min: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub population_size: usize,
    pub generations: usize,
    pub seed: u64,
    pub bounds: SearchBounds,
    pub restarts: usize,
    /// Relative best-rate improvement below which a restart stops early.
    pub tolerance: f64,
    pub qber: QberConvention,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            population_size: 64,
            generations: 200,
            seed: 42,
            bounds: SearchBounds::default(),
            restarts: 3,
            tolerance: 1e-10,
            qber: QberConvention::default(),
        }
    }
}

impl OptimizerConfig {
    fn validate(&self) -> Result<()> {
        if self.population_size < 4 {
            return Err(invalid(
                "population_size",
                self.population_size as f64,
                "must be >= 4",
            ));
        }
        if self.generations == 0 {
            return Err(invalid("generations", 0.0, "must be >= 1"));
        }
        let b = &self.bounds;
        if !(b.t.0 > 0.0 && b.t.0 < b.t.1 && b.t.1 < 1.0) {
            return Err(invalid("bounds.t", b.t.0, "need 0 < lo < hi < 1"));
        }
        if !(b.mu.0 > 0.0 && b.mu.0 < b.mu.1) {
            return Err(invalid("bounds.mu", b.mu.0, "need 0 < lo < hi"));
        }
        if !(b.nu_min > 0.0 && b.nu_min < b.mu.1) {
            return Err(invalid("bounds.nu_min", b.nu_min, "must sit inside mu box"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub best: RatePoint,
    /// Best raw rate seen per generation (cumulative, so non-decreasing).
    pub trace: Vec<f64>,
    pub evaluations: u64,
    /// Every candidate evaluated to a non-positive rate (beyond cutoff).
    pub all_zero: bool,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    t: f64,
    mu: f64,
    nu: f64,
}

impl Candidate {
    /// Clamp into the box and project nu strictly below mu. The projection
    /// keeps a finite gap: letting nu ride within f64 noise of mu turns the
    /// decoy denominator mu*nu - nu^2 into pure cancellation error.
    fn repair(mut self, b: &SearchBounds) -> Self {
        self.t = self.t.clamp(b.t.0, b.t.1);
        self.mu = self.mu.clamp(b.mu.0, b.mu.1);
        let nu_cap = self.mu * 0.999;
        self.nu = self.nu.clamp(b.nu_min.min(nu_cap), nu_cap);
        self
    }

    fn params(&self) -> ProtocolParams {
        // repair() keeps every candidate feasible
        ProtocolParams::new(self.t, self.mu, self.nu).expect("repaired candidate must be feasible")
    }
}

/// What the search optimizes at one distance.
#[derive(Clone, Copy)]
enum Objective {
    Practical,
    /// Only t is free; mu and nu genes are ignored.
    SinglePhoton,
}

fn evaluate(
    sys: &SystemParams,
    obj: Objective,
    qber: QberConvention,
    l_km: f64,
    c: &Candidate,
) -> RatePoint {
    match obj {
        Objective::Practical => practical_rate_with(sys, &c.params(), l_km, qber)
            .expect("rate evaluation on repaired candidate"),
        Objective::SinglePhoton => single_photon_rate_with(sys, c.t, l_km, qber)
            .expect("rate evaluation on repaired candidate"),
    }
}

/// Ranking score: raw rate, with candidates whose decoy estimation collapsed
/// pushed below every finite-rate candidate.
fn fitness(p: &RatePoint) -> f64 {
    if p.flag == crate::rate::PointFlag::EstimationFailure {
        f64::NEG_INFINITY
    } else {
        p.diag.r_raw
    }
}

#[allow(clippy::too_many_arguments)]
fn run_restart(
    sys: &SystemParams,
    cfg: &OptimizerConfig,
    obj: Objective,
    l_km: f64,
    stream: u64,
    warm: Option<Candidate>,
    trace: &mut Vec<f64>,
    evaluations: &mut u64,
) -> (Candidate, RatePoint) {
    let b = &cfg.bounds;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, 1.0).unwrap();

    let n = cfg.population_size;
    let mut pop: Vec<Candidate> = (0..n)
        .map(|i| {
            if i == 0 {
                if let Some(w) = warm {
                    return w.repair(b);
                }
            }
            Candidate {
                t: rng.random_range(b.t.0..b.t.1),
                mu: rng.random_range(b.mu.0..b.mu.1),
                nu: rng.random_range(b.nu_min..b.mu.1),
            }
            .repair(b)
        })
        .collect();

    let score = |pop: &[Candidate]| -> Vec<RatePoint> {
        pop.par_iter()
            .map(|c| evaluate(sys, obj, cfg.qber, l_km, c))
            .collect()
    };

    let mut rated = score(&pop);
    *evaluations += n as u64;
    let mut best_idx = argmax(&rated);
    let mut best = (pop[best_idx], rated[best_idx]);

    let width_t = b.t.1 - b.t.0;
    let width_mu = b.mu.1 - b.mu.0;
    let mut since_improvement = 0usize;

    for gen in 0..cfg.generations {
        let step = 0.15 * (1.0 - gen as f64 / cfg.generations as f64) + 0.005;
        let mut next = Vec::with_capacity(n);
        // elitism: carry the two best
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| fitness(&rated[j]).total_cmp(&fitness(&rated[i])));
        next.push(pop[order[0]]);
        next.push(pop[order[1]]);

        while next.len() < n {
            let pa = tournament(&mut rng, &rated, 3);
            let pb = tournament(&mut rng, &rated, 3);
            // blend crossover
            let alpha = 0.5;
            let mix = |x: f64, y: f64, r: &mut ChaCha8Rng| {
                let lo = x.min(y);
                let hi = x.max(y);
                let d = (hi - lo) * alpha;
                r.random_range((lo - d)..=(hi + d + f64::MIN_POSITIVE))
            };
            let mut child = Candidate {
                t: mix(pop[pa].t, pop[pb].t, &mut rng),
                mu: mix(pop[pa].mu, pop[pb].mu, &mut rng),
                nu: mix(pop[pa].nu, pop[pb].nu, &mut rng),
            };
            // gaussian mutation, one expected gene per child
            if rng.random_bool(0.4) {
                child.t += normal.sample(&mut rng) * step * width_t;
            }
            if rng.random_bool(0.4) {
                child.mu += normal.sample(&mut rng) * step * width_mu;
            }
            if rng.random_bool(0.4) {
                child.nu += normal.sample(&mut rng) * step * child.mu.abs().max(b.nu_min);
            }
            next.push(child.repair(b));
        }

        pop = next;
        rated = score(&pop);
        *evaluations += n as u64;
        best_idx = argmax(&rated);
        if fitness(&rated[best_idx]) > fitness(&best.1) {
            let rel =
                (fitness(&rated[best_idx]) - fitness(&best.1)) / fitness(&best.1).abs().max(1e-300);
            best = (pop[best_idx], rated[best_idx]);
            since_improvement = if rel < cfg.tolerance {
                since_improvement + 1
            } else {
                0
            };
        } else {
            since_improvement += 1;
        }
        trace.push(fitness(&best.1));
        if since_improvement > 40 {
            break;
        }
    }
    best
}

fn argmax(rated: &[RatePoint]) -> usize {
    let mut idx = 0;
    for (i, p) in rated.iter().enumerate() {
        if fitness(p) > fitness(&rated[idx]) {
            idx = i;
        }
    }
    idx
}

fn tournament(rng: &mut ChaCha8Rng, rated: &[RatePoint], k: usize) -> usize {
    let mut best = rng.random_range(0..rated.len());
    for _ in 1..k {
        let c = rng.random_range(0..rated.len());
        if fitness(&rated[c]) > fitness(&rated[best]) {
            best = c;
        }
    }
    best
}

fn optimize(
    sys: &SystemParams,
    cfg: &OptimizerConfig,
    obj: Objective,
    l_km: f64,
    warm: Option<ProtocolParams>,
) -> Result<OptimizationResult> {
    cfg.validate()?;
    sys.sqrt_eta(l_km)?;
    let warm = warm.map(|p| Candidate {
        t: p.t,
        mu: p.mu,
        nu: p.nu,
    });

    let mut trace = Vec::new();
    let mut evaluations = 0u64;
    let mut best: Option<(Candidate, RatePoint)> = None;
    for restart in 0..cfg.restarts.max(1) {
        let found = run_restart(
            sys,
            cfg,
            obj,
            l_km,
            restart as u64 + 1,
            if restart == 0 { warm } else { None },
            &mut trace,
            &mut evaluations,
        );
        match &best {
            Some((_, b)) if fitness(b) >= fitness(&found.1) => {}
            _ => best = Some(found),
        }
    }
    let (_, best_point) = best.expect("at least one restart");
    // make the recorded trace globally cumulative
    let mut run_max = f64::NEG_INFINITY;
    for v in trace.iter_mut() {
        run_max = run_max.max(*v);
        *v = run_max;
    }
    Ok(OptimizationResult {
        all_zero: best_point.diag.r_raw <= 0.0,
        best: best_point,
        trace,
        evaluations,
    })
}

/// Maximize the practical key rate over (t, mu, nu) at one distance.
/// Deterministic for a fixed config seed.
pub fn optimize_at_distance(
    sys: &SystemParams,
    cfg: &OptimizerConfig,
    l_km: f64,
) -> Result<OptimizationResult> {
    optimize(sys, cfg, Objective::Practical, l_km, None)
}

/// Same entry point with a warm-start candidate injected into the first
/// restart's population.
pub fn optimize_at_distance_warm(
    sys: &SystemParams,
    cfg: &OptimizerConfig,
    l_km: f64,
    warm: Option<ProtocolParams>,
) -> Result<OptimizationResult> {
    optimize(sys, cfg, Objective::Practical, l_km, warm)
}

/// Maximize the single-photon protocol rate over t at one distance.
pub fn optimize_single_photon(
    sys: &SystemParams,
    cfg: &OptimizerConfig,
    l_km: f64,
) -> Result<OptimizationResult> {
    optimize(sys, cfg, Objective::SinglePhoton, l_km, None)
}

/// One optimized rate point per distance, warm-starting each point from the
/// previous optimum (plus fresh random candidates).
pub fn sweep(
    sys: &SystemParams,
    cfg: &OptimizerConfig,
    distances: &[f64],
    kind: ProtocolKind,
) -> Result<Vec<RatePoint>> {
    if distances.is_empty() {
        return Err(invalid("distances", 0.0, "sweep grid must be nonempty"));
    }
    if distances.windows(2).any(|w| w[0] > w[1]) {
        return Err(invalid(
            "distances",
            f64::NAN,
            "sweep grid must be sorted ascending",
        ));
    }
    let mut out = Vec::with_capacity(distances.len());
    let mut warm: Option<ProtocolParams> = None;
    for (i, &l) in distances.iter().enumerate() {
        let point_cfg = OptimizerConfig {
            seed: cfg.seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9)),
            ..*cfg
        };
        let res = match kind {
            ProtocolKind::Practical => optimize(sys, &point_cfg, Objective::Practical, l, warm)?,
            ProtocolKind::SinglePhoton => {
                optimize(sys, &point_cfg, Objective::SinglePhoton, l, None)?
            }
        };
        if kind == ProtocolKind::Practical && res.best.flag == crate::rate::PointFlag::Ok {
            warm = ProtocolParams::new(res.best.t, res.best.mu, res.best.nu).ok();
        }
        out.push(res.best);
    }
    Ok(out)
}
