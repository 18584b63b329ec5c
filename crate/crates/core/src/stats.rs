//! Estimation of the cycle time `gamma` and the CLT variance `sigma`, plus
//! Gaussian-limit verification, degeneracy probing and tightness
//! diagnostics.
//!
//! `sigma` is estimated through the mean-absolute-deviation route
//! `E |psi(x(n)) - n gamma| / sqrt(n) -> sigma sqrt(2/pi)`, which stays
//! valid under mixing; the plain standard deviation of the normalized tops
//! is reported alongside as a heuristic only.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::algebra::{psi, xi_increment, MaxPlusMatrix, StateVector, EPS_PROJ};
use crate::engine::{
    backward_couple_stream, forward_coupling_time, translation_key, SEMIGROUP_CAP,
};
use crate::error::{Error, Result};
use crate::exec::{
    map_replicas, Exec, PURPOSE_CLT_ALT, PURPOSE_CLT_PRECHECK, PURPOSE_CLT_ZERO,
    PURPOSE_GAMMA_COUPLED, PURPOSE_GAMMA_LLN, PURPOSE_SIGMA, PURPOSE_TIGHTNESS,
};
use crate::models::{backward_stream, forward_stream, ModelKind, ModelSpec};

/// Absolute tolerance for the degeneracy identity check.
pub const DEGENERACY_TOLERANCE: f64 = 1e-6;
/// Bootstrap resample count for the `sigma` confidence interval.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Threshold under which a fitted `sigma` is treated as degenerate. A tight
/// (coboundary) sequence has `|psi(x(n)) - n gamma|` bounded, so its MAD
/// estimate decays like `C / sqrt(n)` with `C` of order the atom spread,
/// while a positive-`sigma` model's estimate is flat in `n`.
pub fn sigma_degenerate_threshold(n: usize) -> f64 {
    (2.0 / (n as f64).sqrt()).max(1e-3)
}

/// Fixed-distance KS acceptance threshold: about 1.4x the 5% critical value
/// `1.36 / sqrt(M)`, absorbing the plug-in bias of the fitted variance
/// (0.06 at M = 1000).
pub fn ks_threshold(m: usize) -> f64 {
    1.4 * 1.36 / (m as f64).sqrt()
}

// ---------------------------------------------------------------------------
// gamma
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMethod {
    LlnTop,
    LlnBottom,
    CoupledXi,
}

#[derive(Clone, Debug, Serialize)]
pub struct GammaEstimate {
    pub method: GammaMethod,
    pub gamma_hat: f64,
    /// Trajectory length for LLN methods, absent for the coupled estimator.
    pub n: Option<usize>,
    pub samples: usize,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LlnGammaReport {
    pub top: GammaEstimate,
    pub bottom: GammaEstimate,
    /// Averaging window: rates are `(psi(x(n)) - psi(x(n-w))) / w`.
    pub window: usize,
    /// Set when the top and bottom rates disagree beyond 3 joint standard
    /// errors; for models with a bounded projective image they must agree.
    pub agreement_warning: bool,
}

/// Averaging window for the LLN rate: about `n/2`, rounded down to a
/// multiple of 12 so that eventually-periodic deterministic orbits (whose
/// projective period for small dimensions divides 12) average exactly.
fn lln_window(n: usize) -> usize {
    let half = n / 2;
    if half >= 12 {
        half - half % 12
    } else {
        half.max(1)
    }
}

fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, (var / n as f64).sqrt())
}

/// Law-of-large-numbers estimate of the top and bottom per-step rates from
/// `replicas` independent trajectories started at the origin.
///
/// The statistic is the windowed increment `(psi(x(n)) - psi(x(n-w))) / w`
/// with `w ~ n/2`; discarding the first half removes the coupling transient
/// so deterministic models converge exactly once their orbit is periodic.
pub fn estimate_gamma_lln(spec: &ModelSpec, n: usize, replicas: usize, exec: Exec) -> LlnGammaReport {
    assert!(n >= 1, "estimate_gamma_lln needs n >= 1");
    assert!(replicas >= 1, "estimate_gamma_lln needs at least one replica");
    let window = lln_window(n);
    let burn = n - window;
    let rates: Vec<(f64, f64)> = map_replicas(replicas, exec, |r| {
        let mut stream = forward_stream(spec, PURPOSE_GAMMA_LLN + r);
        let mut x = StateVector::zeros(spec.dim);
        let mut top_burn = 0.0;
        let mut bot_burn = 0.0;
        for k in 1..=n {
            x = stream.next_operator().apply(&x);
            if k == burn {
                top_burn = psi(&x);
                bot_burn = x.min_coord();
            }
        }
        let w = window as f64;
        ((psi(&x) - top_burn) / w, (x.min_coord() - bot_burn) / w)
    });
    let tops: Vec<f64> = rates.iter().map(|r| r.0).collect();
    let bots: Vec<f64> = rates.iter().map(|r| r.1).collect();
    let (top_mean, top_se) = mean_and_stderr(&tops);
    let (bot_mean, bot_se) = mean_and_stderr(&bots);
    let joint_se = (top_se * top_se + bot_se * bot_se).sqrt();
    let agreement_warning = (top_mean - bot_mean).abs() > 3.0 * joint_se + 1e-12;
    LlnGammaReport {
        top: GammaEstimate {
            method: GammaMethod::LlnTop,
            gamma_hat: top_mean,
            n: Some(n),
            samples: replicas,
            stderr: top_se,
        },
        bottom: GammaEstimate {
            method: GammaMethod::LlnBottom,
            gamma_hat: bot_mean,
            n: Some(n),
            samples: replicas,
            stderr: bot_se,
        },
        window,
        agreement_warning,
    }
}

/// Coupled estimate `gamma = E xi(A, Y)`: each sample backward-couples a
/// fresh replica to its stationary projective state `Y` and evaluates the
/// cocycle increment of the forward continuation operator on it. For
/// i.i.d. models the continuation is an independent draw; for 1-dependent
/// and Markov-modulated models it carries the boundary dependence the
/// expectation is taken under.
pub fn estimate_gamma_coupled(
    spec: &ModelSpec,
    samples: usize,
    cap: usize,
    exec: Exec,
) -> Result<GammaEstimate> {
    assert!(samples >= 1, "estimate_gamma_coupled needs at least one sample");
    let draws: Vec<Result<f64>> = map_replicas(samples, exec, |r| {
        let mut bs = backward_stream(spec, PURPOSE_GAMMA_COUPLED + r);
        let coupled = backward_couple_stream(&mut bs, cap)?;
        let a = bs.continuation_operator();
        Ok(xi_increment(&a, coupled.y.rep()))
    });
    let mut values = Vec::with_capacity(samples);
    for d in draws {
        values.push(d?);
    }
    let (mean, se) = mean_and_stderr(&values);
    Ok(GammaEstimate {
        method: GammaMethod::CoupledXi,
        gamma_hat: mean,
        n: None,
        samples,
        stderr: se,
    })
}

// ---------------------------------------------------------------------------
// sigma
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct SigmaEstimate {
    /// `mad * sqrt(pi/2)`.
    pub sigma_hat: f64,
    /// `E |psi(x(n)) - n gamma| / sqrt(n)` over replicas.
    pub mad: f64,
    pub n: usize,
    pub replicas: usize,
    /// Percentile bootstrap interval for `sigma_hat`.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Plain standard deviation of the normalized tops. Heuristic only: for
    /// mixing (non-independent) operator sequences this quantity need not
    /// converge to `sigma`, while the MAD route does.
    pub naive_sigma_heuristic: f64,
}

fn top_at(spec: &ModelSpec, x0: &StateVector, n: usize, replica: u64) -> f64 {
    let mut stream = forward_stream(spec, replica);
    let mut x = x0.clone();
    for _ in 0..n {
        x = stream.next_operator().apply(&x);
    }
    psi(&x)
}

fn bootstrap_seed(spec: &ModelSpec) -> [u8; 32] {
    crate::models::stream_seed(spec.seed ^ 0xB007_57A9, 0, crate::models::Direction::Forward)
}

/// Mean-absolute-deviation estimate of `sigma` at trajectory length `n`,
/// with a seeded percentile-bootstrap confidence interval.
pub fn estimate_sigma_mad(
    spec: &ModelSpec,
    gamma: f64,
    n: usize,
    replicas: usize,
    exec: Exec,
) -> SigmaEstimate {
    assert!(n >= 1 && replicas >= 2, "estimate_sigma_mad needs n >= 1 and replicas >= 2");
    let sqrt_n = (n as f64).sqrt();
    let centered: Vec<f64> = map_replicas(replicas, exec, |r| {
        let top = top_at(spec, &StateVector::zeros(spec.dim), n, PURPOSE_SIGMA + r);
        (top - n as f64 * gamma) / sqrt_n
    });
    let mad = centered.iter().map(|c| c.abs()).sum::<f64>() / replicas as f64;
    let half_pi = (std::f64::consts::PI / 2.0).sqrt();
    let sigma_hat = mad * half_pi;
    let (_, naive_sd) = sd(&centered);
    let mut rng = ChaCha8Rng::from_seed(bootstrap_seed(spec));
    let mut resampled = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let mut acc = 0.0;
        for _ in 0..replicas {
            let idx = (rng.random::<f64>() * replicas as f64) as usize;
            acc += centered[idx.min(replicas - 1)].abs();
        }
        resampled.push(acc / replicas as f64 * half_pi);
    }
    resampled.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let lo_idx = (0.025 * BOOTSTRAP_RESAMPLES as f64).floor() as usize;
    let hi_idx = ((0.975 * BOOTSTRAP_RESAMPLES as f64).ceil() as usize - 1)
        .min(BOOTSTRAP_RESAMPLES - 1);
    SigmaEstimate {
        sigma_hat,
        mad,
        n,
        replicas,
        ci_low: resampled[lo_idx],
        ci_high: resampled[hi_idx],
        naive_sigma_heuristic: naive_sd,
    }
}

fn sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Kolmogorov-Smirnov distances
// ---------------------------------------------------------------------------

/// One-sample KS distance between the empirical law of `samples` and the
/// reference CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = cdf(*x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((i as f64 / n - f).abs());
    }
    d
}

/// Two-sample KS distance between empirical laws.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    ys.sort_by(|p, q| p.partial_cmp(q).expect("finite samples"));
    let (mut i, mut j) = (0usize, 0usize);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let mut d: f64 = 0.0;
    while i < xs.len() && j < ys.len() {
        // consume every sample equal to the current value in both lists, so
        // ties are reflected in both empirical CDFs before comparing
        let v = xs[i].min(ys[j]);
        while i < xs.len() && xs[i] == v {
            i += 1;
        }
        while j < ys.len() && ys[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

// ---------------------------------------------------------------------------
// CLT verification
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CltVerdict {
    Pass,
    Fail,
    /// `sigma` is indistinguishable from zero; the Gaussian fit was replaced
    /// by a tightness probe (see the embedded report).
    DegenerateRoutedToTightness,
}

#[derive(Clone, Debug, Serialize)]
pub struct CltReport {
    pub n: usize,
    pub samples_per_set: usize,
    pub gamma_used: f64,
    pub sigma_hat: f64,
    pub threshold: f64,
    pub ks_zero: Option<f64>,
    pub ks_alt: Option<f64>,
    pub ks_two_sample: Option<f64>,
    pub verdict: CltVerdict,
    pub x0_alt: Vec<f64>,
    /// Normalized samples `(psi(x(n, x0)) - n gamma) / sqrt(n)`.
    pub samples_zero: Vec<f64>,
    pub samples_alt: Vec<f64>,
    pub tightness: Option<TightnessReport>,
}

/// Monte Carlo check of the Gaussian limit: `M` normalized samples from the
/// origin and from `x0_alt`, each compared against `N(0, sigma_hat^2)`, plus
/// a two-sample comparison (the limit variance does not depend on the
/// initial condition).
///
/// Memory loss is verified up-front by a coupling attempt; a model without
/// it surfaces as a cap-exceeded error. When the fitted `sigma` is
/// indistinguishable from zero the Gaussian fit is meaningless and the
/// verdict routes to a tightness probe instead.
pub fn clt_test(
    spec: &ModelSpec,
    n: usize,
    m: usize,
    x0_alt: &StateVector,
    gamma: Option<f64>,
    cap: usize,
    exec: Exec,
) -> Result<CltReport> {
    assert!(n >= 1 && m >= 2, "clt_test needs n >= 1 and m >= 2");
    assert_eq!(x0_alt.dim(), spec.dim, "clt_test: x0 dimension mismatch");
    forward_coupling_time(spec, PURPOSE_CLT_PRECHECK, cap)?;

    let gamma = match gamma {
        Some(g) => g,
        None => {
            let n_gamma = (4 * n).max(4096);
            estimate_gamma_lln(spec, n_gamma, 200, exec).top.gamma_hat
        }
    };
    let sigma = estimate_sigma_mad(spec, gamma, n, m, exec);

    let sqrt_n = (n as f64).sqrt();
    let zero = StateVector::zeros(spec.dim);
    let samples_zero: Vec<f64> = map_replicas(m, exec, |r| {
        (top_at(spec, &zero, n, PURPOSE_CLT_ZERO + r) - n as f64 * gamma) / sqrt_n
    });
    let samples_alt: Vec<f64> = map_replicas(m, exec, |r| {
        (top_at(spec, x0_alt, n, PURPOSE_CLT_ALT + r) - n as f64 * gamma) / sqrt_n
    });

    if sigma.sigma_hat < sigma_degenerate_threshold(n) {
        let tight = tightness_probe(spec, gamma, &default_tightness_grid(), m.min(400), exec);
        return Ok(CltReport {
            n,
            samples_per_set: m,
            gamma_used: gamma,
            sigma_hat: sigma.sigma_hat,
            threshold: ks_threshold(m),
            ks_zero: None,
            ks_alt: None,
            ks_two_sample: None,
            verdict: CltVerdict::DegenerateRoutedToTightness,
            x0_alt: x0_alt.coords().to_vec(),
            samples_zero,
            samples_alt,
            tightness: Some(tight),
        });
    }

    let normal = Normal::new(0.0, sigma.sigma_hat).expect("positive sigma");
    let ks_zero = ks_one_sample(&samples_zero, |x| normal.cdf(x));
    let ks_alt = ks_one_sample(&samples_alt, |x| normal.cdf(x));
    let ks_two = ks_two_sample(&samples_zero, &samples_alt);
    let threshold = ks_threshold(m);
    let verdict = if ks_zero < threshold && ks_alt < threshold && ks_two < threshold {
        CltVerdict::Pass
    } else {
        CltVerdict::Fail
    };
    Ok(CltReport {
        n,
        samples_per_set: m,
        gamma_used: gamma,
        sigma_hat: sigma.sigma_hat,
        threshold,
        ks_zero: Some(ks_zero),
        ks_alt: Some(ks_alt),
        ks_two_sample: Some(ks_two),
        verdict,
        x0_alt: x0_alt.coords().to_vec(),
        samples_zero,
        samples_alt,
        tightness: None,
    })
}

// ---------------------------------------------------------------------------
// Degeneracy probe
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DegeneracyVerdict {
    Degenerate,
    NonDegenerate,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegeneracyWitness {
    pub theta: String,
    pub atom: String,
    pub theta_prime: String,
    /// `max_i |(theta A theta' 0)_i - (theta theta' 0)_i - gamma|`.
    pub deviation: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct DegeneracyReport {
    pub verdict: DegeneracyVerdict,
    pub witness: Option<DegeneracyWitness>,
    pub depth: usize,
    pub semigroup_size: usize,
    pub rank_one_count: usize,
    pub gamma_used: f64,
    pub tolerance: f64,
    pub note: Option<String>,
}

/// Enumerates distinct products of atoms (modulo translation) up to the
/// given word length. Returns `(elements, truncated)`.
fn enumerate_semigroup(atoms: &[MaxPlusMatrix], depth: usize) -> (Vec<MaxPlusMatrix>, bool) {
    let mut seen = std::collections::HashSet::new();
    let mut elements: Vec<MaxPlusMatrix> = Vec::new();
    let mut level: Vec<MaxPlusMatrix> = Vec::new();
    for d in 1..=depth {
        let candidates: Vec<MaxPlusMatrix> = if d == 1 {
            atoms.to_vec()
        } else {
            let mut next = Vec::with_capacity(level.len() * atoms.len());
            for w in &level {
                for a in atoms {
                    next.push(a.compose(w));
                }
            }
            next
        };
        let mut fresh = Vec::new();
        for c in candidates {
            if seen.insert(translation_key(&c)) {
                if elements.len() + fresh.len() >= SEMIGROUP_CAP {
                    elements.extend(fresh);
                    return (elements, true);
                }
                fresh.push(c);
            }
        }
        if fresh.is_empty() {
            break;
        }
        elements.extend(fresh.iter().cloned());
        level = fresh;
    }
    (elements, false)
}

/// Structural zero-variance test for finite-support models: `sigma = 0`
/// exactly when some rank-1 operator `theta` satisfies
/// `theta A theta' = theta theta' + gamma 1` for every atom `A` and every
/// rank-1 product `theta'`. If one rank-1 element works they all do, so the
/// probe evaluates the identity for every enumerated rank-1 `theta` and
/// cross-checks that they agree.
///
/// `gamma` must be known to much better than the identity tolerance
/// (confidence half-width below `tolerance / 10`), either supplied exactly
/// or estimated with a tight interval.
pub fn degeneracy_probe(
    spec: &ModelSpec,
    depth: usize,
    gamma: f64,
    gamma_ci_halfwidth: f64,
) -> Result<DegeneracyReport> {
    let fs = match &spec.kind {
        ModelKind::FiniteSupportIid(fs) => fs,
        _ => {
            return Err(Error::InvalidArgument(
                "degeneracy probe requires a finite-support i.i.d. model".into(),
            ));
        }
    };
    if gamma_ci_halfwidth >= DEGENERACY_TOLERANCE / 10.0 {
        return Ok(DegeneracyReport {
            verdict: DegeneracyVerdict::Inconclusive,
            witness: None,
            depth,
            semigroup_size: 0,
            rank_one_count: 0,
            gamma_used: gamma,
            tolerance: DEGENERACY_TOLERANCE,
            note: Some(format!(
                "gamma confidence half-width {gamma_ci_halfwidth} exceeds {}; supply a tighter value",
                DEGENERACY_TOLERANCE / 10.0
            )),
        });
    }
    let atoms: Vec<MaxPlusMatrix> = fs.atoms().iter().map(|(m, _)| m.clone()).collect();
    let (elements, truncated) = enumerate_semigroup(&atoms, depth);
    if truncated {
        return Ok(DegeneracyReport {
            verdict: DegeneracyVerdict::Inconclusive,
            witness: None,
            depth,
            semigroup_size: elements.len(),
            rank_one_count: 0,
            gamma_used: gamma,
            tolerance: DEGENERACY_TOLERANCE,
            note: Some(format!("semigroup enumeration exceeded {SEMIGROUP_CAP} elements")),
        });
    }
    let rank_one: Vec<&MaxPlusMatrix> =
        elements.iter().filter(|m| m.is_rank_one(EPS_PROJ)).collect();
    if rank_one.is_empty() {
        return Ok(DegeneracyReport {
            verdict: DegeneracyVerdict::Inconclusive,
            witness: None,
            depth,
            semigroup_size: elements.len(),
            rank_one_count: 0,
            gamma_used: gamma,
            tolerance: DEGENERACY_TOLERANCE,
            note: Some(format!("no rank-1 product found up to depth {depth}")),
        });
    }

    let mut passing_thetas = 0usize;
    let mut first_witness: Option<DegeneracyWitness> = None;
    for theta in &rank_one {
        let mut violation: Option<DegeneracyWitness> = None;
        'theta: for atom in &atoms {
            for theta_prime in &rank_one {
                let base = theta_prime.apply_zero();
                let lhs = theta.apply(&atom.apply(&base));
                let rhs = theta.apply(&base);
                let mut dev: f64 = 0.0;
                for i in 0..spec.dim {
                    dev = dev.max((lhs.get(i) - rhs.get(i) - gamma).abs());
                }
                if dev > DEGENERACY_TOLERANCE {
                    violation = Some(DegeneracyWitness {
                        theta: theta.to_string(),
                        atom: atom.to_string(),
                        theta_prime: theta_prime.to_string(),
                        deviation: dev,
                    });
                    break 'theta;
                }
            }
        }
        match violation {
            None => passing_thetas += 1,
            Some(w) => {
                if first_witness.is_none() {
                    first_witness = Some(w);
                }
            }
        }
    }

    let (verdict, witness, note) = if passing_thetas == rank_one.len() {
        (DegeneracyVerdict::Degenerate, None, None)
    } else if passing_thetas == 0 {
        (DegeneracyVerdict::NonDegenerate, first_witness, None)
    } else {
        (
            DegeneracyVerdict::Inconclusive,
            first_witness,
            Some(
                "identity verdict differs across rank-1 elements; gamma is likely inexact".into(),
            ),
        )
    };
    Ok(DegeneracyReport {
        verdict,
        witness,
        depth,
        semigroup_size: elements.len(),
        rank_one_count: rank_one.len(),
        gamma_used: gamma,
        tolerance: DEGENERACY_TOLERANCE,
        note,
    })
}

// ---------------------------------------------------------------------------
// Tightness probe
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TightnessVerdict {
    TightConsistent,
    Diffusive,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct TightnessPoint {
    pub n: usize,
    /// 95th percentile of `max_i |x_i(n) - n gamma|` over replicas.
    pub p95: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TightnessReport {
    pub points: Vec<TightnessPoint>,
    pub verdict: TightnessVerdict,
    /// Least-squares slope of `log p95` against `log n` (when computable).
    pub exponent: Option<f64>,
    pub gamma_used: f64,
    pub replicas: usize,
}

pub fn default_tightness_grid() -> Vec<usize> {
    (6..=13).map(|k| 1usize << k).collect()
}

/// Probes whether the centered sequence `x(n) - n gamma 1` stays bounded
/// (tight) or spreads like `sqrt(n)` (diffusive): the 95th percentile of the
/// centered sup-norm is tracked across the grid; bounded means no growth
/// beyond twice its median, diffusive means a fitted growth exponent in
/// `[0.4, 0.6]`.
pub fn tightness_probe(
    spec: &ModelSpec,
    gamma: f64,
    n_grid: &[usize],
    m: usize,
    exec: Exec,
) -> TightnessReport {
    assert!(!n_grid.is_empty() && m >= 2, "tightness_probe needs a grid and replicas >= 2");
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let max_n = *grid.last().expect("nonempty");

    // one trajectory per replica, observed at every grid point
    let per_replica: Vec<Vec<f64>> = map_replicas(m, exec, |r| {
        let mut stream = forward_stream(spec, PURPOSE_TIGHTNESS + r);
        let mut x = StateVector::zeros(spec.dim);
        let mut out = Vec::with_capacity(grid.len());
        let mut next_idx = 0;
        for k in 1..=max_n {
            x = stream.next_operator().apply(&x);
            if k == grid[next_idx] {
                let drift = k as f64 * gamma;
                let dev = x.coords().iter().fold(0.0f64, |acc, c| acc.max((c - drift).abs()));
                out.push(dev);
                next_idx += 1;
                if next_idx == grid.len() {
                    break;
                }
            }
        }
        out
    });

    let mut points = Vec::with_capacity(grid.len());
    for (gi, &n) in grid.iter().enumerate() {
        let mut devs: Vec<f64> = per_replica.iter().map(|row| row[gi]).collect();
        devs.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let idx = ((0.95 * m as f64).ceil() as usize).clamp(1, m) - 1;
        points.push(TightnessPoint { n, p95: devs[idx] });
    }

    let mut p95s: Vec<f64> = points.iter().map(|p| p.p95).collect();
    let max_p95 = p95s.iter().cloned().fold(0.0f64, f64::max);
    p95s.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let median = if p95s.len() % 2 == 1 {
        p95s[p95s.len() / 2]
    } else {
        0.5 * (p95s[p95s.len() / 2 - 1] + p95s[p95s.len() / 2])
    };

    let exponent = fit_log_slope(&points);
    let verdict = if max_p95 <= 2.0 * median + 1e-12 {
        TightnessVerdict::TightConsistent
    } else {
        match exponent {
            Some(s) if (0.4..=0.6).contains(&s) => TightnessVerdict::Diffusive,
            _ => TightnessVerdict::Inconclusive,
        }
    };
    TightnessReport { points, verdict, exponent, gamma_used: gamma, replicas: m }
}

fn fit_log_slope(points: &[TightnessPoint]) -> Option<f64> {
    let data: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.p95 > 0.0)
        .map(|p| ((p.n as f64).ln(), p.p95.ln()))
        .collect();
    if data.len() < 2 {
        return None;
    }
    let n = data.len() as f64;
    let mx = data.iter().map(|d| d.0).sum::<f64>() / n;
    let my = data.iter().map(|d| d.1).sum::<f64>() / n;
    let sxx: f64 = data.iter().map(|d| (d.0 - mx) * (d.0 - mx)).sum();
    let sxy: f64 = data.iter().map(|d| (d.0 - mx) * (d.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(sxy / sxx)
}

// ---------------------------------------------------------------------------
// Flat CSV summaries
// ---------------------------------------------------------------------------

/// Header of the one-row-per-estimator-run CSV summary.
pub const CSV_HEADER: &str = "model,method,n,m,estimate,stderr,verdict";

fn csv_row(
    model: &str,
    method: &str,
    n: Option<usize>,
    m: usize,
    estimate: f64,
    stderr: Option<f64>,
    verdict: &str,
) -> String {
    let n_str = n.map(|v| v.to_string()).unwrap_or_default();
    let se_str = stderr.map(|v| v.to_string()).unwrap_or_default();
    format!("{model},{method},{n_str},{m},{estimate},{se_str},{verdict}\n")
}

impl LlnGammaReport {
    pub fn csv_rows(&self, model: &str) -> String {
        let warn = if self.agreement_warning { "top_bottom_disagree" } else { "" };
        let mut out = csv_row(
            model,
            "lln_top",
            self.top.n,
            self.top.samples,
            self.top.gamma_hat,
            Some(self.top.stderr),
            warn,
        );
        out.push_str(&csv_row(
            model,
            "lln_bottom",
            self.bottom.n,
            self.bottom.samples,
            self.bottom.gamma_hat,
            Some(self.bottom.stderr),
            warn,
        ));
        out
    }
}

impl GammaEstimate {
    pub fn csv_rows(&self, model: &str) -> String {
        let method = match self.method {
            GammaMethod::LlnTop => "lln_top",
            GammaMethod::LlnBottom => "lln_bottom",
            GammaMethod::CoupledXi => "coupled_xi",
        };
        csv_row(model, method, self.n, self.samples, self.gamma_hat, Some(self.stderr), "")
    }
}

impl SigmaEstimate {
    pub fn csv_rows(&self, model: &str) -> String {
        let half_width = 0.5 * (self.ci_high - self.ci_low);
        csv_row(model, "sigma_mad", Some(self.n), self.replicas, self.sigma_hat, Some(half_width), "")
    }
}

impl CltReport {
    pub fn csv_rows(&self, model: &str) -> String {
        let verdict = match self.verdict {
            CltVerdict::Pass => "pass",
            CltVerdict::Fail => "fail",
            CltVerdict::DegenerateRoutedToTightness => "degenerate_routed_to_tightness",
        };
        csv_row(
            model,
            "clt_ks",
            Some(self.n),
            self.samples_per_set,
            self.ks_zero.unwrap_or(0.0),
            None,
            verdict,
        )
    }
}

impl DegeneracyReport {
    pub fn csv_rows(&self, model: &str) -> String {
        let verdict = match self.verdict {
            DegeneracyVerdict::Degenerate => "degenerate",
            DegeneracyVerdict::NonDegenerate => "non_degenerate",
            DegeneracyVerdict::Inconclusive => "inconclusive",
        };
        csv_row(model, "degeneracy", Some(self.depth), self.semigroup_size, self.gamma_used, None, verdict)
    }
}

impl TightnessReport {
    pub fn csv_rows(&self, model: &str) -> String {
        let verdict = match self.verdict {
            TightnessVerdict::TightConsistent => "tight_consistent",
            TightnessVerdict::Diffusive => "diffusive",
            TightnessVerdict::Inconclusive => "inconclusive",
        };
        let n_max = self.points.last().map(|p| p.n);
        csv_row(model, "tightness", n_max, self.replicas, self.exponent.unwrap_or(0.0), None, verdict)
    }
}
