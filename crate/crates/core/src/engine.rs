//! Forward simulation, the subadditive top process, memory-loss detection
//! along operator products, and backward coupling to the stationary regime.
//!
//! Indexing convention: a stream's first drawn operator is `A_0` and
//! operators apply first-drawn-first, so `x(n) = A_{n-1} ... A_0 x(0)`.
//! Coupling-time products follow the convention that the running product
//! starts at `A_1`: the forward coupling time is the smallest `n` with
//! `rank(A_{n-1} ... A_1) = 1` (so `n - 1` factors), and the backward
//! horizon is the smallest `n` with `rank(A_{-1} ... A_{-n}) = 1`.

use serde::Serialize;
use std::collections::HashSet;

use crate::algebra::{
    projective_norm, psi, MaxPlusMatrix, ProjectivePoint, StateVector, EPS_PROJ,
};
use crate::error::{Error, Result};
use crate::exec::{map_replicas, Exec};
use crate::models::{backward_stream, forward_stream, FiniteSupport, ModelKind, ModelSpec};

/// Default cap on coupling searches. Under the memory loss property the
/// coupling time has geometric tails, so this is conservative at desk scale.
pub const DEFAULT_CAP: usize = 10_000;

/// Above this many steps, trajectories switch to streaming mode and record
/// only the top process and the cocycle increments.
pub const STREAMING_THRESHOLD: usize = 1_000_000;

/// Cap on distinct elements enumerated by the exact memory-loss search.
pub const SEMIGROUP_CAP: usize = 100_000;

/// Whether a run keeps the full state sequence or only scalar summaries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordMode {
    Record,
    Stream,
}

/// Recorded orbit of the recursion `x(k+1) = A_k x(k)`.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub x0: StateVector,
    /// `x(0..=n)` in recording mode, `None` in streaming mode.
    pub states: Option<Vec<StateVector>>,
    /// Final state `x(n)` (kept in both modes).
    pub final_state: StateVector,
    /// `psi(x(k))` for `k = 0..=n`.
    pub tops: Vec<f64>,
    /// Cocycle increments `xi(A_k, x(k)-bar) = psi(x(k+1)) - psi(x(k))`.
    pub xi: Vec<f64>,
    pub replica: u64,
    pub model_kind: &'static str,
    pub seed: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// CSV export with columns `step,psi,xi,x_1..x_d`; recording mode only.
    pub fn to_csv(&self) -> Result<String> {
        let states = self.states.as_ref().ok_or_else(|| {
            Error::InvalidArgument("trajectory export requires recording mode".into())
        })?;
        let d = self.x0.dim();
        let mut out = String::from("step,psi,xi");
        for j in 1..=d {
            out.push_str(&format!(",x_{j}"));
        }
        out.push('\n');
        for (k, state) in states.iter().enumerate() {
            let xi = if k < self.xi.len() { format!("{}", self.xi[k]) } else { String::new() };
            out.push_str(&format!("{k},{},{xi}", self.tops[k]));
            for c in state.coords() {
                out.push_str(&format!(",{c}"));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

/// Runs the recursion for `n` steps from `x0`, recording full states up to
/// [`STREAMING_THRESHOLD`] steps and streaming (psi and xi only) beyond.
pub fn run_srs(spec: &ModelSpec, x0: &StateVector, n: usize, replica: u64) -> Trajectory {
    let mode = if n > STREAMING_THRESHOLD { RecordMode::Stream } else { RecordMode::Record };
    run_srs_mode(spec, x0, n, replica, mode)
}

pub fn run_srs_mode(
    spec: &ModelSpec,
    x0: &StateVector,
    n: usize,
    replica: u64,
    mode: RecordMode,
) -> Trajectory {
    assert_eq!(x0.dim(), spec.dim, "run_srs: x0 dimension {} vs model {}", x0.dim(), spec.dim);
    let mut stream = forward_stream(spec, replica);
    let mut x = x0.clone();
    let mut tops = Vec::with_capacity(n + 1);
    let mut xi = Vec::with_capacity(n);
    tops.push(psi(&x));
    let mut states = match mode {
        RecordMode::Record => {
            let mut s = Vec::with_capacity(n + 1);
            s.push(x.clone());
            Some(s)
        }
        RecordMode::Stream => None,
    };
    for _ in 0..n {
        let a = stream.next_operator();
        let next = a.apply(&x);
        let top = psi(&next);
        xi.push(top - psi(&x));
        tops.push(top);
        if let Some(s) = states.as_mut() {
            s.push(next.clone());
        }
        x = next;
    }
    Trajectory {
        x0: x0.clone(),
        states,
        final_state: x,
        tops,
        xi,
        replica,
        model_kind: spec.kind_name(),
        seed: spec.seed,
    }
}

/// Subadditive top process `x_{st} = max_i (A_{t-1} ... A_s 0)_i` on the
/// replica's stream. Satisfies `x_{su} <= x_{st} + x_{tu}` for `s < t < u`.
pub fn top_process(spec: &ModelSpec, s: usize, t: usize, replica: u64) -> Result<f64> {
    if s >= t {
        return Err(Error::InvalidArgument(format!("top process needs s < t, got s={s}, t={t}")));
    }
    let mut stream = forward_stream(spec, replica);
    let mut x = StateVector::zeros(spec.dim);
    for k in 0..t {
        let a = stream.next_operator();
        if k >= s {
            x = a.apply(&x);
        }
    }
    Ok(psi(&x))
}

/// Smallest `n <= cap` such that `A_{n-1} ... A_1` has rank 1 on the
/// replica's forward stream (`A_0` is consumed but not part of the product).
/// Rank 1 is absorbing under further multiplication, so the product is
/// dropped as soon as it certifies.
pub fn forward_coupling_time(spec: &ModelSpec, replica: u64, cap: usize) -> Result<usize> {
    let mut stream = forward_stream(spec, replica);
    let _ = stream.next_operator();
    let mut product: Option<MaxPlusMatrix> = None;
    for n in 2..=cap {
        let a = stream.next_operator();
        let p = match product.take() {
            None => a,
            Some(prev) => a.compose(&prev),
        };
        if p.is_rank_one(EPS_PROJ) {
            return Ok(n);
        }
        product = Some(p);
    }
    Err(Error::CapExceeded { cap })
}

/// Outcome of coupling a backward stream: the horizon `N`, the stationary
/// projective state `Y = (A_{-1} ... A_{-N} 0)-bar`, and the per-factor
/// projective norms `|A_{-k} 0|_P` for `k <= N`.
#[derive(Clone, Debug)]
pub struct BackwardCoupling {
    pub n_backward: usize,
    pub y: ProjectivePoint,
    pub partial_norms: Vec<f64>,
}

/// Runs the backward coupling on an already-constructed backward stream,
/// leaving the stream positioned for forward continuation draws.
pub fn backward_couple_stream(
    stream: &mut crate::models::OperatorStream<'_>,
    cap: usize,
) -> Result<BackwardCoupling> {
    let mut product: Option<MaxPlusMatrix> = None;
    let mut partial_norms = Vec::new();
    for n in 1..=cap {
        let a = stream.next_operator();
        partial_norms.push(projective_norm(&a.apply_zero()));
        // New factors are older operators, so they multiply on the right:
        // after n draws the product is A_{-1} ... A_{-n}.
        let p = match product.take() {
            None => a,
            Some(prev) => prev.compose(&a),
        };
        if p.is_rank_one(EPS_PROJ) {
            let y = ProjectivePoint::from_vector(&p.apply_zero());
            return Ok(BackwardCoupling { n_backward: n, y, partial_norms });
        }
        product = Some(p);
    }
    Err(Error::CapExceeded { cap })
}

/// One exact sample of the stationary regime plus the forward coupling data.
#[derive(Clone, Debug, Serialize)]
pub struct CouplingResult {
    /// Backward coupling horizon `N`: smallest `n` with
    /// `rank(A_{-1} ... A_{-n}) = 1`.
    pub n_backward: usize,
    /// Representative of the stationary projective state (top coordinate 0).
    pub y_rep: Vec<f64>,
    /// Forward coupling time `R` on an independent forward stream.
    pub r_forward: usize,
    /// Coboundary sample `Z = psi(A_R ... A_0 0) - psi(A_R ... A_1 0)`.
    pub z: f64,
    /// `|A_{-k} 0|_P` for `k <= N`.
    pub partial_norms: Vec<f64>,
}

impl CouplingResult {
    pub fn y(&self) -> ProjectivePoint {
        ProjectivePoint::from_vector(
            &StateVector::new(self.y_rep.clone()).expect("finite representative"),
        )
    }
}

/// Backward-couples the replica's stream and computes the forward coupling
/// time `R` and the coboundary sample `Z` on the replica's independent
/// forward stream.
pub fn backward_couple(spec: &ModelSpec, replica: u64, cap: usize) -> Result<CouplingResult> {
    let mut bs = backward_stream(spec, replica);
    let coupled = backward_couple_stream(&mut bs, cap)?;
    let (r_forward, z) = forward_coboundary_sample(spec, replica, cap)?;
    Ok(CouplingResult {
        n_backward: coupled.n_backward,
        y_rep: coupled.y.rep().coords().to_vec(),
        r_forward,
        z,
        partial_norms: coupled.partial_norms,
    })
}

/// Tracks the two trajectories `A_{n-1} ... A_0 0` and `A_{n-1} ... A_1 0`
/// until the product starting at `A_1` has rank 1 at `n = R`, then applies
/// one more operator and returns `(R, psi(u) - psi(v))`.
fn forward_coboundary_sample(spec: &ModelSpec, replica: u64, cap: usize) -> Result<(usize, f64)> {
    let mut stream = forward_stream(spec, replica);
    let a0 = stream.next_operator();
    let mut with_a0 = a0.apply_zero();
    let mut without_a0 = StateVector::zeros(spec.dim);
    let mut product: Option<MaxPlusMatrix> = None;
    for n in 2..=cap {
        let a = stream.next_operator();
        with_a0 = a.apply(&with_a0);
        without_a0 = a.apply(&without_a0);
        let p = match product.take() {
            None => a,
            Some(prev) => a.compose(&prev),
        };
        if p.is_rank_one(EPS_PROJ) {
            let a_r = stream.next_operator();
            with_a0 = a_r.apply(&with_a0);
            without_a0 = a_r.apply(&without_a0);
            return Ok((n, psi(&with_a0) - psi(&without_a0)));
        }
        product = Some(p);
    }
    Err(Error::CapExceeded { cap })
}

// ---------------------------------------------------------------------------
// Memory loss probing
// ---------------------------------------------------------------------------

/// Monte Carlo estimate of `P(rank(A_N ... A_1) = 1)` at one depth.
#[derive(Clone, Debug, Serialize)]
pub struct MlpEstimate {
    pub depth: usize,
    pub successes: u64,
    pub trials: u64,
    pub p_hat: f64,
    pub wilson_low: f64,
    pub wilson_high: f64,
}

/// Result of the exact product search over finite-support atoms.
#[derive(Clone, Debug, Serialize)]
pub struct ExactSearch {
    /// Smallest word length whose product set contains a rank-1 element.
    pub rank_one_depth: Option<usize>,
    pub distinct_products: usize,
    pub truncated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct MlpReport {
    pub horizon: usize,
    pub trials: u64,
    pub estimates: Vec<MlpEstimate>,
    /// True when some Wilson lower bound is positive (at 95% confidence).
    pub mlp_detected: bool,
    /// Exhaustive certificate for finite-support models: a rank-1 product of
    /// atoms has positive probability, so detection is certain.
    pub exact: Option<ExactSearch>,
}

/// 95% Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = 1.96f64;
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = p + z2 / (2.0 * n);
    let margin = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    (((center - margin) / denom).max(0.0), ((center + margin) / denom).min(1.0))
}

/// Estimates `P(rank(A_N ... A_1) = 1)` for every `N <= horizon` by Monte
/// Carlo over `trials` independent streams (rank 1 is absorbing, so each
/// trial records the first certifying depth). For finite-support models an
/// exhaustive breadth-first search over atom products, deduplicated modulo
/// translation, additionally reports a certain detection when a rank-1
/// product exists.
pub fn mlp_probe(spec: &ModelSpec, horizon: usize, trials: usize, exec: Exec) -> MlpReport {
    let first_depth: Vec<Option<usize>> = map_replicas(trials, exec, |r| {
        let mut stream = forward_stream(spec, crate::exec::PURPOSE_MLP + r);
        let mut product: Option<MaxPlusMatrix> = None;
        for depth in 1..=horizon {
            let a = stream.next_operator();
            let p = match product.take() {
                None => a,
                Some(prev) => a.compose(&prev),
            };
            if p.is_rank_one(EPS_PROJ) {
                return Some(depth);
            }
            product = Some(p);
        }
        None
    });

    let mut estimates = Vec::with_capacity(horizon);
    for depth in 1..=horizon {
        let successes =
            first_depth.iter().filter(|d| matches!(d, Some(k) if *k <= depth)).count() as u64;
        let trials_u = trials as u64;
        let (lo, hi) = wilson_interval(successes, trials_u);
        estimates.push(MlpEstimate {
            depth,
            successes,
            trials: trials_u,
            p_hat: successes as f64 / trials as f64,
            wilson_low: lo,
            wilson_high: hi,
        });
    }
    let mut mlp_detected = estimates.iter().any(|e| e.wilson_low > 0.0);

    let exact = match &spec.kind {
        ModelKind::FiniteSupportIid(fs) => {
            let search = exact_mlp_search(fs, horizon);
            if search.rank_one_depth.is_some() {
                mlp_detected = true;
            }
            Some(search)
        }
        _ => None,
    };

    MlpReport { horizon, trials: trials as u64, estimates, mlp_detected, exact }
}

/// Canonical key modulo translation: shift so the first finite entry is 0,
/// then take bit patterns.
pub(crate) fn translation_key(m: &MaxPlusMatrix) -> Vec<u64> {
    let d = m.dim();
    let mut base = 0.0;
    'outer: for i in 0..d {
        for j in 0..d {
            let v = m.get(i, j);
            if v.is_finite() {
                base = v;
                break 'outer;
            }
        }
    }
    let mut key = Vec::with_capacity(d * d);
    for i in 0..d {
        for j in 0..d {
            let v = m.get(i, j);
            key.push(if v.is_finite() { (v - base).to_bits() } else { u64::MAX });
        }
    }
    key
}

fn exact_mlp_search(fs: &FiniteSupport, horizon: usize) -> ExactSearch {
    let atoms: Vec<&MaxPlusMatrix> = fs.atoms().iter().map(|(m, _)| m).collect();
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut level: Vec<MaxPlusMatrix> = Vec::new();
    for depth in 1..=horizon {
        let candidates: Vec<MaxPlusMatrix> = if depth == 1 {
            atoms.iter().map(|m| (*m).clone()).collect()
        } else {
            let mut next = Vec::with_capacity(level.len() * atoms.len());
            for w in &level {
                for a in &atoms {
                    next.push(a.compose(w));
                }
            }
            next
        };
        let mut fresh = Vec::new();
        for c in candidates {
            if c.is_rank_one(EPS_PROJ) {
                return ExactSearch {
                    rank_one_depth: Some(depth),
                    distinct_products: seen.len(),
                    truncated: false,
                };
            }
            if seen.insert(translation_key(&c)) {
                fresh.push(c);
            }
            if seen.len() > SEMIGROUP_CAP {
                return ExactSearch {
                    rank_one_depth: None,
                    distinct_products: seen.len(),
                    truncated: true,
                };
            }
        }
        if fresh.is_empty() {
            break; // no new products; deeper words repeat earlier classes
        }
        level = fresh;
    }
    ExactSearch { rank_one_depth: None, distinct_products: seen.len(), truncated: false }
}
