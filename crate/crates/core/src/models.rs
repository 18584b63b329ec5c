//! Stationary random operator models and reproducible operator streams.
//!
//! A [`ModelSpec`] describes the law of a stationary sequence of random
//! max-plus operators: finite-support i.i.d. draws, entrywise i.i.d. entries
//! on a fixed support pattern, Markov-modulated regime switching, or the
//! three-station assembly system (two parts prepared in parallel, shipped,
//! and assembled; the assembly duration of the previous part carries over,
//! making the sequence 1-dependent).
//!
//! Streams are deterministic functions of `(model, direction, replica id)`.
//! Seeds derive from the master seed through a splitmix64 chain, so replicas
//! can run concurrently without a shared generator and reproduce bitwise.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use crate::algebra::{MaxPlusMatrix, NEG_INF};
use crate::error::{Error, Result};

/// Tolerance for probability vectors and stochastic matrix rows summing to 1.
pub const PROB_SUM_TOLERANCE: f64 = 1e-12;
/// Sup-norm tolerance for the stationary distribution iteration.
pub const PI_TOLERANCE: f64 = 1e-13;
/// Iteration cap for the stationary distribution solve.
pub const PI_MAX_ITERS: usize = 100_000;

/// Scalar duration/dater distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Dist {
    /// Uniform on `[a, b)` (degenerate when `a == b`).
    Uniform(f64, f64),
    /// Gaussian with mean and standard deviation.
    Normal(f64, f64),
}

impl Dist {
    fn validate(&self) -> Result<()> {
        match *self {
            Dist::Uniform(a, b) => {
                if !a.is_finite() || !b.is_finite() || a > b {
                    return Err(Error::InvalidModel(format!("bad uniform bounds [{a}, {b}]")));
                }
            }
            Dist::Normal(mu, s) => {
                if !mu.is_finite() || !s.is_finite() || s < 0.0 {
                    return Err(Error::InvalidModel(format!("bad normal parameters ({mu}, {s})")));
                }
            }
        }
        Ok(())
    }

    /// True when every draw is `>= 0`, as required for durations.
    fn nonnegative(&self) -> bool {
        matches!(*self, Dist::Uniform(a, _) if a >= 0.0)
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match *self {
            Dist::Uniform(a, b) => {
                if a == b {
                    a
                } else {
                    a + (b - a) * rng.random::<f64>()
                }
            }
            Dist::Normal(mu, s) => {
                if s == 0.0 {
                    mu
                } else {
                    Normal::new(mu, s).expect("validated parameters").sample(rng)
                }
            }
        }
    }
}

/// Finitely supported atom law: matrices with strictly positive
/// probabilities summing to 1.
#[derive(Clone, Debug)]
pub struct FiniteSupport {
    atoms: Vec<(MaxPlusMatrix, f64)>,
}

impl FiniteSupport {
    pub fn new(atoms: Vec<(MaxPlusMatrix, f64)>, dim: usize) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidModel("finite support needs at least one atom".into()));
        }
        let mut sum = 0.0;
        for (m, p) in &atoms {
            if m.dim() != dim {
                return Err(Error::InvalidModel(format!(
                    "atom dimension {} does not match model dimension {dim}",
                    m.dim()
                )));
            }
            if !p.is_finite() || *p <= 0.0 {
                return Err(Error::InvalidModel(format!("atom probability {p} must be > 0")));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(Error::InvalidModel(format!(
                "probabilities sum to {sum}, expected 1 within {PROB_SUM_TOLERANCE}"
            )));
        }
        Ok(Self { atoms })
    }

    pub fn atoms(&self) -> &[(MaxPlusMatrix, f64)] {
        &self.atoms
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> MaxPlusMatrix {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (m, p) in &self.atoms {
            acc += p;
            if u < acc {
                return m.clone();
            }
        }
        self.atoms.last().expect("nonempty").0.clone()
    }
}

/// Fixed `-inf` support pattern with an independent scalar distribution per
/// finite entry. Entries are drawn in row-major order.
#[derive(Clone, Debug)]
pub struct EntrywisePattern {
    entries: Vec<Vec<Option<Dist>>>,
}

impl EntrywisePattern {
    pub fn new(entries: Vec<Vec<Option<Dist>>>, dim: usize) -> Result<Self> {
        if entries.len() != dim {
            return Err(Error::InvalidModel(format!(
                "pattern has {} rows, expected {dim}",
                entries.len()
            )));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidModel(format!(
                    "pattern row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            if row.iter().all(Option::is_none) {
                return Err(Error::InvalidModel(format!("pattern row {i} is identically -inf")));
            }
            for d in row.iter().flatten() {
                d.validate()?;
            }
        }
        Ok(Self { entries })
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> MaxPlusMatrix {
        let rows = self
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|cell| match cell {
                        Some(d) => d.sample(rng),
                        None => NEG_INF,
                    })
                    .collect()
            })
            .collect();
        MaxPlusMatrix::from_rows(rows).expect("validated pattern")
    }
}

/// Per-regime generator of a Markov-modulated model.
#[derive(Clone, Debug)]
pub enum RegimeGenerator {
    FiniteSupport(FiniteSupport),
    Entrywise(EntrywisePattern),
}

impl RegimeGenerator {
    fn draw(&self, rng: &mut ChaCha8Rng) -> MaxPlusMatrix {
        match self {
            RegimeGenerator::FiniteSupport(fs) => fs.draw(rng),
            RegimeGenerator::Entrywise(pat) => pat.draw(rng),
        }
    }
}

/// Irreducible regime chain with its stationary distribution and the
/// time-reversed kernel `Phat[i][j] = pi[j] P[j][i] / pi[i]` used for
/// backward sampling.
#[derive(Clone, Debug)]
pub struct MarkovModel {
    transition: Vec<Vec<f64>>,
    stationary: Vec<f64>,
    reversed: Vec<Vec<f64>>,
    regimes: Vec<RegimeGenerator>,
}

impl MarkovModel {
    pub fn new(transition: Vec<Vec<f64>>, regimes: Vec<RegimeGenerator>) -> Result<Self> {
        let r = transition.len();
        if r == 0 || regimes.len() != r {
            return Err(Error::InvalidModel(format!(
                "got {} regimes for a {r}-state transition matrix",
                regimes.len()
            )));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != r {
                return Err(Error::InvalidModel(format!("transition row {i} is not length {r}")));
            }
            let mut sum = 0.0;
            for &p in row {
                if !p.is_finite() || p < 0.0 {
                    return Err(Error::InvalidModel(format!("transition entry {p} out of range")));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::InvalidModel(format!(
                    "transition row {i} sums to {sum}, not row-stochastic"
                )));
            }
        }
        if !is_irreducible(&transition) {
            return Err(Error::InvalidModel(
                "transition matrix is reducible; the stationary distribution is not unique".into(),
            ));
        }
        let stationary = stationary_distribution(&transition)?;
        let mut reversed = vec![vec![0.0; r]; r];
        for i in 0..r {
            for j in 0..r {
                reversed[i][j] = stationary[j] * transition[j][i] / stationary[i];
            }
        }
        Ok(Self { transition, stationary, reversed, regimes })
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn stationary(&self) -> &[f64] {
        &self.stationary
    }

    pub fn reversed(&self) -> &[Vec<f64>] {
        &self.reversed
    }

    pub fn regime_count(&self) -> usize {
        self.regimes.len()
    }

    /// Period of the regime chain (1 means aperiodic).
    pub fn period(&self) -> u64 {
        chain_period(&self.transition)
    }
}

/// Parameters of the assembly-system model: preparation times `a1`, `a2`,
/// assembly time `a3` and shipping times `t1`, `t2`, all nonnegative.
#[derive(Clone, Debug)]
pub struct Example1Params {
    pub a1: Dist,
    pub a2: Dist,
    pub a3: Dist,
    pub t1: Dist,
    pub t2: Dist,
}

impl Example1Params {
    pub fn new(a1: Dist, a2: Dist, a3: Dist, t1: Dist, t2: Dist) -> Result<Self> {
        for (name, d) in [("a1", a1), ("a2", a2), ("a3", a3), ("t1", t1), ("t2", t2)] {
            d.validate()?;
            if !d.nonnegative() {
                return Err(Error::InvalidModel(format!(
                    "duration {name} must have nonnegative support; use uniform with lower bound >= 0"
                )));
            }
        }
        Ok(Self { a1, a2, a3, t1, t2 })
    }
}

/// Generator kind of a model.
#[derive(Clone, Debug)]
pub enum ModelKind {
    FiniteSupportIid(FiniteSupport),
    EntrywiseIid(EntrywisePattern),
    MarkovModulated(MarkovModel),
    Example1(Example1Params),
}

/// Description of a stationary random operator sequence: dimension,
/// generator kind and master seed. Immutable and freely shareable across
/// threads; streams derived from it own all mutable state.
#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub dim: usize,
    pub seed: u64,
    pub kind: ModelKind,
}

impl ModelSpec {
    pub fn new(dim: usize, seed: u64, kind: ModelKind) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if matches!(kind, ModelKind::Example1(_)) && dim != 3 {
            return Err(Error::InvalidModel(format!("example1 requires dim = 3, got {dim}")));
        }
        Ok(Self { dim, seed, kind })
    }

    /// Single deterministic operator, drawn with probability 1.
    pub fn single_atom(seed: u64, matrix: MaxPlusMatrix) -> Self {
        let dim = matrix.dim();
        let kind = ModelKind::FiniteSupportIid(
            FiniteSupport::new(vec![(matrix, 1.0)], dim).expect("valid single atom"),
        );
        Self { dim, seed, kind }
    }

    pub fn finite_support(seed: u64, atoms: Vec<(MaxPlusMatrix, f64)>) -> Result<Self> {
        let dim = atoms
            .first()
            .map(|(m, _)| m.dim())
            .ok_or_else(|| Error::InvalidModel("finite support needs at least one atom".into()))?;
        Ok(Self { dim, seed, kind: ModelKind::FiniteSupportIid(FiniteSupport::new(atoms, dim)?) })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::FiniteSupportIid(_) => "finite_support_iid",
            ModelKind::EntrywiseIid(_) => "entrywise_iid",
            ModelKind::MarkovModulated(_) => "markov_modulated",
            ModelKind::Example1(_) => "example1",
        }
    }
}

/// Assembly-system operator for one step:
///
/// ```text
/// [ a1        -inf       a3                     ]
/// [ -inf      a2         a3                     ]
/// [ a1 + t1   a2 + t2    max(t1, t2) + a3_prev  ]
/// ```
///
/// The bottom-right entry uses the previous step's assembly duration, which
/// is why streams carry `a3` across steps.
pub fn example1_matrix(
    a1: f64,
    a2: f64,
    a3_prev: f64,
    a3: f64,
    t1: f64,
    t2: f64,
) -> Result<MaxPlusMatrix> {
    for (name, v) in [("a1", a1), ("a2", a2), ("a3_prev", a3_prev), ("a3", a3), ("t1", t1), ("t2", t2)] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::InvalidArgument(format!("duration {name} = {v} must be >= 0")));
        }
    }
    MaxPlusMatrix::from_rows(vec![
        vec![a1, NEG_INF, a3],
        vec![NEG_INF, a2, a3],
        vec![a1 + t1, a2 + t2, t1.max(t2) + a3_prev],
    ])
}

// ---------------------------------------------------------------------------
// Mixing classification
// ---------------------------------------------------------------------------

/// Qualitative dependence class of the operator sequence. No numerical
/// mixing-coefficient estimation is performed; classes follow from the
/// generator structure alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MixingKind {
    Independent,
    MDependent,
    GeometricPhiMixing,
    Unclassified,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixingClass {
    pub class: MixingKind,
    pub description: String,
}

/// Analytic mixing classification of a model.
pub fn mixing_class(spec: &ModelSpec) -> MixingClass {
    match &spec.kind {
        ModelKind::FiniteSupportIid(_) | ModelKind::EntrywiseIid(_) => MixingClass {
            class: MixingKind::Independent,
            description: "independent draws: phi_n = 0 for n >= 1 (hypothesis A holds when A_1 0 \
                          is square-integrable)"
                .into(),
        },
        ModelKind::Example1(_) => MixingClass {
            class: MixingKind::MDependent,
            description: "1-dependent: phi_n = 0 for n >= 2".into(),
        },
        ModelKind::MarkovModulated(mk) => {
            if mk.period() == 1 {
                MixingClass {
                    class: MixingKind::GeometricPhiMixing,
                    description: "irreducible aperiodic modulation: geometric phi-mixing".into(),
                }
            } else {
                MixingClass {
                    class: MixingKind::Unclassified,
                    description: format!(
                        "unclassified: modulation chain is periodic with period {}",
                        mk.period()
                    ),
                }
            }
        }
    }
}

fn is_irreducible(p: &[Vec<f64>]) -> bool {
    let r = p.len();
    let reach = |transpose: bool| {
        let mut seen = vec![false; r];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for v in 0..r {
                let w = if transpose { p[v][u] } else { p[u][v] };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(false) && reach(true)
}

/// Solves `pi P = pi` by power iteration on the half-lazy kernel
/// `(P + I) / 2`, which converges for every irreducible chain (including
/// periodic ones) and has the same stationary distribution.
fn stationary_distribution(p: &[Vec<f64>]) -> Result<Vec<f64>> {
    let r = p.len();
    let mut pi = vec![1.0 / r as f64; r];
    for _ in 0..PI_MAX_ITERS {
        let mut next = vec![0.0; r];
        for i in 0..r {
            for j in 0..r {
                next[j] += pi[i] * p[i][j];
            }
        }
        for j in 0..r {
            next[j] = 0.5 * (next[j] + pi[j]);
        }
        let total: f64 = next.iter().sum();
        for v in &mut next {
            *v /= total;
        }
        let delta = pi
            .iter()
            .zip(&next)
            .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
        pi = next;
        if delta <= PI_TOLERANCE {
            return Ok(pi);
        }
    }
    Err(Error::InvalidModel(format!(
        "stationary distribution iteration did not converge within {PI_MAX_ITERS} steps"
    )))
}

fn chain_period(p: &[Vec<f64>]) -> u64 {
    let r = p.len();
    let mut depth = vec![usize::MAX; r];
    let mut queue = std::collections::VecDeque::from([0usize]);
    depth[0] = 0;
    while let Some(u) = queue.pop_front() {
        for v in 0..r {
            if p[u][v] > 0.0 && depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g: u64 = 0;
    for u in 0..r {
        for v in 0..r {
            if p[u][v] > 0.0 {
                let diff = (depth[u] as i64 + 1 - depth[v] as i64).unsigned_abs();
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

// ---------------------------------------------------------------------------
// Operator streams
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_seed(master: u64, replica: u64, direction: Direction) -> [u8; 32] {
    let tag: u64 = match direction {
        Direction::Forward => 0x464f_5257_4152_4421,
        Direction::Backward => 0x4241_434b_5741_5244,
    };
    let mut s = master;
    let a = splitmix64(&mut s);
    let mut t = a ^ replica;
    let b = splitmix64(&mut t);
    let mut u = b ^ tag;
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut u).to_le_bytes());
    }
    seed
}

#[derive(Clone, Copy, Debug)]
struct Ex1Draw {
    a1: f64,
    a2: f64,
    a3: f64,
    t1: f64,
    t2: f64,
}

fn draw_ex1(params: &Example1Params, rng: &mut ChaCha8Rng) -> Ex1Draw {
    // Fixed draw order keeps streams reproducible across call sites.
    let a1 = params.a1.sample(rng);
    let a2 = params.a2.sample(rng);
    let a3 = params.a3.sample(rng);
    let t1 = params.t1.sample(rng);
    let t2 = params.t2.sample(rng);
    Ex1Draw { a1, a2, a3, t1, t2 }
}

#[derive(Debug)]
enum StreamState {
    Iid,
    Example1Forward {
        prev_a3: Option<f64>,
    },
    Example1Backward {
        /// Tuple for the oldest time index reached so far (not yet emitted).
        pending: Option<Ex1Draw>,
        /// `a3` at time -1, shared by the forward continuation at time 0.
        boundary_a3: Option<f64>,
        fwd_prev_a3: Option<f64>,
    },
    MarkovForward {
        regime: Option<usize>,
    },
    MarkovBackward {
        /// Regime at time -1 (boundary for the forward continuation).
        newest: Option<usize>,
        /// Backward frontier regime (time -k after k draws).
        frontier: Option<usize>,
        fwd: Option<usize>,
    },
}

/// Single-owner mutable stream of operators for one replica.
///
/// Forward streams emit `A_0, A_1, A_2, ...`; backward streams emit
/// `A_-1, A_-2, ...` with the law of the time-reversed stationary sequence.
/// [`OperatorStream::continuation_operator`] on a backward stream emits the
/// forward continuation `A_0, A_1, ...` jointly consistent with the realized
/// past (regime boundary, carried assembly durations).
#[derive(Debug)]
pub struct OperatorStream<'a> {
    spec: &'a ModelSpec,
    direction: Direction,
    replica: u64,
    position: u64,
    rng: ChaCha8Rng,
    state: StreamState,
}

/// Stream of `A_0, A_1, ...` for the given replica.
pub fn forward_stream(spec: &ModelSpec, replica: u64) -> OperatorStream<'_> {
    OperatorStream::new(spec, replica, Direction::Forward)
}

/// Stream of `A_-1, A_-2, ...` for the given replica.
pub fn backward_stream(spec: &ModelSpec, replica: u64) -> OperatorStream<'_> {
    OperatorStream::new(spec, replica, Direction::Backward)
}

impl<'a> OperatorStream<'a> {
    fn new(spec: &'a ModelSpec, replica: u64, direction: Direction) -> Self {
        let rng = ChaCha8Rng::from_seed(stream_seed(spec.seed, replica, direction));
        let state = match (&spec.kind, direction) {
            (ModelKind::Example1(_), Direction::Forward) => {
                StreamState::Example1Forward { prev_a3: None }
            }
            (ModelKind::Example1(_), Direction::Backward) => StreamState::Example1Backward {
                pending: None,
                boundary_a3: None,
                fwd_prev_a3: None,
            },
            (ModelKind::MarkovModulated(_), Direction::Forward) => {
                StreamState::MarkovForward { regime: None }
            }
            (ModelKind::MarkovModulated(_), Direction::Backward) => StreamState::MarkovBackward {
                newest: None,
                frontier: None,
                fwd: None,
            },
            _ => StreamState::Iid,
        };
        Self { spec, direction, replica, position: 0, rng, state }
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn replica(&self) -> u64 {
        self.replica
    }

    /// Number of operators emitted so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    /// Draws the next operator and advances the stream.
    pub fn next_operator(&mut self) -> MaxPlusMatrix {
        self.position += 1;
        match (&self.spec.kind, &mut self.state) {
            (ModelKind::FiniteSupportIid(fs), StreamState::Iid) => fs.draw(&mut self.rng),
            (ModelKind::EntrywiseIid(pat), StreamState::Iid) => pat.draw(&mut self.rng),
            (ModelKind::Example1(params), StreamState::Example1Forward { prev_a3 }) => {
                let prev = match *prev_a3 {
                    Some(v) => v,
                    // The first matrix needs an extra previous assembly
                    // duration, drawn from the same law for stationarity.
                    None => params.a3.sample(&mut self.rng),
                };
                let cur = draw_ex1(params, &mut self.rng);
                *prev_a3 = Some(cur.a3);
                example1_matrix(cur.a1, cur.a2, prev, cur.a3, cur.t1, cur.t2)
                    .expect("validated nonnegative durations")
            }
            (
                ModelKind::Example1(params),
                StreamState::Example1Backward { pending, boundary_a3, .. },
            ) => {
                let cur = match pending.take() {
                    Some(c) => c,
                    None => {
                        let c = draw_ex1(params, &mut self.rng);
                        *boundary_a3 = Some(c.a3);
                        c
                    }
                };
                // Walking backward, the carried duration belongs to the next
                // (older) tuple, so look ahead by one draw.
                let older = draw_ex1(params, &mut self.rng);
                *pending = Some(older);
                example1_matrix(cur.a1, cur.a2, older.a3, cur.a3, cur.t1, cur.t2)
                    .expect("validated nonnegative durations")
            }
            (ModelKind::MarkovModulated(mk), StreamState::MarkovForward { regime }) => {
                let next = match *regime {
                    None => sample_index(mk.stationary(), &mut self.rng),
                    Some(r) => sample_index(&mk.transition[r], &mut self.rng),
                };
                *regime = Some(next);
                mk.regimes[next].draw(&mut self.rng)
            }
            (
                ModelKind::MarkovModulated(mk),
                StreamState::MarkovBackward { newest, frontier, .. },
            ) => {
                let next = match *frontier {
                    None => {
                        let r = sample_index(mk.stationary(), &mut self.rng);
                        *newest = Some(r);
                        r
                    }
                    Some(r) => sample_index(&mk.reversed[r], &mut self.rng),
                };
                *frontier = Some(next);
                mk.regimes[next].draw(&mut self.rng)
            }
            _ => unreachable!("stream state matches model kind by construction"),
        }
    }

    /// On a backward stream, draws the forward continuation `A_0, A_1, ...`
    /// jointly consistent with the already-realized past. Must be called
    /// after at least one backward draw for models with memory. On a forward
    /// stream this is simply the next operator.
    pub fn continuation_operator(&mut self) -> MaxPlusMatrix {
        match (&self.spec.kind, &mut self.state) {
            (
                ModelKind::Example1(params),
                StreamState::Example1Backward { boundary_a3, fwd_prev_a3, .. },
            ) => {
                let prev = fwd_prev_a3.unwrap_or_else(|| {
                    boundary_a3.expect("continuation requires at least one backward draw")
                });
                let cur = draw_ex1(params, &mut self.rng);
                *fwd_prev_a3 = Some(cur.a3);
                example1_matrix(cur.a1, cur.a2, prev, cur.a3, cur.t1, cur.t2)
                    .expect("validated nonnegative durations")
            }
            (ModelKind::MarkovModulated(mk), StreamState::MarkovBackward { newest, fwd, .. }) => {
                let from = match *fwd {
                    Some(r) => r,
                    None => newest.expect("continuation requires at least one backward draw"),
                };
                let next = sample_index(&mk.transition[from], &mut self.rng);
                *fwd = Some(next);
                mk.regimes[next].draw(&mut self.rng)
            }
            _ => self.next_operator(),
        }
    }
}

fn sample_index(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

// ---------------------------------------------------------------------------
// Model document parsing
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    dim: usize,
    kind: String,
    seed: u64,
    params: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EntryFile {
    Num(f64),
    Sym(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AtomFile {
    matrix: Vec<Vec<EntryFile>>,
    prob: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FiniteParamsFile {
    atoms: Vec<AtomFile>,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum DistFile {
    Uniform([f64; 2]),
    Normal([f64; 2]),
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PatternEntryFile {
    Sym(String),
    Dist(DistFile),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntrywiseParamsFile {
    entries: Vec<Vec<PatternEntryFile>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RegimeFile {
    kind: String,
    params: serde_json::Value,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MarkovParamsFile {
    transition: Vec<Vec<f64>>,
    regimes: Vec<RegimeFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Example1ParamsFile {
    a1: DistFile,
    a2: DistFile,
    a3: DistFile,
    t1: DistFile,
    t2: DistFile,
}

impl From<DistFile> for Dist {
    fn from(d: DistFile) -> Self {
        match d {
            DistFile::Uniform([a, b]) => Dist::Uniform(a, b),
            DistFile::Normal([mu, s]) => Dist::Normal(mu, s),
        }
    }
}

fn matrix_from_file(rows: Vec<Vec<EntryFile>>) -> Result<MaxPlusMatrix> {
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        let mut r = Vec::with_capacity(row.len());
        for cell in row {
            match cell {
                EntryFile::Num(v) => r.push(v),
                EntryFile::Sym(s) if s == "-inf" => r.push(NEG_INF),
                EntryFile::Sym(s) => {
                    return Err(Error::InvalidModel(format!(
                        "unknown matrix entry {s:?}; use a number or \"-inf\""
                    )));
                }
            }
        }
        out.push(r);
    }
    MaxPlusMatrix::from_rows(out).map_err(|e| Error::InvalidModel(e.to_string()))
}

fn finite_from_value(params: serde_json::Value, dim: usize) -> Result<FiniteSupport> {
    let file: FiniteParamsFile = serde_json::from_value(params)?;
    let mut atoms = Vec::with_capacity(file.atoms.len());
    for atom in file.atoms {
        atoms.push((matrix_from_file(atom.matrix)?, atom.prob));
    }
    FiniteSupport::new(atoms, dim)
}

fn entrywise_from_value(params: serde_json::Value, dim: usize) -> Result<EntrywisePattern> {
    let file: EntrywiseParamsFile = serde_json::from_value(params)?;
    let mut entries = Vec::with_capacity(file.entries.len());
    for row in file.entries {
        let mut r = Vec::with_capacity(row.len());
        for cell in row {
            match cell {
                PatternEntryFile::Sym(s) if s == "-inf" => r.push(None),
                PatternEntryFile::Sym(s) => {
                    return Err(Error::InvalidModel(format!(
                        "unknown pattern entry {s:?}; use \"-inf\" or a distribution"
                    )));
                }
                PatternEntryFile::Dist(d) => {
                    let d: Dist = d.into();
                    r.push(Some(d));
                }
            }
        }
        entries.push(r);
    }
    EntrywisePattern::new(entries, dim)
}

/// Parses and validates a JSON model document.
///
/// Schema: `{"dim": d, "kind": k, "seed": s, "params": {...}}` where `k` is
/// one of `finite_support_iid`, `entrywise_iid`, `markov_modulated`,
/// `example1`. Matrices are arrays of arrays with `-inf` spelled as the
/// string `"-inf"`; scalar distributions are `{"uniform": [a, b]}` or
/// `{"normal": [mu, sigma]}`.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let file: ModelFile = serde_json::from_str(text)?;
    let dim = file.dim;
    let kind = match file.kind.as_str() {
        "finite_support_iid" => ModelKind::FiniteSupportIid(finite_from_value(file.params, dim)?),
        "entrywise_iid" => ModelKind::EntrywiseIid(entrywise_from_value(file.params, dim)?),
        "markov_modulated" => {
            let mf: MarkovParamsFile = serde_json::from_value(file.params)?;
            let mut regimes = Vec::with_capacity(mf.regimes.len());
            for regime in mf.regimes {
                let gen = match regime.kind.as_str() {
                    "finite_support_iid" => {
                        RegimeGenerator::FiniteSupport(finite_from_value(regime.params, dim)?)
                    }
                    "entrywise_iid" => {
                        RegimeGenerator::Entrywise(entrywise_from_value(regime.params, dim)?)
                    }
                    other => {
                        return Err(Error::InvalidModel(format!(
                            "unknown regime kind {other:?}"
                        )));
                    }
                };
                regimes.push(gen);
            }
            ModelKind::MarkovModulated(MarkovModel::new(mf.transition, regimes)?)
        }
        "example1" => {
            let ef: Example1ParamsFile = serde_json::from_value(file.params)?;
            ModelKind::Example1(Example1Params::new(
                ef.a1.into(),
                ef.a2.into(),
                ef.a3.into(),
                ef.t1.into(),
                ef.t2.into(),
            )?)
        }
        other => return Err(Error::InvalidModel(format!("unknown model kind {other:?}"))),
    };
    ModelSpec::new(dim, file.seed, kind)
}
