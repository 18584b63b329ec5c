//! Exact max-plus linear algebra and projective-space geometry.
//!
//! The carrier is the semiring `(R ∪ {-inf}, max, +)`. A square matrix with
//! no `-inf` row acts on `R^d` by `(Ax)_i = max_j (A_ij + x_j)`; this action
//! is isotone and commutes with adding a constant to every coordinate, so it
//! descends to the projective space of vectors modulo constant shifts. That
//! quotient carries the metric
//! `delta(x, y) = max_i (x_i - y_i) + max_i (y_i - x_i)` and the norm
//! `|x|_P = max_i x_i - min_i x_i`.

use std::fmt;

use crate::error::{Error, Result};

/// Additive sentinel for the max-plus null element.
pub const NEG_INF: f64 = f64::NEG_INFINITY;

/// Absolute tolerance for projective equality and rank-1 column comparison.
///
/// Entries of operator products are sums of input entries, so differences of
/// column translates are exact up to floating summation order; comparisons
/// are absolute because entries are daters and durations of moderate
/// magnitude.
pub const EPS_PROJ: f64 = 1e-9;

/// Contract for operators that are isotone and commute with adding a
/// constant to every coordinate. Max-plus matrices are the only
/// implementation with an exact rank certificate; the laws themselves are
/// exercised by the test suite.
pub trait TopicalOperator {
    fn dim(&self) -> usize;
    fn apply_to(&self, x: &StateVector) -> StateVector;
}

/// Square matrix over `R ∪ {-inf}` with no `-inf` row, stored row-major.
#[derive(Clone, PartialEq)]
pub struct MaxPlusMatrix {
    dim: usize,
    entries: Vec<f64>,
}

impl MaxPlusMatrix {
    /// Builds a matrix from rows, validating squareness, entry finiteness
    /// (finite doubles or `-inf`, never NaN or `+inf`) and the no-`-inf`-row
    /// invariant.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.len();
        if dim == 0 {
            return Err(Error::InvalidValue("matrix must have positive dimension".into()));
        }
        let mut entries = Vec::with_capacity(dim * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidValue(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            let mut has_finite = false;
            for &v in row {
                if v.is_nan() || v == f64::INFINITY {
                    return Err(Error::InvalidValue(format!(
                        "row {i} contains a non-finite entry {v}"
                    )));
                }
                has_finite |= v.is_finite();
                entries.push(v);
            }
            if !has_finite {
                return Err(Error::InvalidValue(format!("row {i} is identically -inf")));
            }
        }
        Ok(Self { dim, entries })
    }

    /// Max-plus identity: 0 on the diagonal, `-inf` elsewhere.
    pub fn identity(dim: usize) -> Self {
        let mut entries = vec![NEG_INF; dim * dim];
        for i in 0..dim {
            entries[i * dim + i] = 0.0;
        }
        Self { dim, entries }
    }

    /// Matrix with every entry 0. Its action sends every vector to
    /// `(max_j x_j) * 1`, so it has rank 1.
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: vec![0.0; dim * dim] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// Adds `c` to every finite entry; as an operator this shifts every
    /// output by `c * 1`.
    pub fn shift(&self, c: f64) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|&v| if v.is_finite() { v + c } else { v })
            .collect();
        Self { dim: self.dim, entries }
    }

    /// Max-plus action `(Ax)_i = max_j (A_ij + x_j)`.
    ///
    /// The result is finite in every coordinate because no row is
    /// identically `-inf`. Panics on dimension mismatch; dimensions are
    /// validated once at model boundaries.
    pub fn apply(&self, x: &StateVector) -> StateVector {
        assert_eq!(
            self.dim,
            x.dim(),
            "max-plus apply: matrix dim {} vs vector dim {}",
            self.dim,
            x.dim()
        );
        let mut out = Vec::with_capacity(self.dim);
        for i in 0..self.dim {
            let row = &self.entries[i * self.dim..(i + 1) * self.dim];
            let mut best = NEG_INF;
            for (a, &xj) in row.iter().zip(x.coords()) {
                if a.is_finite() {
                    let cand = a + xj;
                    if cand > best {
                        best = cand;
                    }
                }
            }
            out.push(best);
        }
        StateVector { coords: out }
    }

    /// Convenience for `A * 0`, the image of the origin.
    pub fn apply_zero(&self) -> StateVector {
        self.apply(&StateVector::zeros(self.dim))
    }

    /// Max-plus product `(A ⊗ B)_ij = max_k (A_ik + B_kj)`, so that
    /// `(A ⊗ B) x = A (B x)`. Panics on dimension mismatch.
    pub fn compose(&self, rhs: &Self) -> Self {
        assert_eq!(
            self.dim, rhs.dim,
            "max-plus compose: dims {} vs {}",
            self.dim, rhs.dim
        );
        let d = self.dim;
        let mut entries = vec![NEG_INF; d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.entries[i * d + k];
                if !a.is_finite() {
                    continue;
                }
                for j in 0..d {
                    let b = rhs.entries[k * d + j];
                    if b.is_finite() {
                        let cand = a + b;
                        if cand > entries[i * d + j] {
                            entries[i * d + j] = cand;
                        }
                    }
                }
            }
        }
        // No -inf row: row i of A has a finite A_ik and row k of B a finite B_kj.
        Self { dim: d, entries }
    }

    /// Exact rank-1 certificate: the projective image of the operator is a
    /// single point iff every column is identically `-inf` or fully finite,
    /// and all non-null columns are pairwise equal up to an additive
    /// constant (within `eps`).
    ///
    /// If a non-null column mixed `-inf` and finite entries, probing with a
    /// large coordinate on that column would separate projective images;
    /// when all non-null columns are translates `u_i + v_j`, the action is
    /// `x ↦ u + max_j (v_j + x_j) * 1`, constant projectively.
    pub fn is_rank_one(&self, eps: f64) -> bool {
        let d = self.dim;
        let mut reference: Option<usize> = None;
        for j in 0..d {
            let mut finite = 0usize;
            for i in 0..d {
                if self.get(i, j).is_finite() {
                    finite += 1;
                }
            }
            if finite == 0 {
                continue; // null column
            }
            if finite < d {
                return false; // mixed column
            }
            match reference {
                None => reference = Some(j),
                Some(j0) => {
                    let mut lo = f64::INFINITY;
                    let mut hi = f64::NEG_INFINITY;
                    for i in 0..d {
                        let diff = self.get(i, j) - self.get(i, j0);
                        lo = lo.min(diff);
                        hi = hi.max(diff);
                    }
                    if hi - lo > eps {
                        return false;
                    }
                }
            }
        }
        // At least one column is non-null (rows are not identically -inf).
        true
    }
}

impl TopicalOperator for MaxPlusMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply_to(&self, x: &StateVector) -> StateVector {
        self.apply(x)
    }
}

impl fmt::Debug for MaxPlusMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MaxPlusMatrix({self})")
    }
}

impl fmt::Display for MaxPlusMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for i in 0..self.dim {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "[")?;
            for j in 0..self.dim {
                if j > 0 {
                    write!(f, ", ")?;
                }
                let v = self.get(i, j);
                if v.is_finite() {
                    write!(f, "{v}")?;
                } else {
                    write!(f, "-inf")?;
                }
            }
            write!(f, "]")?;
        }
        write!(f, "]")
    }
}

/// Point of `R^d` with finite coordinates; coordinates are daters (event
/// times) under the discrete-event reading.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    coords: Vec<f64>,
}

impl StateVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidValue("state vector must have positive dimension".into()));
        }
        if let Some(bad) = coords.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite coordinate {bad}")));
        }
        Ok(Self { coords })
    }

    pub fn zeros(dim: usize) -> Self {
        Self { coords: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn get(&self, i: usize) -> f64 {
        self.coords[i]
    }

    /// `x + c * 1`.
    pub fn add_scalar(&self, c: f64) -> Self {
        Self { coords: self.coords.iter().map(|x| x + c).collect() }
    }

    pub fn max_coord(&self) -> f64 {
        self.coords.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_coord(&self) -> f64 {
        self.coords.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn sup_norm(&self) -> f64 {
        self.coords.iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn sup_dist(&self, other: &Self) -> f64 {
        assert_eq!(self.dim(), other.dim(), "sup_dist: dimension mismatch");
        self.coords
            .iter()
            .zip(other.coords())
            .fold(0.0, |acc, (a, b)| acc.max((a - b).abs()))
    }
}

/// Equivalence class of `R^d` modulo translations by multiples of `1`,
/// stored as the representative with top coordinate exactly 0.
#[derive(Clone, Debug)]
pub struct ProjectivePoint {
    rep: StateVector,
}

impl ProjectivePoint {
    /// Normalizes by subtracting the top coordinate, so `rep` has max 0 and
    /// `x = rep + psi(x) * 1` recovers the input.
    pub fn from_vector(x: &StateVector) -> Self {
        let m = x.max_coord();
        let rep = StateVector { coords: x.coords().iter().map(|c| c - m).collect() };
        Self { rep }
    }

    pub fn rep(&self) -> &StateVector {
        &self.rep
    }

    pub fn dim(&self) -> usize {
        self.rep.dim()
    }

    /// Projective equality within an absolute tolerance on representatives.
    pub fn eq_within(&self, other: &Self, eps: f64) -> bool {
        self.rep.sup_dist(&other.rep) <= eps
    }
}

/// Top coordinate `psi(x) = max_i x_i`; the canonical topical functional.
pub fn psi(x: &StateVector) -> f64 {
    x.max_coord()
}

/// Projective metric `delta(x, y) = max_i (x_i - y_i) + max_i (y_i - x_i)`.
/// Symmetric, and zero exactly when `x - y` is proportional to `1`.
pub fn projective_distance(x: &StateVector, y: &StateVector) -> f64 {
    assert_eq!(x.dim(), y.dim(), "projective_distance: dimension mismatch");
    let mut up = f64::NEG_INFINITY;
    let mut down = f64::NEG_INFINITY;
    for (a, b) in x.coords().iter().zip(y.coords()) {
        up = up.max(a - b);
        down = down.max(b - a);
    }
    up + down
}

/// Projective norm `|x|_P = max_i x_i - min_i x_i = delta(x, 0)`.
pub fn projective_norm(x: &StateVector) -> f64 {
    x.max_coord() - x.min_coord()
}

/// Splits `x` into its height and projective class: `x ↦ (psi(x), x-bar)`.
pub fn split(x: &StateVector) -> (f64, ProjectivePoint) {
    (psi(x), ProjectivePoint::from_vector(x))
}

/// Inverse of [`split`] up to floating-point rounding of the translation:
/// `unsplit(h, p) = p.rep + h * 1`.
pub fn unsplit(height: f64, p: &ProjectivePoint) -> StateVector {
    p.rep().add_scalar(height)
}

/// Cocycle increment `xi(A, x-bar) = max_i (Ax)_i - max_i x_i`.
///
/// Depends on `x` only through its projective class, and satisfies
/// `|xi(A, x-bar)| <= |max_i (A0)_i| + |x|_P`.
pub fn xi_increment(a: &MaxPlusMatrix, x: &StateVector) -> f64 {
    psi(&a.apply(x)) - psi(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> MaxPlusMatrix {
        MaxPlusMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn vec2(a: f64, b: f64) -> StateVector {
        StateVector::new(vec![a, b]).unwrap()
    }

    #[test]
    fn apply_identity_fixes_vectors() {
        let id = MaxPlusMatrix::identity(2);
        let x = vec2(3.0, -1.0);
        assert_eq!(id.apply(&x), x);
    }

    #[test]
    fn apply_matches_direct_enumeration() {
        let a = mat(&[&[1.0, NEG_INF], &[0.0, 2.0]]);
        let x = vec2(0.0, 0.0);
        assert_eq!(a.apply(&x).coords(), &[1.0, 2.0]);

        let z = MaxPlusMatrix::zeros(2);
        assert_eq!(z.apply(&vec2(0.0, -5.0)).coords(), &[0.0, 0.0]);
    }

    #[test]
    fn compose_with_identity_is_identity() {
        let a = mat(&[&[1.0, NEG_INF], &[0.0, 2.0]]);
        let id = MaxPlusMatrix::identity(2);
        assert_eq!(a.compose(&id), a);
        assert_eq!(id.compose(&a), a);
    }

    #[test]
    fn compose_all_zeros_idempotent() {
        let z = MaxPlusMatrix::zeros(2);
        assert_eq!(z.compose(&z), z);
    }

    #[test]
    fn compose_matches_direct_enumeration() {
        let a = mat(&[&[1.0, NEG_INF], &[0.0, 2.0]]);
        let b = MaxPlusMatrix::zeros(2);
        let c = a.compose(&b);
        assert_eq!(c, mat(&[&[1.0, 1.0], &[2.0, 2.0]]));
    }

    #[test]
    fn rank_one_examples() {
        assert!(MaxPlusMatrix::zeros(2).is_rank_one(EPS_PROJ));
        assert!(!mat(&[&[0.0, 0.0], &[NEG_INF, 0.0]]).is_rank_one(EPS_PROJ));
        // columns differ by the constant 2
        assert!(mat(&[&[1.0, 3.0], &[0.0, 2.0]]).is_rank_one(EPS_PROJ));
        assert!(!MaxPlusMatrix::identity(2).is_rank_one(EPS_PROJ));
    }

    #[test]
    fn rank_one_collapses_images() {
        let a = mat(&[&[1.0, 3.0], &[0.0, 2.0]]);
        let x = vec2(17.0, -4.0);
        let y = vec2(-100.0, 3.5);
        assert!(projective_distance(&a.apply(&x), &a.apply(&y)) <= EPS_PROJ);
    }

    #[test]
    fn projective_distance_examples() {
        let x = vec2(0.0, 0.0);
        let y = vec2(1.0, 3.0);
        assert_eq!(projective_distance(&x, &y), 2.0);
        assert_eq!(projective_distance(&x, &x.add_scalar(7.5)), 0.0);
    }

    #[test]
    fn projective_norm_examples() {
        assert_eq!(projective_norm(&StateVector::new(vec![4.0, 4.0, 4.0]).unwrap()), 0.0);
        assert_eq!(projective_norm(&vec2(1.0, 3.0)), 2.0);
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(&StateVector::new(vec![2.5, 2.5]).unwrap()), 2.5);
        assert_eq!(psi(&vec2(1.0, 3.0)), 3.0);
    }

    #[test]
    fn split_examples() {
        let (h, p) = split(&vec2(0.0, 0.0));
        assert_eq!(h, 0.0);
        assert_eq!(p.rep().coords(), &[0.0, 0.0]);

        let (h, p) = split(&vec2(1.0, 3.0));
        assert_eq!(h, 3.0);
        assert_eq!(p.rep().coords(), &[-2.0, 0.0]);
    }

    #[test]
    fn xi_increment_examples() {
        let id = MaxPlusMatrix::identity(2);
        assert_eq!(xi_increment(&id, &vec2(3.0, -1.0)), 0.0);
        assert_eq!(xi_increment(&MaxPlusMatrix::zeros(2), &vec2(0.0, -5.0)), 0.0);
    }

    #[test]
    fn split_round_trip_ten_thousand_vectors() {
        let mut state = 0x5417u64;
        let mut next = move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10_000 {
            // dyadic coordinates: subtraction of the top coordinate is exact
            let coords: Vec<f64> =
                (0..4).map(|_| ((next() * 16384.0) as i64 - 8192) as f64 / 1024.0).collect();
            let x = StateVector::new(coords).unwrap();
            let (h, p) = split(&x);
            assert_eq!(unsplit(h, &p), x);
            assert_eq!(p.rep().max_coord(), 0.0);
        }
    }

    #[test]
    fn construction_rejects_bad_matrices() {
        assert!(MaxPlusMatrix::from_rows(vec![vec![NEG_INF, NEG_INF], vec![0.0, 0.0]]).is_err());
        assert!(MaxPlusMatrix::from_rows(vec![vec![f64::NAN, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(MaxPlusMatrix::from_rows(vec![vec![f64::INFINITY, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(MaxPlusMatrix::from_rows(vec![vec![0.0], vec![0.0]]).is_err());
        assert!(StateVector::new(vec![1.0, f64::NAN]).is_err());
    }

    #[test]
    fn display_round_trips_neg_inf() {
        let a = mat(&[&[1.0, NEG_INF], &[0.0, 2.0]]);
        assert_eq!(format!("{a}"), "[[1, -inf], [0, 2]]");
    }

    // Strategies: dyadic coordinates (multiples of 2^-10 of moderate size)
    // make every sum and difference exact, so the homogeneity laws can be
    // asserted with equality instead of a tolerance.
    fn dyadic() -> impl Strategy<Value = f64> {
        (-8192i32..8192).prop_map(|k| k as f64 / 1024.0)
    }

    fn dyadic_vec(d: usize) -> impl Strategy<Value = StateVector> {
        proptest::collection::vec(dyadic(), d).prop_map(|v| StateVector::new(v).unwrap())
    }

    fn dyadic_matrix(d: usize) -> impl Strategy<Value = MaxPlusMatrix> {
        let row = (proptest::collection::vec((dyadic(), proptest::bool::weighted(0.25)), d), 0..d)
            .prop_map(|(cells, keep)| {
                let mut r: Vec<f64> = cells
                    .into_iter()
                    .map(|(v, null)| if null { NEG_INF } else { v })
                    .collect();
                let pinned = r[keep];
                if !pinned.is_finite() {
                    r[keep] = 0.0;
                }
                r
            });
        proptest::collection::vec(row, d)
            .prop_map(|rows| MaxPlusMatrix::from_rows(rows).unwrap())
    }

    proptest! {
        #[test]
        fn additive_homogeneity_exact(a in dyadic_matrix(3), x in dyadic_vec(3), c in dyadic()) {
            let lhs = a.apply(&x.add_scalar(c));
            let rhs = a.apply(&x).add_scalar(c);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn isotone(a in dyadic_matrix(3), x in dyadic_vec(3), bump in proptest::collection::vec(0.0f64..4.0, 3)) {
            let y = StateVector::new(
                x.coords().iter().zip(&bump).map(|(v, b)| v + b).collect(),
            ).unwrap();
            let ax = a.apply(&x);
            let ay = a.apply(&y);
            for i in 0..3 {
                prop_assert!(ax.get(i) <= ay.get(i));
            }
        }

        #[test]
        fn sup_norm_nonexpansive(a in dyadic_matrix(3), x in dyadic_vec(3), y in dyadic_vec(3)) {
            prop_assert!(a.apply(&x).sup_dist(&a.apply(&y)) <= x.sup_dist(&y) + 1e-12);
        }

        #[test]
        fn projectively_nonexpansive(a in dyadic_matrix(3), x in dyadic_vec(3), y in dyadic_vec(3)) {
            prop_assert!(
                projective_distance(&a.apply(&x), &a.apply(&y))
                    <= projective_distance(&x, &y) + 1e-12
            );
        }

        #[test]
        fn composition_matches_action(a in dyadic_matrix(3), b in dyadic_matrix(3), x in dyadic_vec(3)) {
            let via_product = a.compose(&b).apply(&x);
            let via_action = a.apply(&b.apply(&x));
            prop_assert!(via_product.sup_dist(&via_action) <= 1e-9);
        }

        #[test]
        fn split_unsplit_round_trip_exact(x in dyadic_vec(4)) {
            let (h, p) = split(&x);
            prop_assert_eq!(unsplit(h, &p), x);
        }

        #[test]
        fn unsplit_split_round_trip(h in dyadic(), x in dyadic_vec(4)) {
            let p = ProjectivePoint::from_vector(&x);
            let (h2, p2) = split(&unsplit(h, &p));
            prop_assert_eq!(h2, h);
            prop_assert!(p2.eq_within(&p, 0.0));
        }

        #[test]
        fn split_round_trip_random_within_tolerance(
            x in proptest::collection::vec(-50.0f64..50.0, 4)
        ) {
            let x = StateVector::new(x).unwrap();
            let (h, p) = split(&x);
            prop_assert!(unsplit(h, &p).sup_dist(&x) <= 1e-12);
            prop_assert_eq!(p.rep().max_coord(), 0.0);
        }

        #[test]
        fn xi_depends_only_on_projective_class(a in dyadic_matrix(3), x in dyadic_vec(3), c in dyadic()) {
            prop_assert_eq!(xi_increment(&a, &x.add_scalar(c)), xi_increment(&a, &x));
        }

        #[test]
        fn xi_bounded_by_image_of_zero(a in dyadic_matrix(3), x in dyadic_vec(3)) {
            let bound = psi(&a.apply_zero()).abs() + projective_norm(&x);
            prop_assert!(xi_increment(&a, &x).abs() <= bound + 1e-12);
        }

        #[test]
        fn psi_homogeneous(x in dyadic_vec(4), c in dyadic()) {
            prop_assert_eq!(psi(&x.add_scalar(c)), psi(&x) + c);
        }

        #[test]
        fn distance_symmetric_and_shift_invariant(x in dyadic_vec(4), y in dyadic_vec(4), c in dyadic()) {
            let d = projective_distance(&x, &y);
            prop_assert_eq!(projective_distance(&y, &x), d);
            prop_assert_eq!(projective_distance(&x.add_scalar(c), &y), d);
            prop_assert!(d >= 0.0);
        }

        #[test]
        fn rank_one_images_collapse(
            u in proptest::collection::vec(dyadic(), 3),
            v in proptest::collection::vec(dyadic(), 3),
            x in dyadic_vec(3),
            y in dyadic_vec(3),
        ) {
            // entries u_i + v_j: columns are translates by construction
            let rows = u.iter()
                .map(|ui| v.iter().map(|vj| ui + vj).collect())
                .collect();
            let a = MaxPlusMatrix::from_rows(rows).unwrap();
            prop_assert!(a.is_rank_one(EPS_PROJ));
            prop_assert!(projective_distance(&a.apply(&x), &a.apply(&y)) <= EPS_PROJ);
        }
    }
}
