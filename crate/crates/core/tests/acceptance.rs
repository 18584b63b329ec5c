//! Acceptance suite. Every test prints one `ACCEPTANCE <k> (...): PASS/FAIL`
//! line (run with `--nocapture` to see them) and enforces its criterion at
//! the stated tolerance.

mod common;

use common::{criterion, load_shipped_model, max_cycle_mean, probe_rank_oracle, splitmix64, uniform};

use mpx_core::algebra::{
    projective_distance, projective_norm, psi, xi_increment, MaxPlusMatrix, StateVector, EPS_PROJ,
    NEG_INF,
};
use mpx_core::engine::{
    backward_couple_stream, forward_coupling_time, mlp_probe, top_process, DEFAULT_CAP,
};
use mpx_core::exec::{map_replicas, Exec};
use mpx_core::models::{
    backward_stream, forward_stream, Dist, EntrywisePattern, FiniteSupport, MarkovModel,
    ModelKind, ModelSpec, RegimeGenerator,
};
use mpx_core::stats::{
    degeneracy_probe, estimate_gamma_coupled, estimate_gamma_lln, estimate_sigma_mad,
    ks_one_sample, ks_two_sample, tightness_probe, DegeneracyVerdict, TightnessVerdict,
};
use statrs::distribution::{ContinuousCDF, Normal};

// -------------------------------------------------------------------------
// shared model builders
// -------------------------------------------------------------------------

fn markov_battery_model(seed: u64) -> ModelSpec {
    let slow = FiniteSupport::new(vec![(MaxPlusMatrix::zeros(2), 1.0)], 2).unwrap();
    let fast = EntrywisePattern::new(
        vec![
            vec![Some(Dist::Uniform(0.5, 1.5)), Some(Dist::Uniform(0.0, 1.0))],
            vec![Some(Dist::Uniform(0.0, 1.0)), Some(Dist::Uniform(0.5, 1.5))],
        ],
        2,
    )
    .unwrap();
    let mk = MarkovModel::new(
        vec![vec![0.9, 0.1], vec![0.2, 0.8]],
        vec![RegimeGenerator::FiniteSupport(slow), RegimeGenerator::Entrywise(fast)],
    )
    .unwrap();
    ModelSpec::new(2, seed, ModelKind::MarkovModulated(mk)).unwrap()
}

fn entrywise_battery_model(seed: u64) -> ModelSpec {
    let u = |a: f64, b: f64| Some(Dist::Uniform(a, b));
    let pattern = EntrywisePattern::new(
        vec![
            vec![u(0.0, 1.0), None, u(0.0, 2.0)],
            vec![u(0.5, 1.5), u(0.0, 1.0), None],
            vec![None, u(0.0, 1.0), u(1.0, 2.0)],
        ],
        3,
    )
    .unwrap();
    ModelSpec::new(3, seed, ModelKind::EntrywiseIid(pattern)).unwrap()
}

fn battery() -> Vec<(&'static str, ModelSpec)> {
    vec![
        ("finite2x2", load_shipped_model("finite2x2.json")),
        ("example1", load_shipped_model("example1.json")),
        ("d1_gaussian", load_shipped_model("d1_gaussian.json")),
        ("markov2", markov_battery_model(1701)),
        ("entrywise3", entrywise_battery_model(1702)),
    ]
}

// -------------------------------------------------------------------------
// 1. algebra law suite
// -------------------------------------------------------------------------

fn random_matrix(state: &mut u64, d: usize) -> MaxPlusMatrix {
    loop {
        let rows: Vec<Vec<f64>> = (0..d)
            .map(|_| {
                (0..d)
                    .map(|_| {
                        if uniform(state) < 0.2 {
                            NEG_INF
                        } else {
                            10.0 * uniform(state) - 5.0
                        }
                    })
                    .collect()
            })
            .collect();
        if let Ok(m) = MaxPlusMatrix::from_rows(rows) {
            return m;
        }
    }
}

fn random_vector(state: &mut u64, d: usize) -> StateVector {
    StateVector::new((0..d).map(|_| 10.0 * uniform(state) - 5.0).collect()).unwrap()
}

#[test]
fn acceptance_1_algebra_law_suite() {
    criterion(1, "algebra law suite", || {
        const TOL: f64 = 1e-9;
        let mut state = 0xA11A_u64;
        for case in 0..10_000 {
            let d = 1 + (splitmix64(&mut state) % 5) as usize;
            let a = random_matrix(&mut state, d);
            let b = random_matrix(&mut state, d);
            let x = random_vector(&mut state, d);
            let y = random_vector(&mut state, d);
            let c = 10.0 * uniform(&mut state) - 5.0;

            // additive homogeneity
            let lhs = a.apply(&x.add_scalar(c));
            let rhs = a.apply(&x).add_scalar(c);
            if lhs.sup_dist(&rhs) > TOL {
                return Err(format!("homogeneity violated at case {case}"));
            }
            // isotonicity (monotone rounding makes this exact)
            let bumped = StateVector::new(
                x.coords().iter().map(|v| v + uniform(&mut state)).collect(),
            )
            .unwrap();
            let ax = a.apply(&x);
            let abumped = a.apply(&bumped);
            if (0..d).any(|i| ax.get(i) > abumped.get(i)) {
                return Err(format!("isotonicity violated at case {case}"));
            }
            // sup-norm nonexpansiveness
            if a.apply(&x).sup_dist(&a.apply(&y)) > x.sup_dist(&y) + TOL {
                return Err(format!("sup-norm expansion at case {case}"));
            }
            // projective nonexpansiveness
            if projective_distance(&a.apply(&x), &a.apply(&y)) > projective_distance(&x, &y) + TOL {
                return Err(format!("projective expansion at case {case}"));
            }
            // composition matches composed action
            if a.compose(&b).apply(&x).sup_dist(&a.apply(&b.apply(&x))) > TOL {
                return Err(format!("associativity violated at case {case}"));
            }
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 2. rank-1 oracle equivalence (exhaustive)
// -------------------------------------------------------------------------

const ENTRY_CHOICES: [f64; 4] = [NEG_INF, 0.0, 1.0, 2.0];
// corner probe scale: 1e6 times the entry range of the family ({0,1,2})
const PROBE_BIG: f64 = 2e6;

fn valid_rows(d: usize) -> Vec<Vec<f64>> {
    let mut rows = Vec::new();
    let count = ENTRY_CHOICES.len().pow(d as u32);
    for code in 0..count {
        let mut c = code;
        let mut row = Vec::with_capacity(d);
        for _ in 0..d {
            row.push(ENTRY_CHOICES[c % ENTRY_CHOICES.len()]);
            c /= ENTRY_CHOICES.len();
        }
        if row.iter().any(|v| v.is_finite()) {
            rows.push(row);
        }
    }
    rows
}

#[test]
fn acceptance_2_rank_one_oracle_equivalence() {
    criterion(2, "rank-1 oracle equivalence", || {
        // 2x2 exhaustive
        let rows2 = valid_rows(2);
        let mut checked = 0u64;
        for (i, r0) in rows2.iter().enumerate() {
            for (j, r1) in rows2.iter().enumerate() {
                let m = MaxPlusMatrix::from_rows(vec![r0.clone(), r1.clone()]).unwrap();
                let fast = m.is_rank_one(EPS_PROJ);
                let probe = probe_rank_oracle(&m, PROBE_BIG, 100, (i * 1000 + j) as u64);
                if fast != probe {
                    return Err(format!("2x2 mismatch: {m} criterion={fast} probe={probe}"));
                }
                checked += 1;
            }
        }
        // 3x3 exhaustive, parallel over the first row
        let rows3 = valid_rows(3);
        let n_rows = rows3.len();
        let mismatches: Vec<Option<String>> = map_replicas(n_rows, Exec::Par, |i| {
            let i = i as usize;
            for j in 0..n_rows {
                for k in 0..n_rows {
                    let m = MaxPlusMatrix::from_rows(vec![
                        rows3[i].clone(),
                        rows3[j].clone(),
                        rows3[k].clone(),
                    ])
                    .unwrap();
                    let fast = m.is_rank_one(EPS_PROJ);
                    let seed = ((i * n_rows + j) * n_rows + k) as u64;
                    let probe = probe_rank_oracle(&m, PROBE_BIG, 100, seed);
                    if fast != probe {
                        return Some(format!("3x3 mismatch: {m} criterion={fast} probe={probe}"));
                    }
                }
            }
            None
        });
        if let Some(msg) = mismatches.into_iter().flatten().next() {
            return Err(msg);
        }
        checked += (n_rows * n_rows * n_rows) as u64;
        if checked != 225 + 250_047 {
            return Err(format!("unexpected enumeration size {checked}"));
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 3. d = 1 classical reduction
// -------------------------------------------------------------------------

#[test]
fn acceptance_3_d1_classical_reduction() {
    criterion(3, "d=1 classical reduction", || {
        let spec = load_shipped_model("d1_gaussian.json");
        let n = 4096usize;
        let m = 2000usize;
        let gamma = estimate_gamma_lln(&spec, 16_384, 500, Exec::Par).top.gamma_hat;
        let sigma = estimate_sigma_mad(&spec, gamma, n, m, Exec::Par);
        if !(0.93..=1.07).contains(&sigma.sigma_hat) {
            return Err(format!("sigma_hat {} outside [0.93, 1.07]", sigma.sigma_hat));
        }
        // fresh replicas, normalized by the fitted sigma, against N(0, 1)
        let sqrt_n = (n as f64).sqrt();
        let base: u64 = 100 << 32;
        let samples: Vec<f64> = map_replicas(m, Exec::Par, |r| {
            let mut stream = forward_stream(&spec, base + r);
            let mut x = StateVector::zeros(1);
            for _ in 0..n {
                x = stream.next_operator().apply(&x);
            }
            (psi(&x) - n as f64 * gamma) / (sqrt_n * sigma.sigma_hat)
        });
        let std_normal = Normal::new(0.0, 1.0).unwrap();
        let d = ks_one_sample(&samples, |t| std_normal.cdf(t));
        if d >= 0.05 {
            return Err(format!("KS distance {d} >= 0.05"));
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 4. deterministic cycle-time oracle
// -------------------------------------------------------------------------

#[test]
fn acceptance_4_deterministic_cycle_time() {
    criterion(4, "deterministic cycle-time oracle", || {
        let mut state = 0xC4C1E_u64;
        for case in 0..10 {
            let rows: Vec<Vec<f64>> =
                (0..4).map(|_| (0..4).map(|_| uniform(&mut state)).collect()).collect();
            let matrix = MaxPlusMatrix::from_rows(rows).unwrap();
            let oracle = max_cycle_mean(&matrix);
            let spec = ModelSpec::single_atom(case as u64, matrix);
            let est = estimate_gamma_lln(&spec, 2000, 1, Exec::Seq);
            if (est.top.gamma_hat - oracle).abs() > 1e-6 {
                return Err(format!(
                    "case {case}: lln {} vs cycle mean {oracle} (diff {})",
                    est.top.gamma_hat,
                    (est.top.gamma_hat - oracle).abs()
                ));
            }
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 5. cross-estimator consistency + MLP detection on the assembly model
// -------------------------------------------------------------------------

#[test]
fn acceptance_5_cross_estimator_consistency() {
    criterion(5, "cross-estimator consistency", || {
        let spec = load_shipped_model("example1.json");
        let lln = estimate_gamma_lln(&spec, 10_000, 100, Exec::Par);
        let coupled =
            estimate_gamma_coupled(&spec, 10_000, DEFAULT_CAP, Exec::Par).map_err(|e| e.to_string())?;
        let joint = (lln.top.stderr.powi(2) + coupled.stderr.powi(2)).sqrt();
        let diff = (lln.top.gamma_hat - coupled.gamma_hat).abs();
        if diff > 3.0 * joint {
            return Err(format!(
                "lln {} vs coupled {}: diff {diff} > 3 x joint se {joint}",
                lln.top.gamma_hat, coupled.gamma_hat
            ));
        }
        let report = mlp_probe(&spec, 10, 1000, Exec::Par);
        let detected = report.estimates.iter().any(|e| e.wilson_low > 0.0);
        if !detected {
            return Err("no Wilson lower bound above 0 by depth 10".into());
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 6. CLT verification on the assembly model
// -------------------------------------------------------------------------

#[test]
fn acceptance_6_clt_verification() {
    criterion(6, "CLT verification", || {
        let spec = load_shipped_model("example1.json");
        let x0_alt = StateVector::new(vec![0.3, -0.15, 0.1]).unwrap();
        let report = mpx_core::stats::clt_test(
            &spec,
            512,
            1000,
            &x0_alt,
            None,
            DEFAULT_CAP,
            Exec::Par,
        )
        .map_err(|e| e.to_string())?;
        let ks_zero = report.ks_zero.ok_or("degenerate route taken unexpectedly")?;
        let ks_alt = report.ks_alt.ok_or("degenerate route taken unexpectedly")?;
        let ks_two = report.ks_two_sample.unwrap();
        for (name, d) in [("zero-start", ks_zero), ("alt-start", ks_alt), ("two-sample", ks_two)] {
            if d >= 0.06 {
                return Err(format!("{name} KS distance {d} >= 0.06"));
            }
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 7. degenerate model (rank-1 atom plus scalar shifts)
// -------------------------------------------------------------------------

#[test]
fn acceptance_7_degenerate_shifted_rank_one_model() {
    criterion(7, "degenerate shifted rank-1 model", || {
        // atoms: theta and theta + 1 with probability 1/2 each,
        // theta = [[1,3],[0,2]] of rank 1 (columns are translates by 2)
        let theta = MaxPlusMatrix::from_rows(vec![vec![1.0, 3.0], vec![0.0, 2.0]]).unwrap();
        let spec = ModelSpec::finite_support(
            7777,
            vec![(theta.clone(), 0.5), (theta.shift(1.0), 0.5)],
        )
        .unwrap();
        // exact cycle time: theta^2 = theta + 2 (u = (1,0), v = (0,2),
        // max(u+v) = 2), so each step adds 2 plus the drawn shift:
        // gamma = 2 + E[shift] = 2.5
        let gamma = 2.5;

        let mut failures = Vec::new();
        let probe = degeneracy_probe(&spec, 6, gamma, 0.0).map_err(|e| e.to_string())?;
        if probe.verdict != DegeneracyVerdict::Degenerate {
            failures.push(format!(
                "degeneracy_probe returned {:?} (witness: {:?})",
                probe.verdict, probe.witness
            ));
        }
        let sigma = estimate_sigma_mad(&spec, gamma, 4096, 500, Exec::Par);
        if sigma.mad >= 0.05 {
            failures.push(format!("E|psi(x(n)) - n gamma|/sqrt(n) = {} >= 0.05", sigma.mad));
        }
        let tight = tightness_probe(
            &spec,
            gamma,
            &mpx_core::stats::default_tightness_grid(),
            400,
            Exec::Par,
        );
        if tight.verdict != TightnessVerdict::TightConsistent {
            failures.push(format!(
                "tightness_probe returned {:?} (exponent {:?})",
                tight.verdict, tight.exponent
            ));
        }
        if failures.is_empty() {
            Ok(())
        } else {
            Err(failures.join("; "))
        }
    });
}

// -------------------------------------------------------------------------
// 8. coupling inequalities
// -------------------------------------------------------------------------

#[test]
fn acceptance_8_coupling_inequalities() {
    criterion(8, "coupling inequalities", || {
        let spec = load_shipped_model("example1.json");
        let outcomes: Vec<Result<(), String>> = map_replicas(1000, Exec::Par, |replica| {
            let mut bs = backward_stream(&spec, replica);
            let coupled = backward_couple_stream(&mut bs, DEFAULT_CAP)
                .map_err(|e| format!("replica {replica}: {e}"))?;
            // |Y|_P <= sum of per-factor norms
            let y_norm = projective_norm(coupled.y.rep());
            let bound: f64 = coupled.partial_norms.iter().sum();
            if y_norm > bound + 1e-9 {
                return Err(format!("replica {replica}: |Y|_P {y_norm} > {bound}"));
            }
            // |xi(A, Y)| <= |max (A 0)| + |Y|_P for the continuation operator
            let a = bs.continuation_operator();
            let xi = xi_increment(&a, coupled.y.rep());
            let xi_bound = psi(&a.apply_zero()).abs() + y_norm;
            if xi.abs() > xi_bound + 1e-9 {
                return Err(format!("replica {replica}: |xi| {} > {xi_bound}", xi.abs()));
            }
            // replay the backward products: rank 1 exactly at the horizon
            let mut replay = backward_stream(&spec, replica);
            let mut product: Option<MaxPlusMatrix> = None;
            for n in 1..=coupled.n_backward {
                let a = replay.next_operator();
                let p = match product.take() {
                    None => a,
                    Some(prev) => prev.compose(&a),
                };
                let rank_one = p.is_rank_one(EPS_PROJ);
                if n < coupled.n_backward && rank_one {
                    return Err(format!("replica {replica}: rank 1 before the horizon at {n}"));
                }
                if n == coupled.n_backward && !rank_one {
                    return Err(format!("replica {replica}: no rank 1 at the horizon"));
                }
                product = Some(p);
            }
            Ok(())
        });
        for o in outcomes {
            o?;
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// 9. subadditivity and the sandwich bound across the battery
// -------------------------------------------------------------------------

#[test]
fn acceptance_9_subadditivity_and_sandwich() {
    criterion(9, "subadditivity and sandwich bound", || {
        for (name, spec) in battery() {
            // 1000 random triples s < t < u on per-triple replicas
            let mut state = 0x5AD_u64 ^ spec.seed;
            for trial in 0..1000u64 {
                let s = (splitmix64(&mut state) % 20) as usize;
                let t = s + 1 + (splitmix64(&mut state) % 15) as usize;
                let u = t + 1 + (splitmix64(&mut state) % 15) as usize;
                let xsu = top_process(&spec, s, u, trial).map_err(|e| e.to_string())?;
                let xst = top_process(&spec, s, t, trial).map_err(|e| e.to_string())?;
                let xtu = top_process(&spec, t, u, trial).map_err(|e| e.to_string())?;
                if xsu > xst + xtu + 1e-9 {
                    return Err(format!(
                        "{name} trial {trial}: x_su {xsu} > x_st {xst} + x_tu {xtu}"
                    ));
                }
            }
            // sandwich bound along 100 streams, t <= 50
            for replica in 0..100u64 {
                let mut stream = forward_stream(&spec, replica);
                let a0 = stream.next_operator();
                let image = a0.apply_zero();
                let (lo, hi) = (image.min_coord(), image.max_coord());
                let mut with_a0 = image.clone();
                let mut without_a0 = StateVector::zeros(spec.dim);
                for t in 2..=50 {
                    let a = stream.next_operator();
                    with_a0 = a.apply(&with_a0);
                    without_a0 = a.apply(&without_a0);
                    let diff = psi(&with_a0) - psi(&without_a0);
                    if diff < lo - 1e-9 || diff > hi + 1e-9 {
                        return Err(format!(
                            "{name} replica {replica} t={t}: {diff} outside [{lo}, {hi}]"
                        ));
                    }
                }
            }
        }
        Ok(())
    });
}

// -------------------------------------------------------------------------
// supporting check: forward coupling time exists on every battery model
// with memory loss (keeps criterion 8/9 meaningful)
// -------------------------------------------------------------------------

#[test]
fn battery_models_couple() {
    for (name, spec) in battery() {
        let r = forward_coupling_time(&spec, 0, DEFAULT_CAP)
            .unwrap_or_else(|e| panic!("{name} failed to couple: {e}"));
        assert!(r >= 2, "{name}: coupling time {r}");
    }
    let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
    assert_eq!(ks_two_sample(&a, &a), 0.0);
}
