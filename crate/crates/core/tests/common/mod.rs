//! Shared oracles for the acceptance suite. These stay independent of the
//! implementation paths they check: the rank oracle probes the operator's
//! action directly, and the cycle-mean oracle enumerates simple cycles.

use mpx_core::algebra::{MaxPlusMatrix, ProjectivePoint, StateVector};
use mpx_core::models::{parse_model, ModelSpec};

pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform draw in [0, 1) from a splitmix64 state.
pub fn uniform(state: &mut u64) -> f64 {
    (splitmix64(state) >> 11) as f64 / (1u64 << 53) as f64
}

/// Decides rank 1 by probing the action: images of the `d` corner vectors
/// (0 at one coordinate, `-big` elsewhere) plus `n_random` random vectors
/// drawn uniformly in `[-big, big]^d` must collapse to one projective point.
pub fn probe_rank_oracle(a: &MaxPlusMatrix, big: f64, n_random: usize, seed: u64) -> bool {
    let d = a.dim();
    let mut images: Vec<ProjectivePoint> = Vec::with_capacity(d + n_random);
    for j in 0..d {
        let coords: Vec<f64> = (0..d).map(|i| if i == j { 0.0 } else { -big }).collect();
        images.push(ProjectivePoint::from_vector(&a.apply(&StateVector::new(coords).unwrap())));
    }
    let mut state = seed;
    for _ in 0..n_random {
        let coords: Vec<f64> = (0..d).map(|_| (2.0 * uniform(&mut state) - 1.0) * big).collect();
        images.push(ProjectivePoint::from_vector(&a.apply(&StateVector::new(coords).unwrap())));
    }
    let first = &images[0];
    images.iter().all(|p| p.eq_within(first, 0.5))
}

/// Maximum mean over all simple cycles of a fully finite square matrix,
/// enumerated by depth-first search (each cycle visited once, rooted at its
/// minimal node).
pub fn max_cycle_mean(a: &MaxPlusMatrix) -> f64 {
    let d = a.dim();
    let mut best = f64::NEG_INFINITY;
    let mut path: Vec<usize> = Vec::new();
    let mut on_path = vec![false; d];

    // depth-first search with an explicit stack; cycles are rooted at their
    // minimal node so each simple cycle is counted exactly once
    for root in 0..d {
        // stack entries: (node, next candidate successor, sum up to node)
        path.clear();
        on_path.iter_mut().for_each(|v| *v = false);
        let mut stack: Vec<(usize, usize, f64)> = vec![(root, 0, 0.0)];
        on_path[root] = true;
        path.push(root);
        while let Some((node, next, sum)) = stack.pop() {
            if next >= d {
                on_path[node] = false;
                path.pop();
                continue;
            }
            stack.push((node, next + 1, sum));
            let succ = next;
            let w = a.get(node, succ);
            if succ == root {
                let mean = (sum + w) / path.len() as f64;
                if mean > best {
                    best = mean;
                }
            } else if succ > root && !on_path[succ] {
                on_path[succ] = true;
                path.push(succ);
                stack.push((succ, 0, sum + w));
            }
        }
    }
    best
}

/// Loads one of the shipped model documents relative to the workspace root.
pub fn load_shipped_model(name: &str) -> ModelSpec {
    let path = format!("{}/../../models/{name}", env!("CARGO_MANIFEST_DIR"));
    let text = std::fs::read_to_string(&path)
        .unwrap_or_else(|e| panic!("cannot read shipped model {path}: {e}"));
    parse_model(&text).unwrap_or_else(|e| panic!("cannot parse shipped model {path}: {e}"))
}

/// Runs one criterion body, printing a single PASS/FAIL line.
pub fn criterion<F: FnOnce() -> Result<(), String>>(id: usize, name: &str, body: F) {
    match body() {
        Ok(()) => println!("ACCEPTANCE {id} ({name}): PASS"),
        Err(msg) => {
            println!("ACCEPTANCE {id} ({name}): FAIL - {msg}");
            panic!("acceptance criterion {id} ({name}) failed: {msg}");
        }
    }
}
