//! Seeded random finite systems for property tests and the randomized
//! theorem suites. Outputs are scalar; input symbols carry scalar values so
//! that input-distance constraints are exercised.

use rand::{Rng, SeedableRng};

use crate::composition::Network;
use crate::metrics::Pseudometric;
use crate::ts::{TransitionSystem, TransitionSystemBuilder};

/// A random system: every state initial, outputs on a 0.5-spaced lattice,
/// `density` chance per (state, ext, int) of being admissible with 1..=max_succ
/// successors.
pub fn random_system(
    rng: &mut impl Rng,
    n: usize,
    n_ext: usize,
    n_int: usize,
    density: f64,
    max_succ: usize,
) -> TransitionSystem {
    let outputs = (0..n)
        .map(|_| vec![0.5 * rng.gen_range(0..6) as f64])
        .collect();
    let ext_values = (0..n_ext).map(|u| vec![u as f64]).collect();
    let int_values = (0..n_int).map(|v| vec![0.5 * v as f64]).collect();
    let mut b = TransitionSystemBuilder::new(
        outputs,
        ext_values,
        int_values,
        Pseudometric::Linf { dim: 1 },
        Pseudometric::Linf { dim: 1 },
        Pseudometric::Linf { dim: 1 },
    )
    .all_initial();
    for x in 0..n {
        for ue in 0..n_ext {
            for ui in 0..n_int {
                if rng.gen_bool(density) {
                    let k = rng.gen_range(1..=max_succ);
                    for _ in 0..k {
                        b.add(x, ue, ui, rng.gen_range(0..n));
                    }
                }
            }
        }
    }
    b.finish().unwrap()
}

/// As `random_system` but with at most one successor per input pair.
pub fn random_deterministic_system(
    rng: &mut impl Rng,
    n: usize,
    n_ext: usize,
    n_int: usize,
    density: f64,
) -> TransitionSystem {
    random_system(rng, n, n_ext, n_int, density, 1)
}

/// A small random network whose internal alphabets are exactly the
/// neighbor-output tuples, so it is compatible for exact composition
/// (M = 0). Used by tests that need a ready-made composable family.
pub fn random_exact_network(seed: u64) -> Network {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3);
    let sizes: Vec<usize> = (0..n).map(|_| rng.gen_range(2..=4)).collect();
    let mut neighbor_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(0.5) {
                neighbor_sets[i].push(j);
            }
        }
    }
    let outputs: Vec<Vec<Vec<f64>>> = sizes
        .iter()
        .map(|&sz| (0..sz).map(|_| vec![0.5 * rng.gen_range(0..5) as f64]).collect())
        .collect();
    let mut comps = Vec::new();
    for i in 0..n {
        let mut int_values: Vec<Vec<f64>> = vec![vec![]];
        for &j in &neighbor_sets[i] {
            let mut next = Vec::new();
            for prefix in &int_values {
                for out in &outputs[j] {
                    let mut v = prefix.clone();
                    v.extend_from_slice(out);
                    next.push(v);
                }
            }
            int_values = next;
        }
        let int_space = Pseudometric::max_over(
            neighbor_sets[i]
                .iter()
                .map(|_| Pseudometric::Linf { dim: 1 })
                .collect(),
        );
        let mut b = TransitionSystemBuilder::new(
            outputs[i].clone(),
            (0..2).map(|u| vec![u as f64]).collect(),
            int_values.clone(),
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
            int_space,
        )
        .all_initial();
        for x in 0..sizes[i] {
            for ue in 0..2 {
                for ui in 0..int_values.len() {
                    if rng.gen_bool(0.45) {
                        b.add(x, ue, ui, rng.gen_range(0..sizes[i]));
                    }
                }
            }
        }
        comps.push(b.finish().unwrap());
    }
    let edges: Vec<(usize, usize)> = neighbor_sets
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.iter().map(move |&j| (j, i)))
        .collect();
    Network::new(comps, edges).unwrap()
}
