//! Seeded randomized property suites for the compositionality and
//! completeness results. Each suite builds a random network of small
//! finite components, derives per-component abstractions by
//! output-preserving state merging, and checks the claimed relation or
//! controller equality with the independent checkers.
//!
//! Merging only groups states with identical admissible-input sets.
//! Without that restriction the product relation of merged abstractions
//! can miss condition (iii) even though every per-component premise holds,
//! because a concrete component can move under the exact neighbor-output
//! internal symbol while its cluster only admits a different one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::composition::{check_compatibility, compose, Composed, Network, Scope};
use crate::metrics::Pseudometric;
use crate::relations::{check_alt_simulation, check_simulation, compose_relations, Relation};
use crate::synthesis::{
    bottom_up_synthesis, completeness_check, maximal_safety_controller, project_controller_check,
    project_controller_check_with, SafeSet,
};
use crate::ts::{Controller, TransitionSystem, TransitionSystemBuilder};

/// Generator parameters for the randomized suites; the acceptance test
/// configuration file mirrors these defaults.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub min_components: usize,
    pub max_components: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub ext_inputs: usize,
    pub edge_density: f64,
    pub transition_density: f64,
    pub max_successors: usize,
    pub merge_probability: f64,
    /// When set, internal alphabets are quantized to this lattice instead
    /// of matching neighbor outputs exactly, giving a nonzero measured
    /// compatibility radius delta.
    pub delta_quantization: Option<f64>,
    /// When set, a state either accepts every internal symbol under an
    /// enabled external input or none: the shape of components whose
    /// dynamics are defined for all neighbor outputs. The compositionality
    /// theorems quantify over such components; with arbitrary per-symbol
    /// blocking, a concrete composed state can be stuck while the merged
    /// abstraction still offers the move, which no relation can absorb.
    pub internal_total: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            min_components: 2,
            max_components: 3,
            min_states: 3,
            max_states: 6,
            ext_inputs: 2,
            edge_density: 0.5,
            transition_density: 0.3,
            max_successors: 2,
            merge_probability: 0.5,
            delta_quantization: None,
            internal_total: false,
        }
    }
}

pub struct RandomNet {
    pub network: Network,
    /// Measured compatibility radius per component (0 when alphabets match
    /// neighbor outputs exactly).
    pub delta: Vec<f64>,
}

/// Builds a random network whose internal alphabets cover all neighbor
/// output tuples within the measured `delta`.
pub fn random_network(cfg: &SuiteConfig, seed: u64) -> RandomNet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(cfg.min_components..=cfg.max_components);
    let sizes: Vec<usize> = (0..n)
        .map(|_| rng.gen_range(cfg.min_states..=cfg.max_states))
        .collect();
    let mut neighbor_sets: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen_bool(cfg.edge_density) {
                neighbor_sets[i].push(j);
            }
        }
    }
    let outputs: Vec<Vec<Vec<f64>>> = sizes
        .iter()
        .map(|&sz| (0..sz).map(|_| vec![0.5 * rng.gen_range(0..6) as f64]).collect())
        .collect();

    let mut comps = Vec::new();
    let mut delta = Vec::new();
    for i in 0..n {
        // All neighbor-output tuples, then optionally lattice-quantized.
        let mut tuples: Vec<Vec<f64>> = vec![vec![]];
        for &j in &neighbor_sets[i] {
            let mut next = Vec::new();
            for prefix in &tuples {
                for out in &outputs[j] {
                    let mut v = prefix.clone();
                    v.extend_from_slice(out);
                    next.push(v);
                }
            }
            tuples = next;
        }
        let int_space = Pseudometric::max_over(
            neighbor_sets[i]
                .iter()
                .map(|_| Pseudometric::Linf { dim: 1 })
                .collect(),
        );
        let int_values: Vec<Vec<f64>> = match cfg.delta_quantization {
            None => {
                let mut vs = tuples.clone();
                vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                vs.dedup();
                vs
            }
            Some(q) => {
                let mut vs: Vec<Vec<f64>> = tuples
                    .iter()
                    .map(|t| t.iter().map(|x| (x / q).round() * q).collect())
                    .collect();
                vs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                vs.dedup();
                vs
            }
        };
        let d_i = tuples
            .iter()
            .map(|t| {
                int_values
                    .iter()
                    .map(|v| int_space.distance_unchecked(v, t))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        delta.push(d_i);

        let mut b = TransitionSystemBuilder::new(
            outputs[i].clone(),
            (0..cfg.ext_inputs).map(|u| vec![u as f64]).collect(),
            int_values.clone(),
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
            int_space,
        )
        .all_initial();
        for x in 0..sizes[i] {
            for ue in 0..cfg.ext_inputs {
                if cfg.internal_total {
                    if rng.gen_bool(cfg.transition_density.max(0.5)) {
                        for ui in 0..int_values.len() {
                            let k = rng.gen_range(1..=cfg.max_successors);
                            for _ in 0..k {
                                b.add(x, ue, ui, rng.gen_range(0..sizes[i]));
                            }
                        }
                    }
                } else {
                    for ui in 0..int_values.len() {
                        if rng.gen_bool(cfg.transition_density) {
                            let k = rng.gen_range(1..=cfg.max_successors);
                            for _ in 0..k {
                                b.add(x, ue, ui, rng.gen_range(0..sizes[i]));
                            }
                        }
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
    RandomNet {
        network: Network::new(comps, edges).unwrap(),
        delta,
    }
}

/// A merged abstraction of one component: states with identical admissible
/// input sets are randomly clustered; the cluster output is the first
/// member's output, the measured epsilon is the worst member distance, and
/// the cluster's successors are the member successor clusters. The
/// membership relation is an (eps, 0)-alternating simulation from the
/// abstraction to the component and an (eps, 0)-simulation from the
/// component to the abstraction.
pub fn merge_abstraction(
    sys: &TransitionSystem,
    merge_probability: f64,
    rng: &mut ChaCha8Rng,
) -> (TransitionSystem, Relation, f64) {
    let n = sys.num_states();
    let mut cluster_of = vec![usize::MAX; n];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    // Group by admissibility profile, then chain-merge within groups.
    let mut profiles: Vec<(Vec<(u32, u32)>, Vec<usize>)> = Vec::new();
    for x in 0..n {
        let prof = sys.admissible_inputs(x).unwrap();
        match profiles.iter_mut().find(|(p, _)| *p == prof) {
            Some((_, members)) => members.push(x),
            None => profiles.push((prof, vec![x])),
        }
    }
    for (_, members) in &profiles {
        let mut current: Option<usize> = None;
        for &x in members {
            match current {
                Some(c) if rng.gen_bool(merge_probability) => {
                    clusters[c].push(x);
                    cluster_of[x] = c;
                }
                _ => {
                    cluster_of[x] = clusters.len();
                    current = Some(clusters.len());
                    clusters.push(vec![x]);
                }
            }
        }
    }

    let mut eps = 0.0f64;
    let outputs: Vec<Vec<f64>> = clusters
        .iter()
        .map(|members| {
            let rep = sys.output(members[0]).to_vec();
            for &x in members {
                eps = eps.max(
                    sys.output_space()
                        .distance_unchecked(sys.output(x), &rep),
                );
            }
            rep
        })
        .collect();

    let ext_values: Vec<Vec<f64>> = (0..sys.ext_count()).map(|u| sys.ext_value(u).to_vec()).collect();
    let int_values: Vec<Vec<f64>> = (0..sys.int_count()).map(|v| sys.int_value(v).to_vec()).collect();
    let mut b = TransitionSystemBuilder::new(
        outputs,
        ext_values,
        int_values,
        sys.output_space().clone(),
        sys.ext_space().clone(),
        sys.int_space().clone(),
    )
    .all_initial();
    for (c, members) in clusters.iter().enumerate() {
        for &x in members {
            for m in sys.moves_from(x) {
                for &xn in &m.succ {
                    b.add(c, m.ext as usize, m.int as usize, cluster_of[xn as usize]);
                }
            }
        }
    }
    let abs = b.finish().unwrap();
    let pairs: Vec<(usize, usize)> = (0..n).map(|x| (x, cluster_of[x])).collect();
    let r = Relation::from_pairs(n, abs.num_states(), eps, 0.0, &pairs);
    (abs, r, eps)
}

fn abstract_network(rn: &RandomNet, cfg: &SuiteConfig, rng: &mut ChaCha8Rng) -> (Network, Vec<Relation>, Vec<f64>) {
    let mut systems = Vec::new();
    let mut rels = Vec::new();
    let mut epss = Vec::new();
    for i in 0..rn.network.len() {
        let (abs, r, e) = merge_abstraction(rn.network.component(i), cfg.merge_probability, rng);
        systems.push(abs);
        rels.push(r);
        epss.push(e);
    }
    let net = rn
        .network
        .with_components(systems)
        .expect("merged components preserve the network structure");
    (net, rels, epss)
}

fn compose_both(
    rn: &RandomNet,
    abs_net: &Network,
    epss: &[f64],
) -> Result<(Composed, Composed, Vec<f64>), String> {
    let n = rn.network.len();
    let eps = epss.iter().cloned().fold(0.0, f64::max);
    let m: Vec<f64> = rn.delta.clone();
    let m_hat: Vec<f64> = (0..n).map(|i| 0.0 + rn.delta[i] + eps).collect();
    let s_m = compose(&rn.network, &m, Scope::Full).map_err(|e| format!("concrete compose: {e}"))?;
    let s_hat = compose(abs_net, &m_hat, Scope::Full).map_err(|e| format!("abstract compose: {e}"))?;
    Ok((s_m, s_hat, m_hat))
}

/// One suite instance outcome.
pub type SuiteResult = Result<(), String>;

/// Compositionality of alternating simulation relations: the product of
/// the component relations relates the composed abstraction to the
/// composed concrete system at (max eps_i, max mu_i).
pub fn theorem1_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let cfg = SuiteConfig {
        internal_total: true,
        ..cfg.clone()
    };
    let rn = random_network(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let (abs_net, rels, epss) = abstract_network(&rn, &cfg, &mut rng);
    for i in 0..rn.network.len() {
        let pre = check_alt_simulation(rn.network.component(i), abs_net.component(i), &rels[i], epss[i], 0.0)
            .map_err(|e| e.to_string())?;
        if !pre.ok {
            return Err(format!("premise failed for component {i}: {:?}", pre.violation));
        }
    }
    let (s_m, s_hat, _) = compose_both(&rn, &abs_net, &epss)?;
    let eps = epss.iter().cloned().fold(0.0, f64::max);
    let r = compose_relations(&rels, &s_m, &s_hat).map_err(|e| e.to_string())?;
    let out = check_alt_simulation(&s_m.system, &s_hat.system, &r, eps, 0.0).map_err(|e| e.to_string())?;
    if !out.ok {
        return Err(format!("composed alternating check failed: {:?}", out.violation));
    }
    Ok(())
}

/// Dual compositionality for plain simulation relations.
pub fn theorem2_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let cfg = SuiteConfig {
        internal_total: true,
        ..cfg.clone()
    };
    let rn = random_network(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0002);
    let (abs_net, rels, epss) = abstract_network(&rn, &cfg, &mut rng);
    for i in 0..rn.network.len() {
        let pre = check_simulation(rn.network.component(i), abs_net.component(i), &rels[i], epss[i], 0.0)
            .map_err(|e| e.to_string())?;
        if !pre.ok {
            return Err(format!("premise failed for component {i}: {:?}", pre.violation));
        }
    }
    let (s_m, s_hat, _) = compose_both(&rn, &abs_net, &epss)?;
    let eps = epss.iter().cloned().fold(0.0, f64::max);
    let r = compose_relations(&rels, &s_m, &s_hat).map_err(|e| e.to_string())?;
    let out = check_simulation(&s_m.system, &s_hat.system, &r, eps, 0.0).map_err(|e| e.to_string())?;
    if !out.ok {
        return Err(format!("composed simulation check failed: {:?}", out.violation));
    }
    Ok(())
}

fn random_safes(net: &Network, rng: &mut ChaCha8Rng) -> Vec<SafeSet> {
    (0..net.len())
        .map(|i| {
            SafeSet::from_states(
                (0..net.component(i).num_states()).filter(|_| rng.gen_bool(0.75)),
            )
        })
        .collect()
}

/// Completeness of bottom-up synthesis: pointwise equality with the
/// monolithic maximal controller over the full product.
pub fn theorem3_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let cfg = SuiteConfig {
        delta_quantization: Some(0.25),
        ..cfg.clone()
    };
    let rn = random_network(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0003);
    let safes = random_safes(&rn.network, &mut rng);
    let out = completeness_check(&rn.network, &safes, &rn.delta).map_err(|e| e.to_string())?;
    if !out.equal {
        return Err(format!("bottom-up controller differs: {:?}", out.witness));
    }
    Ok(())
}

/// Monotonicity of approximate composition: composing with a larger
/// parameter only adds transitions, and the identity is a (0,0)-simulation
/// from the tighter product to the looser one.
pub fn claim1_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let cfg = SuiteConfig {
        delta_quantization: Some(0.25),
        ..cfg.clone()
    };
    let rn = random_network(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c1a1);
    let m = rn.delta.clone();
    let m_bar: Vec<f64> = m.iter().map(|&x| x + 0.25 * rng.gen_range(0..3) as f64).collect();
    let a = compose(&rn.network, &m, Scope::Full).map_err(|e| e.to_string())?;
    let compat = check_compatibility(&rn.network, &m_bar).map_err(|e| e.to_string())?;
    if !compat.compatible {
        return Err("larger parameter lost compatibility".into());
    }
    let b = compose(&rn.network, &m_bar, Scope::Full).map_err(|e| e.to_string())?;
    // Transition superset.
    for x in 0..a.system.num_states() {
        for mv in a.system.moves_from(x) {
            let sup = b.system.successors(x, mv.ext as usize, mv.int as usize).map_err(|e| e.to_string())?;
            for s in &mv.succ {
                if !sup.contains(s) {
                    return Err(format!("transition ({x},{},{s}) lost under larger M", mv.ext));
                }
            }
        }
    }
    let id = Relation::identity(a.system.num_states(), 0.0, 0.0);
    let out = check_simulation(&a.system, &b.system, &id, 0.0, 0.0).map_err(|e| e.to_string())?;
    if !out.ok {
        return Err(format!("identity not a (0,0)-simulation: {:?}", out.violation));
    }
    Ok(())
}

/// Controlled systems are (0,0)-alternately simulated by their plants
/// through the identity-on-domain relation, for arbitrary valid
/// controllers.
pub fn lemma1_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e01);
    let n = rng.gen_range(cfg.min_states..=cfg.max_states);
    let sys = crate::randsys::random_system(&mut rng, n, cfg.ext_inputs, 2, 0.5, cfg.max_successors);
    let mut c = Controller::empty(n);
    for x in 0..n {
        for (ue, ui) in sys.admissible_inputs(x).unwrap() {
            if rng.gen_bool(0.6) {
                c.enable(x, ue as usize, ui as usize);
            }
        }
    }
    let (sc, kept) = sys.restrict_with_controller(&c).map_err(|e| e.to_string())?;
    let pairs: Vec<(usize, usize)> = kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
    let r = Relation::from_pairs(sys.num_states(), sc.num_states(), 0.0, 0.0, &pairs);
    let out = check_alt_simulation(&sys, &sc, &r, 0.0, 0.0).map_err(|e| e.to_string())?;
    if !out.ok {
        return Err(format!("S|C not alternately simulated by S: {:?}", out.violation));
    }
    Ok(())
}

/// Projection of the global maximal controller onto components, plus the
/// mutation direction: corrupting a local controller is detected.
pub fn lemma2_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let cfg = SuiteConfig {
        delta_quantization: Some(0.25),
        ..cfg.clone()
    };
    let rn = random_network(&cfg, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1e02);
    let safes = random_safes(&rn.network, &mut rng);
    let composed = compose(&rn.network, &rn.delta, Scope::Full).map_err(|e| e.to_string())?;
    let safe_states: Vec<usize> = (0..composed.system.num_states())
        .filter(|&id| {
            let t = composed.index.decode(id);
            (0..rn.network.len()).all(|i| safes[i].contains(rn.network.component(i), t[i]))
        })
        .collect();
    let (c_star, _) = maximal_safety_controller(&composed.system, &SafeSet::from_states(safe_states));
    let out = project_controller_check(&c_star, &composed, &rn.network, &rn.delta, &safes)
        .map_err(|e| e.to_string())?;
    if !out.ok {
        return Err(format!("projection property failed: {:?}", out.witness));
    }
    // Mutation: drop one enabled local entry that the global controller
    // exercises; the check must then fail.
    let locals: Vec<Controller> = (0..rn.network.len())
        .map(|i| maximal_safety_controller(rn.network.component(i), &safes[i]).0)
        .collect();
    if let Some((i, x, pair)) = first_exercised_local_entry(&c_star, &composed, &rn.network, &rn.delta) {
        let mut corrupted = locals.clone();
        corrupted[i].disable(x, pair.0 as usize, pair.1 as usize);
        let out = project_controller_check_with(&c_star, &composed, &rn.network, &rn.delta, &corrupted)
            .map_err(|e| e.to_string())?;
        if out.ok {
            return Err("corrupted local controller went undetected".into());
        }
    }
    Ok(())
}

fn first_exercised_local_entry(
    c_star: &Controller,
    composed: &Composed,
    net: &Network,
    m: &[f64],
) -> Option<(usize, usize, (u32, u32))> {
    for id in 0..composed.system.num_states() {
        for &(code, _) in c_star.enabled(id) {
            let tuple = composed.index.decode(id);
            let combo = composed.decode_ext(code as usize);
            for i in 0..net.len() {
                let nbr = net.neighbor_output_tuple(i, &tuple);
                if let Some(&v) = net.internal_ball(i, &nbr, m[i]).first() {
                    return Some((i, tuple[i], (combo[i] as u32, v)));
                }
            }
        }
    }
    None
}

/// Local controllers that are full admissibility maps make bottom-up
/// composition identical to plain composition; used as a sanity property.
pub fn bottom_up_trivial_instance(cfg: &SuiteConfig, seed: u64) -> SuiteResult {
    let rn = random_network(cfg, seed);
    let safes: Vec<SafeSet> = (0..rn.network.len())
        .map(|i| SafeSet::from_states(0..rn.network.component(i).num_states()))
        .collect();
    // With all states safe, the local maximal controllers keep every state
    // that is not deadlocked; completeness must still hold.
    let out = completeness_check(&rn.network, &safes, &rn.delta).map_err(|e| e.to_string())?;
    if !out.equal {
        return Err(format!("completeness failed with full safe sets: {:?}", out.witness));
    }
    let _ = bottom_up_synthesis(&rn.network, &safes, &rn.delta, Scope::Full).map_err(|e| e.to_string())?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremSuite {
    Theorem1,
    Theorem2,
    Theorem3,
    Claim1,
    Lemma1,
    Lemma2,
}

impl TheoremSuite {
    pub fn parse(s: &str) -> Option<TheoremSuite> {
        match s {
            "1" | "theorem1" => Some(TheoremSuite::Theorem1),
            "2" | "theorem2" => Some(TheoremSuite::Theorem2),
            "3" | "theorem3" => Some(TheoremSuite::Theorem3),
            "claim1" => Some(TheoremSuite::Claim1),
            "lemma1" => Some(TheoremSuite::Lemma1),
            "lemma2" => Some(TheoremSuite::Lemma2),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TheoremSuite::Theorem1 => "theorem1",
            TheoremSuite::Theorem2 => "theorem2",
            TheoremSuite::Theorem3 => "theorem3",
            TheoremSuite::Claim1 => "claim1",
            TheoremSuite::Lemma1 => "lemma1",
            TheoremSuite::Lemma2 => "lemma2",
        }
    }

    pub fn run_instance(&self, cfg: &SuiteConfig, seed: u64) -> SuiteResult {
        match self {
            TheoremSuite::Theorem1 => theorem1_instance(cfg, seed),
            TheoremSuite::Theorem2 => theorem2_instance(cfg, seed),
            TheoremSuite::Theorem3 => theorem3_instance(cfg, seed),
            TheoremSuite::Claim1 => claim1_instance(cfg, seed),
            TheoremSuite::Lemma1 => lemma1_instance(cfg, seed),
            TheoremSuite::Lemma2 => lemma2_instance(cfg, seed),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: &'static str,
    pub passed: usize,
    pub failures: Vec<(u64, String)>,
}

impl SuiteReport {
    pub fn all_passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Runs `count` seeded instances starting at `base_seed`.
pub fn run_suite(which: TheoremSuite, cfg: &SuiteConfig, base_seed: u64, count: u64) -> SuiteReport {
    let mut passed = 0usize;
    let mut failures = Vec::new();
    for k in 0..count {
        let seed = base_seed + k;
        match which.run_instance(cfg, seed) {
            Ok(()) => passed += 1,
            Err(msg) => failures.push((seed, msg)),
        }
    }
    SuiteReport {
        suite: which.name(),
        passed,
        failures,
    }
}
