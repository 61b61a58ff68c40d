//! Safety controller synthesis: the maximal controlled invariant fixed
//! point, maximal controller extraction, the bottom-up pipeline over a
//! network of abstractions, completeness verification against monolithic
//! synthesis, and controller projection/refinement.

use serde::{Deserialize, Serialize};

use crate::composition::{compose, Composed, Network, Scope};
use crate::error::{Error, Result};
use crate::metrics::leq;
use crate::relations::Relation;
use crate::ts::{Controller, TransitionSystem};

/// A safety predicate over states: an explicit subset, or an output
/// hyper-rectangle evaluated through the output map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SafeSet {
    States { states: Vec<u32> },
    OutputBox { lo: Vec<f64>, hi: Vec<f64> },
}

impl SafeSet {
    pub fn from_states(states: impl IntoIterator<Item = usize>) -> SafeSet {
        let mut v: Vec<u32> = states.into_iter().map(|x| x as u32).collect();
        v.sort_unstable();
        v.dedup();
        SafeSet::States { states: v }
    }

    pub fn output_box(lo: Vec<f64>, hi: Vec<f64>) -> SafeSet {
        SafeSet::OutputBox { lo, hi }
    }

    pub fn contains(&self, s: &TransitionSystem, x: usize) -> bool {
        match self {
            SafeSet::States { states } => states.binary_search(&(x as u32)).is_ok(),
            SafeSet::OutputBox { lo, hi } => {
                let y = s.output(x);
                y.len() == lo.len()
                    && y.iter()
                        .zip(lo.iter().zip(hi))
                        .all(|(&v, (&l, &h))| leq(l, v) && leq(v, h))
            }
        }
    }

    pub fn mask(&self, s: &TransitionSystem) -> Vec<bool> {
        (0..s.num_states()).map(|x| self.contains(s, x)).collect()
    }
}

/// Report written next to synthesized controllers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub cont_size: usize,
    pub iterations: usize,
    pub controller_transitions: usize,
}

/// The greatest subset A of the safe set such that every state of A has an
/// admissible input pair whose successors all stay in A. Computed by the
/// standard shrinking fixed point from the safe set, in bulk-synchronous
/// rounds: each round's removals are decided against the previous round's
/// candidate set, so the result is independent of sweep order.
pub fn maximal_controlled_invariant(s: &TransitionSystem, safe: &SafeSet) -> (Vec<usize>, usize) {
    let mut alive = safe.mask(s);
    let mut rounds = 0usize;
    loop {
        let mut removed = false;
        let next: Vec<bool> = (0..s.num_states())
            .map(|x| {
                if !alive[x] {
                    return false;
                }
                s.moves_from(x)
                    .iter()
                    .any(|m| m.succ.iter().all(|&xn| alive[xn as usize]))
            })
            .collect();
        for x in 0..s.num_states() {
            if alive[x] && !next[x] {
                removed = true;
            }
        }
        alive = next;
        if !removed {
            break;
        }
        rounds += 1;
    }
    (
        (0..s.num_states()).filter(|&x| alive[x]).collect(),
        rounds,
    )
}

/// The maximal safety controller: dom(C*) is the maximal controlled
/// invariant, and C*(x) enables exactly the admissible pairs whose
/// successors stay inside it.
pub fn maximal_safety_controller(
    s: &TransitionSystem,
    safe: &SafeSet,
) -> (Controller, SynthesisReport) {
    let (cont, iterations) = maximal_controlled_invariant(s, safe);
    let mut inside = vec![false; s.num_states()];
    for &x in &cont {
        inside[x] = true;
    }
    let mut c = Controller::empty(s.num_states());
    for &x in &cont {
        for m in s.moves_from(x) {
            if m.succ.iter().all(|&xn| inside[xn as usize]) {
                c.enable(x, m.ext as usize, m.int as usize);
            }
        }
    }
    let report = SynthesisReport {
        cont_size: cont.len(),
        iterations,
        controller_transitions: c.entry_count(),
    };
    (c, report)
}

/// Both conditions of the safety-controller definition: the domain lies in
/// the safe set and every enabled move keeps the system in the domain.
pub fn is_safety_controller(s: &TransitionSystem, c: &Controller, safe: &SafeSet) -> bool {
    if c.validate_against(s).is_err() {
        return false;
    }
    let dom: Vec<usize> = c.domain();
    let mut in_dom = vec![false; s.num_states()];
    for &x in &dom {
        in_dom[x] = true;
    }
    dom.iter().all(|&x| safe.contains(s, x))
        && dom.iter().all(|&x| {
            c.enabled(x).iter().all(|&(ue, ui)| {
                s.successors_unchecked(x, ue, ui)
                    .iter()
                    .all(|&xn| in_dom[xn as usize])
            })
        })
}

/// Everything the bottom-up pipeline produces: per-component maximal
/// controllers with their kept-state maps, the composition of the
/// controlled components, the global controller on it, and size reports
/// for both stages.
pub struct BottomUpOutcome {
    pub local_controllers: Vec<Controller>,
    pub local_reports: Vec<SynthesisReport>,
    /// new -> old state maps of the controlled components.
    pub kept_maps: Vec<Vec<usize>>,
    pub controlled_network: Network,
    pub composed: Composed,
    pub controller: Controller,
    pub report: SynthesisReport,
    /// (states, transitions) of the composed controlled system before the
    /// global synthesis stage.
    pub composed_size: (usize, usize),
}

/// Bottom-up synthesis over a network of (abstract) components: maximal
/// local safety controllers, M-approximate composition of the controlled
/// components, then the maximal global controller for the product safe set.
pub fn bottom_up_synthesis(
    net: &Network,
    safes: &[SafeSet],
    m: &[f64],
    scope: Scope,
) -> Result<BottomUpOutcome> {
    if safes.len() != net.len() {
        return Err(Error::InvalidNetwork(format!(
            "{} safe sets for {} components",
            safes.len(),
            net.len()
        )));
    }
    let mut locals = Vec::new();
    let mut local_reports = Vec::new();
    let mut kept_maps = Vec::new();
    let mut restricted = Vec::new();
    for i in 0..net.len() {
        let (ci, rep) = maximal_safety_controller(net.component(i), &safes[i]);
        let (sys, kept) = net.component(i).restrict_with_controller(&ci)?;
        locals.push(ci);
        local_reports.push(rep);
        kept_maps.push(kept);
        restricted.push(sys);
    }
    let controlled_network = net.with_components(restricted)?;
    let composed = compose(&controlled_network, m, scope)?;
    let composed_size = (composed.system.num_states(), composed.system.transition_count());
    // The global safe set: a composed state is safe iff every component
    // projection (mapped back to the original indices) is locally safe.
    // For maximal local controllers every kept state is safe, but target
    // states of arbitrary controllers need not be.
    let safe_states: Vec<usize> = (0..composed.system.num_states())
        .filter(|&id| {
            let tuple = composed.index.decode(id);
            (0..net.len()).all(|i| safes[i].contains(net.component(i), kept_maps[i][tuple[i]]))
        })
        .collect();
    let global_safe = SafeSet::from_states(safe_states);
    let (controller, report) = maximal_safety_controller(&composed.system, &global_safe);
    Ok(BottomUpOutcome {
        local_controllers: locals,
        local_reports,
        kept_maps,
        controlled_network,
        composed,
        controller,
        report,
        composed_size,
    })
}

#[derive(Debug, Clone)]
pub struct CompletenessOutcome {
    pub equal: bool,
    /// First differing full-product state with both enabled external-input
    /// sets, when unequal.
    pub witness: Option<(Vec<usize>, Vec<usize>, Vec<usize>)>,
    pub monolithic_report: SynthesisReport,
    pub bottom_up_report: SynthesisReport,
}

/// Runs both pipelines on the full product state set and compares enabled
/// external-input sets pointwise.
pub fn completeness_check(
    net: &Network,
    safes: &[SafeSet],
    m: &[f64],
) -> Result<CompletenessOutcome> {
    let mono = compose(net, m, Scope::Full)?;
    let safe_states: Vec<usize> = (0..mono.system.num_states())
        .filter(|&id| {
            let tuple = mono.index.decode(id);
            (0..net.len()).all(|i| safes[i].contains(net.component(i), tuple[i]))
        })
        .collect();
    let global_safe = SafeSet::from_states(safe_states);
    let (c_star, monolithic_report) = maximal_safety_controller(&mono.system, &global_safe);

    let bu = bottom_up_synthesis(net, safes, m, Scope::Full)?;

    // Map a full-product tuple into the bottom-up composed index (None when
    // some component state was pruned by its local controller).
    let old_to_new: Vec<Vec<Option<usize>>> = (0..net.len())
        .map(|i| {
            let mut v = vec![None; net.component(i).num_states()];
            for (new, &old) in bu.kept_maps[i].iter().enumerate() {
                v[old] = Some(new);
            }
            v
        })
        .collect();

    for id in 0..mono.system.num_states() {
        let tuple = mono.index.decode(id);
        let star: Vec<usize> = c_star
            .enabled(id)
            .iter()
            .map(|&(ue, _)| ue as usize)
            .collect();
        let bu_tuple: Option<Vec<usize>> = tuple
            .iter()
            .enumerate()
            .map(|(i, &x)| old_to_new[i][x])
            .collect();
        let bu_enabled: Vec<usize> = match bu_tuple {
            Some(t) => match bu.composed.index.encode(&t) {
                Some(bid) => bu
                    .controller
                    .enabled(bid)
                    .iter()
                    .map(|&(ue, _)| ue as usize)
                    .collect(),
                None => Vec::new(),
            },
            None => Vec::new(),
        };
        if star != bu_enabled {
            return Ok(CompletenessOutcome {
                equal: false,
                witness: Some((tuple, star, bu_enabled)),
                monolithic_report,
                bottom_up_report: bu.report,
            });
        }
    }
    Ok(CompletenessOutcome {
        equal: true,
        witness: None,
        monolithic_report,
        bottom_up_report: bu.report,
    })
}

#[derive(Debug, Clone)]
pub struct ProjectionOutcome {
    pub ok: bool,
    /// (composed state tuple, component, ext input, int input) of the first
    /// global controller entry whose projection is missing locally.
    pub witness: Option<(Vec<usize>, usize, usize, usize)>,
}

/// The controller-projection property: whenever the global maximal
/// controller enables an external combination at a composed state and an
/// internal symbol of component i lies within delta_i of the current
/// neighbor outputs, the local pair is enabled by the local maximal
/// controller.
pub fn project_controller_check(
    c_star: &Controller,
    composed: &Composed,
    net: &Network,
    m: &[f64],
    safes: &[SafeSet],
) -> Result<ProjectionOutcome> {
    let local: Vec<Controller> = (0..net.len())
        .map(|i| maximal_safety_controller(net.component(i), &safes[i]).0)
        .collect();
    project_controller_check_with(c_star, composed, net, m, &local)
}

/// As [`project_controller_check`] but against externally supplied local
/// controllers (mutation tests corrupt them deliberately).
pub fn project_controller_check_with(
    c_star: &Controller,
    composed: &Composed,
    net: &Network,
    m: &[f64],
    local: &[Controller],
) -> Result<ProjectionOutcome> {
    for id in 0..composed.system.num_states() {
        if c_star.enabled(id).is_empty() {
            continue;
        }
        let tuple = composed.index.decode(id);
        for &(code, _) in c_star.enabled(id) {
            let combo = composed.decode_ext(code as usize);
            for i in 0..net.len() {
                let nbr_tuple = net.neighbor_output_tuple(i, &tuple);
                for v in net.internal_ball(i, &nbr_tuple, m[i]) {
                    let pair = (combo[i] as u32, v);
                    if !local[i].enabled(tuple[i]).contains(&pair) {
                        return Ok(ProjectionOutcome {
                            ok: false,
                            witness: Some((tuple, i, combo[i], v as usize)),
                        });
                    }
                }
            }
        }
    }
    Ok(ProjectionOutcome { ok: true, witness: None })
}

/// A refined feedback choice at one concrete state.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinedChoice {
    pub abstract_state: usize,
    pub abstract_input: (u32, u32),
    pub concrete_input: (u32, u32),
}

/// State feedback for a finite concrete system, refined from an abstract
/// controller through an alternating simulation relation.
#[derive(Debug, Clone)]
pub struct RefinedMap {
    pub choices: Vec<Option<RefinedChoice>>,
}

/// Refines `c_abs` (a controller on the abstract side `s_hat`) into state
/// feedback for the finite concrete system `s` through `r`, which must be
/// an (eps, mu)-alternating simulation relation from `s_hat` to `s` (pairs
/// are (concrete, abstract)). For each concrete state the first related
/// abstract state in the controller domain is used, and the concrete input
/// is the alternating-condition witness: within mu of the abstract input,
/// with every concrete successor covered by a related abstract successor.
/// States with no usable related abstract state get `None`.
pub fn refine_controller(
    c_abs: &Controller,
    r: &Relation,
    s: &TransitionSystem,
    s_hat: &TransitionSystem,
) -> Result<RefinedMap> {
    let (n1, n2) = r.dims();
    if n1 != s.num_states() || n2 != s_hat.num_states() {
        return Err(Error::InvalidSystem(
            "relation dimensions do not match the systems".into(),
        ));
    }
    let mu = r.mu;
    let mut choices = Vec::with_capacity(s.num_states());
    for x in 0..s.num_states() {
        let mut chosen = None;
        'outer: for xh in r.image(x) {
            for &(ue, ui) in c_abs.enabled(xh) {
                let abs_succ = s_hat.successors_unchecked(xh, ue, ui);
                for m in s.moves_from(x) {
                    let de = s.ext_space().distance_unchecked(
                        s.ext_value(m.ext as usize),
                        s_hat.ext_value(ue as usize),
                    );
                    let di = s.int_space().distance_unchecked(
                        s.int_value(m.int as usize),
                        s_hat.int_value(ui as usize),
                    );
                    if !(mu.is_infinite() || (leq(de, mu) && leq(di, mu))) {
                        continue;
                    }
                    let covered = m.succ.iter().all(|&xn| {
                        abs_succ.iter().any(|&hn| r.contains(xn as usize, hn as usize))
                    });
                    if covered {
                        chosen = Some(RefinedChoice {
                            abstract_state: xh,
                            abstract_input: (ue, ui),
                            concrete_input: (m.ext, m.int),
                        });
                        break 'outer;
                    }
                }
            }
        }
        choices.push(chosen);
    }
    Ok(RefinedMap { choices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ts::testutil::t3;

    fn t3_safe01() -> SafeSet {
        SafeSet::from_states([0usize, 1])
    }

    #[test]
    fn t3_invariant_and_controller() {
        let s = t3();
        let (cont, _) = maximal_controlled_invariant(&s, &t3_safe01());
        assert_eq!(cont, vec![0, 1]);
        let (c, report) = maximal_safety_controller(&s, &t3_safe01());
        assert_eq!(c.enabled(0), &[(0, 0), (1, 0)]);
        assert_eq!(c.enabled(1), &[(1, 0)]);
        assert!(c.enabled(2).is_empty());
        assert_eq!(report.cont_size, 2);
        assert_eq!(report.controller_transitions, 3);
        assert!(is_safety_controller(&s, &c, &t3_safe01()));
    }

    #[test]
    fn closed_safe_set_is_its_own_invariant() {
        let s = t3();
        let safe = SafeSet::from_states([0usize, 1, 2]);
        let (cont, rounds) = maximal_controlled_invariant(&s, &safe);
        assert_eq!(cont, vec![0, 1, 2]);
        assert_eq!(rounds, 0);
    }

    #[test]
    fn empty_safe_set_has_empty_invariant() {
        let s = t3();
        let (cont, _) = maximal_controlled_invariant(&s, &SafeSet::from_states([]));
        assert!(cont.is_empty());
        let (c, report) = maximal_safety_controller(&s, &SafeSet::from_states([]));
        assert_eq!(c.domain_size(), 0);
        assert_eq!(report.cont_size, 0);
    }

    #[test]
    fn invariant_matches_subset_enumeration_oracle() {
        use rand::SeedableRng;
        for seed in 0u64..50 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let n = 4 + (seed as usize % 9); // up to 12 states
            let s = crate::randsys::random_system(&mut rng, n, 2, 2, 0.35, 2);
            let safe_states: Vec<usize> = (0..n).filter(|_| rand::Rng::gen_bool(&mut rng, 0.7)).collect();
            let safe = SafeSet::from_states(safe_states.clone());
            let (cont, _) = maximal_controlled_invariant(&s, &safe);
            let brute = brute_force_union_of_invariants(&s, &safe_states);
            assert_eq!(cont, brute, "seed {seed}");
        }
    }

    fn brute_force_union_of_invariants(s: &TransitionSystem, safe: &[usize]) -> Vec<usize> {
        // Union of all controlled invariants, by subset enumeration.
        let n = s.num_states();
        assert!(n <= 16);
        let safe_mask: u32 = safe.iter().map(|&x| 1u32 << x).sum();
        let mut union = 0u32;
        for mask in 0u32..(1 << n) {
            if mask & !safe_mask != 0 {
                continue;
            }
            let invariant = (0..n).filter(|&x| (mask >> x) & 1 == 1).all(|x| {
                s.moves_from(x)
                    .iter()
                    .any(|m| m.succ.iter().all(|&xn| (mask >> xn) & 1 == 1))
            });
            if invariant {
                union |= mask;
            }
        }
        (0..n).filter(|&x| (union >> x) & 1 == 1).collect()
    }

    #[test]
    fn fixed_point_schedule_independence() {
        use rand::SeedableRng;
        for seed in 0u64..10 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 400);
            let s = crate::randsys::random_system(&mut rng, 8, 2, 2, 0.3, 2);
            let safe = SafeSet::from_states(0..6);
            let (bulk, _) = maximal_controlled_invariant(&s, &safe);
            // Eager descending-order in-place removal.
            let mut alive = safe.mask(&s);
            let mut changed = true;
            while changed {
                changed = false;
                for x in (0..s.num_states()).rev() {
                    if alive[x]
                        && !s
                            .moves_from(x)
                            .iter()
                            .any(|m| m.succ.iter().all(|&xn| alive[xn as usize]))
                    {
                        alive[x] = false;
                        changed = true;
                    }
                }
            }
            let eager: Vec<usize> = (0..s.num_states()).filter(|&x| alive[x]).collect();
            assert_eq!(bulk, eager, "seed {seed}");
        }
    }

    #[test]
    fn random_safety_controllers_are_dominated_by_the_maximal_one() {
        use rand::{Rng, SeedableRng};
        for seed in 0u64..20 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed + 900);
            let s = crate::randsys::random_system(&mut rng, 6, 2, 2, 0.5, 2);
            let safe = SafeSet::from_states(0..5);
            let (cstar, _) = maximal_safety_controller(&s, &safe);
            // Randomly shrink the maximal controller; any sub-controller
            // whose domain stays closed is a safety controller and must be
            // pointwise dominated.
            let mut c = cstar.clone();
            for x in 0..s.num_states() {
                for &(ue, ui) in cstar.enabled(x) {
                    if rng.gen_bool(0.4) {
                        c.disable(x, ue as usize, ui as usize);
                    }
                }
            }
            // Prune states whose every remaining move leaves the domain.
            loop {
                let dom: Vec<usize> = c.domain();
                let mut in_dom = vec![false; s.num_states()];
                for &x in &dom {
                    in_dom[x] = true;
                }
                let mut removed = false;
                for &x in &dom {
                    let bad: Vec<(u32, u32)> = c
                        .enabled(x)
                        .iter()
                        .copied()
                        .filter(|&(ue, ui)| {
                            !s.successors_unchecked(x, ue, ui)
                                .iter()
                                .all(|&xn| in_dom[xn as usize])
                        })
                        .collect();
                    for (ue, ui) in bad {
                        c.disable(x, ue as usize, ui as usize);
                        removed = true;
                    }
                }
                if !removed {
                    break;
                }
            }
            assert!(is_safety_controller(&s, &c, &safe), "seed {seed}");
            for x in 0..s.num_states() {
                for pair in c.enabled(x) {
                    assert!(cstar.enabled(x).contains(pair), "seed {seed}");
                }
            }
        }
    }

    #[test]
    fn refinement_with_identity_relation_is_the_abstract_controller() {
        let s = t3();
        let (c, _) = maximal_safety_controller(&s, &t3_safe01());
        let r = Relation::identity(3, 0.0, 0.0);
        let refined = refine_controller(&c, &r, &s, &s).unwrap();
        for x in 0..3 {
            match &refined.choices[x] {
                Some(ch) => {
                    assert_eq!(ch.abstract_state, x);
                    assert!(c.enabled(x).contains(&ch.concrete_input));
                }
                None => assert!(c.enabled(x).is_empty()),
            }
        }
    }
}
