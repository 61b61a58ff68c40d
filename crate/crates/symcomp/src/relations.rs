//! Checking and computing (epsilon, mu)-approximate simulation and
//! alternating simulation relations between finite systems.
//!
//! Conventions: a relation is a subset of `X1 x X2`. `check_simulation`
//! decides whether it is an (eps, mu)-approximate simulation *from S1 to
//! S2* (S1's moves are matched by S2). `check_alt_simulation` decides
//! whether it is an (eps, mu)-approximate alternating simulation *from S2
//! to S1* (S2 plays inputs, S1 answers), which is the abstraction-to-
//! concrete direction used for controller refinement. `mu = f64::INFINITY`
//! disables the input-distance constraint, recovering the classical
//! relations.

use serde::{Deserialize, Serialize};

use crate::composition::Composed;
use crate::error::{Error, Result};
use crate::metrics::leq;
use crate::ts::TransitionSystem;

/// A set of cross-system state pairs with the (eps, mu) budget it is
/// claimed at, stored as a bitset over the `|X1| x |X2|` pair grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation {
    n1: usize,
    n2: usize,
    pub eps: f64,
    pub mu: f64,
    bits: Vec<u64>,
}

impl Relation {
    pub fn empty(n1: usize, n2: usize, eps: f64, mu: f64) -> Relation {
        Relation {
            n1,
            n2,
            eps,
            mu,
            bits: vec![0; (n1 * n2 + 63) / 64],
        }
    }

    pub fn identity(n: usize, eps: f64, mu: f64) -> Relation {
        let mut r = Relation::empty(n, n, eps, mu);
        for x in 0..n {
            r.insert(x, x);
        }
        r
    }

    pub fn from_pairs(n1: usize, n2: usize, eps: f64, mu: f64, pairs: &[(usize, usize)]) -> Relation {
        let mut r = Relation::empty(n1, n2, eps, mu);
        for &(a, b) in pairs {
            r.insert(a, b);
        }
        r
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n1, self.n2)
    }

    #[inline]
    fn bit(&self, x1: usize, x2: usize) -> usize {
        x1 * self.n2 + x2
    }

    pub fn insert(&mut self, x1: usize, x2: usize) {
        let b = self.bit(x1, x2);
        self.bits[b >> 6] |= 1u64 << (b & 63);
    }

    pub fn remove(&mut self, x1: usize, x2: usize) {
        let b = self.bit(x1, x2);
        self.bits[b >> 6] &= !(1u64 << (b & 63));
    }

    #[inline]
    pub fn contains(&self, x1: usize, x2: usize) -> bool {
        let b = self.bit(x1, x2);
        (self.bits[b >> 6] >> (b & 63)) & 1 == 1
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        for x1 in 0..self.n1 {
            for x2 in 0..self.n2 {
                if self.contains(x1, x2) {
                    out.push((x1, x2));
                }
            }
        }
        out
    }

    /// Second components related to `x1`.
    pub fn image(&self, x1: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n2).filter(move |&x2| self.contains(x1, x2))
    }

    pub fn to_json(&self) -> JsonRelation {
        JsonRelation {
            eps: self.eps,
            mu: MuRepr::from(self.mu),
            pairs: self
                .pairs()
                .into_iter()
                .map(|(a, b)| [a as u32, b as u32])
                .collect(),
        }
    }

    pub fn from_json(j: JsonRelation, n1: usize, n2: usize) -> Result<Relation> {
        let mut r = Relation::empty(n1, n2, j.eps, j.mu.value());
        for [a, b] in j.pairs {
            if a as usize >= n1 || b as usize >= n2 {
                return Err(Error::InvalidSystem(format!(
                    "relation pair ({a},{b}) out of range for {n1}x{n2}"
                )));
            }
            r.insert(a as usize, b as usize);
        }
        Ok(r)
    }
}

/// Wire format; `mu` serializes as a number or the string "inf".
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonRelation {
    pub eps: f64,
    pub mu: MuRepr,
    pub pairs: Vec<[u32; 2]>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MuRepr {
    Finite(f64),
    Symbol(String),
}

impl MuRepr {
    pub fn from(mu: f64) -> MuRepr {
        if mu.is_infinite() {
            MuRepr::Symbol("inf".into())
        } else {
            MuRepr::Finite(mu)
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            MuRepr::Finite(v) => *v,
            MuRepr::Symbol(_) => f64::INFINITY,
        }
    }
}

/// Which condition of the definition failed, with a witness.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// Condition (i): this initial state has no related partner.
    Initial { state: usize },
    /// Condition (ii): related pair with outputs farther than eps.
    Output { x1: usize, x2: usize, distance: f64 },
    /// Condition (iii): no matching answer for this challenge. For plain
    /// simulation the challenge is a move of S1 (with successor); for
    /// alternating simulation it is an input of S2.
    Transition {
        x1: usize,
        x2: usize,
        ext: u32,
        int: u32,
        successor: Option<u32>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub ok: bool,
    pub violation: Option<Violation>,
}

impl CheckOutcome {
    fn pass() -> CheckOutcome {
        CheckOutcome {
            ok: true,
            violation: None,
        }
    }

    fn fail(v: Violation) -> CheckOutcome {
        CheckOutcome {
            ok: false,
            violation: Some(v),
        }
    }
}

fn require_same_spaces(s1: &TransitionSystem, s2: &TransitionSystem) -> Result<()> {
    if !s1.output_space().same_space(s2.output_space()) {
        return Err(Error::MetricSpaceMismatch("output spaces differ".into()));
    }
    if !s1.ext_space().same_space(s2.ext_space()) {
        return Err(Error::MetricSpaceMismatch("external input spaces differ".into()));
    }
    if !s1.int_space().same_space(s2.int_space()) {
        return Err(Error::MetricSpaceMismatch("internal input spaces differ".into()));
    }
    Ok(())
}

fn input_distance_ok(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    u1: (u32, u32),
    u2: (u32, u32),
    mu: f64,
) -> bool {
    if mu.is_infinite() {
        return true;
    }
    let de = s1
        .ext_space()
        .distance_unchecked(s1.ext_value(u1.0 as usize), s2.ext_value(u2.0 as usize));
    if !leq(de, mu) {
        return false;
    }
    let di = s1
        .int_space()
        .distance_unchecked(s1.int_value(u1.1 as usize), s2.int_value(u2.1 as usize));
    leq(di, mu)
}

fn check_outputs(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    r: &Relation,
    eps: f64,
) -> Option<Violation> {
    for x1 in 0..s1.num_states() {
        for x2 in r.image(x1) {
            let d = s1
                .output_space()
                .distance_unchecked(s1.output(x1), s2.output(x2));
            if !leq(d, eps) {
                return Some(Violation::Output { x1, x2, distance: d });
            }
        }
    }
    None
}

/// Condition (iii) of the plain simulation definition at one pair.
fn sim_step_ok(s1: &TransitionSystem, s2: &TransitionSystem, r: &Relation, mu: f64, x1: usize, x2: usize) -> Option<Violation> {
    for m1 in s1.moves_from(x1) {
        for &x1n in &m1.succ {
            let matched = s2.moves_from(x2).iter().any(|m2| {
                input_distance_ok(s1, s2, (m1.ext, m1.int), (m2.ext, m2.int), mu)
                    && m2.succ.iter().any(|&x2n| r.contains(x1n as usize, x2n as usize))
            });
            if !matched {
                return Some(Violation::Transition {
                    x1,
                    x2,
                    ext: m1.ext,
                    int: m1.int,
                    successor: Some(x1n),
                });
            }
        }
    }
    None
}

/// Condition (iii) of the alternating definition at one pair: every input
/// of S2 is answered by an input of S1 within mu whose successors are all
/// covered.
fn alt_step_ok(s1: &TransitionSystem, s2: &TransitionSystem, r: &Relation, mu: f64, x1: usize, x2: usize) -> Option<Violation> {
    for m2 in s2.moves_from(x2) {
        let answered = s1.moves_from(x1).iter().any(|m1| {
            input_distance_ok(s1, s2, (m1.ext, m1.int), (m2.ext, m2.int), mu)
                && m1.succ.iter().all(|&x1n| {
                    m2.succ.iter().any(|&x2n| r.contains(x1n as usize, x2n as usize))
                })
        });
        if !answered {
            return Some(Violation::Transition {
                x1,
                x2,
                ext: m2.ext,
                int: m2.int,
                successor: None,
            });
        }
    }
    None
}

/// Checks that `r` is an (eps, mu)-approximate simulation relation from
/// `s1` to `s2`, reporting the first violated condition.
pub fn check_simulation(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    r: &Relation,
    eps: f64,
    mu: f64,
) -> Result<CheckOutcome> {
    require_same_spaces(s1, s2)?;
    for &x0 in s1.initial_states() {
        if !s2
            .initial_states()
            .iter()
            .any(|&y0| r.contains(x0 as usize, y0 as usize))
        {
            return Ok(CheckOutcome::fail(Violation::Initial { state: x0 as usize }));
        }
    }
    Ok(check_simulation_body(s1, s2, r, eps, mu))
}

/// Conditions (ii) and (iii) only; condition (i) is the caller's business
/// (maximal relations report it separately).
pub fn check_simulation_body(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    r: &Relation,
    eps: f64,
    mu: f64,
) -> CheckOutcome {
    if let Some(v) = check_outputs(s1, s2, r, eps) {
        return CheckOutcome::fail(v);
    }
    for x1 in 0..s1.num_states() {
        for x2 in r.image(x1) {
            if let Some(v) = sim_step_ok(s1, s2, r, mu, x1, x2) {
                return CheckOutcome::fail(v);
            }
        }
    }
    CheckOutcome::pass()
}

/// Checks that `r` is an (eps, mu)-approximate alternating simulation
/// relation from `s2` to `s1`.
pub fn check_alt_simulation(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    r: &Relation,
    eps: f64,
    mu: f64,
) -> Result<CheckOutcome> {
    require_same_spaces(s1, s2)?;
    for &y0 in s2.initial_states() {
        if !s1
            .initial_states()
            .iter()
            .any(|&x0| r.contains(x0 as usize, y0 as usize))
        {
            return Ok(CheckOutcome::fail(Violation::Initial { state: y0 as usize }));
        }
    }
    Ok(check_alt_simulation_body(s1, s2, r, eps, mu))
}

pub fn check_alt_simulation_body(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    r: &Relation,
    eps: f64,
    mu: f64,
) -> CheckOutcome {
    if let Some(v) = check_outputs(s1, s2, r, eps) {
        return CheckOutcome::fail(v);
    }
    for x1 in 0..s1.num_states() {
        for x2 in r.image(x1) {
            if let Some(v) = alt_step_ok(s1, s2, r, mu, x1, x2) {
                return CheckOutcome::fail(v);
            }
        }
    }
    CheckOutcome::pass()
}

/// Result of the greatest-fixed-point computation: the union of all
/// relations satisfying conditions (ii)-(iii) of the alternating
/// definition, with condition (i) reported as a separate flag.
#[derive(Debug, Clone)]
pub struct MaxRelation {
    pub relation: Relation,
    pub initial_covered: bool,
}

/// Computes the maximal relation satisfying conditions (ii)-(iii) of the
/// (eps, mu)-approximate alternating simulation from `s2` to `s1`.
/// Refinement runs in bulk-synchronous rounds: removals of a round are
/// computed against the previous round's relation, so the result does not
/// depend on sweep order (the greatest fixed point is unique anyway).
pub fn max_alt_simulation(
    s1: &TransitionSystem,
    s2: &TransitionSystem,
    eps: f64,
    mu: f64,
) -> Result<MaxRelation> {
    require_same_spaces(s1, s2)?;
    let mut r = Relation::empty(s1.num_states(), s2.num_states(), eps, mu);
    for x1 in 0..s1.num_states() {
        for x2 in 0..s2.num_states() {
            let d = s1
                .output_space()
                .distance_unchecked(s1.output(x1), s2.output(x2));
            if leq(d, eps) {
                r.insert(x1, x2);
            }
        }
    }
    loop {
        let mut next = r.clone();
        let mut changed = false;
        for x1 in 0..s1.num_states() {
            for x2 in r.image(x1) {
                if alt_step_ok(s1, s2, &r, mu, x1, x2).is_some() {
                    next.remove(x1, x2);
                    changed = true;
                }
            }
        }
        r = next;
        if !changed {
            break;
        }
    }
    let initial_covered = s2
        .initial_states()
        .iter()
        .all(|&y0| s1.initial_states().iter().any(|&x0| r.contains(x0 as usize, y0 as usize)));
    Ok(MaxRelation {
        relation: r,
        initial_covered,
    })
}

/// Builds the product relation of the compositionality theorems:
/// `(x, x_hat)` related iff every component projection is related, with
/// `eps = max eps_i` and `mu = max mu_i`.
pub fn compose_relations(
    parts: &[Relation],
    concrete: &Composed,
    abstracted: &Composed,
) -> Result<Relation> {
    let n = parts.len();
    if concrete.index.radices.len() != n || abstracted.index.radices.len() != n {
        return Err(Error::InvalidNetwork(format!(
            "relation arity {n} does not match composed systems"
        )));
    }
    for (i, p) in parts.iter().enumerate() {
        let (a, b) = p.dims();
        if a != concrete.index.radices[i] || b != abstracted.index.radices[i] {
            return Err(Error::InvalidNetwork(format!(
                "component relation {i} has dims {a}x{b}, expected {}x{}",
                concrete.index.radices[i], abstracted.index.radices[i]
            )));
        }
    }
    let eps = parts.iter().map(|p| p.eps).fold(0.0, f64::max);
    let mu = parts.iter().map(|p| p.mu).fold(0.0, f64::max);
    let n1 = concrete.index.len();
    let n2 = abstracted.index.len();
    let mut r = Relation::empty(n1, n2, eps, mu);
    for id1 in 0..n1 {
        let t1 = concrete.index.decode(id1);
        for id2 in 0..n2 {
            let t2 = abstracted.index.decode(id2);
            if (0..n).all(|i| parts[i].contains(t1[i], t2[i])) {
                r.insert(id1, id2);
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Pseudometric;
    use crate::ts::testutil::t3;
    use crate::ts::{Controller, TransitionSystemBuilder};

    fn two_state_flip() -> TransitionSystem {
        let mut b = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        )
        .initial(&[0]);
        b.add(0, 0, 0, 1);
        b.add(1, 0, 0, 0);
        b.finish().unwrap()
    }

    #[test]
    fn identity_relation_on_self_is_a_zero_zero_simulation() {
        let s = t3();
        let r = Relation::identity(3, 0.0, 0.0);
        assert!(check_simulation(&s, &s, &r, 0.0, 0.0).unwrap().ok);
        assert!(check_alt_simulation(&s, &s, &r, 0.0, 0.0).unwrap().ok);
    }

    #[test]
    fn empty_relation_fails_initial_cover() {
        let s = t3();
        let r = Relation::empty(3, 3, 0.0, 0.0);
        let out = check_simulation(&s, &s, &r, 0.0, 0.0).unwrap();
        assert!(!out.ok);
        assert!(matches!(out.violation, Some(Violation::Initial { state: 0 })));
    }

    #[test]
    fn output_condition_violation_is_reported() {
        let s = two_state_flip();
        let mut r = Relation::identity(2, 0.0, 0.0);
        r.insert(0, 1); // outputs 0 and 1 are 1.0 apart
        let out = check_alt_simulation(&s, &s, &r, 0.5, 0.0).unwrap();
        assert!(!out.ok);
        assert!(matches!(out.violation, Some(Violation::Output { x1: 0, x2: 1, .. })));
    }

    #[test]
    fn mu_infinity_disables_input_distance() {
        // Same structure, ext values far apart: related only when mu = inf.
        let mk = |val: f64| {
            let mut b = TransitionSystemBuilder::with_unit_internal(
                vec![vec![0.0]],
                vec![vec![val]],
                Pseudometric::Linf { dim: 1 },
                Pseudometric::Linf { dim: 1 },
            )
            .initial(&[0]);
            b.add(0, 0, 0, 0);
            b.finish().unwrap()
        };
        let s1 = mk(0.0);
        let s2 = mk(100.0);
        let r = Relation::from_pairs(1, 1, 0.0, 0.0, &[(0, 0)]);
        assert!(!check_simulation(&s1, &s2, &r, 0.0, 0.0).unwrap().ok);
        assert!(check_simulation(&s1, &s2, &r, 0.0, f64::INFINITY).unwrap().ok);
        assert!(check_alt_simulation(&s1, &s2, &r, 0.0, f64::INFINITY).unwrap().ok);
    }

    #[test]
    fn controlled_system_alternately_simulated_by_plant() {
        // Lemma-1 shape: identity-on-domain relation witnesses
        // S|C as a (0,0)-alternating simulation of S.
        let s = t3();
        let mut c = Controller::empty(3);
        c.enable(0, 1, 0);
        c.enable(1, 1, 0);
        let (sc, kept) = s.restrict_with_controller(&c).unwrap();
        let pairs: Vec<(usize, usize)> =
            kept.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let r = Relation::from_pairs(s.num_states(), sc.num_states(), 0.0, 0.0, &pairs);
        assert!(check_alt_simulation(&s, &sc, &r, 0.0, 0.0).unwrap().ok);
    }

    #[test]
    fn max_alt_simulation_contains_identity_for_deterministic_self() {
        let s = t3();
        let m = max_alt_simulation(&s, &s, 0.0, 0.0).unwrap();
        for x in 0..3 {
            assert!(m.relation.contains(x, x));
        }
        assert!(m.initial_covered);
        let out = check_alt_simulation_body(&s, &s, &m.relation, 0.0, 0.0);
        assert!(out.ok);
    }

    #[test]
    fn unrelated_outputs_yield_empty_max_relation() {
        let mk = |val: f64| {
            let mut b = TransitionSystemBuilder::with_unit_internal(
                vec![vec![val]],
                vec![vec![0.0]],
                Pseudometric::Linf { dim: 1 },
                Pseudometric::Linf { dim: 1 },
            )
            .initial(&[0]);
            b.add(0, 0, 0, 0);
            b.finish().unwrap()
        };
        let s1 = mk(0.0);
        let s2 = mk(10.0);
        let m = max_alt_simulation(&s1, &s2, 0.1, 0.0).unwrap();
        assert!(m.relation.is_empty());
    }

    #[test]
    fn max_alt_simulation_matches_brute_force_on_small_pairs() {
        // Enumerate all relations over the pair grid; the union of those
        // closed under conditions (ii)-(iii) is the greatest fixed point.
        let seeds = [3u64, 17, 40, 99, 1234, 777];
        for &seed in &seeds {
            let s1 = crate::randsys::random_system(&mut rng(seed), 3, 2, 2, 0.5, 2);
            let s2 = crate::randsys::random_system(&mut rng(seed ^ 0xabcd), 3, 2, 2, 0.5, 2);
            let eps = 1.5;
            let mu = 0.5;
            let m = max_alt_simulation(&s1, &s2, eps, mu).unwrap();
            let brute = brute_force_max(&s1, &s2, eps, mu);
            assert_eq!(m.relation.pairs(), brute.pairs(), "seed {seed}");
        }
    }

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        use rand::SeedableRng;
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn brute_force_max(s1: &TransitionSystem, s2: &TransitionSystem, eps: f64, mu: f64) -> Relation {
        let n1 = s1.num_states();
        let n2 = s2.num_states();
        let cells = n1 * n2;
        assert!(cells <= 16);
        let mut union = Relation::empty(n1, n2, eps, mu);
        for mask in 0u32..(1 << cells) {
            let mut r = Relation::empty(n1, n2, eps, mu);
            for c in 0..cells {
                if (mask >> c) & 1 == 1 {
                    r.insert(c / n2, c % n2);
                }
            }
            if check_alt_simulation_body(s1, s2, &r, eps, mu).ok {
                for (a, b) in r.pairs() {
                    union.insert(a, b);
                }
            }
        }
        union
    }

    #[test]
    fn check_monotone_in_eps_and_mu() {
        let s1 = crate::randsys::random_system(&mut rng(5), 4, 2, 2, 0.4, 2);
        let s2 = crate::randsys::random_system(&mut rng(6), 4, 2, 2, 0.4, 2);
        let m = max_alt_simulation(&s1, &s2, 1.0, 0.3).unwrap();
        if !m.relation.is_empty() {
            assert!(check_alt_simulation_body(&s1, &s2, &m.relation, 1.0, 0.3).ok);
            assert!(check_alt_simulation_body(&s1, &s2, &m.relation, 2.0, 0.8).ok);
            assert!(check_alt_simulation_body(&s1, &s2, &m.relation, 1.0, f64::INFINITY).ok);
        }
    }

    #[test]
    fn deterministic_pairs_alt_and_plain_coincide() {
        // On deterministic systems the alternating relation from S2 to S1
        // agrees with the plain relation from S2 to S1 (transposed pairs).
        for seed in [11u64, 29, 63, 101, 250, 311, 404, 555] {
            let s1 = crate::randsys::random_deterministic_system(&mut rng(seed), 4, 2, 2, 0.6);
            let s2 = crate::randsys::random_deterministic_system(&mut rng(seed + 1), 4, 2, 2, 0.6);
            let eps = 1.0;
            let mu = 0.5;
            let alt = max_alt_simulation(&s1, &s2, eps, mu).unwrap().relation;
            // Compare fixed points: plain simulation from S2 to S1 computed
            // by a direct greatest fixed point over transposed pairs.
            let plain = brute_plain_max_transposed(&s1, &s2, eps, mu);
            assert_eq!(alt.pairs(), plain.pairs(), "seed {seed}");
        }
    }

    fn brute_plain_max_transposed(
        s1: &TransitionSystem,
        s2: &TransitionSystem,
        eps: f64,
        mu: f64,
    ) -> Relation {
        // Greatest relation R in X1 x X2 with outputs within eps such that
        // the *plain* condition (iii) holds for S2's moves (from S2 to S1):
        // every move of S2 at x2 is matched by a move of S1 at x1 with a
        // related successor. For deterministic systems this coincides with
        // the alternating condition.
        let mut r = Relation::empty(s1.num_states(), s2.num_states(), eps, mu);
        for x1 in 0..s1.num_states() {
            for x2 in 0..s2.num_states() {
                if leq(
                    s1.output_space().distance_unchecked(s1.output(x1), s2.output(x2)),
                    eps,
                ) {
                    r.insert(x1, x2);
                }
            }
        }
        loop {
            let mut changed = false;
            let snapshot = r.clone();
            for x1 in 0..s1.num_states() {
                for x2 in snapshot.image(x1) {
                    let ok = s2.moves_from(x2).iter().all(|m2| {
                        m2.succ.iter().all(|&x2n| {
                            s1.moves_from(x1).iter().any(|m1| {
                                input_distance_ok(s1, s2, (m1.ext, m1.int), (m2.ext, m2.int), mu)
                                    && m1.succ.iter().any(|&x1n| {
                                        snapshot.contains(x1n as usize, x2n as usize)
                                    })
                            })
                        })
                    });
                    if !ok {
                        r.remove(x1, x2);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        r
    }

    #[test]
    fn fixed_point_is_schedule_independent() {
        // Bulk-synchronous rounds versus eager in-place removal must agree.
        for seed in [1u64, 2, 3, 4, 5] {
            let s1 = crate::randsys::random_system(&mut rng(seed), 5, 2, 2, 0.4, 2);
            let s2 = crate::randsys::random_system(&mut rng(seed * 91), 5, 2, 2, 0.4, 2);
            let eps = 1.2;
            let mu = 0.4;
            let bulk = max_alt_simulation(&s1, &s2, eps, mu).unwrap().relation;
            let mut eager = Relation::empty(s1.num_states(), s2.num_states(), eps, mu);
            for x1 in 0..s1.num_states() {
                for x2 in 0..s2.num_states() {
                    if leq(
                        s1.output_space().distance_unchecked(s1.output(x1), s2.output(x2)),
                        eps,
                    ) {
                        eager.insert(x1, x2);
                    }
                }
            }
            let mut changed = true;
            while changed {
                changed = false;
                for x1 in (0..s1.num_states()).rev() {
                    for x2 in eager.image(x1).collect::<Vec<_>>() {
                        if alt_step_ok(&s1, &s2, &eager, mu, x1, x2).is_some() {
                            eager.remove(x1, x2);
                            changed = true;
                        }
                    }
                }
            }
            assert_eq!(bulk.pairs(), eager.pairs(), "seed {seed}");
        }
    }

    #[test]
    fn relation_json_round_trip_with_infinite_mu() {
        let r = Relation::from_pairs(2, 2, 0.5, f64::INFINITY, &[(0, 1), (1, 0)]);
        let s = serde_json::to_string(&r.to_json()).unwrap();
        assert!(s.contains("\"inf\""));
        let back = Relation::from_json(serde_json::from_str(&s).unwrap(), 2, 2).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn mismatched_metric_spaces_are_an_error() {
        let s1 = t3();
        let mut b = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0, 0.0]],
            vec![vec![0.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 2 },
        );
        b.add(0, 0, 0, 0);
        let s2 = b.finish().unwrap();
        let r = Relation::empty(3, 1, 0.0, 0.0);
        assert!(matches!(
            check_simulation(&s1, &s2, &r, 0.0, 0.0),
            Err(crate::error::Error::MetricSpaceMismatch(_))
        ));
        assert!(max_alt_simulation(&s1, &s2, 0.0, 0.0).is_err());
    }

    #[test]
    fn composed_identity_relations_give_the_identity() {
        let net = crate::randsys::random_exact_network(12);
        let m = vec![0.0; net.len()];
        let composed = crate::composition::compose(&net, &m, crate::composition::Scope::Full).unwrap();
        let parts: Vec<Relation> = (0..net.len())
            .map(|i| Relation::identity(net.component(i).num_states(), 0.0, 0.0))
            .collect();
        let r = compose_relations(&parts, &composed, &composed).unwrap();
        let n = composed.system.num_states();
        for a in 0..n {
            for b in 0..n {
                assert_eq!(r.contains(a, b), a == b);
            }
        }
    }

    #[test]
    fn composed_relation_membership_is_componentwise() {
        use rand::{Rng, SeedableRng};
        let net = crate::randsys::random_exact_network(21);
        let m = vec![0.0; net.len()];
        let composed = crate::composition::compose(&net, &m, crate::composition::Scope::Full).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        let parts: Vec<Relation> = (0..net.len())
            .map(|i| {
                let n = net.component(i).num_states();
                let pairs: Vec<(usize, usize)> = (0..n)
                    .flat_map(|a| (0..n).map(move |b| (a, b)))
                    .filter(|_| rng.gen_bool(0.5))
                    .collect();
                Relation::from_pairs(n, n, 1.0, 0.5, &pairs)
            })
            .collect();
        let r = compose_relations(&parts, &composed, &composed).unwrap();
        assert_eq!(r.eps, 1.0);
        assert_eq!(r.mu, 0.5);
        let n = composed.system.num_states();
        for a in (0..n).step_by(3) {
            for b in (0..n).step_by(2) {
                let ta = composed.index.decode(a);
                let tb = composed.index.decode(b);
                let expect = (0..net.len()).all(|i| parts[i].contains(ta[i], tb[i]));
                assert_eq!(r.contains(a, b), expect);
            }
        }
    }
}
