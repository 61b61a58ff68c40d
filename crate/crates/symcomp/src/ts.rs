//! Finite transition systems with external/internal inputs, memoryless
//! controllers, and controller restriction.
//!
//! States and input symbols are opaque indices; all geometry lives in the
//! per-state output vectors, the per-symbol value vectors and the attached
//! [`Pseudometric`] descriptors. Systems are immutable after construction,
//! so every operation here is a pure read.

use std::io::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Pseudometric;

/// One admissible `(ext, int)` label of a state together with its sorted
/// successor list.
#[derive(Debug, Clone, PartialEq)]
pub struct Move {
    pub ext: u32,
    pub int: u32,
    pub succ: Vec<u32>,
}

/// A finite transition system: states with output vectors, initial states,
/// external/internal input alphabets carrying value vectors, and a sparse
/// transition relation keyed by `(state, ext, int)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSystem {
    outputs: Vec<Vec<f64>>,
    initial: Vec<u32>,
    ext_values: Vec<Vec<f64>>,
    int_values: Vec<Vec<f64>>,
    output_space: Pseudometric,
    ext_space: Pseudometric,
    int_space: Pseudometric,
    /// Per state, sorted by (ext, int).
    moves: Vec<Vec<Move>>,
}

/// Incremental constructor; `finish` validates, sorts and deduplicates.
pub struct TransitionSystemBuilder {
    outputs: Vec<Vec<f64>>,
    initial: Vec<u32>,
    ext_values: Vec<Vec<f64>>,
    int_values: Vec<Vec<f64>>,
    output_space: Pseudometric,
    ext_space: Pseudometric,
    int_space: Pseudometric,
    transitions: Vec<(u32, u32, u32, u32)>,
}

impl TransitionSystemBuilder {
    pub fn new(
        outputs: Vec<Vec<f64>>,
        ext_values: Vec<Vec<f64>>,
        int_values: Vec<Vec<f64>>,
        output_space: Pseudometric,
        ext_space: Pseudometric,
        int_space: Pseudometric,
    ) -> Self {
        TransitionSystemBuilder {
            outputs,
            initial: Vec::new(),
            ext_values,
            int_values,
            output_space,
            ext_space,
            int_space,
            transitions: Vec::new(),
        }
    }

    /// Convenience constructor for a system with a one-symbol "unit"
    /// internal alphabet (components without neighbors).
    pub fn with_unit_internal(
        outputs: Vec<Vec<f64>>,
        ext_values: Vec<Vec<f64>>,
        ext_space: Pseudometric,
        output_space: Pseudometric,
    ) -> Self {
        Self::new(
            outputs,
            ext_values,
            vec![vec![]],
            output_space,
            ext_space,
            Pseudometric::Zero { dim: 0 },
        )
    }

    pub fn initial(mut self, states: &[usize]) -> Self {
        self.initial = states.iter().map(|&s| s as u32).collect();
        self
    }

    pub fn all_initial(mut self) -> Self {
        self.initial = (0..self.outputs.len() as u32).collect();
        self
    }

    pub fn add(&mut self, x: usize, ext: usize, int: usize, x_next: usize) {
        self.transitions
            .push((x as u32, ext as u32, int as u32, x_next as u32));
    }

    pub fn finish(self) -> Result<TransitionSystem> {
        let n = self.outputs.len();
        let p = self.output_space.dim();
        for (i, o) in self.outputs.iter().enumerate() {
            if o.len() != p {
                return Err(Error::InvalidSystem(format!(
                    "state {i} output has dimension {}, output space expects {p}",
                    o.len()
                )));
            }
        }
        for v in &self.ext_values {
            if v.len() != self.ext_space.dim() {
                return Err(Error::InvalidSystem(
                    "external input value dimension mismatch".into(),
                ));
            }
        }
        for v in &self.int_values {
            if v.len() != self.int_space.dim() {
                return Err(Error::InvalidSystem(
                    "internal input value dimension mismatch".into(),
                ));
            }
        }
        if self.ext_values.is_empty() || self.int_values.is_empty() {
            return Err(Error::InvalidSystem("empty input alphabet".into()));
        }
        let mut initial = self.initial;
        initial.sort_unstable();
        initial.dedup();
        if let Some(&s) = initial.last() {
            if s as usize >= n {
                return Err(Error::InvalidSystem(format!("initial state {s} out of range")));
            }
        }
        let mut moves: Vec<Vec<Move>> = vec![Vec::new(); n];
        let mut sorted = self.transitions;
        sorted.sort_unstable();
        sorted.dedup();
        for (x, ue, ui, xn) in sorted {
            if x as usize >= n || xn as usize >= n {
                return Err(Error::InvalidSystem(format!(
                    "transition ({x},{ue},{ui},{xn}) references a state out of range"
                )));
            }
            if ue as usize >= self.ext_values.len() || ui as usize >= self.int_values.len() {
                return Err(Error::InvalidSystem(format!(
                    "transition ({x},{ue},{ui},{xn}) references an input out of range"
                )));
            }
            let row = &mut moves[x as usize];
            match row.last_mut() {
                Some(m) if m.ext == ue && m.int == ui => m.succ.push(xn),
                _ => row.push(Move {
                    ext: ue,
                    int: ui,
                    succ: vec![xn],
                }),
            }
        }
        Ok(TransitionSystem {
            outputs: self.outputs,
            initial,
            ext_values: self.ext_values,
            int_values: self.int_values,
            output_space: self.output_space,
            ext_space: self.ext_space,
            int_space: self.int_space,
            moves,
        })
    }
}

impl TransitionSystem {
    pub fn num_states(&self) -> usize {
        self.outputs.len()
    }

    pub fn initial_states(&self) -> &[u32] {
        &self.initial
    }

    pub fn output(&self, x: usize) -> &[f64] {
        &self.outputs[x]
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn ext_count(&self) -> usize {
        self.ext_values.len()
    }

    pub fn int_count(&self) -> usize {
        self.int_values.len()
    }

    pub fn ext_value(&self, u: usize) -> &[f64] {
        &self.ext_values[u]
    }

    pub fn int_value(&self, v: usize) -> &[f64] {
        &self.int_values[v]
    }

    pub fn output_space(&self) -> &Pseudometric {
        &self.output_space
    }

    pub fn ext_space(&self) -> &Pseudometric {
        &self.ext_space
    }

    pub fn int_space(&self) -> &Pseudometric {
        &self.int_space
    }

    fn check_state(&self, x: usize) -> Result<()> {
        if x >= self.num_states() {
            return Err(Error::StateOutOfRange {
                index: x,
                count: self.num_states(),
            });
        }
        Ok(())
    }

    /// The set `U_S^a(x)` of enabled input pairs of `x`.
    pub fn admissible_inputs(&self, x: usize) -> Result<Vec<(u32, u32)>> {
        self.check_state(x)?;
        Ok(self.moves[x].iter().map(|m| (m.ext, m.int)).collect())
    }

    /// All admissible moves of `x` with their successor lists.
    pub fn moves_from(&self, x: usize) -> &[Move] {
        &self.moves[x]
    }

    /// The `(ext, int)`-successors of `x`; empty if the pair is not
    /// admissible, an error if any index is out of range.
    pub fn successors(&self, x: usize, ext: usize, int: usize) -> Result<&[u32]> {
        self.check_state(x)?;
        if ext >= self.ext_count() {
            return Err(Error::InputOutOfRange {
                which: "external",
                index: ext,
                count: self.ext_count(),
            });
        }
        if int >= self.int_count() {
            return Err(Error::InputOutOfRange {
                which: "internal",
                index: int,
                count: self.int_count(),
            });
        }
        Ok(self.successors_unchecked(x, ext as u32, int as u32))
    }

    pub(crate) fn successors_unchecked(&self, x: usize, ext: u32, int: u32) -> &[u32] {
        let row = &self.moves[x];
        match row.binary_search_by(|m| (m.ext, m.int).cmp(&(ext, int))) {
            Ok(i) => &row[i].succ,
            Err(_) => &[],
        }
    }

    /// True iff every `(x, ext, int)` has at most one successor.
    pub fn is_deterministic(&self) -> bool {
        self.moves
            .iter()
            .all(|row| row.iter().all(|m| m.succ.len() <= 1))
    }

    pub fn transition_count(&self) -> usize {
        self.moves
            .iter()
            .map(|row| row.iter().map(|m| m.succ.len()).sum::<usize>())
            .sum()
    }

    /// Builds `S|C`. The kept states are `dom(C)` together with every
    /// successor of an enabled transition (for a safety controller those
    /// coincide), reindexed ascending; the transitions are exactly
    /// `{(x,u,v,x') in Delta | x in dom(C), (u,v) in C(x)}`; initial states
    /// are `X0 ∩ dom(C)`. Alphabets, spaces and outputs are unchanged.
    /// Returns the kept-state map (new -> old).
    pub fn restrict_with_controller(
        &self,
        c: &Controller,
    ) -> Result<(TransitionSystem, Vec<usize>)> {
        c.validate_against(self)?;
        let mut keep = vec![false; self.num_states()];
        let mut in_dom = vec![false; self.num_states()];
        for x in 0..self.num_states() {
            if !c.enabled(x).is_empty() {
                keep[x] = true;
                in_dom[x] = true;
                for &(ue, ui) in c.enabled(x) {
                    for &xn in self.successors_unchecked(x, ue, ui) {
                        keep[xn as usize] = true;
                    }
                }
            }
        }
        let kept: Vec<usize> = (0..self.num_states()).filter(|&x| keep[x]).collect();
        let mut old_to_new = vec![u32::MAX; self.num_states()];
        for (new, &old) in kept.iter().enumerate() {
            old_to_new[old] = new as u32;
        }
        let outputs = kept.iter().map(|&x| self.outputs[x].clone()).collect();
        let mut b = TransitionSystemBuilder::new(
            outputs,
            self.ext_values.clone(),
            self.int_values.clone(),
            self.output_space.clone(),
            self.ext_space.clone(),
            self.int_space.clone(),
        );
        b.initial = self
            .initial
            .iter()
            .filter(|&&x| in_dom[x as usize])
            .map(|&x| old_to_new[x as usize])
            .collect();
        for &old in &kept {
            if !in_dom[old] {
                continue;
            }
            let new = old_to_new[old] as usize;
            for &(ue, ui) in c.enabled(old) {
                for &xn in self.successors_unchecked(old, ue, ui) {
                    b.add(new, ue as usize, ui as usize, old_to_new[xn as usize] as usize);
                }
            }
        }
        Ok((b.finish()?, kept))
    }

    pub fn to_json(&self) -> JsonSystem {
        JsonSystem::from(self)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("system serialization cannot fail")
    }

    pub fn write_json<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.to_json())?;
        w.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<TransitionSystem> {
        let j: JsonSystem = serde_json::from_str(s)?;
        j.into_system()
    }
}

/// Wire format for systems. Canonical ordering: states ascending by id,
/// transitions ascending lexicographically.
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonSystem {
    pub states: Vec<JsonState>,
    pub initial: Vec<u32>,
    pub ext_inputs: Vec<Vec<f64>>,
    pub int_inputs: Vec<Vec<f64>>,
    pub transitions: Vec<[u32; 4]>,
    pub output_space: Pseudometric,
    pub ext_input_space: Pseudometric,
    pub int_input_space: Pseudometric,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JsonState {
    pub id: u32,
    pub output: Vec<f64>,
}

impl From<&TransitionSystem> for JsonSystem {
    fn from(s: &TransitionSystem) -> JsonSystem {
        let mut transitions = Vec::with_capacity(s.transition_count());
        for (x, row) in s.moves.iter().enumerate() {
            for m in row {
                for &xn in &m.succ {
                    transitions.push([x as u32, m.ext, m.int, xn]);
                }
            }
        }
        JsonSystem {
            states: s
                .outputs
                .iter()
                .enumerate()
                .map(|(i, o)| JsonState {
                    id: i as u32,
                    output: o.clone(),
                })
                .collect(),
            initial: s.initial.clone(),
            ext_inputs: s.ext_values.clone(),
            int_inputs: s.int_values.clone(),
            transitions,
            output_space: s.output_space.clone(),
            ext_input_space: s.ext_space.clone(),
            int_input_space: s.int_space.clone(),
        }
    }
}

impl JsonSystem {
    pub fn into_system(self) -> Result<TransitionSystem> {
        for (i, st) in self.states.iter().enumerate() {
            if st.id as usize != i {
                return Err(Error::InvalidSystem(format!(
                    "state ids must be contiguous ascending; found {} at position {i}",
                    st.id
                )));
            }
        }
        let mut b = TransitionSystemBuilder::new(
            self.states.into_iter().map(|s| s.output).collect(),
            self.ext_inputs,
            self.int_inputs,
            self.output_space,
            self.ext_input_space,
            self.int_input_space,
        );
        b.initial = self.initial;
        for [x, ue, ui, xn] in self.transitions {
            b.transitions.push((x, ue, ui, xn));
        }
        b.finish()
    }
}

/// A memoryless controller: per state, the set of enabled input pairs.
/// Valid against a system when every enabled pair is admissible there.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Controller {
    enabled: Vec<Vec<(u32, u32)>>,
}

impl Controller {
    pub fn empty(num_states: usize) -> Controller {
        Controller {
            enabled: vec![Vec::new(); num_states],
        }
    }

    /// Enables everything admissible, state by state.
    pub fn full(s: &TransitionSystem) -> Controller {
        Controller {
            enabled: (0..s.num_states())
                .map(|x| s.admissible_inputs(x).unwrap())
                .collect(),
        }
    }

    pub fn from_enabled(enabled: Vec<Vec<(u32, u32)>>) -> Controller {
        let mut enabled = enabled;
        for row in &mut enabled {
            row.sort_unstable();
            row.dedup();
        }
        Controller { enabled }
    }

    pub fn num_states(&self) -> usize {
        self.enabled.len()
    }

    pub fn enabled(&self, x: usize) -> &[(u32, u32)] {
        &self.enabled[x]
    }

    pub fn enable(&mut self, x: usize, ext: usize, int: usize) {
        let row = &mut self.enabled[x];
        let pair = (ext as u32, int as u32);
        if let Err(pos) = row.binary_search(&pair) {
            row.insert(pos, pair);
        }
    }

    pub fn disable(&mut self, x: usize, ext: usize, int: usize) {
        let row = &mut self.enabled[x];
        if let Ok(pos) = row.binary_search(&(ext as u32, int as u32)) {
            row.remove(pos);
        }
    }

    /// States with at least one enabled pair, ascending.
    pub fn domain(&self) -> Vec<usize> {
        (0..self.enabled.len())
            .filter(|&x| !self.enabled[x].is_empty())
            .collect()
    }

    pub fn domain_size(&self) -> usize {
        self.enabled.iter().filter(|r| !r.is_empty()).count()
    }

    /// Total number of enabled (state, input pair) entries.
    pub fn entry_count(&self) -> usize {
        self.enabled.iter().map(|r| r.len()).sum()
    }

    pub fn validate_against(&self, s: &TransitionSystem) -> Result<()> {
        if self.enabled.len() != s.num_states() {
            return Err(Error::InvalidController(format!(
                "controller covers {} states, system has {}",
                self.enabled.len(),
                s.num_states()
            )));
        }
        for (x, row) in self.enabled.iter().enumerate() {
            for &(ue, ui) in row {
                if s.successors(x, ue as usize, ui as usize)?.is_empty() {
                    return Err(Error::InvalidController(format!(
                        "controller enables non-admissible input ({ue},{ui}) at state {x}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> JsonController {
        JsonController {
            entries: self
                .enabled
                .iter()
                .enumerate()
                .filter(|(_, row)| !row.is_empty())
                .map(|(x, row)| JsonControllerEntry {
                    state: x as u32,
                    inputs: row.iter().map(|&(a, b)| [a, b]).collect(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: JsonController, num_states: usize) -> Result<Controller> {
        let mut c = Controller::empty(num_states);
        for e in j.entries {
            if e.state as usize >= num_states {
                return Err(Error::InvalidController(format!(
                    "entry for state {} out of range",
                    e.state
                )));
            }
            for [ue, ui] in e.inputs {
                c.enable(e.state as usize, ue as usize, ui as usize);
            }
        }
        Ok(c)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JsonController {
    pub entries: Vec<JsonControllerEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct JsonControllerEntry {
    pub state: u32,
    pub inputs: Vec<[u32; 2]>,
}

/// Writes a value as canonical single-line JSON with a trailing newline.
pub fn write_json_file<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::testutil::t3;
    use super::*;

    #[test]
    fn admissible_inputs_match_transition_table() {
        let s = t3();
        assert_eq!(s.admissible_inputs(0).unwrap(), vec![(0, 0), (1, 0)]);
        assert!(s.admissible_inputs(3).is_err());
    }

    #[test]
    fn state_with_no_outgoing_transitions_has_empty_admissible_set() {
        let b = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0]],
            vec![vec![0.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        );
        let s = b.finish().unwrap();
        assert!(s.admissible_inputs(0).unwrap().is_empty());
    }

    #[test]
    fn total_self_loop_enables_the_full_alphabet() {
        let mut b = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0]],
            vec![vec![0.0], vec![1.0], vec![2.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        );
        for u in 0..3 {
            b.add(0, u, 0, 0);
        }
        let s = b.finish().unwrap();
        assert_eq!(s.admissible_inputs(0).unwrap().len(), 3);
    }

    #[test]
    fn successors_follow_the_table() {
        let s = t3();
        assert_eq!(s.successors(0, 0, 0).unwrap(), &[0]);
        assert_eq!(s.successors(1, 0, 0).unwrap(), &[2]);
        assert!(s.successors(0, 5, 0).is_err());
        assert!(s.successors(9, 0, 0).is_err());
    }

    #[test]
    fn non_admissible_input_has_empty_successor_set() {
        let mut b = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0], vec![1.0]],
            vec![vec![0.0], vec![1.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        );
        b.add(0, 0, 0, 1);
        let s = b.finish().unwrap();
        assert!(s.successors(0, 1, 0).unwrap().is_empty());
    }

    #[test]
    fn determinism_detection() {
        assert!(t3().is_deterministic());
        let mut b = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![vec![0.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        );
        b.add(0, 0, 0, 1);
        b.add(0, 0, 0, 2);
        let s = b.finish().unwrap();
        assert!(!s.is_deterministic());

        let empty = TransitionSystemBuilder::with_unit_internal(
            vec![vec![0.0]],
            vec![vec![0.0]],
            Pseudometric::Linf { dim: 1 },
            Pseudometric::Linf { dim: 1 },
        )
        .finish()
        .unwrap();
        assert!(empty.is_deterministic());
    }

    #[test]
    fn full_controller_restriction_preserves_transitions() {
        let s = t3();
        let c = Controller::full(&s);
        let (r, kept) = s.restrict_with_controller(&c).unwrap();
        assert_eq!(kept, vec![0, 1, 2]);
        assert_eq!(r.transition_count(), s.transition_count());
    }

    #[test]
    fn empty_controller_restriction_is_empty() {
        let s = t3();
        let c = Controller::empty(3);
        let (r, kept) = s.restrict_with_controller(&c).unwrap();
        assert_eq!(r.num_states(), 0);
        assert!(kept.is_empty());
    }

    #[test]
    fn t3_partial_restriction() {
        let s = t3();
        let mut c = Controller::empty(3);
        c.enable(0, 1, 0);
        c.enable(1, 1, 0);
        let (r, kept) = s.restrict_with_controller(&c).unwrap();
        assert_eq!(kept, vec![0, 1]);
        assert_eq!(r.num_states(), 2);
        assert_eq!(r.successors(0, 1, 0).unwrap(), &[1]);
        assert_eq!(r.successors(1, 1, 0).unwrap(), &[0]);
        assert_eq!(r.transition_count(), 2);
    }

    #[test]
    fn controller_enabling_non_admissible_input_is_rejected() {
        let s = t3();
        let mut c = Controller::empty(3);
        // T3 has at most one successor per pair; (0,0,0) exists, but int 1 does not.
        c.enabled[0].push((0, 1));
        assert!(s.restrict_with_controller(&c).is_err());
    }

    #[test]
    fn restriction_then_admissible_equals_controller_on_domain() {
        let s = t3();
        let mut c = Controller::empty(3);
        c.enable(0, 1, 0);
        c.enable(1, 0, 0);
        c.enable(1, 1, 0);
        let (r, kept) = s.restrict_with_controller(&c).unwrap();
        for (new, &old) in kept.iter().enumerate() {
            assert_eq!(r.admissible_inputs(new).unwrap(), c.enabled(old));
        }
    }

    #[test]
    fn json_round_trip_is_byte_identical() {
        let s = t3();
        let one = s.to_json_string();
        let parsed = TransitionSystem::from_json_str(&one).unwrap();
        let two = parsed.to_json_string();
        assert_eq!(one, two);
        assert_eq!(s, parsed);
    }

    #[test]
    fn controller_json_round_trip() {
        let s = t3();
        let mut c = Controller::empty(3);
        c.enable(0, 1, 0);
        c.enable(2, 0, 0);
        let j = serde_json::to_string(&c.to_json()).unwrap();
        let back = Controller::from_json(serde_json::from_str(&j).unwrap(), s.num_states()).unwrap();
        assert_eq!(c, back);
    }
}
