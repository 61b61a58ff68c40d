//! Networks of transition systems and the M-approximate composition
//! operator.
//!
//! A network couples components through a connectivity relation: component
//! `i` reads the outputs of its neighbors `N(i)` through its internal input
//! channel. Exact composition requires an internal symbol equal to the
//! current neighbor outputs; M-approximate composition only requires one
//! within `mu_i`, which is what makes quantized abstractions composable.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{leq, Pseudometric};
use crate::ts::{TransitionSystem, TransitionSystemBuilder};

/// A network: ordered components plus a binary connectivity relation.
/// `(j, i)` means an edge from `j` into `i`, so `j` is a neighbor of `i`.
/// The neighbor ordering of each component is fixed: ascending neighbor
/// index, and the component's internal-input space must be the
/// max-composition of its neighbors' output spaces in that order.
pub struct Network {
    components: Vec<TransitionSystem>,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl Network {
    pub fn new(components: Vec<TransitionSystem>, edges: Vec<(usize, usize)>) -> Result<Network> {
        let n = components.len();
        if n == 0 {
            return Err(Error::InvalidNetwork("no components".into()));
        }
        let mut edges = edges;
        edges.sort_unstable();
        edges.dedup();
        for &(j, i) in &edges {
            if j >= n || i >= n {
                return Err(Error::InvalidNetwork(format!(
                    "edge ({j},{i}) out of range for {n} components"
                )));
            }
        }
        let mut neighbors = vec![Vec::new(); n];
        for &(j, i) in &edges {
            neighbors[i].push(j);
        }
        for nb in &mut neighbors {
            nb.sort_unstable();
        }
        for (i, comp) in components.iter().enumerate() {
            let expected = Pseudometric::max_over(
                neighbors[i]
                    .iter()
                    .map(|&j| components[j].output_space().clone())
                    .collect(),
            );
            if !comp.int_space().same_space(&expected) {
                return Err(Error::InvalidNetwork(format!(
                    "component {i}: internal input space {:?} does not match the \
                     max-over-neighbor-outputs space {:?}",
                    comp.int_space(),
                    expected
                )));
            }
        }
        Ok(Network {
            components,
            edges,
            neighbors,
        })
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn component(&self, i: usize) -> &TransitionSystem {
        &self.components[i]
    }

    pub fn components(&self) -> &[TransitionSystem] {
        &self.components
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Replaces every component, keeping the connectivity. Used to swap in
    /// controlled components; alphabets must be preserved by the caller.
    pub fn with_components(&self, components: Vec<TransitionSystem>) -> Result<Network> {
        Network::new(components, self.edges.clone())
    }

    /// The neighbor-output tuple of component `i` when the neighbors are in
    /// the given component states.
    pub fn neighbor_output_tuple(&self, i: usize, state: &[usize]) -> Vec<f64> {
        let mut tuple = Vec::new();
        for &j in &self.neighbors[i] {
            tuple.extend_from_slice(self.components[j].output(state[j]));
        }
        tuple
    }

    /// Internal symbols of component `i` within `mu` of the tuple.
    pub fn internal_ball(&self, i: usize, tuple: &[f64], mu: f64) -> Vec<u32> {
        let comp = &self.components[i];
        let space = comp.int_space();
        (0..comp.int_count() as u32)
            .filter(|&v| leq(space.distance_unchecked(comp.int_value(v as usize), tuple), mu))
            .collect()
    }

    fn validate_m(&self, m: &[f64]) -> Result<()> {
        if m.len() != self.len() {
            return Err(Error::InvalidNetwork(format!(
                "M has {} entries for {} components",
                m.len(),
                self.len()
            )));
        }
        if m.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidNetwork("M entries must be non-negative".into()));
        }
        Ok(())
    }
}

/// The derived composition parameter of the compositionality theorems:
/// `m_hat_i = mu_i + delta_i + eps` with `eps = max_i eps_i`.
pub fn m_hat(mu: &[f64], delta: &[f64], eps_values: &[f64]) -> Vec<f64> {
    let eps = eps_values.iter().cloned().fold(0.0, f64::max);
    mu.iter().zip(delta).map(|(m, d)| m + d + eps).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityWitness {
    pub component: usize,
    pub neighbor_states: Vec<usize>,
    pub tuple: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityReport {
    pub compatible: bool,
    pub witness: Option<CompatibilityWitness>,
}

/// Checks compatibility for M-approximate composition: for every component and every tuple
/// of neighbor outputs there is an internal symbol within `mu_i`.
pub fn check_compatibility(net: &Network, m: &[f64]) -> Result<CompatibilityReport> {
    net.validate_m(m)?;
    for i in 0..net.len() {
        let nbrs = net.neighbors(i);
        if nbrs.is_empty() {
            // Empty max over the empty product: always within any mu.
            continue;
        }
        let comp = net.component(i);
        let space = comp.int_space();
        // Iterate the product of neighbor state sets.
        let radices: Vec<usize> = nbrs.iter().map(|&j| net.component(j).num_states()).collect();
        if radices.iter().any(|&r| r == 0) {
            continue;
        }
        let total: usize = radices.iter().product();
        let mut tuple = Vec::new();
        for code in 0..total {
            tuple.clear();
            let mut rem = code;
            let mut neighbor_states = Vec::with_capacity(nbrs.len());
            for (pos, &j) in nbrs.iter().enumerate() {
                let stride: usize = radices[pos + 1..].iter().product();
                let xj = rem / stride;
                rem %= stride;
                neighbor_states.push(xj);
                tuple.extend_from_slice(net.component(j).output(xj));
            }
            let found = (0..comp.int_count())
                .any(|v| leq(space.distance_unchecked(comp.int_value(v), &tuple), m[i]));
            if !found {
                return Ok(CompatibilityReport {
                    compatible: false,
                    witness: Some(CompatibilityWitness {
                        component: i,
                        neighbor_states,
                        tuple,
                    }),
                });
            }
        }
    }
    Ok(CompatibilityReport {
        compatible: true,
        witness: None,
    })
}

/// How to materialize the product state set.
#[derive(Debug, Clone)]
pub enum Scope {
    /// Every tuple of component states, indexed by mixed-radix encoding.
    Full,
    /// Only the closure of the given seed tuples under composed
    /// transitions. Needed when the full product is out of reach; safety
    /// fixed points restricted to a successor-closed set are exact on it.
    ReachableFrom(Vec<Vec<usize>>),
}

/// Mapping between composed state indices and component state tuples.
#[derive(Debug, Clone)]
pub struct ProductIndex {
    pub radices: Vec<usize>,
    /// Present in reachable mode: composed index -> component tuple.
    pub states: Option<Vec<Vec<u32>>>,
    lookup: Option<HashMap<Vec<u32>, u32>>,
}

impl ProductIndex {
    pub fn full(radices: Vec<usize>) -> ProductIndex {
        ProductIndex {
            radices,
            states: None,
            lookup: None,
        }
    }

    pub fn len(&self) -> usize {
        match &self.states {
            Some(s) => s.len(),
            None => self.radices.iter().product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn decode(&self, id: usize) -> Vec<usize> {
        match &self.states {
            Some(s) => s[id].iter().map(|&x| x as usize).collect(),
            None => {
                let mut rem = id;
                let mut out = vec![0usize; self.radices.len()];
                for (k, &r) in self.radices.iter().enumerate().rev() {
                    out[k] = rem % r;
                    rem /= r;
                }
                out
            }
        }
    }

    pub fn encode(&self, tuple: &[usize]) -> Option<usize> {
        match &self.lookup {
            Some(map) => {
                let key: Vec<u32> = tuple.iter().map(|&x| x as u32).collect();
                map.get(&key).map(|&id| id as usize)
            }
            None => {
                let mut id = 0usize;
                for (k, &r) in self.radices.iter().enumerate() {
                    if tuple[k] >= r {
                        return None;
                    }
                    id = id * r + tuple[k];
                }
                Some(id)
            }
        }
    }
}

/// An explicit composed system along with its product index.
pub struct Composed {
    pub system: TransitionSystem,
    pub index: ProductIndex,
    /// Radices of the composed external alphabet (per-component ext sizes).
    pub ext_radices: Vec<usize>,
}

impl Composed {
    pub fn decode_ext(&self, u: usize) -> Vec<usize> {
        let mut rem = u;
        let mut out = vec![0usize; self.ext_radices.len()];
        for (k, &r) in self.ext_radices.iter().enumerate().rev() {
            out[k] = rem % r;
            rem /= r;
        }
        out
    }

    pub fn encode_ext(&self, combo: &[usize]) -> usize {
        let mut id = 0usize;
        for (k, &r) in self.ext_radices.iter().enumerate() {
            id = id * r + combo[k];
        }
        id
    }
}

/// Builds the M-approximate composed system. Refuses with a witness when
/// the network is not compatible for `m`. The composed system has the
/// product state set (per `scope`), product initial states, product
/// external alphabet, stacked outputs, and a unit internal alphabet.
pub fn compose(net: &Network, m: &[f64], scope: Scope) -> Result<Composed> {
    let report = check_compatibility(net, m)?;
    if let Some(w) = report.witness {
        return Err(Error::Incompatible {
            component: w.component,
            tuple: w.tuple,
            mu: m[w.component],
        });
    }
    let n = net.len();
    let radices: Vec<usize> = (0..n).map(|i| net.component(i).num_states()).collect();
    let ext_radices: Vec<usize> = (0..n).map(|i| net.component(i).ext_count()).collect();
    let ext_total: usize = ext_radices.iter().product();

    let mut ext_values = Vec::with_capacity(ext_total);
    for code in 0..ext_total {
        let mut rem = code;
        let mut combo = vec![0usize; n];
        for k in (0..n).rev() {
            combo[k] = rem % ext_radices[k];
            rem /= ext_radices[k];
        }
        let mut v = Vec::new();
        for (i, &u) in combo.iter().enumerate() {
            v.extend_from_slice(net.component(i).ext_value(u));
        }
        ext_values.push(v);
    }
    let ext_space = Pseudometric::max_over((0..n).map(|i| net.component(i).ext_space().clone()).collect());
    let output_space =
        Pseudometric::max_over((0..n).map(|i| net.component(i).output_space().clone()).collect());

    let stacked_output = |tuple: &[usize]| -> Vec<f64> {
        let mut v = Vec::new();
        for (i, &x) in tuple.iter().enumerate() {
            v.extend_from_slice(net.component(i).output(x));
        }
        v
    };

    // Per-state successor computation shared by both scopes: for each
    // component the union over ball symbols, then the cartesian product per
    // external combo.
    let component_successors = |tuple: &[usize]| -> Vec<Vec<Vec<u32>>> {
        (0..n)
            .map(|i| {
                let ball = net.internal_ball(i, &net.neighbor_output_tuple(i, tuple), m[i]);
                (0..net.component(i).ext_count())
                    .map(|u| {
                        let mut succ: Vec<u32> = ball
                            .iter()
                            .flat_map(|&v| {
                                net.component(i)
                                    .successors_unchecked(tuple[i], u as u32, v)
                                    .iter()
                                    .copied()
                            })
                            .collect();
                        succ.sort_unstable();
                        succ.dedup();
                        succ
                    })
                    .collect()
            })
            .collect()
    };

    match scope {
        Scope::Full => {
            let total: usize = radices.iter().product();
            let index = ProductIndex::full(radices.clone());
            let mut outputs = Vec::with_capacity(total);
            for id in 0..total {
                outputs.push(stacked_output(&index.decode(id)));
            }
            let mut b = TransitionSystemBuilder::with_unit_internal(
                outputs,
                ext_values,
                ext_space,
                output_space,
            );
            // Initial set: product of component initial sets.
            let mut initial = Vec::new();
            collect_product(
                &(0..n)
                    .map(|i| {
                        net.component(i)
                            .initial_states()
                            .iter()
                            .map(|&x| x as usize)
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>(),
                &mut |tuple| {
                    initial.push(index.encode(tuple).unwrap());
                },
            );
            b = b.initial(&initial);
            for id in 0..total {
                let tuple = index.decode(id);
                let per_comp = component_successors(&tuple);
                for code in 0..ext_total {
                    let combo = decode_radix(code, &ext_radices);
                    let lists: Vec<&[u32]> =
                        combo.iter().enumerate().map(|(i, &u)| per_comp[i][u].as_slice()).collect();
                    if lists.iter().any(|l| l.is_empty()) {
                        continue;
                    }
                    let mut succ_tuple = vec![0usize; n];
                    product_tuples(&lists, &mut succ_tuple, 0, &mut |t| {
                        b.add(id, code, 0, index.encode(t).unwrap());
                    });
                }
            }
            Ok(Composed {
                system: b.finish()?,
                index,
                ext_radices,
            })
        }
        Scope::ReachableFrom(seeds) => {
            let mut lookup: HashMap<Vec<u32>, u32> = HashMap::new();
            let mut states: Vec<Vec<u32>> = Vec::new();
            let add_state = |t: &[usize], lookup: &mut HashMap<Vec<u32>, u32>, states: &mut Vec<Vec<u32>>| -> u32 {
                let key: Vec<u32> = t.iter().map(|&x| x as u32).collect();
                if let Some(&id) = lookup.get(&key) {
                    return id;
                }
                let id = states.len() as u32;
                lookup.insert(key.clone(), id);
                states.push(key);
                id
            };
            let mut initial = Vec::new();
            for seed in &seeds {
                if seed.len() != n {
                    return Err(Error::InvalidNetwork("seed arity mismatch".into()));
                }
                for (i, &x) in seed.iter().enumerate() {
                    if x >= radices[i] {
                        return Err(Error::InvalidNetwork(format!(
                            "seed state {x} out of range for component {i}"
                        )));
                    }
                }
                initial.push(add_state(seed, &mut lookup, &mut states) as usize);
            }
            let mut transitions: Vec<(usize, usize, usize)> = Vec::new();
            let mut cursor = 0usize;
            while cursor < states.len() {
                let tuple: Vec<usize> = states[cursor].iter().map(|&x| x as usize).collect();
                let per_comp = component_successors(&tuple);
                for code in 0..ext_total {
                    let combo = decode_radix(code, &ext_radices);
                    let lists: Vec<&[u32]> =
                        combo.iter().enumerate().map(|(i, &u)| per_comp[i][u].as_slice()).collect();
                    if lists.iter().any(|l| l.is_empty()) {
                        continue;
                    }
                    let mut succ_tuple = vec![0usize; n];
                    product_tuples(&lists, &mut succ_tuple, 0, &mut |t| {
                        let id = add_state(t, &mut lookup, &mut states);
                        transitions.push((cursor, code, id as usize));
                    });
                }
                cursor += 1;
            }
            let outputs = states
                .iter()
                .map(|t| stacked_output(&t.iter().map(|&x| x as usize).collect::<Vec<_>>()))
                .collect();
            let mut b = TransitionSystemBuilder::with_unit_internal(
                outputs,
                ext_values,
                ext_space,
                output_space,
            );
            b = b.initial(&initial);
            for (x, u, xn) in transitions {
                b.add(x, u, 0, xn);
            }
            let index = ProductIndex {
                radices,
                states: Some(states),
                lookup: Some(lookup),
            };
            Ok(Composed {
                system: b.finish()?,
                index,
                ext_radices,
            })
        }
    }
}

pub(crate) fn decode_radix(code: usize, radices: &[usize]) -> Vec<usize> {
    let mut rem = code;
    let mut out = vec![0usize; radices.len()];
    for (k, &r) in radices.iter().enumerate().rev() {
        out[k] = rem % r;
        rem /= r;
    }
    out
}

pub(crate) fn collect_product(sets: &[Vec<usize>], f: &mut impl FnMut(&[usize])) {
    let mut tuple = vec![0usize; sets.len()];
    fn rec(sets: &[Vec<usize>], tuple: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == sets.len() {
            f(tuple);
            return;
        }
        for &x in &sets[k] {
            tuple[k] = x;
            rec(sets, tuple, k + 1, f);
        }
    }
    rec(sets, &mut tuple, 0, f);
}

fn product_tuples(lists: &[&[u32]], tuple: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == lists.len() {
        f(tuple);
        return;
    }
    for &x in lists[k] {
        tuple[k] = x as usize;
        product_tuples(lists, tuple, k + 1, f);
    }
}

/// Network wire format: component files, edges, and the composition
/// parameter.
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonNetwork {
    pub components: Vec<String>,
    pub edges: Vec<[usize; 2]>,
    #[serde(rename = "M")]
    pub m: Vec<f64>,
}

/// Sidecar mapping composed indices to component indices.
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonProductIndex {
    pub kind: String,
    pub radices: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<u32>>>,
}

impl From<&ProductIndex> for JsonProductIndex {
    fn from(ix: &ProductIndex) -> Self {
        JsonProductIndex {
            kind: if ix.states.is_some() { "reachable" } else { "full" }.into(),
            radices: ix.radices.clone(),
            states: ix.states.clone(),
        }
    }
}
