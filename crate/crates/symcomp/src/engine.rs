//! Implicit-product safety synthesis.
//!
//! The composed systems of the case studies are far too large to
//! materialize (hundreds of millions of product states), but their
//! transition structure factorizes: each component's successor set under a
//! composed move depends only on its own state, its own external input and
//! the states of its neighbors. This module precomputes those per-component
//! successor tables once and then runs the maximal controlled-invariant
//! fixed point directly on mixed-radix product codes, with one alive bit
//! per product state.
//!
//! The fixed point is the same bulk-synchronous round scheme as the
//! explicit one in [`crate::synthesis`]; a test cross-checks the two on
//! random networks. Restricting the product to a successor-closed subset
//! (all states here, or a reachable closure upstream) keeps the result
//! exact: a controlled invariant of the restriction is one of the full
//! system and conversely, since successors never leave the restriction.

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;

use crate::composition::Network;
use crate::error::Result;

/// Per-component successor table over (neighbor-state key, own state, own
/// external input), stored as CSR into a flat successor arena. The
/// neighbor key is the mixed-radix code of the neighbor states in
/// ascending neighbor order.
pub struct EngineComponent {
    pub n_states: usize,
    pub n_ext: usize,
    pub neighbors: Vec<usize>,
    nbr_radices: Vec<usize>,
    offsets: Vec<u32>,
    succs: Vec<u32>,
}

impl EngineComponent {
    #[inline]
    fn entry(&self, key: usize, x: usize, u: usize) -> usize {
        (key * self.n_states + x) * self.n_ext + u
    }

    #[inline]
    fn slice(&self, e: usize) -> &[u32] {
        &self.succs[self.offsets[e] as usize..self.offsets[e + 1] as usize]
    }

    fn build(net: &Network, i: usize, m_i: f64) -> EngineComponent {
        let sys = net.component(i);
        let neighbors: Vec<usize> = net.neighbors(i).to_vec();
        let nbr_radices: Vec<usize> = neighbors
            .iter()
            .map(|&j| net.component(j).num_states())
            .collect();
        let n_keys: usize = nbr_radices.iter().product::<usize>().max(1);
        let n_states = sys.num_states();
        let n_ext = sys.ext_count();
        let mut offsets = Vec::with_capacity(n_keys * n_states * n_ext + 1);
        offsets.push(0u32);
        let mut succs: Vec<u32> = Vec::new();
        let mut tuple = Vec::new();
        let mut nbr_states = vec![0usize; neighbors.len()];
        let mut union: Vec<u32> = Vec::new();
        for key in 0..n_keys {
            tuple.clear();
            let mut rem = key;
            for pos in (0..neighbors.len()).rev() {
                nbr_states[pos] = rem % nbr_radices[pos];
                rem /= nbr_radices[pos];
            }
            for (pos, &j) in neighbors.iter().enumerate() {
                tuple.extend_from_slice(net.component(j).output(nbr_states[pos]));
            }
            let ball = net.internal_ball(i, &tuple, m_i);
            for x in 0..n_states {
                for u in 0..n_ext {
                    union.clear();
                    for &v in &ball {
                        union.extend_from_slice(sys.successors_unchecked(x, u as u32, v));
                    }
                    union.sort_unstable();
                    union.dedup();
                    succs.extend_from_slice(&union);
                    offsets.push(succs.len() as u32);
                }
            }
        }
        EngineComponent {
            n_states,
            n_ext,
            neighbors,
            nbr_radices,
            offsets,
            succs,
        }
    }
}

/// The implicit M-approximate product of a network, ready for counting and
/// safety solving. Product state code: mixed radix over component states,
/// component 0 most significant.
pub struct DenseProduct {
    comps: Vec<EngineComponent>,
    pub radices: Vec<usize>,
    strides: Vec<usize>,
    pub total: usize,
    /// For each component k: the (i, key-stride) pairs of components i that
    /// read k as a neighbor; used for incremental key maintenance.
    bumps: Vec<Vec<(usize, usize)>>,
}

/// Walks product codes in order while maintaining the component tuple and
/// every component's neighbor key incrementally.
struct Odometer<'a> {
    e: &'a DenseProduct,
    tuple: Vec<usize>,
    keys: Vec<usize>,
}

impl<'a> Odometer<'a> {
    fn at(e: &'a DenseProduct, code: usize) -> Odometer<'a> {
        let n = e.radices.len();
        let mut tuple = vec![0usize; n];
        let mut rem = code;
        for k in (0..n).rev() {
            tuple[k] = rem % e.radices[k];
            rem /= e.radices[k];
        }
        let keys = e.keys_for(&tuple);
        Odometer { e, tuple, keys }
    }

    #[inline]
    fn step(&mut self) {
        let n = self.e.radices.len();
        for k in (0..n).rev() {
            if self.tuple[k] + 1 < self.e.radices[k] {
                self.tuple[k] += 1;
                for &(i, s) in &self.e.bumps[k] {
                    self.keys[i] += s;
                }
                return;
            }
            let back = self.tuple[k];
            self.tuple[k] = 0;
            for &(i, s) in &self.e.bumps[k] {
                self.keys[i] -= s * back;
            }
        }
    }
}

impl DenseProduct {
    /// Builds the per-component tables for the given composition parameter.
    /// The caller is responsible for compatibility; the tables simply union
    /// successor sets over the internal-symbol balls.
    pub fn build(net: &Network, m: &[f64]) -> Result<DenseProduct> {
        let n = net.len();
        let comps: Vec<EngineComponent> =
            (0..n).map(|i| EngineComponent::build(net, i, m[i])).collect();
        let radices: Vec<usize> = comps.iter().map(|c| c.n_states).collect();
        let mut strides = vec![1usize; n];
        for k in (0..n.saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * radices[k + 1];
        }
        let total = radices.iter().product();
        let mut bumps = vec![Vec::new(); n];
        for (i, c) in comps.iter().enumerate() {
            let mut kstride = 1usize;
            for pos in (0..c.neighbors.len()).rev() {
                bumps[c.neighbors[pos]].push((i, kstride));
                kstride *= c.nbr_radices[pos];
            }
        }
        Ok(DenseProduct {
            comps,
            radices,
            strides,
            total,
            bumps,
        })
    }

    fn keys_for(&self, tuple: &[usize]) -> Vec<usize> {
        self.comps
            .iter()
            .map(|c| {
                let mut key = 0usize;
                for (pos, &j) in c.neighbors.iter().enumerate() {
                    key = key * c.nbr_radices[pos] + tuple[j];
                }
                key
            })
            .collect()
    }

    pub fn encode(&self, tuple: &[usize]) -> usize {
        tuple
            .iter()
            .zip(&self.strides)
            .map(|(&x, &s)| x * s)
            .sum()
    }

    pub fn decode(&self, code: usize) -> Vec<usize> {
        let mut rem = code;
        let n = self.radices.len();
        let mut out = vec![0usize; n];
        for k in (0..n).rev() {
            out[k] = rem % self.radices[k];
            rem /= self.radices[k];
        }
        out
    }

    /// Number of transitions of the implicit composed system, as an exact
    /// per-state sum of products of component successor counts.
    pub fn total_transitions(&self) -> f64 {
        let n = self.radices.len();
        let chunk = 1usize << 16;
        let chunks: Vec<usize> = (0..self.total.div_ceil(chunk)).collect();
        chunks
            .par_iter()
            .map(|&ci| {
                let start = ci * chunk;
                let end = (start + chunk).min(self.total);
                let mut od = Odometer::at(&self, start);
                let mut sum = 0.0f64;
                for _ in start..end {
                    // Per-component counts factor over the composed external
                    // alphabet: sum over combos of products = product of
                    // per-component sums.
                    let mut prod = 1.0f64;
                    for i in 0..n {
                        let c = &self.comps[i];
                        let e0 = c.entry(od.keys[i], od.tuple[i], 0);
                        let per_state =
                            (c.offsets[e0 + c.n_ext] - c.offsets[e0]) as f64;
                        prod *= per_state;
                        if prod == 0.0 {
                            break;
                        }
                    }
                    sum += prod;
                    od.step();
                }
                sum
            })
            .sum()
    }

    /// Runs the maximal controlled-invariant fixed point for the product of
    /// the per-component safe masks and returns the solved product.
    pub fn solve_safety(self, safe_masks: &[Vec<bool>]) -> DenseSolution {
        assert_eq!(safe_masks.len(), self.comps.len());
        // Entries whose successor set leaves the componentwise safe set can
        // never be used; folding that into a per-entry poison bit makes the
        // first round free of product probing.
        let poison: Vec<Vec<u64>> = self
            .comps
            .iter()
            .zip(safe_masks)
            .map(|(c, mask)| {
                let entries = c.offsets.len() - 1;
                let mut bad = vec![0u64; (entries + 63) / 64];
                for e in 0..entries {
                    if c.slice(e).iter().any(|&s| !mask[s as usize]) {
                        bad[e >> 6] |= 1 << (e & 63);
                    }
                }
                bad
            })
            .collect();

        let words = (self.total + 63) / 64;
        let n = self.radices.len();
        let chunk = 1usize << 16;
        let chunk_ids: Vec<usize> = (0..self.total.div_ceil(chunk)).collect();

        // Round 1 folded with initialization: alive iff componentwise safe
        // and some external combination has every component entry nonempty
        // and clean (all its successors componentwise safe).
        let alive: Vec<AtomicU64> = (0..words).map(|_| AtomicU64::new(0)).collect();
        chunk_ids.par_iter().for_each(|&ci| {
            let start = ci * chunk;
            let end = (start + chunk).min(self.total);
            let mut od = Odometer::at(&self, start);
            for code in start..end {
                let mut ok = (0..n).all(|i| safe_masks[i][od.tuple[i]]);
                if ok {
                    for i in 0..n {
                        let c = &self.comps[i];
                        let e0 = c.entry(od.keys[i], od.tuple[i], 0);
                        let usable = (0..c.n_ext).any(|u| {
                            let e = e0 + u;
                            c.offsets[e + 1] > c.offsets[e]
                                && (poison[i][e >> 6] >> (e & 63)) & 1 == 0
                        });
                        if !usable {
                            ok = false;
                            break;
                        }
                    }
                }
                if ok {
                    alive[code >> 6].fetch_or(1 << (code & 63), Ordering::Relaxed);
                }
                od.step();
            }
        });
        let mut alive: Vec<u64> = alive.into_iter().map(|w| w.into_inner()).collect();
        let mut rounds = 1usize;

        loop {
            let next: Vec<AtomicU64> = (0..words).map(|_| AtomicU64::new(0)).collect();
            let removed: u64 = chunk_ids
                .par_iter()
                .map(|&ci| {
                    let start = ci * chunk;
                    let end = (start + chunk).min(self.total);
                    let mut od = Odometer::at(&self, start);
                    let mut removed = 0u64;
                    for code in start..end {
                        if (alive[code >> 6] >> (code & 63)) & 1 == 1 {
                            if self.some_combo_alive(&od.tuple, &od.keys, &poison, &alive) {
                                next[code >> 6].fetch_or(1 << (code & 63), Ordering::Relaxed);
                            } else {
                                removed += 1;
                            }
                        }
                        od.step();
                    }
                    removed
                })
                .sum();
            alive = next.into_iter().map(|w| w.into_inner()).collect();
            if removed == 0 {
                break;
            }
            rounds += 1;
        }
        DenseSolution {
            engine: self,
            poison,
            alive,
            rounds,
        }
    }

    /// Is there an external combination whose every component entry is
    /// nonempty and clean and whose every product successor is alive?
    fn some_combo_alive(
        &self,
        tuple: &[usize],
        keys: &[usize],
        poison: &[Vec<u64>],
        alive: &[u64],
    ) -> bool {
        let n = self.radices.len();
        let mut slices: Vec<&[u32]> = vec![&[]; n];
        self.combo_search(0, tuple, keys, poison, alive, &mut slices)
    }

    fn combo_search<'s>(
        &'s self,
        i: usize,
        tuple: &[usize],
        keys: &[usize],
        poison: &[Vec<u64>],
        alive: &[u64],
        slices: &mut Vec<&'s [u32]>,
    ) -> bool {
        let n = self.radices.len();
        if i == n {
            return self.product_all_alive(slices, alive, 0, 0);
        }
        let c = &self.comps[i];
        let e0 = c.entry(keys[i], tuple[i], 0);
        for u in 0..c.n_ext {
            let e = e0 + u;
            if c.offsets[e + 1] == c.offsets[e] || (poison[i][e >> 6] >> (e & 63)) & 1 == 1 {
                continue;
            }
            slices[i] = c.slice(e);
            if self.combo_search(i + 1, tuple, keys, poison, alive, slices) {
                return true;
            }
        }
        false
    }

    fn product_all_alive(&self, slices: &[&[u32]], alive: &[u64], i: usize, base: usize) -> bool {
        if i == slices.len() {
            return (alive[base >> 6] >> (base & 63)) & 1 == 1;
        }
        let stride = self.strides[i];
        slices[i]
            .iter()
            .all(|&s| self.product_all_alive(slices, alive, i + 1, base + s as usize * stride))
    }
}

/// A solved product: the alive bitset is exactly the maximal controlled
/// invariant, and the maximal controller is answered per state on demand.
pub struct DenseSolution {
    engine: DenseProduct,
    poison: Vec<Vec<u64>>,
    alive: Vec<u64>,
    pub rounds: usize,
}

impl DenseSolution {
    pub fn engine(&self) -> &DenseProduct {
        &self.engine
    }

    pub fn cont_size(&self) -> u64 {
        self.alive.iter().map(|w| w.count_ones() as u64).sum()
    }

    pub fn is_alive_code(&self, code: usize) -> bool {
        (self.alive[code >> 6] >> (code & 63)) & 1 == 1
    }

    pub fn is_alive(&self, tuple: &[usize]) -> bool {
        self.is_alive_code(self.engine.encode(tuple))
    }

    /// Enabled external combinations of the maximal controller at a product
    /// state: combinations whose every component entry is clean and whose
    /// every product successor is alive.
    pub fn enabled_combos(&self, tuple: &[usize]) -> Vec<Vec<usize>> {
        if !self.is_alive(tuple) {
            return Vec::new();
        }
        let keys = self.engine.keys_for(tuple);
        let n = self.engine.radices.len();
        let mut out = Vec::new();
        let mut combo = vec![0usize; n];
        let mut slices: Vec<&[u32]> = vec![&[]; n];
        self.enum_combos(0, tuple, &keys, &mut combo, &mut slices, &mut out);
        out
    }

    fn enum_combos<'s>(
        &'s self,
        i: usize,
        tuple: &[usize],
        keys: &[usize],
        combo: &mut Vec<usize>,
        slices: &mut Vec<&'s [u32]>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let n = self.engine.radices.len();
        if i == n {
            if self.engine.product_all_alive(slices, &self.alive, 0, 0) {
                out.push(combo.clone());
            }
            return;
        }
        let c = &self.engine.comps[i];
        let e0 = c.entry(keys[i], tuple[i], 0);
        for u in 0..c.n_ext {
            let e = e0 + u;
            if c.offsets[e + 1] == c.offsets[e] || (self.poison[i][e >> 6] >> (e & 63)) & 1 == 1 {
                continue;
            }
            combo[i] = u;
            slices[i] = c.slice(e);
            self.enum_combos(i + 1, tuple, keys, combo, slices, out);
        }
    }

    /// Per-component successor lists of a composed move.
    pub fn successor_slices(&self, tuple: &[usize], combo: &[usize]) -> Vec<&[u32]> {
        let keys = self.engine.keys_for(tuple);
        (0..self.engine.radices.len())
            .map(|i| {
                let c = &self.engine.comps[i];
                c.slice(c.entry(keys[i], tuple[i], combo[i]))
            })
            .collect()
    }

    /// (enabled entries, controlled transitions) of the maximal controller
    /// over the whole product: one more sweep with product probing.
    pub fn controller_stats(&self) -> (u64, f64) {
        let chunk = 1usize << 16;
        let chunks: Vec<usize> = (0..self.engine.total.div_ceil(chunk)).collect();
        let n = self.engine.radices.len();
        chunks
            .par_iter()
            .map(|&ci| {
                let start = ci * chunk;
                let end = (start + chunk).min(self.engine.total);
                let mut od = Odometer::at(&self.engine, start);
                let mut entries = 0u64;
                let mut transitions = 0.0f64;
                let mut combo = vec![0usize; n];
                let mut slices: Vec<&[u32]> = vec![&[]; n];
                for code in start..end {
                    if self.is_alive_code(code) {
                        let mut local = Vec::new();
                        self.enum_stats(0, &od.tuple, &od.keys, &mut combo, &mut slices, &mut local);
                        for prod in local {
                            entries += 1;
                            transitions += prod;
                        }
                    }
                    od.step();
                }
                (entries, transitions)
            })
            .reduce(|| (0u64, 0.0f64), |a, b| (a.0 + b.0, a.1 + b.1))
    }

    fn enum_stats<'s>(
        &'s self,
        i: usize,
        tuple: &[usize],
        keys: &[usize],
        combo: &mut Vec<usize>,
        slices: &mut Vec<&'s [u32]>,
        out: &mut Vec<f64>,
    ) {
        let n = self.engine.radices.len();
        if i == n {
            if self.engine.product_all_alive(slices, &self.alive, 0, 0) {
                out.push(slices.iter().map(|s| s.len() as f64).product());
            }
            return;
        }
        let c = &self.engine.comps[i];
        let e0 = c.entry(keys[i], tuple[i], 0);
        for u in 0..c.n_ext {
            let e = e0 + u;
            if c.offsets[e + 1] == c.offsets[e] || (self.poison[i][e >> 6] >> (e & 63)) & 1 == 1 {
                continue;
            }
            combo[i] = u;
            slices[i] = c.slice(e);
            self.enum_stats(i + 1, tuple, keys, combo, slices, out);
        }
    }
}
