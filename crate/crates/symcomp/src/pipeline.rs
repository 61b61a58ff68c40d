//! End-to-end case-study pipelines: abstraction, bottom-up or monolithic
//! synthesis, and closed-loop simulation, shared by the CLI and the
//! acceptance suite.

use serde::Serialize;

use crate::abstraction::{
    grid_abstraction, sequence_abstraction, AbstractionResult, ConcreteRelation, GridModel,
    GridSpec, NeighborGrid,
};
use crate::composition::{check_compatibility, compose, Composed, Network, Scope};
use crate::engine::{DenseProduct, DenseSolution};
use crate::error::{Error, Result};
use crate::models::{
    microgrid_coupled_model, microgrid_network, simulate_closed_loop, traffic_network,
    traffic_step, MicrogridNetwork, MicrogridTopology, Plant, Refinement, SignConvention,
    Trajectory, TrafficNetwork,
};
use crate::synthesis::{
    bottom_up_synthesis, maximal_safety_controller, SafeSet, SynthesisReport,
};
use crate::ts::Controller;

fn log(verbose: bool, msg: &str) {
    if verbose {
        eprintln!("[pipeline] {msg}");
    }
}

// ---------------------------------------------------------------------------
// Traffic
// ---------------------------------------------------------------------------

/// The traffic pipeline up to the controlled network: local abstractions
/// (sequence abstraction for section 1, grid abstractions for 2-4), local
/// maximal controllers for the deflated safe sets, and the controlled
/// component network.
pub struct TrafficPipeline {
    pub traffic: TrafficNetwork,
    pub convention: SignConvention,
    pub grid: GridSpec,
    pub abstractions: Vec<AbstractionResult>,
    /// Tight per-component precision: the sequence-abstraction epsilon for
    /// section 1, half the cell width for sections 2-4.
    pub eps_tight: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub deflated: Vec<(f64, f64)>,
    pub local_reports: Vec<SynthesisReport>,
    pub kept: Vec<Vec<usize>>,
    pub old_to_new: Vec<Vec<Option<usize>>>,
    pub controlled_net: Network,
    pub raw_net: Network,
}

pub const TRAFFIC_SOURCE_STATE: f64 = 10.0;
pub const TRAFFIC_SEQUENCE_LENGTH: usize = 8;
pub const TRAFFIC_CELLS: usize = 150;

impl TrafficPipeline {
    pub fn build(convention: SignConvention, verbose: bool) -> Result<TrafficPipeline> {
        let traffic = traffic_network(convention);
        let grid = GridSpec::new(vec![0.0], vec![30.0], TRAFFIC_CELLS, 5)?;
        let half = grid.width(0) / 2.0;

        log(verbose, "building section abstractions");
        let a1 = sequence_abstraction(&traffic.models[0], TRAFFIC_SOURCE_STATE, TRAFFIC_SEQUENCE_LENGTH)?;
        let eps1 = a1.eps;
        let centers: Vec<Vec<f64>> = (0..grid.cell_count())
            .map(|c| grid.cell_center(&grid.decode(c)))
            .collect();
        let center_part = || NeighborGrid {
            values: centers.clone(),
            radius: half,
        };
        let s1_part = NeighborGrid {
            values: (0..a1.system.num_states())
                .map(|i| a1.system.output(i).to_vec())
                .collect(),
            radius: eps1,
        };
        let a2 = grid_abstraction(
            GridModel::Discrete(&traffic.models[1]),
            &grid,
            &[s1_part, center_part()],
            None,
        )?;
        let a3 = grid_abstraction(
            GridModel::Discrete(&traffic.models[2]),
            &grid,
            &[center_part()],
            None,
        )?;
        let a4 = grid_abstraction(
            GridModel::Discrete(&traffic.models[3]),
            &grid,
            &[center_part()],
            None,
        )?;
        let abstractions = vec![a1, a2, a3, a4];

        let eps_tight = vec![eps1, half, half, half];
        let m_hat = eps_tight.clone();
        let deflated: Vec<(f64, f64)> = traffic
            .safe
            .iter()
            .zip(&eps_tight)
            .map(|(&(lo, hi), &e)| (lo + e, hi - e))
            .collect();

        log(verbose, "synthesizing local controllers");
        let mut locals = Vec::new();
        let mut local_reports = Vec::new();
        let mut kept = Vec::new();
        let mut restricted = Vec::new();
        for (i, a) in abstractions.iter().enumerate() {
            let safe = SafeSet::output_box(vec![deflated[i].0], vec![deflated[i].1]);
            let (c, rep) = maximal_safety_controller(&a.system, &safe);
            let (sys, map) = a.system.restrict_with_controller(&c)?;
            locals.push(c);
            local_reports.push(rep);
            kept.push(map);
            restricted.push(sys);
        }
        let old_to_new: Vec<Vec<Option<usize>>> = abstractions
            .iter()
            .zip(&kept)
            .map(|(a, map)| {
                let mut v = vec![None; a.system.num_states()];
                for (new, &old) in map.iter().enumerate() {
                    v[old] = Some(new);
                }
                v
            })
            .collect();

        let raw_net = Network::new(
            abstractions.iter().map(|a| a.system.clone()).collect(),
            traffic.edges.clone(),
        )?;
        let controlled_net = raw_net.with_components(restricted)?;
        Ok(TrafficPipeline {
            traffic,
            convention,
            grid,
            abstractions,
            eps_tight,
            m_hat,
            deflated,
            local_reports,
            kept,
            old_to_new,
            controlled_net,
            raw_net,
        })
    }

    /// Builds the implicit product of the controlled components, runs the
    /// global fixed point, and gathers the size comparison against the
    /// uncontrolled full product.
    pub fn solve(&self, verbose: bool) -> Result<TrafficSolution> {
        log(verbose, "checking compatibility of the controlled network");
        let compat = check_compatibility(&self.controlled_net, &self.m_hat)?;
        if let Some(w) = compat.witness {
            return Err(Error::Incompatible {
                component: w.component,
                tuple: w.tuple,
                mu: self.m_hat[w.component],
            });
        }

        log(verbose, "counting the uncontrolled full product");
        let full = DenseProduct::build(&self.raw_net, &self.m_hat)?;
        let full_states = full.total as f64;
        let full_transitions = full.total_transitions();
        drop(full);

        log(verbose, "building the controlled product tables");
        let dense = DenseProduct::build(&self.controlled_net, &self.m_hat)?;
        let composed_states = dense.total as u64;
        let composed_transitions = dense.total_transitions();

        log(verbose, "running the global safety fixed point");
        let masks: Vec<Vec<bool>> = (0..4)
            .map(|i| {
                let safe = SafeSet::output_box(vec![self.deflated[i].0], vec![self.deflated[i].1]);
                safe.mask(self.controlled_net.component(i))
            })
            .collect();
        let solution = dense.solve_safety(&masks);
        log(
            verbose,
            &format!(
                "fixed point done: {} of {} states controllable after {} rounds",
                solution.cont_size(),
                composed_states,
                solution.rounds
            ),
        );
        log(verbose, "counting controller entries");
        let (controller_entries, controlled_transitions) = solution.controller_stats();
        Ok(TrafficSolution {
            solution,
            composed_states,
            composed_transitions,
            full_states,
            full_transitions,
            controller_entries,
            controlled_transitions,
        })
    }
}

pub struct TrafficSolution {
    pub solution: DenseSolution,
    pub composed_states: u64,
    pub composed_transitions: f64,
    pub full_states: f64,
    pub full_transitions: f64,
    pub controller_entries: u64,
    pub controlled_transitions: f64,
}

/// Nearest-abstract-state tracker over the solved traffic product. Section
/// 1's tracker follows its own deterministic abstract transition; the grid
/// sections re-anchor to the measured cell each step, which is the
/// memoryless cell-membership refinement.
pub struct TrafficRefinement<'a> {
    pipeline: &'a TrafficPipeline,
    solution: &'a DenseSolution,
    state: Option<Vec<usize>>,
    taken: Option<(Vec<usize>, Vec<usize>)>,
    safe_center: Vec<f64>,
}

impl<'a> TrafficRefinement<'a> {
    pub fn new(pipeline: &'a TrafficPipeline, solution: &'a DenseSolution) -> TrafficRefinement<'a> {
        let safe_center = pipeline
            .traffic
            .safe
            .iter()
            .map(|&(lo, hi)| 0.5 * (lo + hi))
            .collect();
        TrafficRefinement {
            pipeline,
            solution,
            state: None,
            taken: None,
            safe_center,
        }
    }

    fn anchor(&self, x: &[f64]) -> Result<Vec<usize>> {
        let mut tuple = Vec::with_capacity(4);
        for i in 0..4 {
            let (abs_idx, _related) = self.pipeline.abstractions[i]
                .relation
                .tracking_index(&x[i..=i])
                .map_err(|_| Error::Uncontrollable { state: x.to_vec() })?;
            match self.pipeline.old_to_new[i][abs_idx] {
                Some(k) => tuple.push(k),
                None => return Err(Error::Uncontrollable { state: x.to_vec() }),
            }
        }
        Ok(tuple)
    }

    fn combo_inputs(&self, combo: &[usize]) -> Vec<f64> {
        // Plant inputs: signals of sections 1, 3, 4.
        let v = |i: usize, u: usize| {
            self.pipeline.controlled_net.component(i).ext_value(u)[0]
        };
        vec![v(0, combo[0]), v(2, combo[2]), v(3, combo[3])]
    }
}

impl Refinement for TrafficRefinement<'_> {
    fn next_inputs(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let tuple = match &self.state {
            Some(t) => t.clone(),
            None => self.anchor(x)?,
        };
        let combos = self.solution.enabled_combos(&tuple);
        if combos.is_empty() {
            return Err(Error::Uncontrollable { state: x.to_vec() });
        }
        // Among enabled inputs, steer the predicted next state toward the
        // middle of the safe box.
        let mut best: Option<(f64, &Vec<usize>)> = None;
        for combo in &combos {
            let u = self.combo_inputs(combo);
            let xs = [x[0], x[1], x[2], x[3]];
            let us = [u[0], u[1], u[2]];
            let pred = traffic_step(&self.pipeline.traffic.params, &xs, &us, self.pipeline.convention);
            let score = pred
                .iter()
                .zip(&self.safe_center)
                .map(|(p, c)| (p - c).abs())
                .fold(0.0, f64::max);
            if best.as_ref().map_or(true, |(s, _)| score < *s) {
                best = Some((score, combo));
            }
        }
        let combo = best.unwrap().1.clone();
        let inputs = self.combo_inputs(&combo);
        self.taken = Some((tuple.clone(), combo));
        self.state = Some(tuple);
        Ok(inputs)
    }

    fn observe(&mut self, x_next: &[f64]) -> Result<()> {
        let (tuple, combo) = self.taken.take().expect("observe follows next_inputs");
        let slices = self.solution.successor_slices(&tuple, &combo);
        let mut next = Vec::with_capacity(4);
        // Section 1: deterministic abstract step.
        match slices[0].first() {
            Some(&s) => next.push(s as usize),
            None => return Err(Error::Uncontrollable { state: x_next.to_vec() }),
        }
        for i in 1..4 {
            let cell = self
                .pipeline
                .grid
                .quantize_flat(&x_next[i..=i])
                .map_err(|_| Error::Uncontrollable { state: x_next.to_vec() })?;
            match self.pipeline.old_to_new[i][cell] {
                Some(k) => next.push(k),
                None => return Err(Error::Uncontrollable { state: x_next.to_vec() }),
            }
        }
        self.state = Some(next);
        Ok(())
    }

    fn related(&self, x: &[f64]) -> bool {
        let Some(state) = &self.state else { return false };
        (0..4).all(|i| {
            match self.pipeline.abstractions[i].relation.tracking_index(&x[i..=i]) {
                Ok((abs_idx, related)) => {
                    related && self.pipeline.old_to_new[i][abs_idx] == Some(state[i])
                }
                Err(_) => false,
            }
        })
    }
}

/// Full traffic case: build, solve, closed loop. The trajectory starts at
/// `x0` and must stay inside the concrete safe box.
pub struct TrafficCase {
    pub eps: Vec<f64>,
    pub m_hat: Vec<f64>,
    pub local_reports: Vec<SynthesisReport>,
    pub cont_size: u64,
    pub rounds: usize,
    pub controller_entries: u64,
    pub controlled_transitions: f64,
    pub composed_states: u64,
    pub composed_transitions: f64,
    pub full_states: f64,
    pub full_transitions: f64,
    pub start_controllable: bool,
    pub trajectory: Trajectory,
}

pub fn traffic_case(
    convention: SignConvention,
    x0: &[f64; 4],
    steps: usize,
    verbose: bool,
) -> Result<TrafficCase> {
    let pipeline = TrafficPipeline::build(convention, verbose)?;
    let sol = pipeline.solve(verbose)?;
    let mut refinement = TrafficRefinement::new(&pipeline, &sol.solution);
    let start_controllable = refinement
        .anchor(x0)
        .map(|t| sol.solution.is_alive(&t))
        .unwrap_or(false);
    log(verbose, "running the closed loop");
    let plant = Plant::Traffic {
        params: pipeline.traffic.params,
        convention,
    };
    let safe_lo: Vec<f64> = pipeline.traffic.safe.iter().map(|s| s.0).collect();
    let safe_hi: Vec<f64> = pipeline.traffic.safe.iter().map(|s| s.1).collect();
    let trajectory = simulate_closed_loop(&plant, &mut refinement, x0, steps, &safe_lo, &safe_hi)?;
    Ok(TrafficCase {
        eps: pipeline.eps_tight.clone(),
        m_hat: pipeline.m_hat.clone(),
        local_reports: pipeline.local_reports.clone(),
        cont_size: sol.solution.cont_size(),
        rounds: sol.solution.rounds,
        controller_entries: sol.controller_entries,
        controlled_transitions: sol.controlled_transitions,
        composed_states: sol.composed_states,
        composed_transitions: sol.composed_transitions,
        full_states: sol.full_states,
        full_transitions: sol.full_transitions,
        start_controllable,
        trajectory,
    })
}

// ---------------------------------------------------------------------------
// Microgrid
// ---------------------------------------------------------------------------

/// The microgrid pipeline: per-unit grid abstractions, their explicit
/// composition, the monolithic maximal controller on it, the bottom-up
/// controller (trivial local stage: the per-unit safe band covers the whole
/// grid), and a directly gridded coupled abstraction for the precision
/// comparison.
pub struct MicrogridPipeline {
    pub net: MicrogridNetwork,
    pub abstractions: Vec<AbstractionResult>,
    pub raw_net: Network,
    pub composed: Composed,
    pub controller: Controller,
    pub report: SynthesisReport,
    pub bottom_up_report: SynthesisReport,
    pub coupled_report: SynthesisReport,
    pub coupled_states: usize,
}

impl MicrogridPipeline {
    pub fn build(topology: MicrogridTopology, verbose: bool) -> Result<MicrogridPipeline> {
        let net = microgrid_network(topology);
        let n = topology.units();
        let half = net.grid.width(0) / 2.0;
        let centers: Vec<Vec<f64>> = (0..net.grid.cell_count())
            .map(|c| net.grid.cell_center(&net.grid.decode(c)))
            .collect();

        log(verbose, "building unit abstractions");
        let mut abstractions = Vec::with_capacity(n);
        for (i, unit) in net.units.iter().enumerate() {
            let parts: Vec<NeighborGrid> = net
                .edges
                .iter()
                .filter(|&&(_, to)| to == i)
                .map(|_| NeighborGrid {
                    values: centers.clone(),
                    radius: half,
                })
                .collect();
            abstractions.push(grid_abstraction(
                GridModel::Continuous(unit),
                &net.grid,
                &parts,
                None,
            )?);
        }
        let raw_net = Network::new(
            abstractions.iter().map(|a| a.system.clone()).collect(),
            net.edges.clone(),
        )?;

        log(verbose, "composing the unit abstractions");
        let composed = compose(&raw_net, &net.m_hat, Scope::Full)?;

        log(verbose, "synthesizing the monolithic controller");
        let (lo, hi) = net.params.band();
        let band = SafeSet::output_box(vec![lo; n], vec![hi; n]);
        let (controller, report) = maximal_safety_controller(&composed.system, &band);

        log(verbose, "running the bottom-up pipeline");
        let safes: Vec<SafeSet> = (0..n)
            .map(|_| SafeSet::output_box(vec![lo], vec![hi]))
            .collect();
        let bu = bottom_up_synthesis(&raw_net, &safes, &net.m_hat, Scope::Full)?;

        log(verbose, "gridding the coupled model for comparison");
        let coupled = microgrid_coupled_model(topology);
        let grid_nd = GridSpec::new(vec![lo; n], vec![hi; n], net.params.n_d, net.params.n_u)?;
        let coupled_abs = grid_abstraction(GridModel::Continuous(&coupled), &grid_nd, &[], None)?;
        let coupled_states = coupled_abs.system.num_states();
        let (_, coupled_report) = maximal_safety_controller(&coupled_abs.system, &band);

        Ok(MicrogridPipeline {
            net,
            abstractions,
            raw_net,
            composed,
            controller,
            report,
            bottom_up_report: bu.report,
            coupled_report,
            coupled_states,
        })
    }
}

/// Memoryless cell-membership refinement of the composed microgrid
/// controller, choosing among enabled source powers the one whose
/// predicted next voltages sit closest to nominal.
pub struct MicrogridRefinement<'a> {
    pipeline: &'a MicrogridPipeline,
    coupled: crate::abstraction::SampledContinuousModel,
    state: Option<usize>,
    step: usize,
}

impl<'a> MicrogridRefinement<'a> {
    pub fn new(pipeline: &'a MicrogridPipeline) -> MicrogridRefinement<'a> {
        MicrogridRefinement {
            pipeline,
            coupled: microgrid_coupled_model(pipeline.net.topology),
            state: None,
            step: 0,
        }
    }

    fn anchor(&self, x: &[f64]) -> Result<usize> {
        let n = self.pipeline.net.topology.units();
        let mut tuple = Vec::with_capacity(n);
        for i in 0..n {
            let cell = self
                .pipeline
                .net
                .grid
                .quantize_flat(&x[i..=i])
                .map_err(|_| Error::Uncontrollable { state: x.to_vec() })?;
            tuple.push(cell);
        }
        self.pipeline
            .composed
            .index
            .encode(&tuple)
            .ok_or(Error::Uncontrollable { state: x.to_vec() })
    }
}

impl Refinement for MicrogridRefinement<'_> {
    fn next_inputs(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let id = match self.state {
            Some(id) => id,
            None => self.anchor(x)?,
        };
        let enabled = self.pipeline.controller.enabled(id);
        if enabled.is_empty() {
            return Err(Error::Uncontrollable { state: x.to_vec() });
        }
        let n = self.pipeline.net.topology.units();
        let t = self.step as f64 * self.pipeline.net.params.tau;
        let nominal: Vec<f64> = (0..n)
            .filter_map(|i| self.pipeline.net.profiles[i].map(|p| p.nominal(t)))
            .collect();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for &(code, _) in enabled {
            let combo = self.pipeline.composed.decode_ext(code as usize);
            let mut u = Vec::new();
            for (i, &c) in combo.iter().enumerate() {
                let vals = self.pipeline.raw_net.component(i).ext_value(c);
                u.extend_from_slice(vals);
            }
            let pred = self.coupled.flow(x, &u, &[], &nominal)?;
            let score = pred
                .iter()
                .map(|v| (v - self.pipeline.net.params.v_nom).abs())
                .fold(0.0, f64::max);
            if best.as_ref().map_or(true, |(s, _)| score < *s) {
                best = Some((score, u));
            }
        }
        self.state = Some(id);
        self.step += 1;
        Ok(best.unwrap().1)
    }

    fn observe(&mut self, x_next: &[f64]) -> Result<()> {
        self.state = Some(self.anchor(x_next)?);
        Ok(())
    }

    fn related(&self, _x: &[f64]) -> bool {
        self.state.is_some()
    }
}

pub struct MicrogridCase {
    pub eps: f64,
    pub abstract_states: usize,
    pub cont_size: usize,
    pub bottom_up_dom: usize,
    pub controller_entries: usize,
    pub bottom_up_entries: usize,
    pub coupled_states: usize,
    pub coupled_cont: usize,
    pub coupled_entries: usize,
    pub trajectory: Trajectory,
}

pub fn microgrid_case(
    topology: MicrogridTopology,
    steps: usize,
    seed: u64,
    verbose: bool,
) -> Result<MicrogridCase> {
    let pipeline = MicrogridPipeline::build(topology, verbose)?;
    let n = topology.units();
    let mut refinement = MicrogridRefinement::new(&pipeline);
    let plant = Plant::Microgrid {
        params: pipeline.net.params.clone(),
        topology,
        profiles: pipeline.net.profiles.clone(),
        seed,
    };
    let (lo, hi) = pipeline.net.params.band();
    let x0 = vec![pipeline.net.params.v_nom; n];
    log(verbose, "running the closed loop");
    let trajectory = simulate_closed_loop(
        &plant,
        &mut refinement,
        &x0,
        steps,
        &vec![lo; n],
        &vec![hi; n],
    )?;
    Ok(MicrogridCase {
        eps: pipeline.abstractions.iter().map(|a| a.eps).fold(0.0, f64::max),
        abstract_states: pipeline.composed.system.num_states(),
        cont_size: pipeline.report.cont_size,
        bottom_up_dom: pipeline.bottom_up_report.cont_size,
        controller_entries: pipeline.report.controller_transitions,
        bottom_up_entries: pipeline.bottom_up_report.controller_transitions,
        coupled_states: pipeline.coupled_states,
        coupled_cont: pipeline.coupled_report.cont_size,
        coupled_entries: pipeline.coupled_report.controller_transitions,
        trajectory,
    })
}

/// Machine-readable case report (written by the CLI next to the CSV).
#[derive(Debug, Serialize)]
pub struct CaseReport {
    pub case: String,
    /// Per-component abstraction precision actually measured; the
    /// published value for the first traffic section (0.0016) comes from a
    /// different contraction bound and is echoed for comparison.
    pub eps: Vec<f64>,
    pub published_section1_eps: Option<f64>,
    pub cont_size: u64,
    pub iterations: usize,
    pub controller_transitions: u64,
    pub composed_states: f64,
    pub composed_transitions: f64,
    pub full_states: f64,
    pub full_transitions: f64,
    pub trajectory_safe: bool,
    pub completed: bool,
}

/// Helper shared by tests: does a trajectory stay in a box for its whole
/// recorded length?
pub fn trajectory_in_box(t: &Trajectory, lo: &[f64], hi: &[f64]) -> bool {
    t.rows.iter().all(|r| {
        r.state
            .iter()
            .zip(lo.iter().zip(hi))
            .all(|(&v, (&a, &b))| crate::metrics::leq(a, v) && crate::metrics::leq(v, b))
    })
}

/// Validation helper for grid abstractions: for sampled concrete points of
/// each cell and each (external, internal-symbol) input, the concrete
/// successor under a concrete internal input sampled inside the symbol's
/// ball (and an adversarially sampled disturbance) must land inside an
/// abstract successor cell, and the point must be within the declared
/// epsilon of the abstract output. Returns the number of point checks.
pub fn validate_grid_soundness(
    abs: &AbstractionResult,
    model: GridModel<'_>,
    int_radii: &[f64],
    samples_per_cell: usize,
    seed: u64,
) -> Result<usize> {
    use rand::{Rng, SeedableRng};
    let ConcreteRelation::GridCells { grid } = &abs.relation else {
        return Err(Error::InvalidSystem("expected a grid relation".into()));
    };
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut checks = 0usize;
    let dim = grid.dim();
    for cell in 0..grid.cell_count() {
        let (lo, hi) = grid.cell_corners(&grid.decode(cell));
        let center = abs.system.output(cell).to_vec();
        for _ in 0..samples_per_cell {
            let x: Vec<f64> = (0..dim).map(|k| rng.gen_range(lo[k]..=hi[k])).collect();
            // Relation condition (ii) at the declared precision.
            let d = x
                .iter()
                .zip(&center)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if d > abs.eps + crate::metrics::SLACK {
                return Err(Error::InvalidSystem(format!(
                    "cell {cell}: member {x:?} farther than eps from the abstract output"
                )));
            }
            let ue = rng.gen_range(0..abs.system.ext_count());
            let ui = rng.gen_range(0..abs.system.int_count());
            let succ = abs.system.successors(cell, ue, ui)?;
            if succ.is_empty() {
                continue;
            }
            let v_sym = abs.system.int_value(ui).to_vec();
            let v: Vec<f64> = v_sym
                .iter()
                .zip(int_radii)
                .map(|(&c, &r)| rng.gen_range(c - r..=c + r))
                .collect();
            let next = match &model {
                GridModel::Discrete(m) => {
                    let uval = abs.system.ext_value(ue).first().copied().unwrap_or(0.0);
                    vec![m.step(x[0], uval, &v)]
                }
                GridModel::Continuous(m) => {
                    let p: Vec<f64> = m
                        .dist_lo
                        .iter()
                        .zip(&m.dist_hi)
                        .map(|(&a, &b)| rng.gen_range(a..=b))
                        .collect();
                    m.flow(&x, abs.system.ext_value(ue), &v, &p)?
                }
            };
            let c = grid.quantize(&next)?;
            let flat = grid.encode(&c);
            if !succ.contains(&(flat as u32)) {
                return Err(Error::InvalidSystem(format!(
                    "cell {cell} input ({ue},{ui}): concrete successor {next:?} lands in \
                     uncovered cell {flat}"
                )));
            }
            checks += 1;
        }
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::MicrogridTopology;

    #[test]
    fn traffic_pipeline_shapes_and_precisions() {
        let p = TrafficPipeline::build(SignConvention::Stable, false).unwrap();
        assert_eq!(p.abstractions[0].system.num_states(), 256);
        assert!((p.abstractions[0].eps - 0.513889f64.powi(8) * 20.0).abs() < 1e-6);
        for a in &p.abstractions[1..] {
            assert_eq!(a.system.num_states(), 150);
            assert!((a.eps - 0.2).abs() < 1e-12);
        }
        assert_eq!(p.eps_tight[1], 0.1);
        assert_eq!(p.m_hat[1], 0.1);
        // Deflated safe windows: published values for sections 2-4.
        assert!((p.deflated[1].0 - 5.1).abs() < 1e-12);
        assert!((p.deflated[1].1 - 24.9).abs() < 1e-12);
        // Local controller domains.
        assert_eq!(p.local_reports[0].cont_size, 206);
        for r in &p.local_reports[1..] {
            assert_eq!(r.cont_size, 100);
        }
    }

    #[test]
    fn traffic_grid_abstractions_are_sound_on_samples() {
        let p = TrafficPipeline::build(SignConvention::Stable, false).unwrap();
        // Section 3 reads section 2's cells; radius = half cell width.
        let checks = validate_grid_soundness(
            &p.abstractions[2],
            GridModel::Discrete(&p.traffic.models[2]),
            &[0.1],
            20,
            99,
        )
        .unwrap();
        assert!(checks > 1000);
        // Section 2 reads section 1's points (radius eps1) and section 4's
        // cells.
        let eps1 = p.abstractions[0].eps;
        let checks = validate_grid_soundness(
            &p.abstractions[1],
            GridModel::Discrete(&p.traffic.models[1]),
            &[eps1, 0.1],
            20,
            100,
        )
        .unwrap();
        assert!(checks > 1000);
    }

    #[test]
    fn microgrid_unit_abstractions_are_sound_on_samples() {
        let pipe = MicrogridPipeline::build(MicrogridTopology::FourUnit, false).unwrap();
        let half = pipe.net.grid.width(0) / 2.0;
        for (i, a) in pipe.abstractions.iter().enumerate() {
            let n_nbrs = pipe.net.edges.iter().filter(|&&(_, to)| to == i).count();
            let radii = vec![half; n_nbrs];
            let checks = validate_grid_soundness(
                a,
                GridModel::Continuous(&pipe.net.units[i]),
                &radii,
                40,
                3_000 + i as u64,
            )
            .unwrap();
            assert!(checks > 0, "unit {i}");
        }
    }

    #[test]
    fn microgrid_four_unit_counts() {
        let pipe = MicrogridPipeline::build(MicrogridTopology::FourUnit, false).unwrap();
        assert_eq!(pipe.composed.system.num_states(), 625);
        assert_eq!(pipe.report.cont_size, 625);
        assert_eq!(pipe.bottom_up_report.cont_size, 625);
        assert!((pipe.abstractions[0].eps - 4.5).abs() < 1e-12);
    }
}
