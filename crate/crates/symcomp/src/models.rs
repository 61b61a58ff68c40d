//! The two case-study models with their published parameters, decomposed
//! into networked scalar components, plus the closed-loop simulator.
//!
//! Units are SI internally (volts, watts, farads, siemens, seconds);
//! trajectory output uses display units (volts, kilowatts, milliseconds).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::abstraction::{AffineScalarModel, ContinuousField, GridSpec, SampledContinuousModel};
use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Road traffic (cell transmission model, four sections, three signals)
// ---------------------------------------------------------------------------

/// Traffic parameters: section length l (km), flow speed v (km/h), sampling
/// interval T (h), exit ratio q.
#[derive(Debug, Clone, Copy)]
pub struct TrafficParams {
    pub l: f64,
    pub v: f64,
    pub t: f64,
    pub q: f64,
}

impl Default for TrafficParams {
    fn default() -> Self {
        TrafficParams {
            l: 0.25,
            v: 70.0,
            t: 10.0 / 3600.0,
            q: 0.25,
        }
    }
}

impl TrafficParams {
    pub fn tv_over_l(&self) -> f64 {
        self.t * self.v / self.l
    }

    pub fn tv_over_16l(&self) -> f64 {
        self.t * self.v / (1.6 * self.l)
    }
}

/// The printed self-coefficient of section 4 makes that section unstable
/// and contradicts the reproduced safe closed loop; the stable convention
/// flips the sign of the Tv/l term. Both are selectable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignConvention {
    /// x4 self-coefficient 1 - Tv/l - q (default).
    Stable,
    /// x4 self-coefficient 1 + Tv/l - q, as printed.
    PaperLiteral,
}

/// One step of the four-section density update. `u` holds the three signal
/// bits (sections 1, 3, 4 are controlled).
pub fn traffic_step(p: &TrafficParams, x: &[f64; 4], u: &[f64; 3], conv: SignConvention) -> [f64; 4] {
    let a = p.tv_over_l();
    let keep = 1.0 - a - p.q;
    let x4_self = match conv {
        SignConvention::Stable => keep,
        SignConvention::PaperLiteral => 1.0 + a - p.q,
    };
    [
        (1.0 - p.tv_over_16l()) * x[0] + 5.0 * u[0],
        a * x[0] + keep * x[1] + a * x[3],
        a * x[1] + keep * x[2] + 8.0 * u[1],
        a * x[2] + x4_self * x[3] + 8.0 * u[2],
    ]
}

/// The traffic network: per-section scalar models, connectivity, safe sets.
pub struct TrafficNetwork {
    pub params: TrafficParams,
    pub models: Vec<AffineScalarModel>,
    /// (j, i): section i reads the density of section j.
    pub edges: Vec<(usize, usize)>,
    /// Concrete safe intervals per section.
    pub safe: Vec<(f64, f64)>,
    /// Deflated abstract safe intervals as published (section 1 uses the
    /// published precision 0.0016; sections 2-4 use 0.1).
    pub published_deflated: Vec<(f64, f64)>,
    pub domain: (f64, f64),
}

/// Builds the four-section network: section 2 reads sections 1 and 4,
/// section 3 reads section 2, section 4 reads section 3. Section 1 has no
/// internal input.
pub fn traffic_network(conv: SignConvention) -> TrafficNetwork {
    let p = TrafficParams::default();
    let a = p.tv_over_l();
    let keep = 1.0 - a - p.q;
    let x4_self = match conv {
        SignConvention::Stable => keep,
        SignConvention::PaperLiteral => 1.0 + a - p.q,
    };
    let domain = (0.0, 30.0);
    let binary = vec![vec![0.0], vec![1.0]];
    let unit = vec![vec![]];
    let models = vec![
        AffineScalarModel {
            self_coeff: 1.0 - p.tv_over_16l(),
            int_coeffs: vec![],
            input_gain: 5.0,
            offset: 0.0,
            domain,
            ext_values: binary.clone(),
        },
        AffineScalarModel {
            self_coeff: keep,
            int_coeffs: vec![a, a],
            input_gain: 0.0,
            offset: 0.0,
            domain,
            ext_values: unit,
        },
        AffineScalarModel {
            self_coeff: keep,
            int_coeffs: vec![a],
            input_gain: 8.0,
            offset: 0.0,
            domain,
            ext_values: binary.clone(),
        },
        AffineScalarModel {
            self_coeff: x4_self,
            int_coeffs: vec![a],
            input_gain: 8.0,
            offset: 0.0,
            domain,
            ext_values: binary,
        },
    ];
    TrafficNetwork {
        params: p,
        models,
        edges: vec![(0, 1), (3, 1), (1, 2), (2, 3)],
        safe: vec![(2.0, 25.0), (5.0, 25.0), (5.0, 25.0), (5.0, 25.0)],
        published_deflated: vec![
            (2.0016, 24.9984),
            (5.1, 24.9),
            (5.1, 24.9),
            (5.1, 24.9),
        ],
        domain,
    }
}

// ---------------------------------------------------------------------------
// DC microgrid (five buses, sources at units 2 and 3)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicrogridTopology {
    /// Unit 5 disconnected.
    FourUnit,
    /// All five units.
    FiveUnit,
}

impl MicrogridTopology {
    pub fn units(&self) -> usize {
        match self {
            MicrogridTopology::FourUnit => 4,
            MicrogridTopology::FiveUnit => 5,
        }
    }
}

/// Bus parameters. Capacitances are stored in farads at millifarad scale:
/// at the published microfarad scale the loads would sweep the voltage
/// across the whole +/-2.5% band within a fraction of one 0.1 ms sampling
/// period, making the regulation task physically impossible; millifarads
/// reproduce the published closed-loop behavior and controllable-state
/// count.
#[derive(Debug, Clone)]
pub struct MicrogridParams {
    pub capacitance: [f64; 5],
    pub line_conductance: [[f64; 5]; 5],
    pub v_nom: f64,
    pub delta_frac: f64,
    pub tau: f64,
    pub integrator_steps: usize,
    pub source: [bool; 5],
    pub source_max_w: f64,
    pub n_d: usize,
    pub n_u: usize,
}

impl Default for MicrogridParams {
    fn default() -> Self {
        let mut g = [[0.0; 5]; 5];
        let lines = [(0, 1, 5.2), (0, 2, 4.6), (0, 3, 4.5), (1, 3, 6.0), (1, 4, 3.1), (2, 3, 5.6)];
        for &(i, j, val) in &lines {
            g[i][j] = val;
            g[j][i] = val;
        }
        MicrogridParams {
            capacitance: [2.2e-3, 1.9e-3, 1.5e-3, 1.7e-3, 1.7e-3],
            line_conductance: g,
            v_nom: 450.0,
            delta_frac: 0.025,
            tau: 1e-4,
            integrator_steps: 40,
            source: [false, true, true, false, false],
            source_max_w: 8000.0,
            n_d: 5,
            n_u: 5,
        }
    }
}

impl MicrogridParams {
    pub fn band(&self) -> (f64, f64) {
        (
            self.v_nom * (1.0 - self.delta_frac),
            self.v_nom * (1.0 + self.delta_frac),
        )
    }

    pub fn neighbors(&self, i: usize, topology: MicrogridTopology) -> Vec<usize> {
        (0..topology.units())
            .filter(|&j| j != i && self.line_conductance[i][j] > 0.0)
            .collect()
    }

    /// The weighted Laplacian of the active topology.
    pub fn laplacian(&self, topology: MicrogridTopology) -> Vec<Vec<f64>> {
        let n = topology.units();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    l[i][j] = -self.line_conductance[i][j];
                    l[i][i] += self.line_conductance[i][j];
                }
            }
        }
        l
    }
}

/// The interconnected bus dynamics. `u` carries source powers (watts) at
/// source indices; `p` carries load demands (watts) at load indices;
/// entries at the other indices are ignored.
pub fn microgrid_field(
    params: &MicrogridParams,
    topology: MicrogridTopology,
    v: &[f64],
    u: &[f64],
    p: &[f64],
) -> Result<Vec<f64>> {
    let n = topology.units();
    if v.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    if v.iter().any(|&x| x <= 0.0) {
        return Err(Error::DomainEscape);
    }
    let mut dv = vec![0.0; n];
    for i in 0..n {
        let mut lap = 0.0;
        for j in 0..n {
            lap += params.line_conductance[i][j] * (v[i] - v[j]);
        }
        let sigma = if params.source[i] { u[i] } else { -p[i] } / v[i];
        dv[i] = (-lap + sigma) / params.capacitance[i];
    }
    Ok(dv)
}

/// Published demand profile of one load: a step at `step_time_s` from
/// `before_w` to `after_w`, with multiplicative uniform noise.
#[derive(Debug, Clone, Copy)]
pub struct LoadProfile {
    pub before_w: f64,
    pub after_w: f64,
    pub step_time_s: f64,
    pub noise_frac: f64,
}

impl LoadProfile {
    pub fn nominal(&self, t: f64) -> f64 {
        if t < self.step_time_s {
            self.before_w
        } else {
            self.after_w
        }
    }

    /// Disturbance interval: profile extrema widened by the noise.
    pub fn bounds(&self) -> (f64, f64) {
        let lo = self.before_w.min(self.after_w);
        let hi = self.before_w.max(self.after_w);
        (lo * (1.0 - self.noise_frac), hi * (1.0 + self.noise_frac))
    }

    pub fn sample(&self, t: f64, rng: &mut ChaCha8Rng) -> f64 {
        self.nominal(t) * (1.0 + self.noise_frac * rng.gen_range(-1.0..=1.0))
    }
}

/// Demand profiles per unit index (None at sources).
pub fn microgrid_profiles(params: &MicrogridParams, topology: MicrogridTopology) -> Vec<Option<LoadProfile>> {
    let mk = |before: f64, after: f64| LoadProfile {
        before_w: before,
        after_w: after,
        step_time_s: 0.25,
        noise_frac: 0.02,
    };
    let mut out = vec![None; topology.units()];
    out[0] = Some(mk(300.0, 1000.0));
    out[3] = Some(mk(300.0, 1000.0));
    if topology.units() == 5 {
        out[4] = Some(mk(400.0, 1000.0));
    }
    for (i, slot) in out.iter().enumerate() {
        debug_assert_eq!(slot.is_none(), params.source[i]);
    }
    out
}

/// The microgrid as a network of scalar bus models with neighbor voltages
/// as internal inputs, plus grids and safe bands.
pub struct MicrogridNetwork {
    pub params: MicrogridParams,
    pub topology: MicrogridTopology,
    pub units: Vec<SampledContinuousModel>,
    pub edges: Vec<(usize, usize)>,
    pub grid: GridSpec,
    pub profiles: Vec<Option<LoadProfile>>,
    /// Composition parameter for the abstract product (one cell width per
    /// unit).
    pub m_hat: Vec<f64>,
}

pub fn microgrid_network(topology: MicrogridTopology) -> MicrogridNetwork {
    let params = MicrogridParams::default();
    let n = topology.units();
    let (lo, hi) = params.band();
    let grid = GridSpec::new(vec![lo], vec![hi], params.n_d, params.n_u).unwrap();
    let profiles = microgrid_profiles(&params, topology);
    let mut units = Vec::with_capacity(n);
    let mut edges = Vec::new();
    for i in 0..n {
        let nbrs = params.neighbors(i, topology);
        for &j in &nbrs {
            edges.push((j, i));
        }
        let (dist_lo, dist_hi) = match &profiles[i] {
            Some(p) => {
                let (a, b) = p.bounds();
                (vec![a], vec![b])
            }
            None => (vec![], vec![]),
        };
        let ext_values = if params.source[i] {
            GridSpec::input_grid(0.0, params.source_max_w, params.n_u)
                .into_iter()
                .map(|w| vec![w])
                .collect()
        } else {
            vec![vec![]]
        };
        units.push(SampledContinuousModel {
            field: ContinuousField::Bus {
                capacitance: params.capacitance[i],
                line_conductance: nbrs
                    .iter()
                    .map(|&j| params.line_conductance[i][j])
                    .collect(),
                source: params.source[i],
            },
            tau: params.tau,
            steps: params.integrator_steps,
            monotone: true,
            dist_lo,
            dist_hi,
            ext_values,
            state_floor: 0.0,
        });
    }
    let cell = grid.width(0);
    MicrogridNetwork {
        params,
        topology,
        units,
        edges,
        grid,
        profiles,
        m_hat: vec![cell; n],
    }
}

/// The coupled grid as one sampled model (for the monolithic abstraction):
/// external input = stacked source powers, disturbance = stacked load
/// demand intervals.
pub fn microgrid_coupled_model(topology: MicrogridTopology) -> SampledContinuousModel {
    let params = MicrogridParams::default();
    let n = topology.units();
    let profiles = microgrid_profiles(&params, topology);
    let sources: Vec<usize> = (0..n).filter(|&i| params.source[i]).collect();
    let mut dist_lo = Vec::new();
    let mut dist_hi = Vec::new();
    for p in profiles.iter().flatten() {
        let (a, b) = p.bounds();
        dist_lo.push(a);
        dist_hi.push(b);
    }
    // External alphabet: product grid over the source power ranges.
    let per_source = GridSpec::input_grid(0.0, params.source_max_w, params.n_u);
    let mut ext_values: Vec<Vec<f64>> = vec![vec![]];
    for _ in &sources {
        let mut next = Vec::new();
        for prefix in &ext_values {
            for &w in &per_source {
                let mut v = prefix.clone();
                v.push(w);
                next.push(v);
            }
        }
        ext_values = next;
    }
    SampledContinuousModel {
        field: ContinuousField::CoupledGrid {
            capacitance: params.capacitance[..n].to_vec(),
            conductance: (0..n)
                .map(|i| (0..n).map(|j| params.line_conductance[i][j]).collect())
                .collect(),
            source: params.source[..n].to_vec(),
        },
        tau: params.tau,
        steps: params.integrator_steps,
        monotone: true,
        dist_lo,
        dist_hi,
        ext_values,
        state_floor: 0.0,
    }
}

// ---------------------------------------------------------------------------
// Closed-loop simulation
// ---------------------------------------------------------------------------

/// A refinement policy: measures the concrete state, returns the concrete
/// input values to apply, and is told the successor state to advance its
/// abstract tracker.
pub trait Refinement {
    /// Concrete input values for the measured state (flattened per
    /// component). Errors with `Uncontrollable` when the tracked abstract
    /// state leaves the controller domain.
    fn next_inputs(&mut self, x: &[f64]) -> Result<Vec<f64>>;
    /// Observe the measured successor state.
    fn observe(&mut self, x_next: &[f64]) -> Result<()>;
    /// Whether the tracked abstract state is formally related to `x`.
    fn related(&self, x: &[f64]) -> bool;
}

#[derive(Debug, Clone)]
pub struct TrajectoryRow {
    pub step: usize,
    pub time: f64,
    pub state: Vec<f64>,
    pub inputs: Vec<f64>,
    pub safe: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
    /// False when the loop stopped early on an uncontrollable state.
    pub completed: bool,
    pub note: Option<String>,
}

impl Trajectory {
    pub fn all_safe(&self) -> bool {
        self.rows.iter().all(|r| r.safe)
    }

    pub fn write_csv<W: Write>(&self, mut w: W, state_names: &[&str], input_names: &[&str]) -> Result<()> {
        write!(w, "step,time")?;
        for n in state_names {
            write!(w, ",{n}")?;
        }
        for n in input_names {
            write!(w, ",{n}")?;
        }
        writeln!(w, ",safe")?;
        for r in &self.rows {
            write!(w, "{},{}", r.step, r.time)?;
            for v in &r.state {
                write!(w, ",{v}")?;
            }
            for k in 0..input_names.len() {
                match r.inputs.get(k) {
                    Some(v) => write!(w, ",{v}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w, ",{}", if r.safe { 1 } else { 0 })?;
        }
        Ok(())
    }
}

/// The concrete plant being driven.
pub enum Plant {
    Traffic {
        params: TrafficParams,
        convention: SignConvention,
    },
    Microgrid {
        params: MicrogridParams,
        topology: MicrogridTopology,
        profiles: Vec<Option<LoadProfile>>,
        /// Seed for the demand noise.
        seed: u64,
    },
}

impl Plant {
    fn time_of(&self, step: usize) -> f64 {
        match self {
            // Display time: step index for traffic, milliseconds for the grid.
            Plant::Traffic { .. } => step as f64,
            Plant::Microgrid { params, .. } => step as f64 * params.tau * 1e3,
        }
    }
}

/// Runs the closed loop for `steps` steps from `x0`, checking the safe box
/// pointwise. The trajectory records `steps + 1` rows; the final row has no
/// inputs. Stops early with a note when the refinement signals an
/// uncontrollable state.
pub fn simulate_closed_loop(
    plant: &Plant,
    refinement: &mut dyn Refinement,
    x0: &[f64],
    steps: usize,
    safe_lo: &[f64],
    safe_hi: &[f64],
) -> Result<Trajectory> {
    let mut rng = match plant {
        Plant::Microgrid { seed, .. } => ChaCha8Rng::seed_from_u64(*seed),
        _ => ChaCha8Rng::seed_from_u64(0),
    };
    let coupled = match plant {
        Plant::Microgrid { params, topology, .. } => {
            let n = topology.units();
            Some(SampledContinuousModel {
                field: ContinuousField::CoupledGrid {
                    capacitance: params.capacitance[..n].to_vec(),
                    conductance: (0..n)
                        .map(|i| (0..n).map(|j| params.line_conductance[i][j]).collect())
                        .collect(),
                    source: params.source[..n].to_vec(),
                },
                tau: params.tau,
                steps: params.integrator_steps,
                monotone: true,
                dist_lo: vec![],
                dist_hi: vec![],
                ext_values: vec![vec![]],
                state_floor: 0.0,
            })
        }
        _ => None,
    };
    let in_safe = |x: &[f64]| {
        x.iter()
            .zip(safe_lo.iter().zip(safe_hi))
            .all(|(&v, (&lo, &hi))| crate::metrics::leq(lo, v) && crate::metrics::leq(v, hi))
    };
    let mut rows = Vec::with_capacity(steps + 1);
    let mut x = x0.to_vec();
    for step in 0..steps {
        let inputs = match refinement.next_inputs(&x) {
            Ok(u) => u,
            Err(Error::Uncontrollable { state }) => {
                rows.push(TrajectoryRow {
                    step,
                    time: plant.time_of(step),
                    state: x.clone(),
                    inputs: vec![],
                    safe: in_safe(&x),
                });
                return Ok(Trajectory {
                    rows,
                    completed: false,
                    note: Some(format!("uncontrollable at step {step}: {state:?}")),
                });
            }
            Err(e) => return Err(e),
        };
        rows.push(TrajectoryRow {
            step,
            time: plant.time_of(step),
            state: x.clone(),
            inputs: inputs.clone(),
            safe: in_safe(&x),
        });
        x = match plant {
            Plant::Traffic { params, convention } => {
                let xs: [f64; 4] = [x[0], x[1], x[2], x[3]];
                let us: [f64; 3] = [inputs[0], inputs[1], inputs[2]];
                traffic_step(params, &xs, &us, *convention).to_vec()
            }
            Plant::Microgrid {
                params,
                topology,
                profiles,
                ..
            } => {
                let n = topology.units();
                let t = step as f64 * params.tau;
                let mut u = vec![0.0; n];
                let mut p = vec![0.0; n];
                let mut k = 0usize;
                for i in 0..n {
                    if params.source[i] {
                        u[i] = inputs[k];
                        k += 1;
                    } else {
                        p[i] = profiles[i].as_ref().unwrap().sample(t, &mut rng);
                    }
                }
                // Zero-order hold on both the control and the sampled
                // demand over one period.
                let uu: Vec<f64> = (0..n).filter(|&i| params.source[i]).map(|i| u[i]).collect();
                let pp: Vec<f64> = (0..n).filter(|&i| !params.source[i]).map(|i| p[i]).collect();
                coupled.as_ref().unwrap().flow(&x, &uu, &[], &pp)?
            }
        };
        refinement.observe(&x)?;
    }
    rows.push(TrajectoryRow {
        step: steps,
        time: plant.time_of(steps),
        state: x.clone(),
        inputs: vec![],
        safe: in_safe(&x),
    });
    Ok(Trajectory {
        rows,
        completed: true,
        note: None,
    })
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn traffic_step_printed_values() {
        let p = TrafficParams::default();
        let x = [14.0, 15.0, 20.0, 16.0];
        let u = [1.0, 0.0, 1.0];
        let next = traffic_step(&p, &x, &u, SignConvention::Stable);
        assert!((next[0] - 12.194).abs() < 5e-4, "{}", next[0]);
        assert!((next[1] - 22.917).abs() < 5e-4, "{}", next[1]);
        assert!((next[2] - 11.111).abs() < 5e-4, "{}", next[2]);
        assert!((next[3] - 23.111).abs() < 5e-4, "{}", next[3]);
        let literal = traffic_step(&p, &x, &u, SignConvention::PaperLiteral);
        assert!((literal[3] - 48.0).abs() < 1e-9, "{}", literal[3]);
    }

    #[test]
    fn traffic_zero_state_is_fixed_without_input() {
        let p = TrafficParams::default();
        let next = traffic_step(&p, &[0.0; 4], &[0.0; 3], SignConvention::Stable);
        assert_eq!(next, [0.0; 4]);
    }

    #[test]
    fn traffic_update_is_linear_in_the_state() {
        let p = TrafficParams::default();
        let x = [3.0, 7.0, 11.0, 5.0];
        let ax = traffic_step(&p, &x, &[0.0; 3], SignConvention::Stable);
        let x2: [f64; 4] = std::array::from_fn(|i| 2.0 * x[i]);
        let ax2 = traffic_step(&p, &x2, &[0.0; 3], SignConvention::Stable);
        for i in 0..4 {
            assert!((ax2[i] - 2.0 * ax[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn traffic_network_structure() {
        let net = traffic_network(SignConvention::Stable);
        // Section 2 (index 1) reads sections 1 and 4.
        let mut nbrs1: Vec<usize> = net
            .edges
            .iter()
            .filter(|&&(_, i)| i == 1)
            .map(|&(j, _)| j)
            .collect();
        nbrs1.sort_unstable();
        assert_eq!(nbrs1, vec![0, 3]);
        // Section 1 has no internal input.
        assert!(net.edges.iter().all(|&(_, i)| i != 0));
        assert!(net.models[0].int_coeffs.is_empty());
        assert_eq!(net.published_deflated[0], (2.0016, 24.9984));
        assert_eq!(net.published_deflated[1], (5.1, 24.9));
        assert_eq!(net.safe[0], (2.0, 25.0));
    }

    #[test]
    fn laplacian_row_one_matches_line_conductances() {
        let p = MicrogridParams::default();
        let l = p.laplacian(MicrogridTopology::FiveUnit);
        assert!((l[0][0] - 14.3).abs() < 1e-12);
        assert!((l[0][1] + 5.2).abs() < 1e-12);
        assert!((l[0][2] + 4.6).abs() < 1e-12);
        assert!((l[0][3] + 4.5).abs() < 1e-12);
        assert_eq!(l[0][4], 0.0);
        // Zero row sums.
        for row in &l {
            assert!(row.iter().sum::<f64>().abs() < 1e-9);
        }
    }

    #[test]
    fn unit5_connects_only_to_unit2() {
        let p = MicrogridParams::default();
        assert_eq!(p.neighbors(4, MicrogridTopology::FiveUnit), vec![1]);
        let net = microgrid_network(MicrogridTopology::FiveUnit);
        let nbrs5: Vec<usize> = net
            .edges
            .iter()
            .filter(|&&(_, i)| i == 4)
            .map(|&(j, _)| j)
            .collect();
        assert_eq!(nbrs5, vec![1]);
        // The connectivity is symmetric.
        for &(j, i) in &net.edges {
            assert!(net.edges.contains(&(i, j)));
        }
    }

    #[test]
    fn equal_voltages_kill_the_laplacian_term() {
        let p = MicrogridParams::default();
        let v = vec![450.0; 5];
        let u = vec![0.0; 5];
        let pd = vec![0.0; 5];
        let dv = microgrid_field(&p, MicrogridTopology::FiveUnit, &v, &u, &pd).unwrap();
        for d in dv {
            assert!(d.abs() < 1e-12);
        }
    }

    #[test]
    fn balanced_injections_are_an_equilibrium() {
        // Choose u so that (L v) = sigma at a non-uniform voltage point.
        let p = MicrogridParams::default();
        let topology = MicrogridTopology::FourUnit;
        let v = vec![451.0, 450.0, 449.0, 450.5];
        let l = p.laplacian(topology);
        let mut u = vec![0.0; 4];
        let mut pd = vec![0.0; 4];
        for i in 0..4 {
            let need: f64 = (0..4).map(|j| l[i][j] * v[j]).sum();
            // sigma_i = need  =>  source: u = need * v; load: p = -need * v
            if p.source[i] {
                u[i] = need * v[i];
            } else {
                pd[i] = -need * v[i];
            }
        }
        let dv = microgrid_field(&p, topology, &v, &u, &pd).unwrap();
        for d in dv {
            assert!(d.abs() < 1e-6, "{d}");
        }
    }

    #[test]
    fn field_rejects_nonpositive_voltage() {
        let p = MicrogridParams::default();
        let v = vec![450.0, -1.0, 450.0, 450.0];
        assert!(microgrid_field(&p, MicrogridTopology::FourUnit, &v, &[0.0; 4], &[0.0; 4]).is_err());
    }

    #[test]
    fn load_profile_bounds_cover_noise() {
        let p = LoadProfile {
            before_w: 300.0,
            after_w: 1000.0,
            step_time_s: 0.25,
            noise_frac: 0.02,
        };
        assert_eq!(p.nominal(0.0), 300.0);
        assert_eq!(p.nominal(0.25), 1000.0);
        let (lo, hi) = p.bounds();
        assert!((lo - 294.0).abs() < 1e-9);
        assert!((hi - 1020.0).abs() < 1e-9);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..200 {
            let t = k as f64 * 0.005;
            let s = p.sample(t, &mut rng);
            assert!(s >= lo - 1e-9 && s <= hi + 1e-9);
        }
    }

    #[test]
    fn models_are_monotone_on_sampled_points() {
        // Corner rule justification: increasing any input of the monotone
        // directions does not decrease the successor.
        let net = microgrid_network(MicrogridTopology::FiveUnit);
        let unit = &net.units[1]; // source with three neighbors
        let base_v = vec![448.0, 452.0, 446.0];
        let u = vec![2000.0];
        let x0 = vec![450.0];
        let f0 = unit.flow(&x0, &u, &base_v, &[]).unwrap()[0];
        let f_state = unit.flow(&[451.0], &u, &base_v, &[]).unwrap()[0];
        assert!(f_state >= f0);
        let mut v_up = base_v.clone();
        v_up[0] += 2.0;
        assert!(unit.flow(&x0, &u, &v_up, &[]).unwrap()[0] >= f0);
        assert!(unit.flow(&x0, &[4000.0], &base_v, &[]).unwrap()[0] >= f0);
        // Loads: higher demand pulls the voltage down.
        let load = &net.units[0];
        let nbrs = vec![450.0, 450.0, 450.0];
        let lo = load.flow(&x0, &[], &nbrs, &[1000.0]).unwrap()[0];
        let hi = load.flow(&x0, &[], &nbrs, &[300.0]).unwrap()[0];
        assert!(lo <= hi);
    }

    #[test]
    fn traffic_sections_are_monotone_in_neighbors() {
        let net = traffic_network(SignConvention::Stable);
        for m in &net.models {
            for c in &m.int_coeffs {
                assert!(*c >= 0.0);
            }
        }
    }

    #[test]
    fn zero_step_trajectory_is_the_initial_state() {
        struct Noop;
        impl Refinement for Noop {
            fn next_inputs(&mut self, _x: &[f64]) -> Result<Vec<f64>> {
                Ok(vec![0.0, 0.0, 0.0])
            }
            fn observe(&mut self, _x: &[f64]) -> Result<()> {
                Ok(())
            }
            fn related(&self, _x: &[f64]) -> bool {
                true
            }
        }
        let plant = Plant::Traffic {
            params: TrafficParams::default(),
            convention: SignConvention::Stable,
        };
        let traj = simulate_closed_loop(
            &plant,
            &mut Noop,
            &[14.0, 15.0, 20.0, 16.0],
            0,
            &[2.0, 5.0, 5.0, 5.0],
            &[25.0; 4],
        )
        .unwrap();
        assert_eq!(traj.rows.len(), 1);
        assert_eq!(traj.rows[0].state, vec![14.0, 15.0, 20.0, 16.0]);
        assert!(traj.all_safe());
    }
}
