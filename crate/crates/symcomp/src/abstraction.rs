//! Finite abstractions of concrete dynamics: uniform-grid abstractions of
//! monotone discrete-time and sampled continuous-time models, and the
//! discretization-free input-sequence abstraction for contractive scalar
//! maps.
//!
//! Grid abstractions use the corner rule: for a monotone update, the image
//! of a cell under pinned inputs lies between the images of its corners,
//! so the successor cells are exactly those meeting the corner interval.
//! A successor interval escaping the gridded domain blocks the source
//! (state, input) pair: the pair is simply absent from the transition
//! relation, consistent with admissibility semantics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Pseudometric;
use crate::ts::{TransitionSystem, TransitionSystemBuilder};

/// A uniform grid over a box: `n_d` cells per dimension, plus the input
/// discretization count `n_u` used when gridding continuous input ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells_per_dim: usize,
    pub input_points: usize,
}

impl GridSpec {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, n_d: usize, n_u: usize) -> Result<GridSpec> {
        if n_d < 1 {
            return Err(Error::InvalidGrid("cells_per_dim must be at least 1".into()));
        }
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::InvalidGrid("mismatched or empty bounds".into()));
        }
        if lower.iter().zip(&upper).any(|(a, b)| !(a < b)) {
            return Err(Error::InvalidGrid("need lower < upper per dimension".into()));
        }
        Ok(GridSpec {
            lower,
            upper,
            cells_per_dim: n_d,
            input_points: n_u,
        })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn width(&self, k: usize) -> f64 {
        (self.upper[k] - self.lower[k]) / self.cells_per_dim as f64
    }

    pub fn max_width(&self) -> f64 {
        (0..self.dim()).map(|k| self.width(k)).fold(0.0, f64::max)
    }

    pub fn cell_count(&self) -> usize {
        self.cells_per_dim.pow(self.dim() as u32)
    }

    /// Per-dimension cell of a point. Interior boundary points map to the
    /// lower-adjacent cell; the top boundary maps to the last cell.
    pub fn quantize(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            if x[k] < self.lower[k] || x[k] > self.upper[k] {
                return Err(Error::OutsideGrid { point: x.to_vec() });
            }
            let t = (x[k] - self.lower[k]) / self.width(k);
            let cell = (t.ceil() - 1.0).max(0.0) as usize;
            out.push(cell.min(self.cells_per_dim - 1));
        }
        Ok(out)
    }

    pub fn quantize_flat(&self, x: &[f64]) -> Result<usize> {
        Ok(self.encode(&self.quantize(x)?))
    }

    pub fn encode(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &k| acc * self.cells_per_dim + k)
    }

    pub fn decode(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let mut out = vec![0usize; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = rem % self.cells_per_dim;
            rem /= self.cells_per_dim;
        }
        out
    }

    pub fn cell_center(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .enumerate()
            .map(|(k, &c)| self.lower[k] + (c as f64 + 0.5) * self.width(k))
            .collect()
    }

    /// Cells covered by a successor interval in one dimension, or None if
    /// the interval escapes the domain. Cell membership is left-open under
    /// the boundary-to-lower quantize convention, so the lower end uses
    /// floor semantics: an interval starting exactly on a cell boundary
    /// covers only the cell to its right. Interval ends landing exactly on
    /// an interior boundary are a measure-zero case that float arithmetic
    /// does not produce for the models here.
    pub fn cover_range(&self, k: usize, lo: f64, hi: f64) -> Option<(usize, usize)> {
        if lo < self.lower[k] || hi > self.upper[k] || lo > hi {
            return None;
        }
        let w = self.width(k);
        let c_lo = (((lo - self.lower[k]) / w).floor().max(0.0) as usize).min(self.cells_per_dim - 1);
        let t = (hi - self.lower[k]) / w;
        let c_hi = ((t.ceil() - 1.0).max(0.0) as usize).min(self.cells_per_dim - 1);
        Some((c_lo, c_hi.max(c_lo)))
    }

    pub fn cell_corners(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let lo = idx
            .iter()
            .enumerate()
            .map(|(k, &c)| self.lower[k] + c as f64 * self.width(k))
            .collect();
        let hi = idx
            .iter()
            .enumerate()
            .map(|(k, &c)| self.lower[k] + (c as f64 + 1.0) * self.width(k))
            .collect();
        (lo, hi)
    }

    /// Inclusive endpoint grid over `[lo, hi]` with `input_points` values.
    pub fn input_grid(lo: f64, hi: f64, n_u: usize) -> Vec<f64> {
        if n_u == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n_u)
            .map(|k| lo + (hi - lo) * k as f64 / (n_u - 1) as f64)
            .collect()
    }
}

/// A scalar affine discrete-time update
/// `x+ = self_coeff * x + int_coeffs . v + input_gain * u + offset`
/// over a bounded interval domain. The traffic sections are instances.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AffineScalarModel {
    pub self_coeff: f64,
    pub int_coeffs: Vec<f64>,
    pub input_gain: f64,
    pub offset: f64,
    pub domain: (f64, f64),
    /// External input values; a single empty value means no control input.
    pub ext_values: Vec<Vec<f64>>,
}

impl AffineScalarModel {
    pub fn step(&self, x: f64, u: f64, v: &[f64]) -> f64 {
        self.self_coeff * x
            + self.int_coeffs.iter().zip(v).map(|(c, w)| c * w).sum::<f64>()
            + self.input_gain * u
            + self.offset
    }

    fn ext_scalar(&self, sym: usize) -> f64 {
        self.ext_values[sym].first().copied().unwrap_or(0.0)
    }

    /// Sign-aware image of the box `[x_lo, x_hi] x [v_lo, v_hi]`.
    pub fn interval_step(
        &self,
        x_lo: f64,
        x_hi: f64,
        u: f64,
        v_lo: &[f64],
        v_hi: &[f64],
    ) -> (f64, f64) {
        let base = self.input_gain * u + self.offset;
        let mut lo = base;
        let mut hi = base;
        if self.self_coeff >= 0.0 {
            lo += self.self_coeff * x_lo;
            hi += self.self_coeff * x_hi;
        } else {
            lo += self.self_coeff * x_hi;
            hi += self.self_coeff * x_lo;
        }
        for (k, &c) in self.int_coeffs.iter().enumerate() {
            if c >= 0.0 {
                lo += c * v_lo[k];
                hi += c * v_hi[k];
            } else {
                lo += c * v_hi[k];
                hi += c * v_lo[k];
            }
        }
        (lo, hi)
    }
}

/// Vector fields available to sampled continuous-time models.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "field", rename_all = "snake_case")]
pub enum ContinuousField {
    /// dx/dt = a x, for tests and oracles.
    Linear { a: f64 },
    /// One DC-grid bus: C dV/dt = -sum_j g_j (V - v_j) + s/V with
    /// s = +u (controllable source) or s = -p (load demand).
    Bus {
        capacitance: f64,
        line_conductance: Vec<f64>,
        source: bool,
    },
    /// The coupled DC grid: per-bus equations with neighbor voltages taken
    /// from the state vector. `source[i]` selects +u_i/V_i vs -p_i/V_i.
    CoupledGrid {
        capacitance: Vec<f64>,
        conductance: Vec<Vec<f64>>,
        source: Vec<bool>,
    },
}

/// A sampled continuous-time model: monotone vector field, sampling period
/// `tau`, fixed-step integrator with `steps` substeps, an adversarial
/// disturbance interval resolved at corners, and an external input value
/// set. The flow must be monotone: nondecreasing in state, internal inputs
/// and external input, nonincreasing in the disturbance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampledContinuousModel {
    pub field: ContinuousField,
    pub tau: f64,
    pub steps: usize,
    pub monotone: bool,
    pub dist_lo: Vec<f64>,
    pub dist_hi: Vec<f64>,
    pub ext_values: Vec<Vec<f64>>,
    /// States must stay strictly above this bound during integration
    /// (positive voltages); violations block the transition.
    pub state_floor: f64,
}

impl SampledContinuousModel {
    pub fn dim(&self) -> usize {
        match &self.field {
            ContinuousField::Linear { .. } | ContinuousField::Bus { .. } => 1,
            ContinuousField::CoupledGrid { capacitance, .. } => capacitance.len(),
        }
    }

    fn eval(&self, x: &[f64], u: &[f64], v: &[f64], p: &[f64], out: &mut [f64]) {
        match &self.field {
            ContinuousField::Linear { a } => out[0] = a * x[0],
            ContinuousField::Bus {
                capacitance,
                line_conductance,
                source,
            } => {
                let mut lap = 0.0;
                for (g, vj) in line_conductance.iter().zip(v) {
                    lap += g * (x[0] - vj);
                }
                let s = if *source { u[0] } else { -p[0] };
                out[0] = (-lap + s / x[0]) / capacitance;
            }
            ContinuousField::CoupledGrid {
                capacitance,
                conductance,
                source,
            } => {
                let n = capacitance.len();
                let mut ui = 0usize;
                let mut pi = 0usize;
                for i in 0..n {
                    let mut lap = 0.0;
                    for j in 0..n {
                        lap += conductance[i][j] * (x[i] - x[j]);
                    }
                    let s = if source[i] {
                        let val = u[ui];
                        ui += 1;
                        val
                    } else {
                        let val = -p[pi];
                        pi += 1;
                        val
                    };
                    out[i] = (-lap + s / x[i]) / capacitance[i];
                }
            }
        }
    }

    /// Fixed-step fourth-order integration of the sampled flow with all
    /// inputs held constant.
    pub fn flow(&self, x0: &[f64], u: &[f64], v: &[f64], p: &[f64]) -> Result<Vec<f64>> {
        self.flow_with_steps(x0, u, v, p, self.steps)
    }

    pub fn flow_with_steps(
        &self,
        x0: &[f64],
        u: &[f64],
        v: &[f64],
        p: &[f64],
        steps: usize,
    ) -> Result<Vec<f64>> {
        let d = self.dim();
        let h = self.tau / steps as f64;
        let mut x = x0.to_vec();
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        for _ in 0..steps {
            self.eval(&x, u, v, p, &mut k1);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            self.eval(&tmp, u, v, p, &mut k2);
            for i in 0..d {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            self.eval(&tmp, u, v, p, &mut k3);
            for i in 0..d {
                tmp[i] = x[i] + h * k3[i];
            }
            self.eval(&tmp, u, v, p, &mut k4);
            for i in 0..d {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                if !(x[i] > self.state_floor) || !x[i].is_finite() {
                    return Err(Error::DomainEscape);
                }
            }
        }
        Ok(x)
    }
}

/// Integrates the two corner initial conditions over one sampling period
/// with the internal inputs pinned at their interval ends and the
/// disturbance pinned adversarially (low corner sees the maximal
/// disturbance, high corner the minimal one).
pub fn interval_successor(
    model: &SampledContinuousModel,
    lo: &[f64],
    hi: &[f64],
    u: &[f64],
    v_lo: &[f64],
    v_hi: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !model.monotone {
        return Err(Error::NonMonotone);
    }
    let new_lo = model.flow(lo, u, v_lo, &model.dist_hi)?;
    let new_hi = model.flow(hi, u, v_hi, &model.dist_lo)?;
    Ok((new_lo, new_hi))
}

/// How concrete states relate to abstract indices.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConcreteRelation {
    /// Abstract state = grid cell containing the point.
    GridCells { grid: GridSpec },
    /// Abstract state = nearest point of a finite set; formally related
    /// only within `radius` of it.
    NearestPoint { points: Vec<f64>, radius: f64 },
}

impl ConcreteRelation {
    /// The abstract index tracking `x`, together with whether the pair is
    /// formally inside the relation. `Err` when `x` leaves the abstract
    /// domain entirely (off-grid).
    pub fn tracking_index(&self, x: &[f64]) -> Result<(usize, bool)> {
        match self {
            ConcreteRelation::GridCells { grid } => Ok((grid.quantize_flat(x)?, true)),
            ConcreteRelation::NearestPoint { points, radius } => {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (i, p) in points.iter().enumerate() {
                    let d = (x[0] - p).abs();
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                Ok((best, best_d <= radius + crate::metrics::SLACK))
            }
        }
    }
}

/// An abstract system together with the relation tying it back to the
/// concrete model and the precision it achieves.
#[derive(Debug, Clone)]
pub struct AbstractionResult {
    pub system: TransitionSystem,
    pub relation: ConcreteRelation,
    pub eps: f64,
    pub mu: f64,
}

/// Wire format of an abstraction result.
#[derive(Debug, Serialize, Deserialize)]
pub struct JsonAbstraction {
    pub system: crate::ts::JsonSystem,
    pub relation: ConcreteRelation,
    pub eps: f64,
    pub mu: f64,
}

impl AbstractionResult {
    pub fn to_json(&self) -> JsonAbstraction {
        JsonAbstraction {
            system: self.system.to_json(),
            relation: self.relation.clone(),
            eps: self.eps,
            mu: self.mu,
        }
    }

    pub fn from_json(j: JsonAbstraction) -> Result<AbstractionResult> {
        Ok(AbstractionResult {
            system: j.system.into_system()?,
            relation: j.relation,
            eps: j.eps,
            mu: j.mu,
        })
    }
}

/// The model being gridded.
pub enum GridModel<'a> {
    Discrete(&'a AffineScalarModel),
    Continuous(&'a SampledContinuousModel),
}

impl GridModel<'_> {
    fn ext_values(&self) -> &[Vec<f64>] {
        match self {
            GridModel::Discrete(m) => &m.ext_values,
            GridModel::Continuous(m) => &m.ext_values,
        }
    }
}

/// One internal-input channel: the neighbor's abstract output values, each
/// symbol standing for the ball of concrete outputs within `radius` of it
/// (half the neighbor's cell width for grid neighbors, the declared
/// abstraction precision for point neighbors).
#[derive(Debug, Clone)]
pub struct NeighborGrid {
    pub values: Vec<Vec<f64>>,
    pub radius: f64,
}

impl NeighborGrid {
    pub fn points(values: Vec<f64>, radius: f64) -> NeighborGrid {
        NeighborGrid {
            values: values.into_iter().map(|v| vec![v]).collect(),
            radius,
        }
    }
}

/// Builds a grid abstraction: abstract states are grid cells with cell
/// centers as outputs, external inputs are the model's input values, and
/// internal inputs are the product of the neighbor output grids.
/// Transitions follow the monotone corner rule, with each internal symbol
/// resolved at the corners of its ball; that ball is what lets the
/// composed abstraction cover every concrete neighbor output. Precision:
/// eps = the full cell width, mu = 0.
pub fn grid_abstraction(
    model: GridModel<'_>,
    grid: &GridSpec,
    neighbor_grids: &[NeighborGrid],
    initial_cells: Option<&[usize]>,
) -> Result<AbstractionResult> {
    if let GridModel::Continuous(m) = &model {
        if !m.monotone {
            return Err(Error::NonMonotone);
        }
        if m.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: m.dim(),
                got: grid.dim(),
            });
        }
    }
    if matches!(model, GridModel::Discrete(_)) && grid.dim() != 1 {
        return Err(Error::InvalidGrid(
            "discrete-time grid abstraction is scalar".into(),
        ));
    }

    let cells = grid.cell_count();
    let outputs: Vec<Vec<f64>> = (0..cells)
        .map(|c| grid.cell_center(&grid.decode(c)))
        .collect();

    let ext_values = model.ext_values().to_vec();
    let ext_dim = ext_values[0].len();
    let ext_space = if ext_dim == 0 {
        Pseudometric::Zero { dim: 0 }
    } else {
        Pseudometric::Linf { dim: ext_dim }
    };

    // Internal alphabet: product of the neighbor output grids, ascending
    // neighbor order, symbol value = concatenation of part values. The
    // per-coordinate ball radii are tracked alongside.
    let mut int_values: Vec<Vec<f64>> = vec![vec![]];
    let mut int_radii: Vec<f64> = Vec::new();
    let mut int_parts: Vec<Pseudometric> = Vec::new();
    for part in neighbor_grids {
        let pd = part.values.first().map(|v| v.len()).unwrap_or(0);
        int_parts.push(Pseudometric::Linf { dim: pd });
        for _ in 0..pd {
            int_radii.push(part.radius);
        }
        let mut next = Vec::with_capacity(int_values.len() * part.values.len());
        for prefix in &int_values {
            for val in &part.values {
                let mut v = prefix.clone();
                v.extend_from_slice(val);
                next.push(v);
            }
        }
        int_values = next;
    }
    let int_space = Pseudometric::max_over(int_parts);

    let mut b = TransitionSystemBuilder::new(
        outputs,
        ext_values,
        int_values.clone(),
        Pseudometric::Linf { dim: grid.dim() },
        ext_space,
        int_space,
    );
    b = match initial_cells {
        Some(cells) => b.initial(cells),
        None => b.all_initial(),
    };

    for cell in 0..cells {
        let idx = grid.decode(cell);
        let (lo, hi) = grid.cell_corners(&idx);
        for (ue, _) in model.ext_values().iter().enumerate() {
            for (ui, v) in int_values.iter().enumerate() {
                let v_lo: Vec<f64> = v.iter().zip(&int_radii).map(|(a, r)| a - r).collect();
                let v_hi: Vec<f64> = v.iter().zip(&int_radii).map(|(a, r)| a + r).collect();
                let interval = match &model {
                    GridModel::Discrete(m) => {
                        let uval = m.ext_scalar(ue);
                        let (a, b2) = m.interval_step(lo[0], hi[0], uval, &v_lo, &v_hi);
                        Ok((vec![a], vec![b2]))
                    }
                    GridModel::Continuous(m) => {
                        interval_successor(m, &lo, &hi, &m.ext_values[ue], &v_lo, &v_hi)
                    }
                };
                let (s_lo, s_hi) = match interval {
                    Ok(iv) => iv,
                    Err(Error::DomainEscape) => continue,
                    Err(e) => return Err(e),
                };
                // Blocked when the successor interval escapes the domain.
                let ranges: Option<Vec<(usize, usize)>> = (0..grid.dim())
                    .map(|k| grid.cover_range(k, s_lo[k], s_hi[k]))
                    .collect();
                let Some(ranges) = ranges else { continue };
                let c_lo: Vec<usize> = ranges.iter().map(|r| r.0).collect();
                let c_hi: Vec<usize> = ranges.iter().map(|r| r.1).collect();
                // All covered cells: the box of per-dimension cell ranges.
                let mut targets = vec![0usize; grid.dim()];
                add_box(grid, &c_lo, &c_hi, &mut targets, 0, &mut |flat| {
                    b.add(cell, ue, ui, flat);
                });
            }
        }
    }
    Ok(AbstractionResult {
        system: b.finish()?,
        relation: ConcreteRelation::GridCells { grid: grid.clone() },
        eps: grid.max_width(),
        mu: 0.0,
    })
}

fn add_box(
    grid: &GridSpec,
    lo: &[usize],
    hi: &[usize],
    tuple: &mut Vec<usize>,
    k: usize,
    f: &mut impl FnMut(usize),
) {
    if k == grid.dim() {
        f(grid.encode(tuple));
        return;
    }
    for c in lo[k]..=hi[k] {
        tuple[k] = c;
        add_box(grid, lo, hi, tuple, k + 1, f);
    }
}

/// Discretization-free abstraction of a contractive scalar map: abstract
/// states are the points reached from the source state by input sequences
/// of length `n`, deduplicated; the transition under `u` snaps `f(p, u)` to
/// the nearest abstract point. Precision:
/// eps = lambda^n * sup_{x in domain} |x - x_s| with contraction factor
/// lambda = |self_coeff|.
pub fn sequence_abstraction(
    model: &AffineScalarModel,
    x_s: f64,
    n: usize,
) -> Result<AbstractionResult> {
    if !model.int_coeffs.is_empty() {
        return Err(Error::InvalidSystem(
            "sequence abstraction requires a closed scalar model".into(),
        ));
    }
    let lambda = model.self_coeff.abs();
    if lambda >= 1.0 {
        return Err(Error::NotContractive { factor: lambda });
    }
    let mut points = vec![x_s];
    for _ in 0..n {
        let mut next = Vec::with_capacity(points.len() * model.ext_values.len());
        for &p in &points {
            for sym in 0..model.ext_values.len() {
                next.push(model.step(p, model.ext_scalar(sym), &[]));
            }
        }
        next.sort_by(f64::total_cmp);
        next.dedup_by(|a, b| (*a - *b).abs() <= 1e-12);
        points = next;
    }
    let (d_lo, d_hi) = model.domain;
    let eps = lambda.powi(n as i32) * (x_s - d_lo).abs().max((d_hi - x_s).abs());

    let nearest = |x: f64| -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &p) in points.iter().enumerate() {
            let d = (x - p).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    };

    let mut b = TransitionSystemBuilder::with_unit_internal(
        points.iter().map(|&p| vec![p]).collect(),
        model.ext_values.clone(),
        if model.ext_values[0].is_empty() {
            Pseudometric::Zero { dim: 0 }
        } else {
            Pseudometric::Linf {
                dim: model.ext_values[0].len(),
            }
        },
        Pseudometric::Linf { dim: 1 },
    )
    .all_initial();
    for (i, &p) in points.iter().enumerate() {
        for sym in 0..model.ext_values.len() {
            b.add(i, sym, 0, nearest(model.step(p, model.ext_scalar(sym), &[])));
        }
    }
    Ok(AbstractionResult {
        system: b.finish()?,
        relation: ConcreteRelation::NearestPoint {
            points,
            radius: eps,
        },
        eps,
        mu: 0.0,
    })
}
