//! Benchmark systems, Monte-Carlo sampling and set-size reporting.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{
    build_tight_decomposition, ClosedLoopEmbedding, ControlCoupling, DiscreteLtiEmbedding,
    EmbeddingError, IntervalExtension, LinearSystem, OpenLoopSystem, TightDecomposition,
    VectorField,
};
use crate::interval::ToleranceVector;
use crate::interval::{interval_hull, Interval, IntervalVector};
use crate::nn::{MlpNetwork, NetworkError};
use crate::partition::{
    evenly_spaced_instants, AlgorithmParams, ContinuousFactory, DiscreteFactory, EmbeddingFactory,
    PartitionError, ReachTube,
};

const VEHICLE_STANDIN: &str = include_str!("../assets/vehicle_standin.json");
const DOUBLE_INTEGRATOR_STANDIN: &str = include_str!("../assets/double_integrator_standin.json");

/// Stand-in vehicle controller (4x100x100x2 ReLU) imitating a hand-written
/// policy; not the original trained weights.
pub fn vehicle_standin_network() -> MlpNetwork {
    MlpNetwork::from_json(VEHICLE_STANDIN).expect("bundled network is valid")
}

/// Stand-in double-integrator controller (2x10x5x1 ReLU); not the original
/// trained weights.
pub fn double_integrator_standin_network() -> MlpNetwork {
    MlpNetwork::from_json(DOUBLE_INTEGRATOR_STANDIN).expect("bundled network is valid")
}

/// A bundled network by name (`vehicle-standin`, `double-integrator-standin`).
pub fn builtin_network(name: &str) -> Option<MlpNetwork> {
    match name {
        "vehicle-standin" => Some(vehicle_standin_network()),
        "double-integrator-standin" => Some(double_integrator_standin_network()),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BenchError {
    #[error("time grids differ: tube has {tube} entries, trajectory {trajectory} has {len}")]
    GridMismatch {
        tube: usize,
        trajectory: usize,
        len: usize,
    },
    #[error("time {0} is not on the tube grid")]
    OffGrid(f64),
    #[error("resolution must be positive")]
    ZeroResolution,
    #[error("coordinate {0} out of range")]
    Coordinate(usize),
    #[error("no boxes")]
    Empty,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Slip angle `beta(u2) = atan(l_f / (l_f + l_r) tan u2)`.
pub fn slip_angle(l_f: f64, l_r: f64, u2: f64) -> f64 {
    (l_f / (l_f + l_r) * u2.tan()).atan()
}

fn slip_interval(l_f: f64, l_r: f64, u2: Interval) -> Interval {
    // increasing on (-pi/2, pi/2); its range is (-pi/2, pi/2) everywhere
    if u2.lo > -FRAC_PI_2 && u2.hi < FRAC_PI_2 {
        u2.tan().scale(l_f / (l_f + l_r)).atan()
    } else {
        Interval::new(-FRAC_PI_2, FRAC_PI_2)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VehicleExtension {
    pub l_f: f64,
    pub l_r: f64,
}

impl IntervalExtension for VehicleExtension {
    fn extend(&self, i: usize, x: &[Interval], u: &[Interval], _w: &[Interval]) -> Interval {
        let beta = slip_interval(self.l_f, self.l_r, u[1]);
        match i {
            0 => x[3] * (x[2] + beta).cos(),
            1 => x[3] * (x[2] + beta).sin(),
            2 => x[3].scale(1.0 / self.l_r) * beta.sin(),
            _ => u[0],
        }
    }
}

/// Kinematic bicycle `x = (p_x, p_y, phi, v)`, `u = (force, wheel angle)`.
pub struct VehicleSystem {
    pub l_f: f64,
    pub l_r: f64,
    decomposition: TightDecomposition<VehicleExtension>,
}

impl VehicleSystem {
    pub fn new(l_f: f64, l_r: f64) -> Self {
        let field: Arc<VectorField> =
            Arc::new(move |x: &[f64], u: &[f64], _: &[f64]| vehicle_field(l_f, l_r, x, u));
        Self {
            l_f,
            l_r,
            decomposition: build_tight_decomposition(field, VehicleExtension { l_f, l_r }),
        }
    }
}

impl Default for VehicleSystem {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

fn vehicle_field(l_f: f64, l_r: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
    let b = slip_angle(l_f, l_r, u[1]);
    vec![
        x[3] * (x[2] + b).cos(),
        x[3] * (x[2] + b).sin(),
        x[3] / l_r * b.sin(),
        u[0],
    ]
}

impl OpenLoopSystem for VehicleSystem {
    fn name(&self) -> &str {
        "vehicle"
    }
    fn state_dim(&self) -> usize {
        4
    }
    fn input_dim(&self) -> usize {
        2
    }
    fn disturbance_dim(&self) -> usize {
        0
    }
    fn field(&self, x: &[f64], u: &[f64], _w: &[f64]) -> Vec<f64> {
        vehicle_field(self.l_f, self.l_r, x, u)
    }
    fn decompose(
        &self,
        x: &[f64],
        xh: &[f64],
        u: &[f64],
        uh: &[f64],
        w: &[f64],
        wh: &[f64],
    ) -> Result<Vec<f64>, EmbeddingError> {
        self.decomposition.eval(x, xh, u, uh, w, wh)
    }
}

/// Zero-order-hold double integrator `x+ = A x + B u` with step 1.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Default for DoubleIntegrator {
    fn default() -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        }
    }
}

impl DoubleIntegrator {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let xn = &self.a * nalgebra::DVector::from_column_slice(x)
            + &self.b * nalgebra::DVector::from_column_slice(u);
        xn.iter().copied().collect()
    }

    pub fn embedding(&self) -> DiscreteLtiEmbedding {
        DiscreteLtiEmbedding::new(self.a.clone(), self.b.clone())
    }

    /// `(x, u) -> A x + B u` viewed as an open-loop system, for diagnostics.
    pub fn as_linear(&self) -> LinearSystem {
        LinearSystem::new(self.a.clone(), self.b.clone())
    }
}

#[derive(Clone)]
pub enum Plant {
    /// Continuous-time plant integrated with explicit Euler.
    Continuous(Arc<dyn OpenLoopSystem>),
    /// Discrete-time LTI plant with unit step.
    DiscreteLti(DoubleIntegrator),
}

impl Plant {
    pub fn state_dim(&self) -> usize {
        match self {
            Plant::Continuous(s) => s.state_dim(),
            Plant::DiscreteLti(d) => d.a().nrows(),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Plant::Continuous(s) => s.name(),
            Plant::DiscreteLti(_) => "double-integrator",
        }
    }

    /// Open-loop system used by the contraction diagnostics.
    pub fn diagnostic_system(&self) -> Arc<dyn OpenLoopSystem> {
        match self {
            Plant::Continuous(s) => s.clone(),
            Plant::DiscreteLti(d) => Arc::new(d.as_linear()),
        }
    }
}

/// Plant, controller, sets and time grid of one experiment.
#[derive(Clone)]
pub struct Scenario {
    pub plant: Plant,
    pub net: Arc<MlpNetwork>,
    pub initial: IntervalVector,
    pub disturbance: IntervalVector,
    /// Control instants `t_0 < t_1 < ...`; the controller output is held
    /// between consecutive instants.
    pub control_instants: Vec<f64>,
    pub dt: f64,
    pub final_time: f64,
    pub coupling: ControlCoupling,
}

impl Scenario {
    /// Vehicle benchmark: initial set around `(8, 8, -2pi/3, 2)`, control
    /// period 0.25, Euler step 0.01, horizon 1.25.
    pub fn vehicle(net: Arc<MlpNetwork>) -> Self {
        let h = -2.0 * PI / 3.0;
        Self {
            plant: Plant::Continuous(Arc::new(VehicleSystem::default())),
            net,
            initial: IntervalVector::new(
                vec![7.9, 7.9, h - 0.01, 1.99],
                vec![8.1, 8.1, h + 0.01, 2.01],
            )
            .unwrap(),
            disturbance: IntervalVector::point(&[]).unwrap(),
            control_instants: evenly_spaced_instants(0.0, 0.25, 1.25),
            dt: 0.01,
            final_time: 1.25,
            coupling: ControlCoupling::default(),
        }
    }

    /// Double-integrator benchmark on `[2.5, 3] x [-0.25, 0.25]` up to `T = 5`.
    pub fn double_integrator(net: Arc<MlpNetwork>) -> Self {
        Self {
            plant: Plant::DiscreteLti(DoubleIntegrator::default()),
            net,
            initial: IntervalVector::new(vec![2.5, -0.25], vec![3.0, 0.25]).unwrap(),
            disturbance: IntervalVector::point(&[]).unwrap(),
            control_instants: evenly_spaced_instants(0.0, 1.0, 5.0),
            dt: 1.0,
            final_time: 5.0,
            coupling: ControlCoupling::default(),
        }
    }

    pub fn factory(&self) -> Box<dyn EmbeddingFactory> {
        match &self.plant {
            Plant::Continuous(sys) => {
                let emb = ClosedLoopEmbedding::new(
                    sys.clone(),
                    self.net.clone(),
                    &self.disturbance,
                    self.dt,
                )
                .with_coupling(self.coupling);
                Box::new(ContinuousFactory::new(emb, self.net.clone()))
            }
            Plant::DiscreteLti(d) => {
                Box::new(DiscreteFactory::new(d.embedding(), self.net.clone()))
            }
        }
    }

    pub fn params(
        &self,
        eps: ToleranceVector,
        gamma: f64,
        max_depth: usize,
        nn_depth: usize,
    ) -> Result<AlgorithmParams, PartitionError> {
        let p = AlgorithmParams::with_instants(
            eps,
            self.control_instants.clone(),
            self.final_time,
            self.dt,
        )
        .with_gamma(gamma)
        .with_depths(max_depth, nn_depth);
        p.validate()?;
        Ok(p)
    }

    /// Euler steps in each integrated control interval.
    fn interval_steps(&self) -> Vec<(f64, f64, usize)> {
        let t = &self.control_instants;
        let mut out = vec![];
        for w in t.windows(2) {
            if w[0] >= self.final_time - 1e-9 {
                break;
            }
            out.push((w[0], w[1], ((w[1] - w[0]) / self.dt).round() as usize));
        }
        out
    }

    /// Time grid shared by the tube and sampled trajectories.
    pub fn times(&self) -> Vec<f64> {
        let mut out = vec![self.control_instants[0]];
        for (a, b, k) in self.interval_steps() {
            out.extend((1..=k).map(|s| a + s as f64 * (b - a) / k as f64));
        }
        out
    }

    /// Closed-loop trajectory from `x0` with one disturbance per control interval.
    pub fn simulate(&self, x0: &[f64], disturbances: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut x = x0.to_vec();
        let mut out = vec![x.clone()];
        for (j, (_, _, k)) in self.interval_steps().into_iter().enumerate() {
            let u = self.net.evaluate(&x);
            let w: &[f64] = disturbances.get(j).map_or(&[], |v| v);
            for _ in 0..k {
                x = match &self.plant {
                    Plant::Continuous(sys) => {
                        let f = sys.field(&x, &u, w);
                        x.iter().zip(&f).map(|(xi, fi)| xi + self.dt * fi).collect()
                    }
                    Plant::DiscreteLti(d) => d.step(&x, &u),
                };
                out.push(x.clone());
            }
        }
        out
    }
}

/// Sampled closed-loop trajectories; trajectory `k` depends only on `seed` and `k`.
pub fn sample_trajectories(scenario: &Scenario, count: usize, seed: u64) -> Vec<Vec<Vec<f64>>> {
    let m = scenario.interval_steps().len();
    let one = |k: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        let draw = |rng: &mut ChaCha8Rng, b: &IntervalVector| -> Vec<f64> {
            (0..b.dim())
                .map(|i| {
                    if b.width(i) > 0.0 {
                        rng.gen_range(b.lo()[i]..=b.hi()[i])
                    } else {
                        b.lo()[i]
                    }
                })
                .collect()
        };
        let x0 = draw(&mut rng, &scenario.initial);
        let ws: Vec<Vec<f64>> = (0..m)
            .map(|_| draw(&mut rng, &scenario.disturbance))
            .collect();
        scenario.simulate(&x0, &ws)
    };
    (0..count).into_par_iter().map(one).collect()
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ContainmentReport {
    pub trajectories: usize,
    pub checks: usize,
    pub violations: usize,
    /// Largest distance (infinity norm) from a sampled state to the union of
    /// boxes at its time step.
    pub worst_excess: f64,
    /// `(trajectory, time index)` of the first violation.
    pub first_violation: Option<(usize, usize)>,
}

/// Checks every trajectory state against the union of tube boxes at the same time.
pub fn containment_check(
    tube: &ReachTube,
    trajectories: &[Vec<Vec<f64>>],
    slack: f64,
) -> Result<ContainmentReport, BenchError> {
    let mut rep = ContainmentReport {
        trajectories: trajectories.len(),
        checks: 0,
        violations: 0,
        worst_excess: 0.0,
        first_violation: None,
    };
    for (t, traj) in trajectories.iter().enumerate() {
        if traj.len() != tube.len() {
            return Err(BenchError::GridMismatch {
                tube: tube.len(),
                trajectory: t,
                len: traj.len(),
            });
        }
        for (k, x) in traj.iter().enumerate() {
            rep.checks += 1;
            let excess = tube.boxes[k]
                .iter()
                .map(|b| b.bx.violation(x))
                .fold(f64::INFINITY, f64::min);
            rep.worst_excess = rep.worst_excess.max(excess);
            if excess > slack {
                rep.violations += 1;
                rep.first_violation.get_or_insert((t, k));
            }
        }
    }
    Ok(rep)
}

/// Product of hull widths over `coords` at grid time `t`.
pub fn hull_volume(tube: &ReachTube, t: f64, coords: &[usize]) -> Result<f64, BenchError> {
    let k = tube.index_of(t, 1e-9).ok_or(BenchError::OffGrid(t))?;
    let hull = tube.hull_at(k);
    if let Some(&c) = coords.iter().find(|&&c| c >= hull.dim()) {
        return Err(BenchError::Coordinate(c));
    }
    Ok(hull.volume(coords))
}

/// Area of the union of the boxes' projections onto `coords`, by counting
/// cell centres of a `resolution x resolution` grid over their hull.
pub fn union_area_raster(
    boxes: &[IntervalVector],
    coords: (usize, usize),
    resolution: usize,
) -> Result<f64, BenchError> {
    if resolution == 0 {
        return Err(BenchError::ZeroResolution);
    }
    let hull = interval_hull(boxes.iter()).map_err(|_| BenchError::Empty)?;
    let (a, b) = coords;
    for c in [a, b] {
        if c >= hull.dim() {
            return Err(BenchError::Coordinate(c));
        }
    }
    let (wa, wb) = (hull.width(a), hull.width(b));
    if wa == 0.0 || wb == 0.0 {
        return Ok(0.0);
    }
    let (ha, hb) = (wa / resolution as f64, wb / resolution as f64);
    // per column, union of covered row ranges
    let mut covered = 0usize;
    let mut rows = vec![false; resolution];
    for i in 0..resolution {
        let xa = hull.lo()[a] + (i as f64 + 0.5) * ha;
        rows.iter_mut().for_each(|r| *r = false);
        for bx in boxes {
            if xa < bx.lo()[a] || xa > bx.hi()[a] {
                continue;
            }
            let first = ((bx.lo()[b] - hull.lo()[b]) / hb - 0.5).ceil().max(0.0) as usize;
            let last = ((bx.hi()[b] - hull.lo()[b]) / hb - 0.5).floor();
            if last < 0.0 {
                continue;
            }
            let last = (last as usize).min(resolution - 1);
            for r in rows.iter_mut().take(last + 1).skip(first) {
                *r = true;
            }
        }
        covered += rows.iter().filter(|&&r| r).count();
    }
    Ok(covered as f64 * ha * hb)
}

/// CSV rows `trajectory,time,x_0,...`.
pub fn write_trajectories_csv<W: std::io::Write>(
    mut w: W,
    times: &[f64],
    trajectories: &[Vec<Vec<f64>>],
) -> std::io::Result<()> {
    let n = trajectories
        .first()
        .and_then(|t| t.first())
        .map_or(0, Vec::len);
    write!(w, "trajectory,time")?;
    for i in 0..n {
        write!(w, ",x_{i}")?;
    }
    writeln!(w)?;
    for (k, traj) in trajectories.iter().enumerate() {
        for (t, x) in times.iter().zip(traj) {
            write!(w, "{k},{t}")?;
            for v in x {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}
