//! Contraction-guided adaptive partitioning.
//!
//! The reachable set is tracked by a tree of partitions. During each control
//! interval every leaf probes its embedding over a fraction `gamma` of the
//! interval, extrapolates the width at the end of the interval from the
//! observed contraction rate, and bisects every axis if that width would
//! exceed the tolerance `eps`. Shallow nodes (depth at most `D_N`) compute
//! their own network bounds; deeper nodes reuse the bounds of the nearest
//! verifying ancestor.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use thiserror::Error;

use crate::embedding::{
    ClosedLoopEmbedding, DiscreteLtiEmbedding, EmbeddingError, EmbeddingStepper,
};
use crate::interval::{
    interval_hull, uniform_divide, weighted_inf_norm, EmbeddingState, IntervalError,
    IntervalVector, ToleranceVector,
};
use crate::nn::{crown_bounds, make_inclusion, InclusionFunction, MlpNetwork};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PartitionError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Interval(#[from] IntervalError),
    #[error("partition {path} in control interval {interval}: {source}")]
    Embedding {
        path: PartitionPath,
        interval: usize,
        #[source]
        source: EmbeddingError,
    },
}

impl PartitionError {
    /// The underlying embedding failure, if any.
    pub fn embedding(&self) -> Option<&EmbeddingError> {
        match self {
            PartitionError::Embedding { source, .. } => Some(source),
            _ => None,
        }
    }
}

/// Hyper-parameters and time grid of the algorithm.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgorithmParams {
    pub eps: ToleranceVector,
    pub gamma: f64,
    /// Maximum partition depth `D_p`.
    pub max_depth: usize,
    /// Maximum depth at which nodes recompute network bounds, `D_N`.
    pub nn_depth: usize,
    /// Control instants `t_0 < t_1 < ...`; the tube covers `[t_0, t_m]` with
    /// `t_m` the first instant at or after `final_time`.
    pub control_instants: Vec<f64>,
    pub final_time: f64,
    pub dt: f64,
    /// Process sibling subtrees on the rayon pool.
    pub parallel: bool,
}

impl AlgorithmParams {
    /// Evenly spaced control instants `t0, t0 + period, ...` reaching `final_time`.
    pub fn evenly_spaced(
        eps: ToleranceVector,
        t0: f64,
        period: f64,
        final_time: f64,
        dt: f64,
    ) -> Result<Self, PartitionError> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(PartitionError::Params(format!(
                "control period must be positive, got {period}"
            )));
        }
        if final_time < t0 {
            return Err(PartitionError::Params(format!(
                "final time {final_time} precedes initial time {t0}"
            )));
        }
        Ok(Self::with_instants(
            eps,
            evenly_spaced_instants(t0, period, final_time),
            final_time,
            dt,
        ))
    }

    /// Explicit control instants; call [`validate`](Self::validate) before use.
    pub fn with_instants(
        eps: ToleranceVector,
        control_instants: Vec<f64>,
        final_time: f64,
        dt: f64,
    ) -> Self {
        Self {
            eps,
            gamma: 1.0,
            max_depth: 0,
            nn_depth: 0,
            control_instants,
            final_time,
            dt,
            parallel: true,
        }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_depths(mut self, max_depth: usize, nn_depth: usize) -> Self {
        self.max_depth = max_depth;
        self.nn_depth = nn_depth;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    /// Checks the parameters and returns non-fatal warnings.
    pub fn validate(&self) -> Result<Vec<String>, PartitionError> {
        let bad = |m: String| Err(PartitionError::Params(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must lie in (0, 1], got {}", self.gamma));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let t = &self.control_instants;
        if t.is_empty() {
            return bad("no control instants".into());
        }
        if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("control instants must be finite and strictly increasing".into());
        }
        if self.final_time < t[0] {
            return bad(format!(
                "final time {} precedes initial time {}",
                self.final_time, t[0]
            ));
        }
        if *t.last().unwrap() < self.final_time - 1e-9 {
            return bad(format!(
                "control instants end at {} before final time {}",
                t.last().unwrap(),
                self.final_time
            ));
        }
        for w in t.windows(2) {
            let k = (w[1] - w[0]) / self.dt;
            if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
                return bad(format!(
                    "dt {} does not divide control interval [{}, {}]",
                    self.dt, w[0], w[1]
                ));
            }
        }
        let mut warnings = vec![];
        if self.nn_depth > self.max_depth {
            warnings.push(format!(
                "D_N = {} exceeds D_p = {}; verification depth is capped by partition depth",
                self.nn_depth, self.max_depth
            ));
        }
        Ok(warnings)
    }

    /// Number of control intervals actually integrated.
    pub fn interval_count(&self) -> usize {
        let t = &self.control_instants;
        (1..t.len())
            .find(|&j| t[j] >= self.final_time - 1e-9)
            .unwrap_or(0)
    }

    fn steps_in(&self, j: usize) -> usize {
        ((self.control_instants[j] - self.control_instants[j - 1]) / self.dt).round() as usize
    }
}

/// `t0, t0 + period, ...` up to the first instant at or after `final_time`.
pub fn evenly_spaced_instants(t0: f64, period: f64, final_time: f64) -> Vec<f64> {
    let m = (((final_time - t0) / period) - 1e-9).ceil().max(0.0) as usize;
    (0..=m).map(|j| t0 + j as f64 * period).collect()
}

/// Position of a node in the tree: the sequence of child indices from the root.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PartitionPath(pub Vec<u16>);

impl PartitionPath {
    pub fn child(&self, k: usize) -> Self {
        let mut v = self.0.clone();
        v.push(k as u16);
        Self(v)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for PartitionPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r")?;
        for k in &self.0 {
            write!(f, ".{k}")?;
        }
        Ok(())
    }
}

/// A node `((x_lo, x_hi), N, S)` of the partition tree.
#[derive(Debug, Clone)]
pub struct PartitionNode {
    pub bx: IntervalVector,
    pub nn_flag: bool,
    pub children: Vec<PartitionNode>,
    pub path: PartitionPath,
    /// Whether this node computed network bounds during the latest step;
    /// `None` before the first step.
    pub verified: Option<bool>,
}

impl PartitionNode {
    pub fn root(bx: IntervalVector) -> Self {
        Self {
            bx,
            nn_flag: true,
            children: vec![],
            path: PartitionPath::default(),
            verified: None,
        }
    }

    pub fn depth(&self) -> usize {
        self.path.depth()
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Leaves in depth-first order.
    pub fn leaves(&self) -> Vec<&PartitionNode> {
        let mut out = vec![];
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            if n.is_leaf() {
                out.push(n);
            } else {
                stack.extend(n.children.iter().rev());
            }
        }
        out
    }

    fn visit(&self, f: &mut impl FnMut(&PartitionNode)) {
        f(self);
        for c in &self.children {
            c.visit(f);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct TreeStats {
    pub leaves: usize,
    pub max_depth: usize,
    /// Network-bound computations in the latest step (pending ones for a
    /// tree that has not been stepped).
    pub nn_calls: usize,
}

pub fn tree_stats(root: &PartitionNode) -> TreeStats {
    let mut s = TreeStats::default();
    root.visit(&mut |n| {
        if n.is_leaf() {
            s.leaves += 1;
        }
        s.max_depth = s.max_depth.max(n.depth());
        if n.verified.unwrap_or(n.nn_flag) {
            s.nn_calls += 1;
        }
    });
    s
}

/// One box of the tube, labelled by the leaf that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeBox {
    pub path: PartitionPath,
    pub bx: IntervalVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
pub struct StepStats {
    pub interval: usize,
    pub leaves: usize,
    pub max_depth: usize,
    pub nn_calls: usize,
    pub subdivisions: usize,
}

/// Time-indexed union of boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachTube {
    pub times: Vec<f64>,
    pub boxes: Vec<Vec<TubeBox>>,
    pub stats: Vec<StepStats>,
}

impl ReachTube {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Index of grid time `t` (within `tol`).
    pub fn index_of(&self, t: f64, tol: f64) -> Option<usize> {
        self.times.iter().position(|&s| (s - t).abs() <= tol)
    }

    pub fn hull_at(&self, k: usize) -> IntervalVector {
        interval_hull(self.boxes[k].iter().map(|b| &b.bx)).expect("tube entries are non-empty")
    }

    pub fn final_hull(&self) -> IntervalVector {
        self.hull_at(self.len() - 1)
    }

    /// Whether `x` lies in the union of the boxes at index `k`.
    pub fn contains(&self, k: usize, x: &[f64], slack: f64) -> bool {
        self.boxes[k].iter().any(|b| b.bx.contains_point(x, slack))
    }

    /// CSV rows `time,partition,lo_0,hi_0,...`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self
            .boxes
            .first()
            .and_then(|b| b.first())
            .map_or(0, |b| b.bx.dim());
        write!(w, "time,partition")?;
        for i in 0..n {
            write!(w, ",lo_{i},hi_{i}")?;
        }
        writeln!(w)?;
        for (t, bs) in self.times.iter().zip(&self.boxes) {
            for b in bs {
                write!(w, "{t},{}", b.path)?;
                for (l, h) in b.bx.lo().iter().zip(b.bx.hi()) {
                    write!(w, ",{l},{h}")?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Produces network bounds and per-partition embedding dynamics.
pub trait EmbeddingFactory: Send + Sync {
    fn state_dim(&self) -> usize;
    /// Integration step of the produced steppers.
    fn dt(&self) -> f64;
    /// Network bounds valid on `bx`.
    fn verify(&self, bx: &IntervalVector) -> Result<Arc<InclusionFunction>, EmbeddingError>;
    /// Frozen dynamics for a partition whose box at the start of control
    /// interval `j` is `bx`.
    fn prepare(
        &self,
        bounds: &Arc<InclusionFunction>,
        bx: &IntervalVector,
        j: usize,
    ) -> Result<Box<dyn EmbeddingStepper>, EmbeddingError>;
}

/// Continuous-time closed-loop embedding with Euler integration.
#[derive(Clone)]
pub struct ContinuousFactory {
    template: ClosedLoopEmbedding,
    net: Arc<MlpNetwork>,
}

impl ContinuousFactory {
    pub fn new(template: ClosedLoopEmbedding, net: Arc<MlpNetwork>) -> Self {
        Self { template, net }
    }
}

impl EmbeddingFactory for ContinuousFactory {
    fn state_dim(&self) -> usize {
        self.template.system().state_dim()
    }
    fn dt(&self) -> f64 {
        self.template.dt()
    }
    fn verify(&self, bx: &IntervalVector) -> Result<Arc<InclusionFunction>, EmbeddingError> {
        Ok(Arc::new(make_inclusion(crown_bounds(&self.net, bx)?)))
    }
    fn prepare(
        &self,
        bounds: &Arc<InclusionFunction>,
        bx: &IntervalVector,
        j: usize,
    ) -> Result<Box<dyn EmbeddingStepper>, EmbeddingError> {
        let mut emb = self.template.clone().with_inclusion(bounds.clone());
        emb.refresh_control(bx, j, false)?;
        Ok(Box::new(emb))
    }
}

/// Discrete-time LTI embedding; one step per control interval.
#[derive(Clone)]
pub struct DiscreteFactory {
    template: DiscreteLtiEmbedding,
    net: Arc<MlpNetwork>,
}

impl DiscreteFactory {
    pub fn new(template: DiscreteLtiEmbedding, net: Arc<MlpNetwork>) -> Self {
        Self { template, net }
    }
}

impl EmbeddingFactory for DiscreteFactory {
    fn state_dim(&self) -> usize {
        self.template.a().nrows()
    }
    fn dt(&self) -> f64 {
        1.0
    }
    fn verify(&self, bx: &IntervalVector) -> Result<Arc<InclusionFunction>, EmbeddingError> {
        Ok(Arc::new(make_inclusion(crown_bounds(&self.net, bx)?)))
    }
    fn prepare(
        &self,
        bounds: &Arc<InclusionFunction>,
        _bx: &IntervalVector,
        _j: usize,
    ) -> Result<Box<dyn EmbeddingStepper>, EmbeddingError> {
        let mut emb = self.template.clone();
        emb.set_bounds(bounds.clone())?;
        Ok(Box::new(emb))
    }
}

/// Output of [`step`] for one subtree.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    /// Boxes after each integration step of the interval.
    pub fragment: Vec<Vec<TubeBox>>,
    pub node: PartitionNode,
    pub nn_calls: usize,
    pub subdivisions: usize,
}

struct Ctx<'a> {
    params: &'a AlgorithmParams,
    factory: &'a dyn EmbeddingFactory,
    j: usize,
    steps: usize,
    probe_steps: usize,
}

impl Ctx<'_> {
    fn err(&self, path: &PartitionPath) -> impl Fn(EmbeddingError) -> PartitionError + '_ {
        let path = path.clone();
        let j = self.j;
        move |source| PartitionError::Embedding {
            path: path.clone(),
            interval: j,
            source,
        }
    }
}

fn run(
    stepper: &dyn EmbeddingStepper,
    mut state: EmbeddingState,
    k: usize,
    out: &mut Vec<EmbeddingState>,
) -> Result<EmbeddingState, EmbeddingError> {
    for _ in 0..k {
        state = stepper.step(&state)?;
        out.push(state.clone());
    }
    Ok(state)
}

fn weighted(state: &EmbeddingState, eps: &ToleranceVector) -> f64 {
    let w: Vec<f64> = state
        .x_hi
        .iter()
        .zip(&state.x_lo)
        .map(|(h, l)| h - l)
        .collect();
    weighted_inf_norm(&w, eps)
}

fn step_node(
    mut node: PartitionNode,
    inherited: Option<Arc<InclusionFunction>>,
    ctx: &Ctx<'_>,
) -> Result<StepOutcome, PartitionError> {
    let err = ctx.err(&node.path);
    let mut nn_calls = 0;
    let bounds = if node.nn_flag {
        nn_calls += 1;
        Some(ctx.factory.verify(&node.bx).map_err(&err)?)
    } else {
        inherited
    };
    node.verified = Some(node.nn_flag);
    step_with_bounds(node, bounds, nn_calls, ctx)
}

fn step_with_bounds(
    mut node: PartitionNode,
    bounds: Option<Arc<InclusionFunction>>,
    nn_calls: usize,
    ctx: &Ctx<'_>,
) -> Result<StepOutcome, PartitionError> {
    let err = ctx.err(&node.path);
    let params = ctx.params;
    if !node.is_leaf() {
        let children = std::mem::take(&mut node.children);
        let results: Vec<StepOutcome> = if params.parallel {
            children
                .into_par_iter()
                .map(|c| step_node(c, bounds.clone(), ctx))
                .collect::<Result<_, _>>()?
        } else {
            children
                .into_iter()
                .map(|c| step_node(c, bounds.clone(), ctx))
                .collect::<Result<_, _>>()?
        };
        let mut fragment: Vec<Vec<TubeBox>> = vec![vec![]; ctx.steps];
        let mut out = StepOutcome {
            fragment: vec![],
            node: node.clone(),
            nn_calls,
            subdivisions: 0,
        };
        for r in results {
            for (dst, src) in fragment.iter_mut().zip(r.fragment) {
                dst.extend(src);
            }
            out.nn_calls += r.nn_calls;
            out.subdivisions += r.subdivisions;
            out.node.children.push(r.node);
        }
        out.node.bx = interval_hull(out.node.children.iter().map(|c| &c.bx))?;
        out.fragment = fragment;
        return Ok(out);
    }

    let Some(bounds) = bounds else {
        return Err(err(EmbeddingError::NoBounds));
    };
    let stepper = ctx
        .factory
        .prepare(&bounds, &node.bx, ctx.j)
        .map_err(&err)?;
    let start = EmbeddingState::from_box(&node.bx);
    let mut states = Vec::with_capacity(ctx.steps);
    let mut state = start.clone();
    if node.depth() < params.max_depth {
        let w0 = weighted(&start, &params.eps);
        let split = if w0 == 0.0 {
            false
        } else if w0.is_infinite() {
            true
        } else {
            state = run(stepper.as_ref(), start, ctx.probe_steps, &mut states).map_err(&err)?;
            let wg = weighted(&state, &params.eps);
            if ctx.probe_steps == ctx.steps {
                wg > 1.0
            } else {
                let gamma = ctx.probe_steps as f64 / ctx.steps as f64;
                (wg / w0).powf(1.0 / gamma) * w0 > 1.0
            }
        };
        if split {
            let d = node.depth();
            node.children = uniform_divide(&node.bx)
                .into_iter()
                .enumerate()
                .map(|(k, bx)| PartitionNode {
                    bx,
                    nn_flag: d < params.nn_depth,
                    children: vec![],
                    path: node.path.child(k),
                    verified: None,
                })
                .collect();
            node.nn_flag = node.nn_flag && d + 1 > params.nn_depth;
            // bounds already computed here are reused rather than recomputed
            let mut out = step_with_bounds(node, Some(bounds), nn_calls, ctx)?;
            out.subdivisions += 1;
            return Ok(out);
        }
    }
    let remaining = ctx.steps - states.len();
    state = run(stepper.as_ref(), state, remaining, &mut states).map_err(&err)?;
    let fragment = states
        .iter()
        .map(|s| {
            s.to_box().map(|bx| {
                vec![TubeBox {
                    path: node.path.clone(),
                    bx,
                }]
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    node.bx = state.to_box()?;
    Ok(StepOutcome {
        fragment,
        node,
        nn_calls,
        subdivisions: 0,
    })
}

/// Advances the subtree rooted at `node` over control interval `j` (1-based).
pub fn step(
    node: PartitionNode,
    inherited: Option<Arc<InclusionFunction>>,
    j: usize,
    params: &AlgorithmParams,
    factory: &dyn EmbeddingFactory,
) -> Result<StepOutcome, PartitionError> {
    if j == 0 || j >= params.control_instants.len() {
        return Err(PartitionError::Params(format!(
            "control interval {j} out of range"
        )));
    }
    let steps = params.steps_in(j);
    let probe_steps = ((params.gamma * steps as f64) - 1e-9)
        .ceil()
        .clamp(1.0, steps as f64) as usize;
    let ctx = Ctx {
        params,
        factory,
        j,
        steps,
        probe_steps,
    };
    step_node(node, inherited, &ctx)
}

/// Runs the algorithm from `root_box` and returns the tube and the final tree.
pub fn compute_reachable_set_with_tree(
    root_box: &IntervalVector,
    params: &AlgorithmParams,
    factory: &dyn EmbeddingFactory,
) -> Result<(ReachTube, PartitionNode), PartitionError> {
    params.validate()?;
    if root_box.dim() != factory.state_dim() || params.eps.dim() != root_box.dim() {
        return Err(PartitionError::Params(format!(
            "dimensions disagree: box {}, system {}, eps {}",
            root_box.dim(),
            factory.state_dim(),
            params.eps.dim()
        )));
    }
    if (factory.dt() - params.dt).abs() > 1e-12 * params.dt.max(1.0) {
        return Err(PartitionError::Params(format!(
            "dt {} differs from embedding step {}",
            params.dt,
            factory.dt()
        )));
    }
    let t = &params.control_instants;
    let mut tube = ReachTube {
        times: vec![t[0]],
        boxes: vec![vec![TubeBox {
            path: PartitionPath::default(),
            bx: root_box.clone(),
        }]],
        stats: vec![],
    };
    let mut root = PartitionNode::root(root_box.clone());
    for j in 1..=params.interval_count() {
        let out = step(root, None, j, params, factory)?;
        let k = out.fragment.len();
        for (s, boxes) in out.fragment.into_iter().enumerate() {
            tube.times
                .push(t[j - 1] + (s + 1) as f64 * (t[j] - t[j - 1]) / k as f64);
            tube.boxes.push(boxes);
        }
        root = out.node;
        let ts = tree_stats(&root);
        tube.stats.push(StepStats {
            interval: j,
            leaves: ts.leaves,
            max_depth: ts.max_depth,
            nn_calls: out.nn_calls,
            subdivisions: out.subdivisions,
        });
    }
    Ok((tube, root))
}

pub fn compute_reachable_set(
    root_box: &IntervalVector,
    params: &AlgorithmParams,
    factory: &dyn EmbeddingFactory,
) -> Result<ReachTube, PartitionError> {
    compute_reachable_set_with_tree(root_box, params, factory).map(|r| r.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{LinearSystem, OpenLoopSystem};
    use crate::nn::{Activation, Layer};
    use nalgebra::{DMatrix, DVector};

    fn scalar_factory(a: f64, dt: f64) -> ContinuousFactory {
        let sys: Arc<dyn OpenLoopSystem> = Arc::new(LinearSystem::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, 1.0),
        ));
        let net = Arc::new(MlpNetwork::zero(1, 1));
        let emb =
            ClosedLoopEmbedding::new(sys, net.clone(), &IntervalVector::point(&[]).unwrap(), dt);
        ContinuousFactory::new(emb, net)
    }

    fn params(eps: f64, period: f64, t: f64, dt: f64) -> AlgorithmParams {
        AlgorithmParams::evenly_spaced(
            ToleranceVector::uniform(1, eps).unwrap(),
            0.0,
            period,
            t,
            dt,
        )
        .unwrap()
    }

    #[test]
    fn infinite_tolerance_never_splits() {
        let f = scalar_factory(1.0, 0.01);
        let p = params(f64::INFINITY, 0.25, 1.0, 0.01).with_depths(5, 2);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        let (tube, root) = compute_reachable_set_with_tree(&b, &p, &f).unwrap();
        assert_eq!(tree_stats(&root).leaves, 1);
        assert_eq!(tube.len(), 101);
        assert!(tube.boxes.iter().all(|b| b.len() == 1));
    }

    #[test]
    fn zero_tolerance_partitions_uniformly_at_start() {
        let f = scalar_factory(-1.0, 0.01);
        let p = params(0.0, 0.25, 0.5, 0.01).with_depths(3, 1);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        let tube = compute_reachable_set(&b, &p, &f).unwrap();
        assert_eq!(tube.boxes[1].len(), 8);
        assert_eq!(tube.stats[0].subdivisions, 1 + 2 + 4);
        assert_eq!(tube.stats[1].subdivisions, 0);
    }

    #[test]
    fn expanding_scalar_doubles_and_splits() {
        // x' = x over ln 2 with gamma = 1: width 1 grows to ~2 > eps = 1
        let ln2 = std::f64::consts::LN_2;
        let dt = ln2 / 1000.0;
        let f = scalar_factory(1.0, dt);
        let p = params(1.0, ln2, ln2, dt).with_depths(1, 0);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        let (tube, root) = compute_reachable_set_with_tree(&b, &p, &f).unwrap();
        assert_eq!(tube.stats[0].subdivisions, 1);
        assert_eq!(root.children.len(), 2);
        assert_eq!(root.children[0].path.to_string(), "r.0");
        assert_eq!(tube.boxes[1].len(), 2);
        let w = tube.final_hull().width(0);
        assert!((w - 2.0).abs() < 2e-3, "{w}");
    }

    #[test]
    fn contracting_scalar_does_not_split() {
        let f = scalar_factory(-1.0, 0.01);
        let p = params(1.0, 0.5, 2.0, 0.01)
            .with_depths(4, 0)
            .with_gamma(0.1);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        let (tube, root) = compute_reachable_set_with_tree(&b, &p, &f).unwrap();
        assert!(root.is_leaf());
        assert!(tube
            .stats
            .iter()
            .all(|s| s.subdivisions == 0 && s.nn_calls == 1));
    }

    #[test]
    fn verification_flags_follow_depth_budget() {
        let f = scalar_factory(-1.0, 0.01);
        let p = params(0.0, 0.25, 0.5, 0.01).with_depths(3, 1);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        let (tube, root) = compute_reachable_set_with_tree(&b, &p, &f).unwrap();
        // first interval: root plus its two children; afterwards only depth-1 nodes
        assert_eq!(tube.stats[0].nn_calls, 3);
        assert_eq!(tube.stats[1].nn_calls, 2);
        root.visit(&mut |n| {
            if n.verified == Some(true) {
                assert!(n.depth() <= 1);
            }
        });
        assert_eq!(
            tree_stats(&root),
            TreeStats {
                leaves: 8,
                max_depth: 3,
                nn_calls: 2
            }
        );
    }

    #[test]
    fn fresh_root_stats() {
        let r = PartitionNode::root(IntervalVector::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap());
        assert_eq!(
            tree_stats(&r),
            TreeStats {
                leaves: 1,
                max_depth: 0,
                nn_calls: 1
            }
        );
    }

    #[test]
    fn internal_box_is_hull_of_children() {
        let f = scalar_factory(0.5, 0.01);
        let p = params(0.3, 0.25, 1.0, 0.01).with_depths(3, 1);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        let (_, root) = compute_reachable_set_with_tree(&b, &p, &f).unwrap();
        root.visit(&mut |n| {
            if !n.is_leaf() {
                assert_eq!(
                    n.bx,
                    interval_hull(n.children.iter().map(|c| &c.bx)).unwrap()
                );
            }
        });
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let sys: Arc<dyn OpenLoopSystem> = Arc::new(LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        ));
        let net = Arc::new(
            MlpNetwork::new(
                2,
                vec![
                    Layer::new(
                        DMatrix::from_row_slice(3, 2, &[1.0, -1.0, 0.5, 1.0, -1.0, 0.3]),
                        DVector::from_vec(vec![0.1, -0.2, 0.0]),
                        Activation::Relu,
                    ),
                    Layer::new(
                        DMatrix::from_row_slice(1, 3, &[-0.5, 0.4, -0.3]),
                        DVector::from_element(1, 0.0),
                        Activation::Identity,
                    ),
                ],
            )
            .unwrap(),
        );
        let emb =
            ClosedLoopEmbedding::new(sys, net.clone(), &IntervalVector::point(&[]).unwrap(), 0.05);
        let f = ContinuousFactory::new(emb, net);
        let b = IntervalVector::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let p = AlgorithmParams::evenly_spaced(
            ToleranceVector::uniform(2, 0.8).unwrap(),
            0.0,
            0.5,
            2.0,
            0.05,
        )
        .unwrap()
        .with_depths(3, 1)
        .with_gamma(0.2);
        let a = compute_reachable_set(&b, &p.clone().with_parallel(true), &f).unwrap();
        let s = compute_reachable_set(&b, &p.with_parallel(false), &f).unwrap();
        assert_eq!(a, s);
    }

    #[test]
    fn discrete_zero_controller_reproduces_iterates() {
        let emb = DiscreteLtiEmbedding::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.5, 1.0]),
        );
        let f = DiscreteFactory::new(emb, Arc::new(MlpNetwork::zero(2, 1)));
        let p = AlgorithmParams::evenly_spaced(
            ToleranceVector::uniform(2, f64::INFINITY).unwrap(),
            0.0,
            1.0,
            2.0,
            1.0,
        )
        .unwrap();
        let pt = IntervalVector::point(&[3.0, 0.25]).unwrap();
        let tube = compute_reachable_set(&pt, &p, &f).unwrap();
        assert_eq!(tube.times, vec![0.0, 1.0, 2.0]);
        assert_eq!(tube.final_hull().lo(), &[3.5, 0.25]);
    }

    #[test]
    fn invalid_params_are_rejected() {
        let f = scalar_factory(-1.0, 0.01);
        let b = IntervalVector::new(vec![0.0], vec![1.0]).unwrap();
        assert!(matches!(
            compute_reachable_set(&b, &params(1.0, 0.25, 1.0, 0.01).with_gamma(0.0), &f),
            Err(PartitionError::Params(_))
        ));
        assert!(matches!(
            compute_reachable_set(&b, &params(1.0, 0.25, 1.0, 0.03), &f),
            Err(PartitionError::Params(_))
        ));
        assert!(AlgorithmParams::evenly_spaced(
            ToleranceVector::uniform(1, 1.0).unwrap(),
            1.0,
            0.25,
            0.0,
            0.01
        )
        .is_err());
        let w = params(1.0, 0.25, 1.0, 0.01)
            .with_depths(1, 2)
            .validate()
            .unwrap();
        assert_eq!(w.len(), 1);
    }

    #[test]
    fn csv_has_one_row_per_box() {
        let f = scalar_factory(-1.0, 0.25);
        let p = params(f64::INFINITY, 0.5, 0.5, 0.25);
        let tube =
            compute_reachable_set(&IntervalVector::new(vec![0.0], vec![1.0]).unwrap(), &p, &f)
                .unwrap();
        let mut buf = vec![];
        tube.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().count(), 4);
        assert_eq!(s.lines().next().unwrap(), "time,partition,lo_0,hi_0");
        assert!(s.lines().nth(1).unwrap().starts_with("0,r,0,1"));
    }
}
