//! Sequential information-driven path planning.
//!
//! Sensors plan one at a time. Each receives from its predecessor a
//! [`DetectionCounts`] table recording, per target and future step, how
//! many earlier sensors expect to observe that target; it discounts its own
//! mutual-information gain accordingly, optimizes its controls, adds its own
//! expected detections and forwards the table. The table has `M·H` entries
//! however many sensors came before.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{Sym2, Vec2};
use crate::network::{MessageKind, Network, TreeTopology};
use crate::rng::{self, tag};
use crate::scalar::Real;
use crate::trajectory::TrajectoryGaussian;
use crate::wire;
use crate::world::{in_fov, integrate_unicycle, ControlInput, SensorId, SensorLimits, SensorState, TargetId, WorkspaceSpec};

/// `(prior⁻¹ + n·Σ_ε⁻¹)⁻¹`: the prior after `n` independent measurements.
pub fn predecessor_update<T: Real>(prior: &Sym2<T>, n: u32, noise_cov: &Sym2<T>) -> Result<Sym2<T>> {
    if n == 0 {
        return Ok(*prior);
    }
    weighted_update(prior, T::from_u32(n).expect("count fits scalar"), noise_cov)
}

/// [`predecessor_update`] with a real-valued count.
pub fn weighted_update<T: Real>(prior: &Sym2<T>, n: T, noise_cov: &Sym2<T>) -> Result<Sym2<T>> {
    (prior.inverse()? + noise_cov.inverse()?.scale(n)).inverse()
}

/// Mutual information between a 2-D Gaussian state with covariance `prior`
/// and one measurement of it with noise `noise_cov`:
/// `½ log(det prior / det posterior)`.
pub fn step_mi<T: Real>(prior: &Sym2<T>, noise_cov: &Sym2<T>) -> T {
    // det(prior)/det(posterior) = det(I + prior·Σ_ε⁻¹) = 1 + tr(A) + det(A)
    let inv = noise_cov.inverse().expect("SPD noise covariance");
    let tr = prior.xx * inv.xx + T::lit(2.0) * prior.xy * inv.xy + prior.yy * inv.yy;
    let det = prior.det() * inv.det();
    T::lit(0.5) * (tr + det).max(T::zero()).ln_1p()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PsiShape {
    /// `max(0, 1 − (d − r/2)²/(r/2)²)`, peaking at half the sensing radius.
    #[default]
    Bump,
    /// `max(0, 1 − (d/r)²)`, peaking on the target. For ablations.
    Monotone,
}

/// Smooth surrogate for the FOV indicator.
pub fn psi_weight<T: Real>(sensor_xy: Vec2<T>, target_xy: Vec2<T>, r: T) -> T {
    psi_weight_with(PsiShape::Bump, sensor_xy, target_xy, r)
}

pub fn psi_weight_with<T: Real>(shape: PsiShape, sensor_xy: Vec2<T>, target_xy: Vec2<T>, r: T) -> T {
    let d = sensor_xy.distance(target_xy);
    let v = match shape {
        PsiShape::Bump => {
            let h = r * T::lit(0.5);
            let e = (d - h) / h;
            T::one() - e * e
        }
        PsiShape::Monotone => {
            let e = d / r;
            T::one() - e * e
        }
    };
    v.max(T::zero())
}

/// Expected detections by predecessor sensors, `counts[i·H + τ]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DetectionCounts {
    step: u32,
    horizon: usize,
    targets: Vec<TargetId>,
    counts: Vec<u32>,
}

impl DetectionCounts {
    pub fn zeros(step: u32, targets: &[TargetId], horizon: usize) -> Self {
        Self {
            step,
            horizon,
            targets: targets.to_vec(),
            counts: vec![0; targets.len() * horizon],
        }
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn targets(&self) -> &[TargetId] {
        &self.targets
    }

    /// Count for the `i`-th target at horizon offset `tau` (zero-based).
    pub fn get(&self, i: usize, tau: usize) -> u32 {
        self.counts[i * self.horizon + tau]
    }

    pub fn increment(&mut self, i: usize, tau: usize) {
        self.counts[i * self.horizon + tau] += 1;
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.counts
    }

    /// Adds one detection wherever `states[τ+1]` sees the nominal position.
    pub fn record_plan<T: Real>(&mut self, prior: &PlanningPrior<T>, states: &[SensorState<T>]) {
        for (i, tp) in prior.targets.iter().enumerate() {
            for (tau, x) in tp.nominal.iter().enumerate() {
                if in_fov(&states[tau + 1], *x) {
                    self.increment(i, tau);
                }
            }
        }
    }

    pub fn encode(&self, round: u32) -> Result<Vec<u8>> {
        wire::encode_detection_counts(round, self.step, self.targets.len(), self.horizon, &self.counts)
    }

    /// Decodes a table whose target order both ends already agree on.
    pub fn decode(bytes: &[u8], targets: &[TargetId]) -> Result<Self> {
        let (header, counts) = wire::decode_detection_counts(bytes)?;
        if header.entries as usize != targets.len() {
            return Err(Error::Protocol(format!(
                "detection counts for {} targets, expected {}",
                header.entries,
                targets.len()
            )));
        }
        Ok(Self {
            step: header.step,
            horizon: header.horizon as usize,
            targets: targets.to_vec(),
            counts,
        })
    }
}

/// One target's share of the planning prior.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPrior<T> {
    pub target_id: TargetId,
    /// Nominal positions at `k+1, …, k+H`.
    pub nominal: Vec<Vec2<T>>,
    /// Fused covariance blocks.
    pub fused: Vec<Sym2<T>>,
    /// Blocks after the predecessors' expected measurements.
    pub pre: Vec<Sym2<T>>,
    /// `step_mi(pre[τ], Σ_ε)`.
    pub gain: Vec<T>,
}

/// Everything a sensor needs to score plans: where each target will be and
/// how uncertain it still is after the predecessors' measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanningPrior<T> {
    step: u32,
    horizon: usize,
    noise_cov: Sym2<T>,
    targets: Vec<TargetPrior<T>>,
}

impl<T: Real> PlanningPrior<T> {
    /// Prior from fused trajectory pdfs, with no predecessor detections.
    pub fn new(step: u32, fused: &BTreeMap<TargetId, TrajectoryGaussian<T>>, noise_cov: Sym2<T>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParameter("planning horizon must be at least 1".into()));
        }
        if !noise_cov.is_spd() {
            return Err(Error::InvalidParameter(format!("noise covariance {noise_cov:?} is not SPD")));
        }
        let mut targets = Vec::with_capacity(fused.len());
        for (&target_id, pdf) in fused {
            if pdf.horizon() != horizon {
                return Err(Error::Structure(format!(
                    "target {target_id} pdf has horizon {}, planner expects {horizon}",
                    pdf.horizon()
                )));
            }
            let blocks: Vec<_> = pdf.blocks().collect();
            targets.push(TargetPrior {
                target_id,
                nominal: pdf.mean().to_vec(),
                gain: blocks.iter().map(|b| step_mi(b, &noise_cov)).collect(),
                pre: blocks.clone(),
                fused: blocks,
            });
        }
        Ok(Self {
            step,
            horizon,
            noise_cov,
            targets,
        })
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn noise_cov(&self) -> &Sym2<T> {
        &self.noise_cov
    }

    pub fn targets(&self) -> &[TargetPrior<T>] {
        &self.targets
    }

    pub fn target_ids(&self) -> Vec<TargetId> {
        self.targets.iter().map(|t| t.target_id).collect()
    }

    pub fn zero_counts(&self) -> DetectionCounts {
        DetectionCounts::zeros(self.step, &self.target_ids(), self.horizon)
    }

    /// Applies `counts` to the fused blocks.
    pub fn conditioned(&self, counts: &DetectionCounts) -> Result<Self> {
        if counts.targets() != self.target_ids().as_slice() || counts.horizon() != self.horizon {
            return Err(Error::Protocol("detection counts do not match the planning prior".into()));
        }
        let mut out = self.clone();
        for (i, tp) in out.targets.iter_mut().enumerate() {
            for tau in 0..self.horizon {
                tp.pre[tau] = predecessor_update(&tp.fused[tau], counts.get(i, tau), &self.noise_cov)?;
                tp.gain[tau] = step_mi(&tp.pre[tau], &self.noise_cov);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanBudget {
    /// Objective evaluations per sensor.
    pub max_evals: usize,
    /// Uniformly random seed plans, besides zero and the constant corners.
    pub random_starts: usize,
    /// Best seeds refined by compass search.
    pub refine_starts: usize,
}

impl Default for PlanBudget {
    fn default() -> Self {
        Self {
            max_evals: 3000,
            random_starts: 48,
            refine_starts: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerConfig<T> {
    pub limits: SensorLimits<T>,
    pub dt: T,
    /// Plans leaving the workspace are penalized per meter outside.
    pub workspace: Option<WorkspaceSpec<T>>,
    pub boundary_penalty: T,
    pub psi: PsiShape,
    pub budget: PlanBudget,
    pub seed: u64,
}

impl<T: Real> PlannerConfig<T> {
    pub fn new(limits: SensorLimits<T>, dt: T, seed: u64) -> Self {
        Self {
            limits,
            dt,
            workspace: None,
            boundary_penalty: T::lit(1e3),
            psi: PsiShape::Bump,
            budget: PlanBudget::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult<T> {
    pub sensor_id: SensorId,
    /// `u(k), …, u(k+H−1)`.
    pub controls: Vec<ControlInput<T>>,
    /// `s(k), …, s(k+H)`.
    pub states: Vec<SensorState<T>>,
    /// Objective without the workspace penalty.
    pub objective: T,
    pub evaluations: usize,
    pub budget_exhausted: bool,
    /// Every planned position lies inside the workspace.
    pub feasible: bool,
}

/// Unicycle rollout `s(k), …, s(k+H)`; rejects out-of-bounds controls.
pub fn rollout<T: Real>(
    sensor: &SensorState<T>,
    controls: &[ControlInput<T>],
    limits: &SensorLimits<T>,
    dt: T,
) -> Result<Vec<SensorState<T>>> {
    if let Some(u) = controls.iter().find(|u| !limits.admits(u)) {
        return Err(Error::BoundsViolation(format!("control {u:?} outside limits")));
    }
    Ok(rollout_unchecked(sensor, controls, limits, dt))
}

fn rollout_unchecked<T: Real>(sensor: &SensorState<T>, controls: &[ControlInput<T>], limits: &SensorLimits<T>, dt: T) -> Vec<SensorState<T>> {
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(*sensor);
    for u in controls {
        let next = integrate_unicycle(states.last().expect("non-empty"), u, limits, dt);
        states.push(next);
    }
    states
}

/// `Σ_i Σ_τ ψ(s(τ), X̂_i(τ)) · step_mi(Σ_pre,i(τ), Σ_ε)`.
pub fn objective<T: Real>(controls: &[ControlInput<T>], sensor: &SensorState<T>, prior: &PlanningPrior<T>, cfg: &PlannerConfig<T>) -> Result<T> {
    check_plan_length(controls, prior)?;
    let states = rollout(sensor, controls, &cfg.limits, cfg.dt)?;
    Ok(score_states(&states, prior, cfg.psi))
}

/// The objective with `ψ` replaced by the hard FOV indicator.
pub fn indicator_objective<T: Real>(states: &[SensorState<T>], prior: &PlanningPrior<T>) -> T {
    let mut total = T::zero();
    for tp in &prior.targets {
        for (tau, x) in tp.nominal.iter().enumerate() {
            if in_fov(&states[tau + 1], *x) {
                total = total + tp.gain[tau];
            }
        }
    }
    total
}

fn check_plan_length<T: Real>(controls: &[ControlInput<T>], prior: &PlanningPrior<T>) -> Result<()> {
    if controls.len() != prior.horizon {
        return Err(Error::Structure(format!(
            "{} controls for a horizon of {}",
            controls.len(),
            prior.horizon
        )));
    }
    Ok(())
}

fn score_states<T: Real>(states: &[SensorState<T>], prior: &PlanningPrior<T>, psi: PsiShape) -> T {
    let mut total = T::zero();
    for tp in &prior.targets {
        for (tau, x) in tp.nominal.iter().enumerate() {
            let s = &states[tau + 1];
            total = total + psi_weight_with(psi, s.position, *x, s.sensing_radius) * tp.gain[tau];
        }
    }
    total
}

fn boundary_excess<T: Real>(states: &[SensorState<T>], ws: Option<&WorkspaceSpec<T>>) -> T {
    match ws {
        Some(ws) => states[1..].iter().map(|s| ws.outside_distance(s.position)).sum(),
        None => T::zero(),
    }
}

/// Flat decision vector `[a₀, ω₀, a₁, ω₁, …]` and its box.
struct ControlBox<T> {
    lo: Vec<T>,
    hi: Vec<T>,
}

impl<T: Real> ControlBox<T> {
    fn new(limits: &SensorLimits<T>, horizon: usize) -> Self {
        let lo = (0..horizon).flat_map(|_| [limits.accel_min, limits.turn_min]).collect();
        let hi = (0..horizon).flat_map(|_| [limits.accel_max, limits.turn_max]).collect();
        Self { lo, hi }
    }

    fn constant(&self, a: T, w: T) -> Vec<T> {
        (0..self.lo.len())
            .map(|d| {
                let v = if d % 2 == 0 { a } else { w };
                v.max(self.lo[d]).min(self.hi[d])
            })
            .collect()
    }

    /// Zero plan followed by the nine constant plans at {min, mid, max}².
    fn structured_seeds(&self) -> Vec<Vec<T>> {
        let pick = |d: usize| [self.lo[d], (self.lo[d] + self.hi[d]) * T::lit(0.5), self.hi[d]];
        let mut seeds = vec![self.constant(T::zero(), T::zero())];
        for a in pick(0) {
            for w in pick(1) {
                seeds.push(self.constant(a, w));
            }
        }
        seeds
    }

    fn random<R: Rng>(&self, rng: &mut R) -> Vec<T> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&l, &h)| {
                if h > l {
                    l + (h - l) * T::lit(rng.random::<f64>())
                } else {
                    l
                }
            })
            .collect()
    }
}

fn to_controls<T: Real>(x: &[T]) -> Vec<ControlInput<T>> {
    x.chunks_exact(2).map(|c| ControlInput::new(c[0], c[1])).collect()
}

struct SearchOutcome<T> {
    x: Vec<T>,
    evaluations: usize,
    exhausted: bool,
}

/// Multi-start maximization over a box: score every seed, then refine the
/// best few by compass search with step halving.
fn multistart_maximize<T: Real, F: FnMut(&[T]) -> T>(
    bounds: &ControlBox<T>,
    seeds: Vec<Vec<T>>,
    refine: usize,
    max_evals: usize,
    mut f: F,
) -> SearchOutcome<T> {
    let mut evals = 0usize;
    let mut scored: Vec<(T, Vec<T>)> = Vec::with_capacity(seeds.len());
    for s in seeds {
        if evals >= max_evals && !scored.is_empty() {
            break;
        }
        evals += 1;
        scored.push((f(&s), s));
    }
    // stable sort keeps seed order among ties, so results are reproducible
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(std::cmp::Ordering::Equal));
    let (mut best_v, mut best_x) = scored[0].clone();
    let mut exhausted = false;
    let dims = bounds.lo.len();
    let ranges: Vec<T> = (0..dims).map(|d| bounds.hi[d] - bounds.lo[d]).collect();
    let min_frac = T::lit(1e-3);

    for (start_v, start_x) in scored.into_iter().take(refine.max(1)) {
        let (mut x, mut v) = (start_x, start_v);
        let mut frac = T::lit(0.25);
        'search: while frac >= min_frac {
            let mut improved = false;
            for d in 0..dims {
                if ranges[d] <= T::zero() {
                    continue;
                }
                for sign in [T::one(), -T::one()] {
                    if evals >= max_evals {
                        exhausted = true;
                        break 'search;
                    }
                    let mut y = x.clone();
                    y[d] = (x[d] + sign * frac * ranges[d]).max(bounds.lo[d]).min(bounds.hi[d]);
                    if y[d] == x[d] {
                        continue;
                    }
                    evals += 1;
                    let fy = f(&y);
                    if fy > v {
                        x = y;
                        v = fy;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                frac = frac * T::lit(0.5);
            }
        }
        if v > best_v {
            best_v = v;
            best_x = x;
        }
        if exhausted {
            break;
        }
    }
    SearchOutcome {
        x: best_x,
        evaluations: evals,
        exhausted,
    }
}

/// Maximizes [`objective`] (minus any workspace penalty) over `𝒰^H`.
/// Deterministic given `seed`.
pub fn optimize_local<T: Real>(sensor: &SensorState<T>, prior: &PlanningPrior<T>, cfg: &PlannerConfig<T>, seed: u64) -> Result<PlanResult<T>> {
    cfg.limits.validate()?;
    let h = prior.horizon;
    let bounds = ControlBox::new(&cfg.limits, h);
    let mut rng = rng::stream(seed, &[]);
    let mut seeds = bounds.structured_seeds();
    seeds.extend((0..cfg.budget.random_starts).map(|_| bounds.random(&mut rng)));

    let penalized = |x: &[T]| {
        let states = rollout_unchecked(sensor, &to_controls(x), &cfg.limits, cfg.dt);
        score_states(&states, prior, cfg.psi) - cfg.boundary_penalty * boundary_excess(&states, cfg.workspace.as_ref())
    };
    let out = multistart_maximize(&bounds, seeds, cfg.budget.refine_starts, cfg.budget.max_evals, penalized);
    let controls = to_controls(&out.x);
    let states = rollout(sensor, &controls, &cfg.limits, cfg.dt)?;
    let excess = boundary_excess(&states, cfg.workspace.as_ref());
    Ok(PlanResult {
        sensor_id: sensor.id,
        objective: score_states(&states, prior, cfg.psi),
        controls,
        states,
        evaluations: out.evaluations,
        budget_exhausted: out.exhausted,
        feasible: excess <= T::zero(),
    })
}

/// Planning order: ascending id, or depth-first over the communication tree
/// so that consecutive sensors are mostly neighbours.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum PlanningOrder {
    #[default]
    AscendingId,
    TreeDepthFirst,
}

pub fn planning_order(order: PlanningOrder, tree: &TreeTopology) -> Vec<SensorId> {
    match order {
        PlanningOrder::AscendingId => tree.nodes().collect(),
        PlanningOrder::TreeDepthFirst => tree.preorder(),
    }
}

/// Runs one sequential planning round. The detection-count table travels
/// along `order`, relayed over the tree when successive sensors are not
/// neighbours.
pub fn sequential_round<T: Real>(
    sensors: &[SensorState<T>],
    prior: &PlanningPrior<T>,
    order: &[SensorId],
    cfg: &PlannerConfig<T>,
    network: &mut Network,
    round: u32,
) -> Result<BTreeMap<SensorId, PlanResult<T>>> {
    let by_id: BTreeMap<SensorId, &SensorState<T>> = sensors.iter().map(|s| (s.id, s)).collect();
    let ids: BTreeSet<_> = by_id.keys().copied().collect();
    let ordered: BTreeSet<_> = order.iter().copied().collect();
    if ids.len() != sensors.len() || ordered.len() != order.len() || ids != ordered {
        return Err(Error::Protocol(format!(
            "planning order {order:?} is not a permutation of sensors {ids:?}"
        )));
    }
    let targets = prior.target_ids();
    let mut counts = prior.zero_counts();
    let mut plans = BTreeMap::new();
    let mut prev: Option<SensorId> = None;
    for &j in order {
        if let Some(p) = prev {
            let bytes = counts.encode(round)?;
            network.route(round, p, j, MessageKind::DetectionCounts, &bytes)?;
            counts = DetectionCounts::decode(&bytes, &targets)?;
        }
        let conditioned = prior.conditioned(&counts)?;
        let seed = rng::derive_seed(cfg.seed, &[tag::PLANNER, u64::from(round), u64::from(j)]);
        let plan = optimize_local(by_id[&j], &conditioned, cfg, seed)?;
        counts.record_plan(prior, &plan.states);
        plans.insert(j, plan);
        prev = Some(j);
    }
    Ok(plans)
}

/// Team objective for a joint plan: sensors in `order` each score their
/// gain given soft detection counts `Σ_{l<j} ψ_l` from the sensors before
/// them.
pub fn joint_objective<T: Real>(states: &[Vec<SensorState<T>>], prior: &PlanningPrior<T>, psi: PsiShape) -> T {
    let h = prior.horizon;
    let noise_prec = prior.noise_cov.inverse().expect("SPD noise covariance");
    let mut soft = vec![T::zero(); prior.targets.len() * h];
    let mut total = T::zero();
    for traj in states {
        for (i, tp) in prior.targets.iter().enumerate() {
            for tau in 0..h {
                let s = &traj[tau + 1];
                let w = psi_weight_with(psi, s.position, tp.nominal[tau], s.sensing_radius);
                if w <= T::zero() {
                    continue;
                }
                let c = soft[i * h + tau];
                let gain = if c > T::zero() {
                    let pre = (tp.fused[tau].inverse().expect("SPD block") + noise_prec.scale(c))
                        .inverse()
                        .expect("SPD update");
                    step_mi(&pre, &prior.noise_cov)
                } else {
                    tp.gain[tau]
                };
                total = total + w * gain;
                soft[i * h + tau] = c + w;
            }
        }
    }
    total
}

/// Centralized planning: one search over every sensor's controls at once
/// (`2·N·H` dimensions) with `N` times the per-sensor budget. `warm_start`
/// plans, if given, join the seed pool.
pub fn optimize_joint<T: Real>(
    sensors: &[SensorState<T>],
    prior: &PlanningPrior<T>,
    cfg: &PlannerConfig<T>,
    seed: u64,
    warm_start: Option<&[Vec<ControlInput<T>>]>,
) -> Result<Vec<PlanResult<T>>> {
    cfg.limits.validate()?;
    let n = sensors.len();
    let h = prior.horizon;
    let per = ControlBox::new(&cfg.limits, h);
    let bounds = ControlBox {
        lo: per.lo.iter().copied().cycle().take(2 * h * n).collect(),
        hi: per.hi.iter().copied().cycle().take(2 * h * n).collect(),
    };
    let split = |x: &[T]| -> Vec<Vec<SensorState<T>>> {
        sensors
            .iter()
            .zip(x.chunks_exact(2 * h))
            .map(|(s, xs)| rollout_unchecked(s, &to_controls(xs), &cfg.limits, cfg.dt))
            .collect()
    };
    let mut rng = rng::stream(seed, &[]);
    let mut seeds: Vec<Vec<T>> = per.structured_seeds().into_iter().map(|s| s.repeat(n)).collect();
    if let Some(warm) = warm_start {
        if warm.len() != n || warm.iter().any(|c| c.len() != h) {
            return Err(Error::Structure("warm start does not match sensors and horizon".into()));
        }
        let flat: Vec<T> = warm
            .iter()
            .flat_map(|c| c.iter().map(|u| cfg.limits.clamp_control(*u)).flat_map(|u| [u.accel, u.turn_rate]))
            .collect();
        seeds.insert(0, flat);
    }
    seeds.extend((0..cfg.budget.random_starts * n).map(|_| bounds.random(&mut rng)));
    let penalized = |x: &[T]| {
        let trajs = split(x);
        let excess: T = trajs.iter().map(|s| boundary_excess(s, cfg.workspace.as_ref())).sum();
        joint_objective(&trajs, prior, cfg.psi) - cfg.boundary_penalty * excess
    };
    let out = multistart_maximize(&bounds, seeds, cfg.budget.refine_starts, cfg.budget.max_evals * n, penalized);
    let trajs = split(&out.x);
    Ok(sensors
        .iter()
        .zip(out.x.chunks_exact(2 * h))
        .zip(trajs)
        .map(|((s, xs), states)| {
            let feasible = boundary_excess(&states, cfg.workspace.as_ref()) <= T::zero();
            PlanResult {
                sensor_id: s.id,
                controls: to_controls(xs),
                objective: score_states(&states, prior, cfg.psi),
                states,
                evaluations: out.evaluations,
                budget_exhausted: out.exhausted,
                feasible,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Derivation;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_spd<R: Rng>(rng: &mut R) -> Sym2<f64> {
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Sym2::new(a * a + 0.05, a * b, b * b + c * c + 0.05)
    }

    fn prior_with(nominal: Vec<Vec<Vec2<f64>>>, block: Sym2<f64>, noise: Sym2<f64>) -> PlanningPrior<f64> {
        let fused: BTreeMap<_, _> = nominal
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let h = m.len();
                (i as u32, TrajectoryGaussian::new(0, m, vec![block; h]).unwrap())
            })
            .collect();
        let h = fused.values().next().unwrap().horizon();
        PlanningPrior::new(0, &fused, noise, h).unwrap()
    }

    fn static_target(at: Vec2<f64>, h: usize) -> Vec<Vec2<f64>> {
        vec![at; h]
    }

    fn cfg() -> PlannerConfig<f64> {
        PlannerConfig::new(SensorLimits::mobile_default(), 0.5, 11)
    }

    #[test]
    fn predecessor_update_examples() {
        let i = Sym2::<f64>::identity();
        assert_eq!(predecessor_update(&i, 0, &i).unwrap(), i);
        let half = predecessor_update(&i, 1, &i).unwrap();
        assert_relative_eq!(half.xx, 0.5, epsilon = 1e-15);
        assert_relative_eq!(half.xy, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn three_updates_match_sequential_bayes() {
        let mut rng = rng::stream(21, &[]);
        for _ in 0..200 {
            let prior = random_spd(&mut rng);
            let noise = random_spd(&mut rng);
            let batch = predecessor_update(&prior, 3, &noise).unwrap();
            // Kalman form: P ← P − P(P + R)⁻¹P
            let mut p = prior;
            for _ in 0..3 {
                let s_inv = (p + noise).inverse().unwrap();
                let k = mat_mul(&p, &s_inv);
                let kp = mat_mul_sym(&k, &p);
                p = p - kp;
            }
            assert!(batch.max_abs_diff(&p) < 1e-12 * (1.0 + prior.trace()), "{batch:?} vs {p:?}");
        }
    }

    fn mat_mul(a: &Sym2<f64>, b: &Sym2<f64>) -> [[f64; 2]; 2] {
        [
            [a.xx * b.xx + a.xy * b.xy, a.xx * b.xy + a.xy * b.yy],
            [a.xy * b.xx + a.yy * b.xy, a.xy * b.xy + a.yy * b.yy],
        ]
    }

    fn mat_mul_sym(k: &[[f64; 2]; 2], p: &Sym2<f64>) -> Sym2<f64> {
        let xx = k[0][0] * p.xx + k[0][1] * p.xy;
        let xy = k[0][0] * p.xy + k[0][1] * p.yy;
        let yy = k[1][0] * p.xy + k[1][1] * p.yy;
        Sym2::new(xx, xy, yy)
    }

    #[test]
    fn step_mi_examples() {
        let s = Sym2::isotropic(0.3);
        assert_relative_eq!(step_mi(&s, &s), 2f64.ln(), epsilon = 1e-14);
        assert!(step_mi(&Sym2::isotropic(1e-8), &Sym2::identity()) < 1e-7);
    }

    #[test]
    fn step_mi_matches_entropy_difference() {
        use nalgebra::{Matrix2, Matrix4};
        let mut rng = rng::stream(22, &[]);
        for _ in 0..200 {
            let p = random_spd(&mut rng);
            let r = random_spd(&mut rng);
            let pm = Matrix2::new(p.xx, p.xy, p.xy, p.yy);
            let rm = Matrix2::new(r.xx, r.xy, r.xy, r.yy);
            let mut joint = Matrix4::zeros();
            joint.fixed_view_mut::<2, 2>(0, 0).copy_from(&pm);
            joint.fixed_view_mut::<2, 2>(0, 2).copy_from(&pm);
            joint.fixed_view_mut::<2, 2>(2, 0).copy_from(&pm);
            joint.fixed_view_mut::<2, 2>(2, 2).copy_from(&(pm + rm));
            // H(X) − H(X|Z) = H(X) + H(Z) − H(X, Z); the 2πe terms cancel
            let mi = 0.5 * (pm.determinant().ln() + (pm + rm).determinant().ln() - joint.determinant().ln());
            assert!((step_mi(&p, &r) - mi).abs() < 1e-10, "{} vs {mi}", step_mi(&p, &r));
        }
    }

    #[test]
    fn mi_strictly_decreases_with_count() {
        let mut rng = rng::stream(23, &[]);
        for _ in 0..1000 {
            let prior = random_spd(&mut rng);
            let noise = random_spd(&mut rng);
            let n = rng.random_range(0..20u32);
            let a = step_mi(&predecessor_update(&prior, n, &noise).unwrap(), &noise);
            let b = step_mi(&predecessor_update(&prior, n + 1, &noise).unwrap(), &noise);
            assert!(a >= 0.0 && b >= 0.0);
            assert!(b < a, "n={n}: {b} >= {a}");
        }
    }

    #[test]
    fn psi_examples() {
        let o = Vec2::zero();
        let r = 4.0;
        assert_eq!(psi_weight(Vec2::new(2.0, 0.0), o, r), 1.0);
        assert_eq!(psi_weight(o, o, r), 0.0);
        assert_eq!(psi_weight(Vec2::new(0.0, 4.0), o, r), 0.0);
        assert_eq!(psi_weight(Vec2::new(7.0, 0.0), o, r), 0.0);
        assert_eq!(psi_weight_with(PsiShape::Monotone, o, o, r), 1.0);
        assert_eq!(psi_weight_with(PsiShape::Monotone, Vec2::new(4.0, 0.0), o, r), 0.0);
    }

    #[test]
    fn far_sensor_scores_zero() {
        let prior = prior_with(vec![static_target(Vec2::new(100.0, 100.0), 5)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.0, 1.0, 5.0);
        assert_eq!(objective(&[ControlInput::zero(); 5], &s, &prior, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn single_step_at_peak_equals_step_mi() {
        let noise = Sym2::isotropic(0.01);
        let block = Sym2::isotropic(0.5);
        let r = 5.0;
        let prior = prior_with(vec![vec![Vec2::new(r / 2.0, 0.0)]], block, noise);
        let s = SensorState::new(0, Vec2::zero(), 0.0, 0.0, r);
        let v = objective(&[ControlInput::zero()], &s, &prior, &cfg()).unwrap();
        assert_relative_eq!(v, step_mi(&block, &noise), epsilon = 1e-15);
    }

    #[test]
    fn rejects_infeasible_controls() {
        let prior = prior_with(vec![static_target(Vec2::zero(), 2)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.0, 1.0, 5.0);
        let bad = [ControlInput::new(10.0, 0.0), ControlInput::zero()];
        assert!(matches!(objective(&bad, &s, &prior, &cfg()), Err(Error::BoundsViolation(_))));
    }

    #[test]
    fn objective_non_increasing_in_counts() {
        let mut rng = rng::stream(24, &[]);
        let cfg = cfg();
        for _ in 0..100 {
            let h = 4;
            let nominal: Vec<Vec<Vec2<f64>>> = (0..3)
                .map(|_| (0..h).map(|_| Vec2::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0))).collect())
                .collect();
            let prior = prior_with(nominal, random_spd(&mut rng), Sym2::isotropic(0.05));
            let s = SensorState::new(0, Vec2::zero(), rng.random_range(0.0..6.0), rng.random_range(0.0..3.0), 5.0);
            let controls: Vec<_> = (0..h).map(|_| ControlInput::new(rng.random_range(-5.0..5.0), rng.random_range(-0.5..0.5))).collect();
            let mut counts = prior.zero_counts();
            let mut last = objective(&controls, &s, &prior.conditioned(&counts).unwrap(), &cfg).unwrap();
            for _ in 0..10 {
                counts.increment(rng.random_range(0..3), rng.random_range(0..h));
                let v = objective(&controls, &s, &prior.conditioned(&counts).unwrap(), &cfg).unwrap();
                assert!(v <= last + 1e-15);
                last = v;
            }
        }
    }

    #[test]
    fn certain_prior_scores_nothing() {
        let prior = prior_with(vec![static_target(Vec2::new(2.0, 0.0), 5)], Sym2::isotropic(1e-8), Sym2::identity());
        let s = SensorState::new(0, Vec2::zero(), 0.0, 1.0, 5.0);
        let plan = optimize_local(&s, &prior, &cfg(), 1).unwrap();
        assert!(plan.objective < 1e-6);
    }

    #[test]
    fn optimizer_beats_zero_plan_and_random_shooting() {
        let r = 5.0;
        let h = 5;
        let cfg = cfg();
        let prior = prior_with(vec![static_target(Vec2::new(2.0 * r, 0.0), h)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.0, 1.0, r);
        let plan = optimize_local(&s, &prior, &cfg, 5).unwrap();
        let zero = objective(&vec![ControlInput::zero(); h], &s, &prior, &cfg).unwrap();
        assert!(plan.objective >= zero);
        let last = plan.states.last().unwrap().position;
        assert!(psi_weight(last, Vec2::new(2.0 * r, 0.0), r) > 0.0);

        let mut rng = rng::stream(77, &[]);
        let bounds = ControlBox::new(&cfg.limits, h);
        let oracle = (0..10_000)
            .map(|_| objective(&to_controls(&bounds.random(&mut rng)), &s, &prior, &cfg).unwrap())
            .fold(0.0, f64::max);
        assert!(plan.objective >= oracle, "{} < {oracle}", plan.objective);
    }

    #[test]
    fn optimize_local_is_deterministic() {
        let prior = prior_with(vec![static_target(Vec2::new(6.0, 3.0), 5)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.3, 1.0, 5.0);
        assert_eq!(optimize_local(&s, &prior, &cfg(), 9).unwrap(), optimize_local(&s, &prior, &cfg(), 9).unwrap());
    }

    fn chain_network(n: u32) -> Network {
        let edges: Vec<_> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
        Network::new(TreeTopology::from_edges(&(0..n).collect(), 0, &edges, Derivation::StaticConfig).unwrap())
    }

    #[test]
    fn single_sensor_round_sends_nothing() {
        let prior = prior_with(vec![static_target(Vec2::new(4.0, 0.0), 5)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.0, 1.0, 5.0);
        let mut net = chain_network(1);
        let cfg = cfg();
        let plans = sequential_round(&[s], &prior, &[0], &cfg, &mut net, 3).unwrap();
        assert!(net.ledger().is_empty());
        let seed = rng::derive_seed(cfg.seed, &[tag::PLANNER, 3, 0]);
        assert_eq!(plans[&0], optimize_local(&s, &prior, &cfg, seed).unwrap());
    }

    #[test]
    fn order_must_be_permutation() {
        let prior = prior_with(vec![static_target(Vec2::new(4.0, 0.0), 5)], Sym2::identity(), Sym2::isotropic(0.01));
        let sensors = [SensorState::new(0, Vec2::zero(), 0.0, 1.0, 5.0), SensorState::new(1, Vec2::zero(), 0.0, 1.0, 5.0)];
        let mut net = chain_network(2);
        for order in [vec![0], vec![0, 0], vec![0, 2], vec![1, 0, 1]] {
            assert!(matches!(sequential_round(&sensors, &prior, &order, &cfg(), &mut net, 0), Err(Error::Protocol(_))));
        }
    }

    #[test]
    fn count_messages_have_constant_size() {
        let h = 5;
        let nominal: Vec<_> = (0..8).map(|i| static_target(Vec2::new(i as f64, 2.0), h)).collect();
        let prior = prior_with(nominal, Sym2::identity(), Sym2::isotropic(0.01));
        let n = 8u32;
        let sensors: Vec<_> = (0..n).map(|i| SensorState::new(i, Vec2::new(i as f64, 0.0), 0.0, 0.5, 5.0)).collect();
        let mut net = chain_network(n);
        let mut c = cfg();
        c.budget = PlanBudget {
            max_evals: 200,
            random_starts: 8,
            refine_starts: 1,
        };
        let order: Vec<_> = (0..n).collect();
        sequential_round(&sensors, &prior, &order, &c, &mut net, 0).unwrap();
        let sizes: Vec<_> = net.ledger().iter().map(|r| r.payload_bytes).collect();
        assert_eq!(sizes.len(), (n - 1) as usize);
        assert!(sizes.iter().all(|&b| b == wire::detection_counts_size(8, h)));
        assert_eq!(sizes[0], 92);
    }

    /// Two sensors, one static target. The second sensor, told that the
    /// first covers the target over the whole horizon, values shadowing it
    /// less than it would value the same plan without that information.
    #[test]
    fn predecessor_coverage_lowers_marginal_gain() {
        let h = 3;
        let r = 5.0;
        let target = Vec2::new(r / 2.0, 0.0);
        let prior = prior_with(vec![static_target(target, h)], Sym2::identity(), Sym2::isotropic(0.01));
        let cfg = cfg();
        let second = SensorState::new(1, Vec2::zero(), 0.0, 0.0, r);
        let mut covered = prior.zero_counts();
        for tau in 0..h {
            covered.increment(0, tau);
        }
        let told = prior.conditioned(&covered).unwrap();
        let levels = [-5.0, 0.0, 5.0];
        let turns = [-0.5, 0.0, 0.5];
        let mut grid = vec![];
        for &a in &levels {
            for &w in &turns {
                grid.push(vec![ControlInput::new(a, w); h]);
            }
        }
        for plan in &grid {
            let fresh = objective(plan, &second, &prior, &cfg).unwrap();
            let shadow = objective(plan, &second, &told, &cfg).unwrap();
            if fresh > 0.0 {
                assert!(shadow < fresh);
            }
        }
        // and with one unattended step, covering that step scores higher
        let mut partial = prior.zero_counts();
        partial.increment(0, 0);
        partial.increment(0, 1);
        let told = prior.conditioned(&partial).unwrap();
        let stay = vec![ControlInput::zero(); h];
        let per_step = |p: &PlanningPrior<f64>, tau: usize| p.targets()[0].gain[tau];
        assert!(per_step(&told, 2) > per_step(&told, 0));
        assert!(objective(&stay, &second, &told, &cfg).unwrap() < objective(&stay, &second, &prior, &cfg).unwrap());
    }

    #[test]
    fn nested_sensor_sets_do_not_lose_total_gain() {
        let h = 5;
        let nominal: Vec<_> = (0..4).map(|i| static_target(Vec2::new(3.0 * i as f64, 4.0), h)).collect();
        let prior = prior_with(nominal, Sym2::identity(), Sym2::isotropic(0.01));
        let all: Vec<_> = (0..4u32).map(|i| SensorState::new(i, Vec2::new(3.0 * i as f64, 0.0), 1.57, 0.5, 5.0)).collect();
        let mut last = 0.0;
        for n in 1..=4 {
            let mut net = chain_network(n as u32);
            let order: Vec<_> = (0..n as u32).collect();
            let plans = sequential_round(&all[..n], &prior, &order, &cfg(), &mut net, 0).unwrap();
            // each sensor's own objective is its gain conditioned on predecessors
            let mut counts = prior.zero_counts();
            let mut total = 0.0;
            for j in &order {
                let p = &plans[j];
                total += objective(&p.controls, &all[*j as usize], &prior.conditioned(&counts).unwrap(), &cfg()).unwrap();
                counts.record_plan(&prior, &p.states);
            }
            assert!(total >= last - 1e-12);
            last = total;
        }
    }

    #[test]
    fn joint_objective_reduces_to_local_for_one_sensor() {
        let prior = prior_with(vec![static_target(Vec2::new(3.0, 1.0), 4)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.2, 1.0, 5.0);
        let controls = vec![ControlInput::new(1.0, 0.1); 4];
        let states = rollout(&s, &controls, &cfg().limits, 0.5).unwrap();
        assert_relative_eq!(
            joint_objective(&[states], &prior, PsiShape::Bump),
            objective(&controls, &s, &prior, &cfg()).unwrap(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn joint_search_improves_on_warm_start() {
        let h = 4;
        let nominal: Vec<_> = (0..3).map(|i| static_target(Vec2::new(4.0 * i as f64, 3.0), h)).collect();
        let prior = prior_with(nominal, Sym2::identity(), Sym2::isotropic(0.01));
        let sensors: Vec<_> = (0..2u32).map(|i| SensorState::new(i, Vec2::new(4.0 * i as f64, 0.0), 1.0, 0.5, 5.0)).collect();
        let cfg = cfg();
        let warm = vec![vec![ControlInput::zero(); h]; 2];
        let plans = optimize_joint(&sensors, &prior, &cfg, 3, Some(&warm)).unwrap();
        let states: Vec<_> = plans.iter().map(|p| p.states.clone()).collect();
        let warm_states: Vec<_> = sensors.iter().zip(&warm).map(|(s, c)| rollout(s, c, &cfg.limits, cfg.dt).unwrap()).collect();
        assert!(joint_objective(&states, &prior, cfg.psi) >= joint_objective(&warm_states, &prior, cfg.psi));
    }

    #[test]
    fn stationary_limits_yield_zero_plan() {
        let prior = prior_with(vec![static_target(Vec2::new(2.0, 0.0), 3)], Sym2::identity(), Sym2::isotropic(0.01));
        let s = SensorState::new(0, Vec2::zero(), 0.0, 0.0, 5.0);
        let mut c = cfg();
        c.limits = SensorLimits::stationary();
        let plan = optimize_local(&s, &prior, &c, 0).unwrap();
        assert!(plan.controls.iter().all(|u| *u == ControlInput::zero()));
        assert!(plan.states.iter().all(|st| st.position == Vec2::zero()));
    }

    proptest! {
        #[test]
        fn step_mi_nonnegative(a in -2.0..2.0f64, b in -2.0..2.0f64, d in 1e-9..3.0f64, s in 1e-6..2.0f64) {
            let p = Sym2::new(a * a + d, a * b, b * b + d);
            prop_assert!(step_mi(&p, &Sym2::isotropic(s)) >= 0.0);
        }

        #[test]
        fn counts_roundtrip(counts in prop::collection::vec(0u32..1000, 8 * 5), round in any::<u32>()) {
            let targets: Vec<u32> = (0..8).collect();
            let mut t = DetectionCounts::zeros(4, &targets, 5);
            t.counts = counts;
            let bytes = t.encode(round).unwrap();
            prop_assert_eq!(bytes.len(), wire::detection_counts_size(8, 5));
            prop_assert_eq!(DetectionCounts::decode(&bytes, &targets).unwrap(), t);
        }
    }
}
