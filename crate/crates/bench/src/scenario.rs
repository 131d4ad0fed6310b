//! Closed-loop scenario execution.
//!
//! Each step: targets are measured, local (or pooled) GPs ingest the
//! measurements, every sensor predicts every active target over the next
//! `horizon` steps, predictions are fused according to the planner, the
//! errors against ground truth are recorded, and mobile sensors plan and
//! apply their first control.

use std::collections::BTreeMap;

use resin_core::fusion::{prior_entropy, tree_fuse_network, FusedTrajectory, FusionInput, LocalBundles};
use resin_core::gp::{fit_hyperparameters, FitOptions, GpModel, GpPosterior, KernelParams};
use resin_core::network::{build_topology, MessageRecord, Network, TopologyMode};
use resin_core::planner::{
    optimize_joint, optimize_local, planning_order, sequential_round, PlanResult, PlannerConfig, PlanningPrior,
};
use resin_core::rng::{self, tag};
use resin_core::trajectory::TrajectoryGaussian;
use resin_core::world::{
    sense, step_sensor, step_target, ControlInput, SensorLimits, SensorState, TargetState, WorkspaceSpec,
};
use resin_core::{SensorId, Sym2, TargetId, Vec2};
use rand::Rng;

use crate::baselines::{most_informative_goal, nearest_control, random_control};
use crate::config::{Placement, PlannerKind, ScenarioConfig};
use crate::error::Result;
use crate::metrics::{path_error, run_mean, MetricsRow, PairError};

/// Sensor id of pooled models.
const POOLED: SensorId = SensorId::MAX;
/// Stream tag of the joint planner's seed.
const JOINT: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub step: u32,
    pub sensor: SensorId,
    pub target: TargetId,
    /// Predicted positions at `step + 1, …, step + horizon`.
    pub path: Vec<Vec2<f64>>,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ScenarioConfig,
    pub metrics: Vec<MetricsRow>,
    pub ledger: Vec<MessageRecord>,
    /// Target states at steps `0..=steps + horizon`.
    pub targets: Vec<Vec<TargetState<f64>>>,
    /// Sensor states at steps `0..=steps`.
    pub sensors: Vec<Vec<SensorState<f64>>>,
    pub predictions: Vec<Prediction>,
}

impl RunOutput {
    pub fn mean_error(&self) -> f64 {
        run_mean(&self.metrics)
    }
}

/// A GP with its posterior cached by model revision.
struct Tracker {
    model: GpModel<f64>,
    posterior: GpPosterior<f64>,
    revision: u64,
    fitted: bool,
}

impl Tracker {
    fn new(model: GpModel<f64>) -> Result<Self> {
        let posterior = model.posterior()?;
        let revision = model.revision();
        Ok(Self {
            model,
            posterior,
            revision,
            fitted: false,
        })
    }

    fn refit(&mut self, base: &FitOptions<f64>) {
        let opts = FitOptions {
            grid_starts: !self.fitted,
            ..*base
        };
        let report = fit_hyperparameters(&self.model, &opts);
        if report.evaluations > 0 {
            self.model.set_params(report.params);
            self.fitted = true;
        }
    }

    fn refresh(&mut self) -> Result<()> {
        if self.model.revision() != self.revision {
            self.posterior = self.model.posterior()?;
            self.revision = self.model.revision();
        }
        Ok(())
    }

    fn predict(&self, x_k: Vec2<f64>, k: u32, horizon: usize, dt: f64) -> Result<TrajectoryGaussian<f64>> {
        Ok(self.posterior.local_trajectory_pdf(x_k, k, horizon, dt)?)
    }
}

/// Ground-truth target states for steps `0..=last`.
pub fn target_truth(cfg: &ScenarioConfig, last: u32) -> Result<Vec<Vec<TargetState<f64>>>> {
    let ws = WorkspaceSpec::new(cfg.workspace.width, cfg.workspace.height)?;
    let gens = cfg.generators();
    let mut states: Vec<TargetState<f64>> = gens
        .iter()
        .map(|g| TargetState {
            active: false,
            ..g.spawn()
        })
        .collect();
    let mut out = Vec::with_capacity(last as usize + 1);
    for k in 0..=last {
        if k > 0 {
            let t = f64::from(k - 1) * cfg.dt;
            for (g, s) in gens.iter().zip(states.iter_mut()) {
                if k - 1 >= g.entry_step {
                    *s = step_target(g, s, t, cfg.dt, &ws);
                }
            }
        }
        for (g, s) in gens.iter().zip(states.iter_mut()) {
            if k == g.entry_step {
                *s = g.spawn();
            }
        }
        out.push(states.clone());
    }
    Ok(out)
}

/// Initial sensor states: configured poses, or uniform draws from the
/// placement stream of the scenario seed.
pub fn initial_sensors(cfg: &ScenarioConfig) -> Vec<SensorState<f64>> {
    let s = &cfg.sensors;
    let speed = if s.mobile { s.initial_speed } else { 0.0 };
    match &s.placement {
        Placement::Fixed { poses } => poses
            .iter()
            .enumerate()
            .map(|(j, p)| SensorState::new(j as SensorId, Vec2::new(p.x, p.y), p.heading, speed, s.sensing_radius))
            .collect(),
        Placement::Random { margin } => {
            let mut r = rng::stream(cfg.seed, &[tag::PLACEMENT]);
            (0..s.count)
                .map(|j| {
                    let x = margin + r.random::<f64>() * (cfg.workspace.width - 2.0 * margin);
                    let y = margin + r.random::<f64>() * (cfg.workspace.height - 2.0 * margin);
                    let heading = r.random::<f64>() * std::f64::consts::TAU;
                    SensorState::new(j as SensorId, Vec2::new(x, y), heading, speed, s.sensing_radius)
                })
                .collect()
        }
    }
}

fn positions(sensors: &[SensorState<f64>]) -> BTreeMap<SensorId, Vec2<f64>> {
    sensors.iter().map(|s| (s.id, s.position)).collect()
}

/// Runs a scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunOutput> {
    cfg.validate()?;
    Runner::new(cfg)?.run()
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    ws: WorkspaceSpec<f64>,
    limits: SensorLimits<f64>,
    truth: Vec<Vec<TargetState<f64>>>,
    target_ids: Vec<TargetId>,
    local: BTreeMap<(SensorId, TargetId), Tracker>,
    pooled: BTreeMap<TargetId, Tracker>,
    fit: FitOptions<f64>,
    network: Network,
    topology_mode: TopologyMode<f64>,
    planner_cfg: PlannerConfig<f64>,
    noise_cov: Sym2<f64>,
}

/// Per-step predictions: `view[sensor][target]`.
type Views = BTreeMap<SensorId, BTreeMap<TargetId, TrajectoryGaussian<f64>>>;

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let ws = WorkspaceSpec::new(cfg.workspace.width, cfg.workspace.height)?;
        let limits = cfg.limits();
        limits.validate()?;
        let truth = target_truth(cfg, cfg.steps + cfg.horizon as u32)?;
        let target_ids: Vec<TargetId> = cfg.targets.iter().map(|t| t.id).collect();
        let g = &cfg.gp;
        let params = KernelParams::new(g.signal_std, g.length_space, g.length_time, g.assumed_noise(cfg.noise_std))?;
        let mut local = BTreeMap::new();
        let mut pooled = BTreeMap::new();
        for &t in &target_ids {
            if cfg.planner == PlannerKind::Centralized {
                let model = GpModel::new(POOLED, t, params, g.window * cfg.sensors.count);
                pooled.insert(t, Tracker::new(model)?);
            } else {
                for j in 0..cfg.sensors.count as SensorId {
                    local.insert((j, t), Tracker::new(GpModel::new(j, t, params, g.window))?);
                }
            }
        }
        let fit = FitOptions {
            max_points: g.window,
            ..FitOptions::default()
        };
        let topology_mode = cfg.topology_mode();
        let sensors = initial_sensors(cfg);
        let network = Network::new(build_topology(&positions(&sensors), &topology_mode)?);
        let mut planner_cfg = PlannerConfig::new(limits, cfg.dt, cfg.seed);
        planner_cfg.workspace = Some(ws);
        planner_cfg.boundary_penalty = cfg.planning.boundary_penalty;
        planner_cfg.psi = cfg.psi();
        planner_cfg.budget = cfg.budget();
        let noise_cov = Sym2::isotropic((cfg.dt * g.assumed_noise(cfg.noise_std)).powi(2));
        Ok(Self {
            cfg,
            ws,
            limits,
            truth,
            target_ids,
            local,
            pooled,
            fit,
            network,
            topology_mode,
            planner_cfg,
            noise_cov,
        })
    }

    fn run(mut self) -> Result<RunOutput> {
        let cfg = self.cfg;
        let h = cfg.horizon;
        let mut sensors = initial_sensors(cfg);
        let mut sensor_log = vec![sensors.clone()];
        let mut metrics = Vec::new();
        let mut predictions = Vec::new();

        for k in 0..cfg.steps {
            if cfg.sensors.mobile && k > 0 {
                let tree = build_topology(&positions(&sensors), &self.topology_mode)?;
                self.network.set_topology(tree);
            }
            self.learn(k, &sensors)?;
            let active: Vec<TargetState<f64>> = self.truth[k as usize].iter().filter(|t| t.active).copied().collect();
            let views = self.predict(k, &active)?;

            let mut pairs = Vec::new();
            for (&j, view) in &views {
                for (&t, pdf) in view {
                    let i = self.target_index(t);
                    let future: Option<Vec<Vec2<f64>>> = (1..=h)
                        .map(|tau| {
                            let s = &self.truth[k as usize + tau][i];
                            s.active.then_some(s.position)
                        })
                        .collect();
                    if let Some(future) = future {
                        pairs.push(PairError {
                            sensor: j,
                            target: t,
                            error: path_error(pdf.mean(), &future),
                        });
                    }
                    predictions.push(Prediction {
                        step: k,
                        sensor: j,
                        target: t,
                        path: pdf.mean().to_vec(),
                    });
                }
            }
            metrics.extend(MetricsRow::from_pairs(k, pairs));

            if cfg.sensors.mobile {
                let controls = self.plan(k, &sensors, &views)?;
                sensors = sensors
                    .iter()
                    .zip(&controls)
                    .map(|(s, u)| self.actuate(s, u))
                    .collect::<Result<_>>()?;
            }
            sensor_log.push(sensors.clone());
        }

        Ok(RunOutput {
            config: cfg.clone(),
            metrics,
            ledger: self.network.ledger().to_vec(),
            targets: self.truth,
            sensors: sensor_log,
            predictions,
        })
    }

    fn target_index(&self, t: TargetId) -> usize {
        self.target_ids.iter().position(|&x| x == t).expect("configured target")
    }

    /// Sense, ingest, periodically refit, refresh posteriors.
    fn learn(&mut self, k: u32, sensors: &[SensorState<f64>]) -> Result<()> {
        let cfg = self.cfg;
        let targets = &self.truth[k as usize];
        for s in sensors {
            let mut r = rng::stream(cfg.seed, &[tag::MEASUREMENT, u64::from(s.id), u64::from(k)]);
            for m in sense(s, targets, k, cfg.dt, cfg.noise_std, &mut r) {
                let tracker = if cfg.planner == PlannerKind::Centralized {
                    self.pooled.get_mut(&m.target_id)
                } else {
                    self.local.get_mut(&(s.id, m.target_id))
                };
                tracker.expect("tracker per configured target").model.ingest(&m)?;
            }
        }
        let refit = cfg.gp.refit_period > 0 && k > 0 && k % cfg.gp.refit_period == 0;
        for tracker in self.local.values_mut().chain(self.pooled.values_mut()) {
            if refit {
                tracker.refit(&self.fit);
            }
            tracker.refresh()?;
        }
        Ok(())
    }

    /// Each sensor's prediction of every active target after fusion.
    fn predict(&mut self, k: u32, active: &[TargetState<f64>]) -> Result<Views> {
        let cfg = self.cfg;
        let (h, dt) = (cfg.horizon, cfg.dt);
        let ids: Vec<SensorId> = (0..cfg.sensors.count as SensorId).collect();
        if cfg.planner == PlannerKind::Centralized {
            let mut shared = BTreeMap::new();
            for t in active {
                shared.insert(t.id, self.pooled[&t.id].predict(t.position, k, h, dt)?);
            }
            return Ok(ids.iter().map(|&j| (j, shared.clone())).collect());
        }
        let mut locals: LocalBundles<f64> = BTreeMap::new();
        for &j in &ids {
            let mut bundle = BTreeMap::new();
            for t in active {
                let tracker = &self.local[&(j, t.id)];
                let pdf = tracker.predict(t.position, k, h, dt)?;
                bundle.insert(
                    t.id,
                    FusionInput {
                        local: FusedTrajectory::local(j, pdf),
                        prior_entropy: prior_entropy(tracker.model.params(), h, dt),
                    },
                );
            }
            locals.insert(j, bundle);
        }
        if cfg.planner == PlannerKind::NoFusion || active.is_empty() {
            return Ok(locals
                .into_iter()
                .map(|(j, b)| (j, b.into_iter().map(|(t, f)| (t, f.local.pdf)).collect()))
                .collect());
        }
        let held = tree_fuse_network(&locals, &mut self.network, k, k, cfg.fusion_options())?;
        Ok(held
            .into_iter()
            .map(|(j, b)| (j, b.into_iter().map(|(t, f)| (t, f.pdf)).collect()))
            .collect())
    }

    /// First control of each sensor's plan, in sensor order.
    fn plan(&mut self, k: u32, sensors: &[SensorState<f64>], views: &Views) -> Result<Vec<ControlInput<f64>>> {
        let cfg = self.cfg;
        let first = |p: &PlanResult<f64>| p.controls.first().copied().unwrap_or_default();
        // (plan, prior it was scored against) per sensor, for the MI planners
        let scored: Vec<(PlanResult<f64>, PlanningPrior<f64>)> = match cfg.planner {
            PlannerKind::Resin => {
                let prior = self.shared_prior(k, views)?;
                let order = planning_order(cfg.order(), self.network.topology());
                let mut plans = sequential_round(sensors, &prior, &order, &self.planner_cfg, &mut self.network, k)?;
                sensors
                    .iter()
                    .map(|s| (plans.remove(&s.id).expect("plan per sensor"), prior.clone()))
                    .collect()
            }
            PlannerKind::Centralized => {
                let prior = self.shared_prior(k, views)?;
                let order = planning_order(cfg.order(), self.network.topology());
                let mut scratch = Network::new(self.network.topology().clone());
                let warm = sequential_round(sensors, &prior, &order, &self.planner_cfg, &mut scratch, k)?;
                let warm: Vec<Vec<ControlInput<f64>>> = sensors.iter().map(|s| warm[&s.id].controls.clone()).collect();
                let seed = rng::derive_seed(cfg.seed, &[tag::PLANNER, u64::from(k), JOINT]);
                optimize_joint(sensors, &prior, &self.planner_cfg, seed, Some(&warm))?
                    .into_iter()
                    .map(|p| (p, prior.clone()))
                    .collect()
            }
            PlannerKind::NoFusion => sensors
                .iter()
                .map(|s| {
                    let prior = PlanningPrior::new(k, &views[&s.id], self.noise_cov, cfg.horizon)?;
                    let seed = rng::derive_seed(cfg.seed, &[tag::PLANNER, u64::from(k), u64::from(s.id)]);
                    Ok((optimize_local(s, &prior, &self.planner_cfg, seed)?, prior))
                })
                .collect::<Result<_>>()?,
            PlannerKind::Nearest => {
                return Ok(sensors
                    .iter()
                    .map(|s| {
                        let estimates: Vec<Vec2<f64>> = views[&s.id].values().map(|pdf| pdf.mean()[0]).collect();
                        self.pursue(s, &estimates)
                    })
                    .collect())
            }
            PlannerKind::Random => {
                return Ok(sensors
                    .iter()
                    .map(|s| {
                        let mut r = rng::stream(cfg.seed, &[tag::RANDOM_PLANNER, u64::from(k), u64::from(s.id)]);
                        random_control(&self.limits, &mut r)
                    })
                    .collect())
            }
        };
        Ok(sensors
            .iter()
            .zip(&scored)
            .map(|(s, (plan, prior))| {
                if cfg.planning.reposition && plan.objective <= 0.0 {
                    let goal: Vec<Vec2<f64>> = most_informative_goal(s, prior).into_iter().collect();
                    if !goal.is_empty() {
                        return self.pursue(s, &goal);
                    }
                }
                first(plan)
            })
            .collect())
    }

    fn pursue(&self, s: &SensorState<f64>, goals: &[Vec2<f64>]) -> ControlInput<f64> {
        nearest_control(s, goals, &self.limits, self.cfg.dt, self.cfg.planning.pursuit_gain)
    }

    /// Planning prior from the prediction every sensor shares after fusion.
    fn shared_prior(&self, k: u32, views: &Views) -> Result<PlanningPrior<f64>> {
        let root = self.network.topology().root();
        Ok(PlanningPrior::new(k, &views[&root], self.noise_cov, self.cfg.horizon)?)
    }

    /// Applies one control; a sensor pushed outside the workspace is held
    /// at the boundary and stopped.
    fn actuate(&self, s: &SensorState<f64>, u: &ControlInput<f64>) -> Result<SensorState<f64>> {
        let mut next = step_sensor(s, u, &self.limits, self.cfg.dt)?;
        if !self.ws.contains(next.position) {
            next.position = self.ws.clamp(next.position);
            next.speed = self.limits.clamp_speed(0.0);
        }
        Ok(next)
    }
}
