//! Scenario configuration: a TOML document tagged `format = "resin-scenario/1"`.

use std::path::Path;

use resin_core::fusion::{FusionOptions, WeightSearch};
use resin_core::network::TopologyMode;
use resin_core::planner::{PlanBudget, PlanningOrder, PsiShape};
use resin_core::world::{Pattern, SensorLimits, TrajectoryGenerator};
use resin_core::{rng, Vec2};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

pub const FORMAT_TAG: &str = "resin-scenario/1";

pub const STATIONARY_PRESET: &str = include_str!("../configs/stationary.toml");
pub const MOBILE_PRESET: &str = include_str!("../configs/mobile.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlannerKind {
    /// Local GPs, tree fusion, sequential planning.
    Resin,
    /// One pooled GP per target and joint planning.
    Centralized,
    /// Local GPs, no communication.
    NoFusion,
    /// Pursue the closest predicted target.
    Nearest,
    /// Uniformly random controls.
    Random,
}

impl PlannerKind {
    pub const ALL: [PlannerKind; 5] = [
        PlannerKind::Resin,
        PlannerKind::Centralized,
        PlannerKind::NoFusion,
        PlannerKind::Nearest,
        PlannerKind::Random,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            PlannerKind::Resin => "resin",
            PlannerKind::Centralized => "centralized",
            PlannerKind::NoFusion => "no-fusion",
            PlannerKind::Nearest => "nearest",
            PlannerKind::Random => "random",
        }
    }
}

impl std::fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub format: String,
    pub name: String,
    pub seed: u64,
    /// Seconds per step.
    pub dt: f64,
    pub steps: u32,
    pub horizon: usize,
    /// Velocity measurement noise standard deviation, m/s.
    pub noise_std: f64,
    pub planner: PlannerKind,
    pub workspace: WorkspaceConfig,
    pub sensors: SensorsConfig,
    pub gp: GpConfig,
    pub topology: TopologyConfig,
    pub planning: PlanningConfig,
    pub targets: Vec<TargetConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceConfig {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorsConfig {
    pub count: usize,
    pub sensing_radius: f64,
    pub mobile: bool,
    pub initial_speed: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub accel_min: f64,
    pub accel_max: f64,
    pub turn_min: f64,
    pub turn_max: f64,
    pub placement: Placement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Placement {
    /// Uniform over the workspace shrunk by `margin`, from the scenario seed.
    Random { margin: f64 },
    Fixed { poses: Vec<Pose> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpConfig {
    pub window: usize,
    /// Steps between hyperparameter refits; 0 disables fitting.
    pub refit_period: u32,
    pub signal_std: f64,
    pub length_space: f64,
    pub length_time: f64,
    /// Noise level the GP assumes; defaults to the measurement noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

impl GpConfig {
    pub fn assumed_noise(&self, measurement_noise: f64) -> f64 {
        self.noise_std.unwrap_or(measurement_noise)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologyConfig {
    Mst {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        comm_radius: Option<f64>,
    },
    Static { root: u32, edges: Vec<[u32; 2]> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PsiConfig {
    Bump,
    Monotone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderConfig {
    Ascending,
    DepthFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightSearchConfig {
    BetaScaled,
    Unscaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningConfig {
    pub max_evals: usize,
    pub random_starts: usize,
    pub refine_starts: usize,
    pub psi: PsiConfig,
    pub order: OrderConfig,
    pub weight_search: WeightSearchConfig,
    /// Objective penalty per metre a planned position lies outside.
    pub boundary_penalty: f64,
    /// Proportional heading gain of the pursuit controller, 1/s.
    pub pursuit_gain: f64,
    /// Information planners steer toward the most informative target when
    /// no plan yields any gain.
    pub reposition: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    pub id: u32,
    pub entry: u32,
    pub exit: u32,
    pub pattern: PatternConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PatternConfig {
    Circle {
        center: [f64; 2],
        radius: f64,
        rate: f64,
        phase: f64,
    },
    FigureEight {
        center: [f64; 2],
        amp_x: f64,
        amp_y: f64,
        rate: f64,
        phase: f64,
    },
    SineLane {
        start: [f64; 2],
        heading: f64,
        speed: f64,
        amplitude: f64,
        wavelength: f64,
    },
    StraightBounce {
        center: [f64; 2],
        heading: f64,
        half_length: f64,
        rate: f64,
        phase: f64,
    },
    Spiral {
        center: [f64; 2],
        r_min: f64,
        r_max: f64,
        rate: f64,
        radial_rate: f64,
        phase: f64,
    },
    /// Waypoints drawn in `[lo, hi]` from `waypoint_seed`, independent of the
    /// scenario seed so ground truth is fixed by the config.
    RandomWaypoint {
        lo: [f64; 2],
        hi: [f64; 2],
        count: usize,
        segment_duration: f64,
        waypoint_seed: u64,
    },
}

fn v2(a: [f64; 2]) -> Vec2<f64> {
    Vec2::new(a[0], a[1])
}

impl PatternConfig {
    pub fn build(&self) -> Pattern<f64> {
        match *self {
            PatternConfig::Circle {
                center,
                radius,
                rate,
                phase,
            } => Pattern::Circle {
                center: v2(center),
                radius,
                rate,
                phase,
            },
            PatternConfig::FigureEight {
                center,
                amp_x,
                amp_y,
                rate,
                phase,
            } => Pattern::FigureEight {
                center: v2(center),
                amp_x,
                amp_y,
                rate,
                phase,
            },
            PatternConfig::SineLane {
                start,
                heading,
                speed,
                amplitude,
                wavelength,
            } => Pattern::SineLane {
                start: v2(start),
                heading,
                speed,
                amplitude,
                wavelength,
            },
            PatternConfig::StraightBounce {
                center,
                heading,
                half_length,
                rate,
                phase,
            } => Pattern::StraightBounce {
                center: v2(center),
                heading,
                half_length,
                rate,
                phase,
            },
            PatternConfig::Spiral {
                center,
                r_min,
                r_max,
                rate,
                radial_rate,
                phase,
            } => Pattern::Spiral {
                center: v2(center),
                r_min,
                r_max,
                rate,
                radial_rate,
                phase,
            },
            PatternConfig::RandomWaypoint {
                lo,
                hi,
                count,
                segment_duration,
                waypoint_seed,
            } => {
                let mut r = rng::stream(waypoint_seed, &[rng::tag::WAYPOINTS]);
                Pattern::random_waypoint(&mut r, v2(lo), v2(hi), count, segment_duration)
            }
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(msg) => BenchError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// A shipped scenario by name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "stationary" => Self::from_toml(STATIONARY_PRESET),
            "mobile" => Self::from_toml(MOBILE_PRESET),
            other => Err(BenchError::Config(format!("unknown preset `{other}` (expected stationary or mobile)"))),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        let mut need = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        need(self.format == FORMAT_TAG, &format!("format must be \"{FORMAT_TAG}\", got \"{}\"", self.format));
        need(self.dt > 0.0, "dt must be positive");
        need(self.steps > 0, "steps must be positive");
        need(self.horizon >= 1 && self.horizon <= u16::MAX as usize, "horizon must be in 1..=65535");
        need(self.noise_std >= 0.0, "noise_std must be non-negative");
        need(self.workspace.width > 0.0, "workspace.width must be positive");
        need(self.workspace.height > 0.0, "workspace.height must be positive");
        let s = &self.sensors;
        need(s.count >= 1, "sensors.count must be at least 1");
        need(s.count <= 64, "sensors.count must be at most 64");
        need(s.sensing_radius > 0.0, "sensors.sensing_radius must be positive");
        need(s.speed_min >= 0.0 && s.speed_min <= s.speed_max, "sensors.speed_min must lie in [0, speed_max]");
        need(s.accel_min <= s.accel_max, "sensors.accel_min must not exceed accel_max");
        need(s.turn_min <= s.turn_max, "sensors.turn_min must not exceed turn_max");
        need(
            s.initial_speed >= s.speed_min && s.initial_speed <= s.speed_max,
            "sensors.initial_speed must lie in [speed_min, speed_max]",
        );
        match &s.placement {
            Placement::Random { margin } => need(
                *margin >= 0.0 && 2.0 * margin < self.workspace.width.min(self.workspace.height),
                "sensors.placement.margin must be non-negative and leave room inside the workspace",
            ),
            Placement::Fixed { poses } => need(poses.len() == s.count, "sensors.placement.poses must list one pose per sensor"),
        }
        let g = &self.gp;
        need(g.window >= 1, "gp.window must be at least 1");
        need(g.signal_std > 0.0, "gp.signal_std must be positive");
        need(g.length_space > 0.0, "gp.length_space must be positive");
        need(g.length_time > 0.0, "gp.length_time must be positive");
        need(
            g.assumed_noise(self.noise_std) > 0.0,
            "gp.noise_std must be positive (set it when noise_std is 0)",
        );
        if let TopologyConfig::Mst { comm_radius: Some(r) } = self.topology {
            need(r > 0.0, "topology.comm_radius must be positive");
        }
        let p = &self.planning;
        need(p.max_evals >= 1, "planning.max_evals must be at least 1");
        need(p.boundary_penalty >= 0.0, "planning.boundary_penalty must be non-negative");
        need(p.pursuit_gain > 0.0, "planning.pursuit_gain must be positive");
        let mut ids: Vec<_> = self.targets.iter().map(|t| t.id).collect();
        ids.sort_unstable();
        ids.dedup();
        need(ids.len() == self.targets.len(), "targets ids must be unique");
        for (i, t) in self.targets.iter().enumerate() {
            if t.entry >= t.exit {
                errs.push(format!("targets[{i}].entry must be before exit"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(BenchError::Config(errs.join("; ")))
        }
    }

    pub fn limits(&self) -> SensorLimits<f64> {
        if !self.sensors.mobile {
            return SensorLimits::stationary();
        }
        let s = &self.sensors;
        SensorLimits {
            speed_min: s.speed_min,
            speed_max: s.speed_max,
            accel_min: s.accel_min,
            accel_max: s.accel_max,
            turn_min: s.turn_min,
            turn_max: s.turn_max,
        }
    }

    pub fn generators(&self) -> Vec<TrajectoryGenerator<f64>> {
        self.targets
            .iter()
            .map(|t| TrajectoryGenerator::new(t.id, t.pattern.build(), t.entry, t.exit))
            .collect()
    }

    pub fn topology_mode(&self) -> TopologyMode<f64> {
        match &self.topology {
            TopologyConfig::Mst { comm_radius } => TopologyMode::ProximityMst { comm_radius: *comm_radius },
            TopologyConfig::Static { root, edges } => TopologyMode::Static {
                root: *root,
                edges: edges.iter().map(|e| (e[0], e[1])).collect(),
            },
        }
    }

    pub fn fusion_options(&self) -> FusionOptions {
        FusionOptions {
            weight_search: match self.planning.weight_search {
                WeightSearchConfig::BetaScaled => WeightSearch::BetaScaled,
                WeightSearchConfig::Unscaled => WeightSearch::Unscaled,
            },
        }
    }

    pub fn psi(&self) -> PsiShape {
        match self.planning.psi {
            PsiConfig::Bump => PsiShape::Bump,
            PsiConfig::Monotone => PsiShape::Monotone,
        }
    }

    pub fn order(&self) -> PlanningOrder {
        match self.planning.order {
            OrderConfig::Ascending => PlanningOrder::AscendingId,
            OrderConfig::DepthFirst => PlanningOrder::TreeDepthFirst,
        }
    }

    pub fn budget(&self) -> PlanBudget {
        PlanBudget {
            max_evals: self.planning.max_evals,
            random_starts: self.planning.random_starts,
            refine_starts: self.planning.refine_starts,
        }
    }
}
