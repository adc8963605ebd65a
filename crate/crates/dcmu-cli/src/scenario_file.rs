//! TOML scenario files.
//!
//! ```toml
//! [params]
//! rho = 20.0          # m
//! rho0 = 18.0         # m
//! d_beta_min = 1.0    # m
//! d_beta_max = 3.0    # m
//! d_gamma_min = 1.0   # m
//! d_gamma_max = 3.0   # m
//! s = 3.494
//! epsilon = 0.01
//! q = 0.02            # m^2, isotropic motion noise
//! r = 5.0             # m^2, isotropic sensing noise
//! dt = 0.2            # s
//! v_max = 2.0         # m/s
//! duration = 120.0    # s
//! rounds = 200        # consensus rounds per control step
//! k_fb = 0.14         # 1/s
//! p0 = 0.1            # m^2
//!
//! [[obstacle]]
//! cx = 52.0
//! cy = 10.0
//! r = 3.0
//!
//! [[robot]]
//! role = "leader"
//! x = 0.0
//! y = 0.0
//! speed = 1.0
//! waypoints = [[60.0, 0.0], [60.0, 60.0]]
//!
//! [[robot]]
//! role = "follower"
//! x = -10.0
//! y = 0.0
//! ```
//!
//! Optional `[params]` keys: `collision_radius` (0.5 m), `algo`
//! (`"dcmu"`), `estimator` (`"flooding"` or `"power_iteration"`) and the
//! power-iteration gains `k1`, `k2`, `k3`, `k_pi`, `dt_c`.

use std::path::Path;

use dcmu_core::consensus::PowerIterationGains;
use dcmu_core::geometry::{Obstacle, Vec2};
use dcmu_core::robot_model::{NoiseParams, Role};
use dcmu_core::simulator::{
    Algo, EstimatorKind, RobotSpec, Scenario, ScenarioError, SimParams,
};
use dcmu_core::weighted_graph::GraphParams;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Syntax(String),
    #[error("{message} (key `{key}`{})", line.map(|l| format!(", line {l}")).unwrap_or_default())]
    Invalid {
        key: String,
        line: Option<usize>,
        message: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgoName {
    Dcmu,
    Baseline,
}

impl From<AlgoName> for Algo {
    fn from(a: AlgoName) -> Algo {
        match a {
            AlgoName::Dcmu => Algo::Dcmu,
            AlgoName::Baseline => Algo::Baseline,
        }
    }
}

impl From<Algo> for AlgoName {
    fn from(a: Algo) -> AlgoName {
        match a {
            Algo::Dcmu => AlgoName::Dcmu,
            Algo::Baseline => AlgoName::Baseline,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorName {
    Flooding,
    PowerIteration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleName {
    Leader,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub rho: f64,
    pub rho0: f64,
    pub d_beta_min: f64,
    pub d_beta_max: f64,
    pub d_gamma_min: f64,
    pub d_gamma_max: f64,
    pub s: f64,
    pub epsilon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collision_radius: Option<f64>,
    pub q: f64,
    pub r: f64,
    pub dt: f64,
    pub v_max: f64,
    pub duration: f64,
    pub rounds: usize,
    pub k_fb: f64,
    pub p0: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algo: Option<AlgoName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_c: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleEntry {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotEntry {
    pub role: RoleName,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speed: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoints: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub params: ParamsSection,
    #[serde(default, rename = "obstacle")]
    pub obstacles: Vec<ObstacleEntry>,
    #[serde(rename = "robot")]
    pub robots: Vec<RobotEntry>,
}

/// Line of the first `key = ...` assignment in `text`, 1-based.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Line of the `[[robot]]` header for robot `index`.
fn robot_line(text: &str, index: usize) -> Option<usize> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[robot]]")
        .nth(index)
        .map(|(i, _)| i + 1)
}

fn invalid(text: &str, key: &str, message: String) -> ParseError {
    ParseError::Invalid {
        key: key.to_string(),
        line: key_line(text, key),
        message,
    }
}

impl ScenarioFile {
    pub fn from_toml(text: &str) -> Result<Self, ParseError> {
        toml::from_str(text).map_err(|e| ParseError::Syntax(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario file serializes")
    }

    pub fn from_scenario(sc: &Scenario) -> Self {
        let g = &sc.graph;
        let sim = &sc.sim;
        let (estimator, gains) = match sim.estimator {
            EstimatorKind::Flooding => (EstimatorName::Flooding, None),
            EstimatorKind::PowerIteration(g) => (EstimatorName::PowerIteration, Some(g)),
        };
        ScenarioFile {
            params: ParamsSection {
                rho: g.rho,
                rho0: g.rho0,
                d_beta_min: g.d_beta_min,
                d_beta_max: g.d_beta_max,
                d_gamma_min: g.d_gamma_min,
                d_gamma_max: g.d_gamma_max,
                s: g.s,
                epsilon: g.epsilon,
                collision_radius: Some(g.collision_radius),
                q: sc.noise.q[(0, 0)],
                r: sc.noise.r[(0, 0)],
                dt: sim.dt,
                v_max: sim.v_max,
                duration: sim.duration,
                rounds: sim.rounds,
                k_fb: sim.k_fb,
                p0: sim.p0,
                algo: Some(sim.algo.into()),
                estimator: Some(estimator),
                k1: gains.map(|g| g.k1),
                k2: gains.map(|g| g.k2),
                k3: gains.map(|g| g.k3),
                k_pi: gains.map(|g| g.k_pi),
                dt_c: gains.map(|g| g.dt_c),
            },
            obstacles: sc
                .obstacles
                .iter()
                .map(|o| ObstacleEntry {
                    cx: o.center[0],
                    cy: o.center[1],
                    r: o.radius,
                })
                .collect(),
            robots: sc
                .robots
                .iter()
                .map(|r| match r.role {
                    Role::Leader => RobotEntry {
                        role: RoleName::Leader,
                        x: r.position[0],
                        y: r.position[1],
                        speed: Some(r.speed),
                        waypoints: Some(r.waypoints.iter().map(|w| [w[0], w[1]]).collect()),
                    },
                    Role::Follower => RobotEntry {
                        role: RoleName::Follower,
                        x: r.position[0],
                        y: r.position[1],
                        speed: None,
                        waypoints: None,
                    },
                })
                .collect(),
        }
    }

    /// Builds and validates the scenario. `text` is the source document,
    /// used only to point errors at a line.
    pub fn to_scenario(&self, text: &str) -> Result<Scenario, ParseError> {
        let p = &self.params;
        let defaults = PowerIterationGains::default();
        let gains = PowerIterationGains {
            k1: p.k1.unwrap_or(defaults.k1),
            k2: p.k2.unwrap_or(defaults.k2),
            k3: p.k3.unwrap_or(defaults.k3),
            k_pi: p.k_pi.unwrap_or(defaults.k_pi),
            dt_c: p.dt_c.unwrap_or(defaults.dt_c),
        };
        for (key, v) in [("k1", gains.k1), ("k2", gains.k2), ("k3", gains.k3), ("k_pi", gains.k_pi), ("dt_c", gains.dt_c)] {
            if !(v > 0.0) {
                return Err(invalid(text, key, format!("{key} must be > 0")));
            }
        }
        if !(p.q >= 0.0) {
            return Err(invalid(text, "q", "q must be >= 0".into()));
        }
        if !(p.r >= 0.0) {
            return Err(invalid(text, "r", "r must be >= 0".into()));
        }
        let mut robots = Vec::with_capacity(self.robots.len());
        for (i, r) in self.robots.iter().enumerate() {
            let at_robot = |key: &str, message: String| ParseError::Invalid {
                key: key.to_string(),
                line: robot_line(text, i),
                message: format!("robot {i}: {message}"),
            };
            let position = Vec2::new(r.x, r.y);
            let robot = match r.role {
                RoleName::Leader => {
                    let speed = r.speed.ok_or_else(|| at_robot("speed", "leaders need a speed".into()))?;
                    let waypoints = r
                        .waypoints
                        .as_ref()
                        .ok_or_else(|| at_robot("waypoints", "leaders need waypoints".into()))?;
                    RobotSpec {
                        role: Role::Leader,
                        position,
                        estimate: position,
                        waypoints: waypoints.iter().map(|w| Vec2::new(w[0], w[1])).collect(),
                        speed,
                    }
                }
                RoleName::Follower => {
                    if r.speed.is_some() {
                        return Err(at_robot("speed", "followers take no speed".into()));
                    }
                    if r.waypoints.is_some() {
                        return Err(at_robot("waypoints", "followers take no waypoints".into()));
                    }
                    RobotSpec {
                        role: Role::Follower,
                        position,
                        estimate: position,
                        waypoints: Vec::new(),
                        speed: 0.0,
                    }
                }
            };
            robots.push(robot);
        }
        let sc = Scenario {
            graph: GraphParams {
                rho: p.rho,
                rho0: p.rho0,
                d_beta_min: p.d_beta_min,
                d_beta_max: p.d_beta_max,
                d_gamma_min: p.d_gamma_min,
                d_gamma_max: p.d_gamma_max,
                s: p.s,
                epsilon: p.epsilon,
                collision_radius: p.collision_radius.unwrap_or(0.5),
            },
            noise: NoiseParams::isotropic(p.q, p.r),
            sim: SimParams {
                dt: p.dt,
                v_max: p.v_max,
                duration: p.duration,
                rounds: p.rounds,
                k_fb: p.k_fb,
                p0: p.p0,
                algo: p.algo.unwrap_or(AlgoName::Dcmu).into(),
                estimator: match p.estimator.unwrap_or(EstimatorName::Flooding) {
                    EstimatorName::Flooding => EstimatorKind::Flooding,
                    EstimatorName::PowerIteration => EstimatorKind::PowerIteration(gains),
                },
            },
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle::new(o.cx, o.cy, o.r))
                .collect(),
            robots,
        };
        sc.validate().map_err(|e| scenario_error(text, e))?;
        Ok(sc)
    }
}

fn scenario_error(text: &str, e: ScenarioError) -> ParseError {
    let message = e.to_string();
    match &e {
        ScenarioError::Graph(g) => match g.key() {
            Some(k) => invalid(text, k, message),
            None => ParseError::Syntax(message),
        },
        ScenarioError::NoRobots => ParseError::Syntax(message),
        ScenarioError::LeaderWithoutWaypoints(i) | ScenarioError::LeaderSpeed(i) => ParseError::Invalid {
            key: if matches!(e, ScenarioError::LeaderSpeed(_)) { "speed" } else { "waypoints" }.into(),
            line: robot_line(text, *i),
            message,
        },
        ScenarioError::Dt => invalid(text, "dt", message),
        ScenarioError::VMax => invalid(text, "v_max", message),
        ScenarioError::Duration => invalid(text, "duration", message),
        ScenarioError::Rounds => invalid(text, "rounds", message),
        ScenarioError::Noise => invalid(text, "q", message),
        ScenarioError::Gain => invalid(text, "k_fb", message),
        ScenarioError::P0 => invalid(text, "p0", message),
        ScenarioError::ObstacleRadius(_) => invalid(text, "r", message),
    }
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ParseError> {
    ScenarioFile::from_toml(text)?.to_scenario(text)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ParseError> {
    let text = read_text(path)?;
    parse_scenario_str(&text)
}

pub fn read_text(path: &Path) -> Result<String, ParseError> {
    std::fs::read_to_string(path).map_err(|source| ParseError::Io {
        path: path.display().to_string(),
        source,
    })
}
