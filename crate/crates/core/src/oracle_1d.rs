//! Closed-form answers for the scalar plant `dx/dt = a x + a u + d` and its
//! sine counterpart `dx/dt = sin(a x) + a u + d`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lti::LtiSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Linear,
    NonlinearSin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScalarPlantJson", into = "ScalarPlantJson")]
pub struct ScalarPlant {
    a: f64,
    kind: PlantKind,
}

#[derive(Serialize, Deserialize)]
struct ScalarPlantJson {
    a: f64,
    #[serde(default = "linear")]
    kind: PlantKind,
}

fn linear() -> PlantKind {
    PlantKind::Linear
}

impl TryFrom<ScalarPlantJson> for ScalarPlant {
    type Error = Error;

    fn try_from(j: ScalarPlantJson) -> Result<Self> {
        Self::new(j.a, j.kind)
    }
}

impl From<ScalarPlant> for ScalarPlantJson {
    fn from(p: ScalarPlant) -> Self {
        Self { a: p.a, kind: p.kind }
    }
}

impl ScalarPlant {
    pub fn new(a: f64, kind: PlantKind) -> Result<Self> {
        if a == 0.0 || !a.is_finite() {
            return Err(Error::InvalidArgument(format!("scalar plant needs a finite a != 0, got {a}")));
        }
        Ok(Self { a, kind })
    }

    pub fn linear(a: f64) -> Result<Self> {
        Self::new(a, PlantKind::Linear)
    }

    pub fn nonlinear_sin(a: f64) -> Result<Self> {
        Self::new(a, PlantKind::NonlinearSin)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn kind(&self) -> PlantKind {
        self.kind
    }

    pub fn is_stable(&self) -> bool {
        self.a < 0.0
    }

    /// The linear model `(a, a)` the controller is designed for.
    pub fn linear_model(&self) -> LtiSystem {
        LtiSystem::scalar(self.a, self.a).expect("a is finite")
    }

    /// Right-hand side of the true plant.
    pub fn rhs(&self, x: f64, u: f64, d: f64) -> f64 {
        match self.kind {
            PlantKind::Linear => self.a * x + self.a * u + d,
            PlantKind::NonlinearSin => sin_plant_rhs(self.a, x, u) + d,
        }
    }
}

/// Minimum time to the origin for the linear model. Stable plants reach the
/// origin from anywhere; unstable ones only from `|x| < 1`.
pub fn min_time_1d(plant: &ScalarPlant, x: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    let a = plant.a;
    if a < 0.0 {
        Ok((1.0 + x.abs()).ln() / a.abs())
    } else if x.abs() < 1.0 {
        Ok(-(1.0 - x.abs()).ln() / a)
    } else {
        Err(Error::Unreachable { t_max: f64::INFINITY })
    }
}

/// Constant control value on `[start, end)`, times relative to the sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub start: f64,
    pub end: f64,
    pub value: f64,
}

/// Two-segment bang-off-bang control on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalarControl {
    pub tau: f64,
    pub horizon: f64,
    pub segments: Vec<Segment>,
}

impl ScalarControl {
    pub fn value_at(&self, t: f64) -> f64 {
        self.segments
            .iter()
            .find(|s| t >= s.start && t < s.end)
            .or(self.segments.last())
            .map_or(0.0, |s| s.value)
    }

    /// Total length on which the control is nonzero.
    pub fn active_length(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.value != 0.0)
            .map(|s| s.end - s.start)
            .sum()
    }
}

/// Maximum hands-off control steering `x` to the origin in `horizon`.
///
/// The input map of the linear model is `a`, so the driving value is
/// `-sgn(a x)`: for a stable plant the control idles until `tau` and then
/// pushes; for an unstable plant it pushes until `tau = T*(x)` and then idles.
pub fn handsoff_control_1d(plant: &ScalarPlant, x: f64, horizon: f64) -> Result<ScalarControl> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be positive, got {horizon}")));
    }
    let t_star = min_time_1d(plant, x)?;
    if horizon < t_star * (1.0 - 1e-12) {
        return Err(Error::HorizonTooShort {
            horizon,
            min_time: t_star,
        });
    }
    let a = plant.a;
    let value = -(a * x).signum();
    if x == 0.0 {
        return Ok(ScalarControl {
            tau: horizon,
            horizon,
            segments: vec![Segment {
                start: 0.0,
                end: horizon,
                value: 0.0,
            }],
        });
    }
    let (tau, first, second) = if a < 0.0 {
        let k = a.abs();
        let tau = ((k * horizon).exp() - x.abs()).ln() / k;
        (tau.clamp(0.0, horizon), 0.0, value)
    } else {
        (t_star.min(horizon), value, 0.0)
    };
    let segments = [(0.0, tau, first), (tau, horizon, second)]
        .into_iter()
        .filter(|(s, e, _)| e > s)
        .map(|(start, end, value)| Segment { start, end, value })
        .collect();
    Ok(ScalarControl { tau, horizon, segments })
}

/// Exact flow of `dx/dt = a x + a u + d` over `t` with `u` and `d` held.
pub fn linear_flow(a: f64, x: f64, u: f64, d: f64, t: f64) -> f64 {
    let e = (a * t).exp();
    e * x + (e - 1.0) / a * (a * u + d)
}

pub fn sin_plant_rhs(a: f64, x: f64, u: f64) -> f64 {
    (a * x).sin() + a * u
}

/// Gap `sin(a x) - a x` between the sine plant and its linearization.
pub fn linearization_error(a: f64, x: f64) -> f64 {
    (a * x).sin() - a * x
}
