use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKind {
    #[default]
    Static,
    Moving,
}

/// A circular obstacle. Moving obstacles travel at constant velocity from
/// `(x, y)` at slot 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    #[serde(default)]
    pub kind: ObstacleKind,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    #[serde(default)]
    pub heading: f64,
    #[serde(default)]
    pub speed: f64,
}

impl Obstacle {
    pub fn fixed(x: f64, y: f64, radius: f64) -> Self {
        Self { kind: ObstacleKind::Static, x, y, radius, heading: 0.0, speed: 0.0 }
    }

    pub fn moving(x: f64, y: f64, heading: f64, speed: f64, radius: f64) -> Self {
        Self { kind: ObstacleKind::Moving, x, y, radius, heading, speed }
    }

    /// Centre at slot `k`.
    pub fn position_at(&self, k: usize, dt: f64) -> [f64; 2] {
        match self.kind {
            ObstacleKind::Static => [self.x, self.y],
            ObstacleKind::Moving => {
                let travelled = self.speed * k as f64 * dt;
                [self.x + travelled * self.heading.cos(), self.y + travelled * self.heading.sin()]
            }
        }
    }

    pub fn validate(&self, field: &str) -> Result<(), ConfigError> {
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(ConfigError::new(format!("{field}.radius"), format!("must be positive, got {}", self.radius)));
        }
        if !(self.speed >= 0.0) || !self.speed.is_finite() {
            return Err(ConfigError::new(format!("{field}.speed"), format!("must be non-negative, got {}", self.speed)));
        }
        if !(self.x.is_finite() && self.y.is_finite() && self.heading.is_finite()) {
            return Err(ConfigError::new(field.to_string(), "position and heading must be finite"));
        }
        Ok(())
    }
}

/// Obstacle centres over a prediction window: `positions[i][j]` is obstacle
/// `j` at step `i` of the window.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ObstacleForecast {
    pub radii: Vec<f64>,
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl ObstacleForecast {
    pub fn obstacle_count(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }
}

/// Constant-velocity forecast of every obstacle for steps `k..=k + horizon`.
pub fn predict_obstacles(obstacles: &[Obstacle], k: usize, horizon: usize, dt: f64) -> ObstacleForecast {
    ObstacleForecast {
        radii: obstacles.iter().map(|o| o.radius).collect(),
        positions: (0..=horizon).map(|i| obstacles.iter().map(|o| o.position_at(k + i, dt)).collect()).collect(),
    }
}
