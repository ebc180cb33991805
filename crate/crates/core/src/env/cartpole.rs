//! Cart-pole on a bounded frictionless track with an optional obstacle
//! hanging above it. Classic nonlinear dynamics (uniform rod on a cart),
//! integrated with semi-implicit Euler over a few substeps per control
//! interval.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use libm::{cos, sin, sqrt};
use rand::Rng;

use super::{ActionSpace, EnvError, Environment, FeatureMap};

/// `(x, ẋ, θ, θ̇)`; θ is measured from the upright, positive leaning
/// towards `+x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn new(x: f64, x_dot: f64, theta: f64, theta_dot: f64) -> Self {
        CartPoleState {
            x,
            x_dot,
            theta,
            theta_dot,
        }
    }

    pub fn to_vec(self) -> Vec<f64> {
        vec![self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        CartPoleState::new(s[0], s[1], s[2], s[3])
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.x_dot.is_finite()
            && self.theta.is_finite()
            && self.theta_dot.is_finite()
    }

    pub fn mirrored(self) -> Self {
        CartPoleState::new(-self.x, -self.x_dot, -self.theta, -self.theta_dot)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physics {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub gravity: f64,
    pub force_limit: f64,
    pub dt: f64,
    /// Semi-implicit Euler substeps per `dt`.
    pub substeps: usize,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            gravity: 9.8,
            force_limit: 10.0,
            dt: 0.02,
            substeps: 10,
        }
    }
}

/// Axis-aligned rectangle `[x_lo, x_hi] × [y_lo, y_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Obstacle {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Obstacle {
    /// Euclidean distance from a point, 0 inside or on the boundary.
    pub fn distance(&self, px: f64, py: f64) -> f64 {
        let dx = (self.x_lo - px).max(0.0).max(px - self.x_hi);
        let dy = (self.y_lo - py).max(0.0).max(py - self.y_hi);
        sqrt(dx * dx + dy * dy)
    }
}

/// Reported obstacle distance in a world without an obstacle.
pub const NO_OBSTACLE_DISTANCE: f64 = 1e3;

#[derive(Debug, Clone, PartialEq)]
pub struct CartPoleWorld {
    pub theta_max: f64,
    pub theta_comf: f64,
    pub x_lim: f64,
    pub goal: f64,
    pub goal_tolerance: f64,
    pub obstacle: Option<Obstacle>,
    pub physics: Physics,
    /// Initial cart position; every state variable is perturbed uniformly
    /// by up to `init_noise`.
    pub start_x: f64,
    pub init_noise: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WorldError {
    #[error("goal {goal} outside the track limit {x_lim}")]
    GoalOutsideTrack { goal: f64, x_lim: f64 },
    #[error("obstacle must be a non-empty rectangle above the track")]
    BadObstacle,
    #[error("physical constants must be positive and finite")]
    BadPhysics,
}

impl CartPoleWorld {
    /// The lean-under scenario: an obstacle between start and goal that an
    /// upright pole cannot pass.
    pub fn obstacle_default() -> Self {
        CartPoleWorld {
            theta_max: 0.33,
            theta_comf: 0.1,
            x_lim: 2.4,
            goal: 1.5,
            goal_tolerance: 0.1,
            obstacle: Some(Obstacle {
                x_lo: 0.4,
                x_hi: 0.8,
                y_lo: 0.97,
                y_hi: 1.20,
            }),
            physics: Physics::default(),
            start_x: 0.0,
            init_noise: 0.05,
        }
    }

    /// Balance near the goal with no obstacle.
    pub fn balance_default() -> Self {
        CartPoleWorld {
            theta_max: 0.2,
            theta_comf: 0.05,
            x_lim: 2.4,
            goal: 0.0,
            goal_tolerance: 0.5,
            obstacle: None,
            physics: Physics::default(),
            start_x: 0.0,
            init_noise: 0.05,
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        if !(self.goal.abs() < self.x_lim) {
            return Err(WorldError::GoalOutsideTrack {
                goal: self.goal,
                x_lim: self.x_lim,
            });
        }
        if let Some(o) = self.obstacle {
            if !(o.x_lo < o.x_hi && o.y_lo < o.y_hi && o.y_lo > 0.0) {
                return Err(WorldError::BadObstacle);
            }
        }
        let p = &self.physics;
        let positive = [
            p.cart_mass,
            p.pole_mass,
            p.half_length,
            p.gravity,
            p.force_limit,
            p.dt,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || p.substeps == 0 {
            return Err(WorldError::BadPhysics);
        }
        Ok(())
    }

    /// One `dt` of dynamics. The force is clamped to the force limit and
    /// held over the substeps.
    pub fn step(&self, s: &CartPoleState, force: f64) -> Result<CartPoleState, EnvError> {
        let p = &self.physics;
        let force = force.clamp(-p.force_limit, p.force_limit);
        let h = p.dt / p.substeps as f64;
        let mut next = *s;
        for _ in 0..p.substeps {
            next = self.substep(&next, force, h);
        }
        if next.is_finite() {
            Ok(next)
        } else {
            Err(EnvError::NonFiniteState)
        }
    }

    fn substep(&self, s: &CartPoleState, force: f64, h: f64) -> CartPoleState {
        let p = &self.physics;
        let total = p.cart_mass + p.pole_mass;
        let pml = p.pole_mass * p.half_length;
        let (sin_t, cos_t) = (sin(s.theta), cos(s.theta));
        let temp = (force + pml * s.theta_dot * s.theta_dot * sin_t) / total;
        let theta_acc = (p.gravity * sin_t - cos_t * temp)
            / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total));
        let x_acc = temp - pml * theta_acc * cos_t / total;
        let x_dot = s.x_dot + h * x_acc;
        let theta_dot = s.theta_dot + h * theta_acc;
        CartPoleState::new(s.x + h * x_dot, x_dot, s.theta + h * theta_dot, theta_dot)
    }

    /// Position of the pole tip.
    pub fn tip(&self, s: &CartPoleState) -> (f64, f64) {
        let len = 2.0 * self.physics.half_length;
        (s.x + len * sin(s.theta), len * cos(s.theta))
    }

    /// `(|x - G|, distance from the pole tip to the obstacle)`.
    pub fn distances(&self, s: &CartPoleState) -> (f64, f64) {
        let d_goal = (s.x - self.goal).abs();
        let d_obstacle = match &self.obstacle {
            Some(o) => {
                let (px, py) = self.tip(s);
                o.distance(px, py)
            }
            None => NO_OBSTACLE_DISTANCE,
        };
        (d_goal, d_obstacle)
    }

    /// Total mechanical energy (kinetic plus potential of the rod).
    pub fn energy(&self, s: &CartPoleState) -> f64 {
        let p = &self.physics;
        let (m, l) = (p.pole_mass, p.half_length);
        0.5 * (p.cart_mass + m) * s.x_dot * s.x_dot
            + m * l * s.x_dot * s.theta_dot * cos(s.theta)
            + 0.5 * (4.0 / 3.0) * m * l * l * s.theta_dot * s.theta_dot
            + m * p.gravity * l * cos(s.theta)
    }
}

pub const CARTPOLE_FEATURES: [&str; 6] = [
    "x",
    "x_dot",
    "theta",
    "theta_dot",
    "dist_goal",
    "dist_obstacle",
];

/// Environment wrapper. Actions are one-dimensional, scaled so that
/// `±1` maps to the force limit.
#[derive(Debug, Clone)]
pub struct CartPoleEnv {
    pub world: CartPoleWorld,
    state: CartPoleState,
}

impl CartPoleEnv {
    pub fn new(world: CartPoleWorld) -> Result<Self, WorldError> {
        world.validate()?;
        let state = CartPoleState::new(world.start_x, 0.0, 0.0, 0.0);
        Ok(CartPoleEnv { world, state })
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn set_state(&mut self, s: CartPoleState) {
        self.state = s;
    }
}

impl FeatureMap for CartPoleEnv {
    fn feature_names(&self) -> Vec<String> {
        CARTPOLE_FEATURES.iter().map(|s| String::from(*s)).collect()
    }

    fn features(&self, obs: &[f64]) -> Vec<f64> {
        let s = CartPoleState::from_slice(obs);
        let (d_goal, d_obstacle) = self.world.distances(&s);
        vec![s.x, s.x_dot, s.theta, s.theta_dot, d_goal, d_obstacle]
    }
}

impl Environment for CartPoleEnv {
    fn observation_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous { dim: 1 }
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        let n = self.world.init_noise;
        let mut u = || {
            if n > 0.0 {
                rng.random_range(-n..=n)
            } else {
                0.0
            }
        };
        self.state = CartPoleState::new(self.world.start_x + u(), u(), u(), u());
        self.state.to_vec()
    }

    fn step<R: Rng + ?Sized>(
        &mut self,
        action: &[f64],
        _rng: &mut R,
    ) -> Result<Vec<f64>, EnvError> {
        let a = *action.first().ok_or(EnvError::InvalidAction)?;
        if !a.is_finite() {
            return Err(EnvError::InvalidAction);
        }
        let force = a.clamp(-1.0, 1.0) * self.world.physics.force_limit;
        self.state = self.world.step(&self.state, force)?;
        Ok(self.state.to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equilibrium_is_fixed() {
        let w = CartPoleWorld::balance_default();
        let s = CartPoleState::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(w.step(&s, 0.0).unwrap(), s);
    }

    #[test]
    fn dynamics_are_mirror_symmetric() {
        let w = CartPoleWorld::balance_default();
        let s = CartPoleState::new(0.3, -0.2, 0.07, 0.4);
        let a = w.step(&s, 3.5).unwrap();
        let b = w.step(&s.mirrored(), -3.5).unwrap();
        assert_eq!(a.mirrored(), b);
    }

    #[test]
    fn matches_reference_step() {
        // classic cart-pole step (Barto/Sutton form) evaluated independently
        let mut w = CartPoleWorld::balance_default();
        w.physics.substeps = 1;
        let s0 = CartPoleState::new(0.0, 0.0, 0.05, 0.0);
        let s = w.step(&s0, 0.0).unwrap();
        assert!((s.theta_dot - 0.015_766_155_756_657_397).abs() < 1e-12);
        assert!((s.theta - 0.050_315_323_115_133_15).abs() < 1e-12);
        assert!((s.x_dot - (-0.000_715_747_825_790_416_8)).abs() < 1e-12);
        w.physics.substeps = 10;
        let s = w.step(&s0, 0.0).unwrap();
        assert!((s.theta_dot - 0.015_782_541_530_315_48).abs() < 1e-12);
        assert!((s.theta - 0.050_173_526_020_914_655).abs() < 1e-12);
        assert!((s.x_dot - (-0.000_716_486_604_992_457_8)).abs() < 1e-12);
        assert!(s.theta > 0.05);
    }

    #[test]
    fn force_is_clamped() {
        let w = CartPoleWorld::balance_default();
        let s = CartPoleState::new(0.0, 0.0, 0.0, 0.0);
        assert_eq!(w.step(&s, 1e6).unwrap(), w.step(&s, 10.0).unwrap());
    }

    #[test]
    fn energy_drift_is_small() {
        let w = CartPoleWorld::balance_default();
        let mut s = CartPoleState::new(0.0, 0.0, 0.1, 0.0);
        let e0 = w.energy(&s);
        let mut worst: f64 = 0.0;
        for _ in 0..200 {
            s = w.step(&s, 0.0).unwrap();
            worst = worst.max((w.energy(&s) - e0).abs() / e0.abs());
        }
        assert!(worst < 0.01, "relative drift {worst}");
    }

    #[test]
    fn obstacle_distances() {
        let w = CartPoleWorld::obstacle_default();
        let upright = CartPoleState::new(0.0, 0.0, 0.0, 0.0);
        let (d_goal, d_obs) = w.distances(&upright);
        assert_eq!(d_goal, 1.5);
        assert!((d_obs - 0.4).abs() < 1e-12);
        // tip exactly on the left face
        let s = CartPoleState::new(0.4, 0.0, 0.0, 0.0);
        assert_eq!(w.distances(&s).1, 0.0);
        // inside the rectangle
        let s = CartPoleState::new(0.6, 0.0, 0.0, 0.0);
        assert_eq!(w.distances(&s).1, 0.0);
        // leaning under it
        let s = CartPoleState::new(0.6, 0.0, 0.3, 0.0);
        assert!(w.distances(&s).1 > 0.0);
        let at_goal = CartPoleState::new(1.5, 0.0, 0.0, 0.0);
        assert_eq!(w.distances(&at_goal).0, 0.0);
    }

    #[test]
    fn validation() {
        let mut w = CartPoleWorld::obstacle_default();
        w.goal = 3.0;
        assert!(matches!(
            w.validate(),
            Err(WorldError::GoalOutsideTrack { .. })
        ));
        let mut w = CartPoleWorld::obstacle_default();
        w.obstacle.as_mut().unwrap().y_lo = -0.1;
        assert_eq!(w.validate(), Err(WorldError::BadObstacle));
    }
}
