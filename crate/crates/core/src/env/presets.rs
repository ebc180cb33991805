//! Named worlds with their built-in tasks.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{
    ActionSpace, CartPoleEnv, CartPoleWorld, EnvError, Environment, FeatureMap, TabularCmdp,
    TabularEnv, TabularError, WorldError,
};
use crate::dsl::{parse_task, TaskSpec};

pub const CARTPOLE_OBSTACLE_TASK: &str = "\
task cartpole_obstacle
state x x_dot theta theta_dot dist_goal dist_obstacle
const theta_max = 0.33
const theta_comf = 0.1
const x_lim = 2.4
const eps = 0.1
conquer dist_goal <= eps bounds [-3.8, 0.1]
ensure abs(theta) <= theta_max bounds [-3.14, 0.33]
ensure dist_obstacle > 0 bounds [0, 5]
ensure abs(x) <= x_lim bounds [-1, 2.4]
encourage abs(theta) <= theta_comf bounds [-3.04, 0.1]
";

pub const CARTPOLE_BALANCE_TASK: &str = "\
task cartpole_balance
state x x_dot theta theta_dot dist_goal dist_obstacle
const theta_max = 0.2
const theta_comf = 0.05
const x_lim = 2.4
const eps = 0.5
conquer dist_goal <= eps bounds [-2.4, 0.5]
ensure abs(theta) <= theta_max bounds [-3.14, 0.2]
ensure abs(x) <= x_lim bounds [-1, 2.4]
encourage abs(theta) <= theta_comf bounds [-3.1, 0.05]
";

const CHAIN_TASK: &str = "\
task chain
state pos
const goal = 4
achieve pos >= goal bounds [-4, 0]
ensure pos >= 1 bounds [-1, 3]
encourage pos >= 2 bounds [-2, 2]
";

pub fn chain_task() -> TaskSpec {
    parse_task(CHAIN_TASK).expect("built-in task parses")
}

/// Five cells; cell 0 is a pit (unsafe), cell 4 the goal. Action 0 moves
/// left and action 1 right, each slipping the opposite way with
/// probability `slip`. Episodes start in cell 1 or 2.
pub fn chain_oracle(slip: f64, gamma: f64, horizon: usize) -> Result<TabularCmdp, TabularError> {
    chain_oracle_for(&chain_task(), slip, gamma, horizon)
}

/// The five-cell chain compiled against another task over the single
/// variable `pos`.
pub fn chain_oracle_for(
    task: &TaskSpec,
    slip: f64,
    gamma: f64,
    horizon: usize,
) -> Result<TabularCmdp, TabularError> {
    let n = 5;
    let mut transitions = vec![0.0; n * 2 * n];
    for s in 0..n {
        for a in 0..2 {
            let row = &mut transitions[(s * 2 + a) * n..(s * 2 + a + 1) * n];
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            let (intended, other) = if a == 0 { (left, right) } else { (right, left) };
            row[intended] += 1.0 - slip;
            row[other] += slip;
        }
    }
    TabularCmdp::from_task(
        task,
        vec![String::from("pos")],
        (0..n).map(|s| vec![s as f64]).collect(),
        2,
        transitions,
        vec![0.0, 0.5, 0.5, 0.0, 0.0],
        gamma,
        horizon,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    CartpoleObstacle,
    CartpoleBalance,
    ChainOracle,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PresetError {
    #[error("unknown environment preset `{0}`")]
    Unknown(String),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

impl Preset {
    pub const ALL: [Preset; 3] = [
        Preset::CartpoleObstacle,
        Preset::CartpoleBalance,
        Preset::ChainOracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::CartpoleObstacle => "cartpole-obstacle",
            Preset::CartpoleBalance => "cartpole-balance",
            Preset::ChainOracle => "chain-oracle",
        }
    }

    pub fn parse(name: &str) -> Result<Self, PresetError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == name)
            .ok_or_else(|| PresetError::Unknown(name.into()))
    }

    pub fn task_text(self) -> &'static str {
        match self {
            Preset::CartpoleObstacle => CARTPOLE_OBSTACLE_TASK,
            Preset::CartpoleBalance => CARTPOLE_BALANCE_TASK,
            Preset::ChainOracle => CHAIN_TASK,
        }
    }

    pub fn task(self) -> TaskSpec {
        parse_task(self.task_text()).expect("built-in task parses")
    }

    pub fn world(self) -> Option<CartPoleWorld> {
        match self {
            Preset::CartpoleObstacle => Some(CartPoleWorld::obstacle_default()),
            Preset::CartpoleBalance => Some(CartPoleWorld::balance_default()),
            Preset::ChainOracle => None,
        }
    }

    /// The environment with default parameters.
    pub fn build(self) -> Result<AnyEnv, PresetError> {
        Ok(match self.world() {
            Some(w) => AnyEnv::CartPole(CartPoleEnv::new(w)?),
            None => AnyEnv::Tabular(TabularEnv::new(chain_oracle(0.1, 0.99, 6)?)),
        })
    }
}

/// Either kind of environment, selected at run time.
#[derive(Debug, Clone)]
pub enum AnyEnv {
    CartPole(CartPoleEnv),
    Tabular(TabularEnv),
}

impl FeatureMap for AnyEnv {
    fn feature_names(&self) -> Vec<String> {
        match self {
            AnyEnv::CartPole(e) => e.feature_names(),
            AnyEnv::Tabular(e) => e.feature_names(),
        }
    }

    fn features(&self, obs: &[f64]) -> Vec<f64> {
        match self {
            AnyEnv::CartPole(e) => e.features(obs),
            AnyEnv::Tabular(e) => e.features(obs),
        }
    }
}

impl Environment for AnyEnv {
    fn observation_dim(&self) -> usize {
        match self {
            AnyEnv::CartPole(e) => e.observation_dim(),
            AnyEnv::Tabular(e) => e.observation_dim(),
        }
    }

    fn action_space(&self) -> ActionSpace {
        match self {
            AnyEnv::CartPole(e) => e.action_space(),
            AnyEnv::Tabular(e) => e.action_space(),
        }
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        match self {
            AnyEnv::CartPole(e) => e.reset(rng),
            AnyEnv::Tabular(e) => e.reset(rng),
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<Vec<f64>, EnvError> {
        match self {
            AnyEnv::CartPole(e) => e.step(action, rng),
            AnyEnv::Tabular(e) => e.step(action, rng),
        }
    }
}
