//! Drones on a toroidal grid cooperating to trap a randomly moving poacher.
//!
//! A trap needs one drone on the poacher's cell and at least one more in a
//! side-adjacent cell. Drones only see the poacher, drawn relative to
//! themselves, and talk to drones in their 3×3 neighbourhood without wrap-around.

use ndarray::Array3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::group::rotate_coord;
use crate::mpn::{Aggregation, CommGraph};

use super::EnvError;

/// Local actions: stay, north, east, south, west.
pub const DRONE_ACTIONS: usize = 5;
/// Action permutation under one counter-clockwise quarter turn.
pub const DRONE_ACTION_GENERATOR: [usize; 5] = [0, 2, 3, 4, 1];
/// `(d_row, d_col)` for each action.
pub const DRONE_MOVES: [(i64, i64); 5] = [(0, 0), (-1, 0), (0, 1), (1, 0), (0, -1)];
/// Pixels per grid cell in observations.
pub const CELL_PIXELS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WildlifeConfig {
    pub grid: usize,
    pub agents: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_step_penalty")]
    pub step_penalty: f64,
}

fn default_max_steps() -> usize {
    100
}

fn default_step_penalty() -> f64 {
    0.05
}

impl Default for WildlifeConfig {
    fn default() -> Self {
        Self {
            grid: 7,
            agents: 3,
            max_steps: default_max_steps(),
            step_penalty: default_step_penalty(),
        }
    }
}

impl WildlifeConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.grid < 3 || self.grid.is_multiple_of(2) {
            return Err(EnvError::Config(format!("grid must be odd and at least 3, got {}", self.grid)));
        }
        if self.agents < 2 {
            return Err(EnvError::Config(format!("need at least 2 drones, got {}", self.agents)));
        }
        if self.agents + 1 > self.grid * self.grid {
            return Err(EnvError::Config(format!(
                "{} drones and a poacher do not fit on a {}×{} grid",
                self.agents, self.grid, self.grid
            )));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn obs_size(&self) -> usize {
        self.grid * CELL_PIXELS
    }
}

/// Full simulator state; the poacher's randomness is supplied per step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WildlifeState {
    pub grid: usize,
    pub drones: Vec<(usize, usize)>,
    pub poacher: (usize, usize),
    pub step: usize,
    pub trapped: bool,
}

/// Outcome of one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct WildlifeOutcome {
    pub reward: f64,
    pub done: bool,
    pub assisting: usize,
}

fn wrap(v: i64, n: usize) -> usize {
    v.rem_euclid(n as i64) as usize
}

/// Signed toroidal offset in `[-(n-1)/2, (n-1)/2]` for odd `n`.
fn torus_offset(to: usize, from: usize, n: usize) -> i64 {
    let h = (n as i64 - 1) / 2;
    (to as i64 - from as i64 + h).rem_euclid(n as i64) - h
}

impl WildlifeState {
    /// Distinct uniformly random cells for the drones and the poacher.
    pub fn random<R: Rng + ?Sized>(config: &WildlifeConfig, rng: &mut R) -> Result<Self, EnvError> {
        config.validate()?;
        let n = config.grid;
        let cells = sample(rng, n * n, config.agents + 1);
        let mut pos: Vec<(usize, usize)> = cells.iter().map(|c| (c / n, c % n)).collect();
        let poacher = pos.pop().expect("sampled agents + 1 cells");
        Ok(Self {
            grid: n,
            drones: pos,
            poacher,
            step: 0,
            trapped: false,
        })
    }

    /// Drones in the four cells beside the poacher.
    pub fn assisting(&self) -> usize {
        let n = self.grid;
        let (pr, pc) = self.poacher;
        self.drones
            .iter()
            .filter(|&&(r, c)| {
                let (dr, dc) = (torus_offset(r, pr, n), torus_offset(c, pc, n));
                dr.abs() + dc.abs() == 1
            })
            .count()
    }

    pub fn is_trapped(&self) -> bool {
        self.drones.contains(&self.poacher) && self.assisting() >= 1
    }

    /// Advances one step given the drones' actions and the poacher's action.
    ///
    /// A drone's move is cancelled when its target was occupied by another
    /// drone at the start of the step or is targeted by another drone. The
    /// trap is checked after the drones move; the poacher moves only if it
    /// was not trapped.
    pub fn step(&mut self, actions: &[usize], poacher_action: usize, config: &WildlifeConfig) -> Result<WildlifeOutcome, EnvError> {
        if self.trapped || self.step >= config.max_steps {
            return Err(EnvError::EpisodeDone);
        }
        if actions.len() != self.drones.len() {
            return Err(EnvError::ActionCount {
                expected: self.drones.len(),
                got: actions.len(),
            });
        }
        for &a in actions.iter().chain(std::iter::once(&poacher_action)) {
            if a >= DRONE_ACTIONS {
                return Err(EnvError::ActionOutOfRange { action: a, actions: DRONE_ACTIONS });
            }
        }
        let n = self.grid;
        let target = |(r, c): (usize, usize), a: usize| {
            let (dr, dc) = DRONE_MOVES[a];
            (wrap(r as i64 + dr, n), wrap(c as i64 + dc, n))
        };
        let targets: Vec<(usize, usize)> = self.drones.iter().zip(actions).map(|(&p, &a)| target(p, a)).collect();
        let moved: Vec<(usize, usize)> = (0..self.drones.len())
            .map(|i| {
                let t = targets[i];
                if t == self.drones[i] {
                    return t;
                }
                let occupied = self.drones.iter().enumerate().any(|(j, &p)| j != i && p == t);
                let contested = targets.iter().enumerate().any(|(j, &u)| j != i && u == t);
                if occupied || contested {
                    self.drones[i]
                } else {
                    t
                }
            })
            .collect();
        self.drones = moved;
        self.step += 1;
        let mut reward = -config.step_penalty;
        let mut assisting = 0;
        if self.is_trapped() {
            self.trapped = true;
            assisting = self.assisting();
            reward += assisting as f64;
        } else {
            self.poacher = target(self.poacher, poacher_action);
        }
        Ok(WildlifeOutcome {
            reward,
            done: self.trapped || self.step >= config.max_steps,
            assisting,
        })
    }

    /// Agent-centric single-channel image of side `3·grid`: the poacher is a
    /// 3×3 block at its toroidal offset from the drone, whose own cell is central.
    pub fn observation(&self, agent: usize) -> Array3<f64> {
        let n = self.grid;
        let h = (n as i64 - 1) / 2;
        let (r, c) = self.drones[agent];
        let dr = torus_offset(self.poacher.0, r, n);
        let dc = torus_offset(self.poacher.1, c, n);
        let (cr, cc) = ((h + dr) as usize, (h + dc) as usize);
        let mut obs = Array3::zeros((1, n * CELL_PIXELS, n * CELL_PIXELS));
        for y in 0..CELL_PIXELS {
            for x in 0..CELL_PIXELS {
                obs[[0, cr * CELL_PIXELS + y, cc * CELL_PIXELS + x]] = 1.0;
            }
        }
        obs
    }

    pub fn observations(&self) -> Vec<Array3<f64>> {
        (0..self.drones.len()).map(|i| self.observation(i)).collect()
    }

    /// Edges between drones within one cell in each coordinate, no wrap-around.
    pub fn graph(&self, aggregation: Aggregation) -> CommGraph {
        let positions = self.drones.iter().map(|&(r, c)| [r as i64, c as i64]).collect();
        CommGraph::within_radius(positions, 1, aggregation)
    }

    /// The world rotated by `k` counter-clockwise quarter turns about the grid centre.
    pub fn rotated(&self, k: usize) -> Self {
        let n = self.grid;
        Self {
            grid: n,
            drones: self.drones.iter().map(|&p| rotate_coord(n, p, k)).collect(),
            poacher: rotate_coord(n, self.poacher, k),
            step: self.step,
            trapped: self.trapped,
        }
    }
}

/// A wildlife episode with its own seeded poacher randomness.
#[derive(Clone, Debug)]
pub struct WildlifeEnv {
    config: WildlifeConfig,
    state: WildlifeState,
    rng: ChaCha8Rng,
}

impl WildlifeEnv {
    pub fn new(config: WildlifeConfig, seed: u64) -> Result<Self, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let state = WildlifeState::random(&config, &mut rng)?;
        Ok(Self { config, state, rng })
    }

    pub fn reset(&mut self) {
        self.state = WildlifeState::random(&self.config, &mut self.rng).expect("config validated at construction");
    }

    pub fn config(&self) -> &WildlifeConfig {
        &self.config
    }

    pub fn state(&self) -> &WildlifeState {
        &self.state
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<WildlifeOutcome, EnvError> {
        let poacher = self.rng.random_range(0..DRONE_ACTIONS);
        self.state.step(actions, poacher, &self.config)
    }
}
