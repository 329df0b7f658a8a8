//! Four traffic lights on a 2×2 grid of intersections.
//!
//! The world is a 21×21 cell grid. Two horizontal and two vertical roads,
//! each three cells wide (lane, median, lane), cross at four 3×3 blocks.
//! Traffic drives on the right and goes straight, so there are eight one-way
//! lanes, each entering at one border and leaving at the opposite one. The
//! layout is symmetric under quarter turns about the grid centre, which maps
//! lanes onto lanes and intersections onto intersections.

use std::collections::HashMap;

use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::group::rotate_coord;
use crate::mpn::{Aggregation, CommGraph, Edge};

use super::EnvError;

pub const GRID: usize = 21;
pub const LANES: usize = 8;
pub const LIGHTS: usize = 4;
/// Local actions: 0 gives green to north–south traffic, 1 to east–west traffic.
pub const LIGHT_ACTIONS: usize = 2;
pub const LIGHT_ACTION_GENERATOR: [usize; 2] = [1, 0];
/// Side of the square observation window centred on an intersection.
pub const OBS_SIZE: usize = 15;
pub const OBS_CHANNELS: usize = 3;

const BLOCK_START: [usize; 2] = [5, 13];
/// Rows of the two eastbound lanes from which all lanes are generated by rotation.
const EASTBOUND_ROWS: [usize; 2] = [7, 15];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    #[serde(default = "default_spawn_prob")]
    pub spawn_prob: f64,
    #[serde(default = "default_spawn_steps")]
    pub spawn_steps: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_spawn_prob() -> f64 {
    0.1
}

fn default_spawn_steps() -> usize {
    100
}

fn default_max_steps() -> usize {
    500
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            spawn_prob: default_spawn_prob(),
            spawn_steps: default_spawn_steps(),
            max_steps: default_max_steps(),
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if !(0.0..=1.0).contains(&self.spawn_prob) {
            return Err(EnvError::Config(format!("spawn_prob must be in [0, 1], got {}", self.spawn_prob)));
        }
        if self.max_steps == 0 {
            return Err(EnvError::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// Static road geometry shared by all traffic states.
#[derive(Debug)]
pub struct Layout {
    /// Cells of each lane from entry to exit.
    lanes: Vec<Vec<(usize, usize)>>,
    /// Whether each lane runs north–south.
    vertical: Vec<bool>,
    /// For each lane position: the intersection it waits at, if it is a stop line.
    stop_line: Vec<Vec<Option<usize>>>,
    in_block: Vec<Vec<bool>>,
    road: Vec<Vec<bool>>,
}

/// Intersection index of the block containing `(r, c)`, if any.
fn block_of((r, c): (usize, usize)) -> Option<usize> {
    let bi = BLOCK_START.iter().position(|&s| (s..s + 3).contains(&r))?;
    let bj = BLOCK_START.iter().position(|&s| (s..s + 3).contains(&c))?;
    Some(bi * 2 + bj)
}

impl Layout {
    fn build() -> Self {
        let mut lanes = Vec::new();
        let mut vertical = Vec::new();
        for &row in &EASTBOUND_ROWS {
            for k in 0..4 {
                lanes.push((0..GRID).map(|c| rotate_coord(GRID, (row, c), k)).collect::<Vec<_>>());
                vertical.push(k % 2 == 1);
            }
        }
        let mut road = vec![vec![false; GRID]; GRID];
        let mut stop_line = Vec::new();
        let mut in_block = Vec::new();
        for lane in &lanes {
            for &(r, c) in lane {
                road[r][c] = true;
            }
            in_block.push(lane.iter().map(|&p| block_of(p).is_some()).collect());
            stop_line.push(
                (0..lane.len())
                    .map(|i| match (block_of(lane[i]), lane.get(i + 1).and_then(|&p| block_of(p))) {
                        (None, Some(b)) => Some(b),
                        _ => None,
                    })
                    .collect(),
            );
        }
        Self {
            lanes,
            vertical,
            stop_line,
            in_block,
            road,
        }
    }

    pub fn global() -> &'static Layout {
        static LAYOUT: std::sync::OnceLock<Layout> = std::sync::OnceLock::new();
        LAYOUT.get_or_init(Self::build)
    }

    pub fn lane(&self, l: usize) -> &[(usize, usize)] {
        &self.lanes[l]
    }

    pub fn is_vertical(&self, l: usize) -> bool {
        self.vertical[l]
    }

    pub fn is_road(&self, (r, c): (usize, usize)) -> bool {
        self.road[r][c]
    }

    /// Intersection whose light governs lane position `pos`, if it is a stop line.
    pub fn stop_line(&self, lane: usize, pos: usize) -> Option<usize> {
        self.stop_line[lane][pos]
    }
}

/// Image of lane `l` under `k` quarter turns.
pub fn rotate_lane(l: usize, k: usize) -> usize {
    4 * (l / 4) + (l % 4 + k) % 4
}

/// Image of intersection `i` under `k` quarter turns.
pub fn rotate_light(i: usize, k: usize) -> usize {
    let (r, c) = rotate_coord(2, (i / 2, i % 2), k);
    r * 2 + c
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vehicle {
    pub lane: usize,
    pub pos: usize,
    /// Cumulative steps spent not moving.
    pub wait: u64,
    /// Stopped on the previous step and must spend one step restarting.
    pub stalled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficState {
    /// Per intersection: 0 north–south green, 1 east–west green.
    pub lights: [usize; LIGHTS],
    /// Sorted by `(lane, pos)`.
    pub vehicles: Vec<Vehicle>,
    pub step: usize,
    pub spawned: usize,
    pub exited: usize,
    pub exited_wait: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrafficOutcome {
    pub reward: f64,
    pub done: bool,
    /// Mean cumulative wait of the vehicles now in the system (0 if empty).
    pub mean_wait: f64,
}

impl Default for TrafficState {
    fn default() -> Self {
        Self::new()
    }
}

impl TrafficState {
    pub fn new() -> Self {
        Self {
            lights: [0; LIGHTS],
            vehicles: Vec::new(),
            step: 0,
            spawned: 0,
            exited: 0,
            exited_wait: 0,
        }
    }

    pub fn cell(&self, v: &Vehicle) -> (usize, usize) {
        Layout::global().lane(v.lane)[v.pos]
    }

    pub fn mean_wait(&self) -> f64 {
        if self.vehicles.is_empty() {
            0.0
        } else {
            self.vehicles.iter().map(|v| v.wait as f64).sum::<f64>() / self.vehicles.len() as f64
        }
    }

    pub fn is_done(&self, config: &TrafficConfig) -> bool {
        (self.step >= config.spawn_steps && self.vehicles.is_empty()) || self.step >= config.max_steps
    }

    /// Advances one step. `noise[l]` is the uniform draw deciding whether a
    /// vehicle enters lane `l` this step.
    pub fn step(&mut self, actions: &[usize], noise: &[f64; LANES], config: &TrafficConfig) -> Result<TrafficOutcome, EnvError> {
        if self.is_done(config) {
            return Err(EnvError::EpisodeDone);
        }
        if actions.len() != LIGHTS {
            return Err(EnvError::ActionCount {
                expected: LIGHTS,
                got: actions.len(),
            });
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= LIGHT_ACTIONS) {
            return Err(EnvError::ActionOutOfRange {
                action: a,
                actions: LIGHT_ACTIONS,
            });
        }
        self.lights.copy_from_slice(actions);
        let layout = Layout::global();
        let cells: Vec<(usize, usize)> = self.vehicles.iter().map(|v| self.cell(v)).collect();
        let occupant: HashMap<(usize, usize), usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();

        // vehicles free to advance this step, ignoring other vehicles
        let wants: Vec<bool> = self
            .vehicles
            .iter()
            .map(|v| match layout.stop_line(v.lane, v.pos) {
                Some(b) => (self.lights[b] == 0) == layout.is_vertical(v.lane),
                None => true,
            })
            .collect();
        let target = |i: usize| -> Option<(usize, usize)> {
            let v = &self.vehicles[i];
            layout.lane(v.lane).get(v.pos + 1).copied()
        };
        // a contested cell goes to the vehicle already inside the intersection
        let mut claims: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for (i, &w) in wants.iter().enumerate() {
            if let (true, Some(t)) = (w, target(i)) {
                claims.entry(t).or_default().push(i);
            }
        }
        let mut candidate = wants.clone();
        for ids in claims.values() {
            if ids.len() > 1 {
                for &i in ids {
                    let v = &self.vehicles[i];
                    if !layout.in_block[v.lane][v.pos] {
                        candidate[i] = false;
                    }
                }
            }
        }
        let settle = |mut moving: Vec<bool>| -> Vec<bool> {
            loop {
                let mut changed = false;
                for i in 0..moving.len() {
                    if !moving[i] {
                        continue;
                    }
                    if let Some(t) = target(i) {
                        if let Some(&j) = occupant.get(&t) {
                            if !moving[j] {
                                moving[i] = false;
                                changed = true;
                            }
                        }
                    }
                }
                if !changed {
                    return moving;
                }
            }
        };
        let free = settle(candidate);
        // stalled vehicles that could move spend this step restarting instead
        let restarting: Vec<bool> = (0..free.len()).map(|i| free[i] && self.vehicles[i].stalled).collect();
        let moving = settle((0..free.len()).map(|i| free[i] && !restarting[i]).collect());

        let mut next = Vec::with_capacity(self.vehicles.len() + LANES);
        for (i, v) in self.vehicles.iter().enumerate() {
            let mut v = v.clone();
            if moving[i] {
                v.stalled = false;
                v.pos += 1;
                if v.pos >= GRID {
                    self.exited += 1;
                    self.exited_wait += v.wait;
                    continue;
                }
            } else {
                v.wait += 1;
                v.stalled = !restarting[i];
            }
            next.push(v);
        }
        if self.step < config.spawn_steps {
            for (l, &u) in noise.iter().enumerate() {
                let entry = layout.lane(l)[0];
                let blocked = next.iter().any(|v| layout.lane(v.lane)[v.pos] == entry);
                if u < config.spawn_prob && !blocked {
                    next.push(Vehicle {
                        lane: l,
                        pos: 0,
                        wait: 0,
                        stalled: false,
                    });
                    self.spawned += 1;
                }
            }
        }
        next.sort();
        self.vehicles = next;
        self.step += 1;
        let mean_wait = self.mean_wait();
        Ok(TrafficOutcome {
            reward: -mean_wait / 1000.0,
            done: self.is_done(config),
            mean_wait,
        })
    }

    /// Three-channel window centred on intersection `agent`: vehicle
    /// occupancy, the stop lines this light currently lets through, and the road mask.
    pub fn observation(&self, agent: usize) -> Array3<f64> {
        let layout = Layout::global();
        let half = OBS_SIZE as i64 / 2;
        let centre = [BLOCK_START[agent / 2] as i64 + 1, BLOCK_START[agent % 2] as i64 + 1];
        let mut obs = Array3::zeros((OBS_CHANNELS, OBS_SIZE, OBS_SIZE));
        let local = |(r, c): (usize, usize)| -> Option<(usize, usize)> {
            let y = r as i64 - centre[0] + half;
            let x = c as i64 - centre[1] + half;
            ((0..OBS_SIZE as i64).contains(&y) && (0..OBS_SIZE as i64).contains(&x)).then_some((y as usize, x as usize))
        };
        for v in &self.vehicles {
            if let Some((y, x)) = local(self.cell(v)) {
                obs[[0, y, x]] = 1.0;
            }
        }
        for l in 0..LANES {
            for (pos, &cell) in layout.lane(l).iter().enumerate() {
                let Some((y, x)) = local(cell) else { continue };
                obs[[2, y, x]] = 1.0;
                if layout.stop_line(l, pos) == Some(agent) && (self.lights[agent] == 0) == layout.is_vertical(l) {
                    obs[[1, y, x]] = 1.0;
                }
            }
        }
        obs
    }

    pub fn observations(&self) -> Vec<Array3<f64>> {
        (0..LIGHTS).map(|i| self.observation(i)).collect()
    }

    /// The world rotated by `k` quarter turns: lanes and lights are renamed,
    /// and lights swap phase on odd turns.
    pub fn rotated(&self, k: usize) -> Self {
        let mut lights = [0; LIGHTS];
        for i in 0..LIGHTS {
            lights[rotate_light(i, k)] = (self.lights[i] + k) % 2;
        }
        let mut vehicles: Vec<Vehicle> = self
            .vehicles
            .iter()
            .map(|v| Vehicle {
                lane: rotate_lane(v.lane, k),
                ..v.clone()
            })
            .collect();
        vehicles.sort();
        Self {
            lights,
            vehicles,
            ..self.clone()
        }
    }
}

/// Intersections as agents at `(block row, block column)`, connected to
/// their horizontal and vertical neighbours.
pub fn traffic_graph(aggregation: Aggregation) -> CommGraph {
    let positions: Vec<[i64; 2]> = (0..LIGHTS).map(|i| [(i / 2) as i64, (i % 2) as i64]).collect();
    let mut edges = Vec::new();
    for i in 0..LIGHTS {
        for j in 0..LIGHTS {
            let d = (positions[i][0] - positions[j][0]).abs() + (positions[i][1] - positions[j][1]).abs();
            if d == 1 {
                edges.push(Edge { dst: i, src: j });
            }
        }
    }
    CommGraph::new(positions, edges, aggregation).expect("four valid agents")
}

#[derive(Clone, Debug)]
pub struct TrafficEnv {
    config: TrafficConfig,
    state: TrafficState,
    rng: ChaCha8Rng,
}

impl TrafficEnv {
    pub fn new(config: TrafficConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        Ok(Self {
            config,
            state: TrafficState::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn reset(&mut self) {
        self.state = TrafficState::new();
    }

    pub fn config(&self) -> &TrafficConfig {
        &self.config
    }

    pub fn state(&self) -> &TrafficState {
        &self.state
    }

    pub fn sample_noise<R: Rng + ?Sized>(rng: &mut R) -> [f64; LANES] {
        std::array::from_fn(|_| rng.random::<f64>())
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<TrafficOutcome, EnvError> {
        let noise = Self::sample_noise(&mut self.rng);
        self.state.step(actions, &noise, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_symmetric() {
        let layout = Layout::global();
        for l in 0..LANES {
            for k in 0..4 {
                let m = rotate_lane(l, k);
                for (pos, &cell) in layout.lane(l).iter().enumerate() {
                    assert_eq!(rotate_coord(GRID, cell, k), layout.lane(m)[pos]);
                    assert_eq!(layout.stop_line(l, pos).map(|b| rotate_light(b, k)), layout.stop_line(m, pos));
                }
            }
        }
        // every lane crosses two intersections and has one stop line before each
        for l in 0..LANES {
            assert_eq!((0..GRID).filter(|&p| layout.stop_line(l, p).is_some()).count(), 2);
        }
        assert_eq!(layout.lane(0)[0], (7, 0));
        assert!(!layout.is_vertical(0) && layout.is_vertical(1));
    }

    #[test]
    fn empty_start_and_reward() {
        let mut s = TrafficState::new();
        assert!(s.vehicles.is_empty());
        let out = s.step(&[0; 4], &[1.0; LANES], &TrafficConfig::default()).unwrap();
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn single_waiting_vehicle_reward() {
        let mut s = TrafficState::new();
        s.vehicles.push(Vehicle {
            lane: 0,
            pos: 4,
            wait: 9,
            stalled: true,
        });
        // lane 0 runs east–west; light 0 showing north–south green stops it
        let out = s.step(&[0; 4], &[1.0; LANES], &TrafficConfig::default()).unwrap();
        assert_eq!(s.vehicles[0].wait, 10);
        assert!((out.reward + 0.01).abs() < 1e-15);
    }

    #[test]
    fn restart_takes_one_step() {
        let cfg = TrafficConfig::default();
        let mut s = TrafficState::new();
        s.vehicles.push(Vehicle {
            lane: 0,
            pos: 4,
            wait: 0,
            stalled: false,
        });
        s.step(&[0; 4], &[1.0; LANES], &cfg).unwrap();
        assert_eq!((s.vehicles[0].pos, s.vehicles[0].stalled), (4, true));
        s.step(&[1; 4], &[1.0; LANES], &cfg).unwrap();
        assert_eq!((s.vehicles[0].pos, s.vehicles[0].stalled), (4, false));
        s.step(&[1; 4], &[1.0; LANES], &cfg).unwrap();
        assert_eq!(s.vehicles[0].pos, 5);
        assert_eq!(s.vehicles[0].wait, 2);
    }

    #[test]
    fn vehicles_exit_and_episode_ends() {
        let cfg = TrafficConfig {
            spawn_steps: 0,
            ..Default::default()
        };
        let mut s = TrafficState::new();
        s.vehicles.push(Vehicle {
            lane: 3,
            pos: 19,
            wait: 0,
            stalled: false,
        });
        let out = s.step(&[0; 4], &[0.0; LANES], &cfg).unwrap();
        assert!(!out.done);
        let out = s.step(&[0; 4], &[0.0; LANES], &cfg).unwrap();
        assert!(out.done);
        assert_eq!(s.exited, 1);
    }

    #[test]
    fn spawn_rate_matches_expectation() {
        let cfg = TrafficConfig::default();
        let mut total = 0;
        let seeds = 1000;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = TrafficState::new();
            for _ in 0..100 {
                let noise = TrafficEnv::sample_noise(&mut rng);
                // clear the roads so only the entry process is measured
                s.vehicles.clear();
                s.step(&[0; 4], &noise, &cfg).unwrap();
            }
            total += s.spawned;
        }
        let mean = total as f64 / seeds as f64;
        assert!((mean - 80.0).abs() < 0.05 * 80.0, "mean spawned {mean}");
    }

    #[test]
    fn graph_is_grid() {
        let g = traffic_graph(Aggregation::Mean);
        assert_eq!(g.edges().len(), 8);
        assert!(g.is_edge(0, 1) && g.is_edge(0, 2) && !g.is_edge(0, 3));
    }

    #[test]
    fn observation_channels() {
        let s = TrafficState::new();
        let o = s.observation(0);
        // four stop lines lead into each intersection, two per axis
        assert_eq!(o.index_axis(ndarray::Axis(0), 1).sum(), 2.0);
        assert!(o.index_axis(ndarray::Axis(0), 2).sum() > 0.0);
        assert_eq!(o.index_axis(ndarray::Axis(0), 0).sum(), 0.0);
    }
}
