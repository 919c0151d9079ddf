//! Seeded 2-D navigation simulators and their synthetic renders.
//!
//! Three dynamics share one layout representation:
//!
//! * **Wall**: displacement actions in a unit square split by a wall with a door.
//! * **PointMaze**: force actions driving a damped point mass through a maze.
//! * **Teleport**: PointMaze where crossing the right border teleports the
//!   agent back to the left edge of the same row.
//!
//! Observations are `2 × 32 × 32` images (wall occupancy and a Gaussian agent
//! blob) or, in state mode, the raw position/velocity vector.

mod dataset;
mod layout;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dataset::{generate_dataset, Dataset, Trajectory};
pub use layout::{wall_ascii, Cell, MazeLayout, MEDIUM, TELEPORT, UMAZE};

use crate::error::{Error, Result};
use crate::grad::Tensor;

pub const IMAGE_SIZE: usize = 32;
pub const IMAGE_CHANNELS: usize = 2;

/// Anything the planners can act in.
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    fn action_dim(&self) -> usize;
    /// Componentwise bound on raw actions.
    fn action_limit(&self) -> f64;
    fn step(&self, state: &Self::State, action: &[f64]) -> Self::State;
    fn observe(&self, state: &Self::State) -> Observation;
    fn goal_distance(&self, state: &Self::State, goal: &Self::State) -> f64;
    fn success_radius(&self) -> f64;
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    /// Always zero for Wall.
    pub velocity: [f64; 2],
}

impl EnvState {
    pub fn at(x: f64, y: f64) -> Self {
        Self { position: [x, y], velocity: [0.0, 0.0] }
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }

    pub fn distance(&self, other: &EnvState) -> f64 {
        (self.position[0] - other.position[0]).hypot(self.position[1] - other.position[1])
    }

    pub fn to_vec(&self) -> Vec<f64> {
        vec![self.position[0], self.position[1], self.velocity[0], self.velocity[1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observation {
    /// `[2, 32, 32]` render.
    Image(Tensor),
    /// Raw state vector.
    State(Vec<f64>),
}

impl Observation {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Observation::Image(t) => t.data(),
            Observation::State(v) => v,
        }
    }

    pub fn len(&self) -> usize {
        self.as_slice().len()
    }

    pub fn is_empty(&self) -> bool {
        self.as_slice().is_empty()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ObsMode {
    #[default]
    Image,
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    Wall,
    PointMaze,
    Teleport,
}

impl EnvKind {
    pub fn code(self) -> u32 {
        match self {
            EnvKind::Wall => 0,
            EnvKind::PointMaze => 1,
            EnvKind::Teleport => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(EnvKind::Wall),
            1 => Some(EnvKind::PointMaze),
            2 => Some(EnvKind::Teleport),
            _ => None,
        }
    }
}

/// Point-mass constants. Units are layout cells and steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Physics {
    /// Wall: largest displacement per step along each axis.
    pub max_displacement: f64,
    /// PointMaze: largest force along each axis.
    pub max_force: f64,
    pub dt: f64,
    pub friction: f64,
    /// Speed cap, in cells per unit time.
    pub v_max: f64,
}

impl Default for Physics {
    fn default() -> Self {
        Self { max_displacement: 0.05, max_force: 1.0, dt: 0.1, friction: 0.05, v_max: 1.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub size: usize,
    /// Standard deviation of the agent blob, in world units.
    pub blob_sigma: f64,
}

/// Length scale for the agent blob and the success radius. Maze cells for
/// PointMaze layouts; for Wall, whose 0.04 collision grid is far finer than
/// anything task-relevant, the door height.
pub fn nominal_cell(kind: EnvKind, layout: &MazeLayout) -> f64 {
    match kind {
        EnvKind::Wall => WALL_DOOR,
        _ => layout.cell_size(),
    }
}

/// A navigation environment: layout, dynamics and renderer.
#[derive(Clone, Debug)]
pub struct NavEnv {
    pub kind: EnvKind,
    pub layout: MazeLayout,
    pub physics: Physics,
    pub render: RenderConfig,
    pub frameskip: usize,
    pub success_radius: f64,
    pub obs_mode: ObsMode,
}

pub const DEFAULT_FRAMESKIP: usize = 5;
/// Door height of the Wall layout.
pub const WALL_DOOR: f64 = 0.2;

impl NavEnv {
    pub fn new(kind: EnvKind, layout: MazeLayout) -> Result<Self> {
        if kind == EnvKind::Teleport && !layout.has_teleport() {
            return Err(Error::Config(vec![format!("layout '{}' declares no teleport column", layout.name())]));
        }
        let cell = nominal_cell(kind, &layout);
        Ok(Self {
            kind,
            layout,
            physics: Physics::default(),
            render: RenderConfig { size: IMAGE_SIZE, blob_sigma: cell },
            frameskip: DEFAULT_FRAMESKIP,
            success_radius: 0.5 * cell,
            obs_mode: ObsMode::Image,
        })
    }

    pub fn wall() -> Self {
        Self::new(EnvKind::Wall, MazeLayout::named("wall").expect("builtin")).expect("builtin")
    }

    pub fn umaze() -> Self {
        Self::new(EnvKind::PointMaze, MazeLayout::named("umaze").expect("builtin")).expect("builtin")
    }

    pub fn medium() -> Self {
        Self::new(EnvKind::PointMaze, MazeLayout::named("medium").expect("builtin")).expect("builtin")
    }

    pub fn teleport() -> Self {
        Self::new(EnvKind::Teleport, MazeLayout::named("teleport").expect("builtin")).expect("builtin")
    }

    /// Builtin environment by layout name.
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "wall" => Ok(Self::wall()),
            "umaze" => Ok(Self::umaze()),
            "medium" => Ok(Self::medium()),
            "teleport" => Ok(Self::teleport()),
            other => Err(Error::Config(vec![format!("unknown env '{other}' (expected wall|umaze|medium|teleport)")])),
        }
    }

    /// Default `(n_traj, traj_len)` for offline data collection.
    pub fn default_dataset_size(&self) -> (usize, usize) {
        match (self.kind, self.layout.name()) {
            (EnvKind::Wall, _) => (1920, 50),
            (_, "medium") => (4000, 100),
            _ => (2000, 100),
        }
    }

    fn raw_limit(&self) -> f64 {
        match self.kind {
            EnvKind::Wall => self.physics.max_displacement,
            _ => self.physics.max_force,
        }
    }

    /// Axis-separated move along x then y; a blocked axis keeps its coordinate.
    /// Returns the new position and which axes were blocked.
    fn slide(&self, pos: [f64; 2], delta: [f64; 2]) -> ([f64; 2], [bool; 2]) {
        let mut p = pos;
        let mut blocked = [false, false];
        for axis in 0..2 {
            if delta[axis] == 0.0 {
                continue;
            }
            let mut q = p;
            q[axis] += delta[axis];
            if self.segment_blocked(p, q, axis) {
                blocked[axis] = true;
            } else {
                p = q;
            }
        }
        (p, blocked)
    }

    /// Whether an axis-aligned segment touches a blocking cell.
    fn segment_blocked(&self, from: [f64; 2], to: [f64; 2], axis: usize) -> bool {
        let l = &self.layout;
        if l.blocks(to[0], to[1]) {
            return true;
        }
        let (Some(a), Some(b)) = (l.cell_of(from[0], from[1]), l.cell_of(to[0], to[1])) else {
            return true;
        };
        if axis == 0 {
            let (lo, hi) = (a.1.min(b.1), a.1.max(b.1));
            (lo..=hi).any(|c| l.cell(a.0, c) == Cell::Wall)
        } else {
            let (lo, hi) = (a.0.min(b.0), a.0.max(b.0));
            (lo..=hi).any(|r| l.cell(r, a.1) == Cell::Wall)
        }
    }

    /// Wall dynamics: clipped displacement with axis-separated blocking.
    pub fn step_wall(&self, state: &EnvState, action: [f64; 2]) -> EnvState {
        let lim = self.physics.max_displacement;
        let d = [action[0].clamp(-lim, lim), action[1].clamp(-lim, lim)];
        let (position, _) = self.slide(state.position, d);
        EnvState { position, velocity: [0.0, 0.0] }
    }

    /// Damped point mass: `v ← (v + a·dt)(1 − μ)`, speed capped, then an
    /// axis-separated move that zeroes the velocity of a blocked axis.
    pub fn step_pointmaze(&self, state: &EnvState, action: [f64; 2]) -> EnvState {
        let ph = &self.physics;
        let a = [action[0].clamp(-ph.max_force, ph.max_force), action[1].clamp(-ph.max_force, ph.max_force)];
        let mut v = [(state.velocity[0] + a[0] * ph.dt) * (1.0 - ph.friction), (state.velocity[1] + a[1] * ph.dt) * (1.0 - ph.friction)];
        let speed = v[0].hypot(v[1]);
        if speed > ph.v_max {
            v = [v[0] * ph.v_max / speed, v[1] * ph.v_max / speed];
        }
        let (position, blocked) = self.slide(state.position, [v[0] * ph.dt, v[1] * ph.dt]);
        for axis in 0..2 {
            if blocked[axis] {
                v[axis] = 0.0;
            }
        }
        EnvState { position, velocity: v }
    }

    /// Teleport rules applied to a post-step state: past the right border,
    /// x resets to the left interior edge, y is kept, and `v_x ← |v_x|`.
    pub fn apply_teleport(&self, next: EnvState) -> EnvState {
        if next.position[0] > self.layout.right_interior_x() {
            EnvState {
                position: [self.layout.left_interior_x(), next.position[1]],
                velocity: [next.velocity[0].abs(), next.velocity[1]],
            }
        } else {
            next
        }
    }

    pub fn step_teleport(&self, state: &EnvState, action: [f64; 2]) -> EnvState {
        self.apply_teleport(self.step_pointmaze(state, action))
    }

    pub fn step_state(&self, state: &EnvState, action: [f64; 2]) -> EnvState {
        match self.kind {
            EnvKind::Wall => self.step_wall(state, action),
            EnvKind::PointMaze => self.step_pointmaze(state, action),
            EnvKind::Teleport => self.step_teleport(state, action),
        }
    }

    /// Step used for recorded data: the result is rounded to `f32` so stored
    /// trajectories replay exactly. Rounding never lands inside a wall.
    pub fn step_recorded(&self, state: &EnvState, action: [f64; 2]) -> EnvState {
        let next = self.step_state(state, action);
        let mut q = quantize_state(&next);
        for axis in 0..2 {
            let mut tries = 0;
            while !self.layout.in_free_cell(q.position[0], q.position[1]) && tries < 8 {
                // nudge one ulp back toward the unrounded value
                let exact = next.position[axis];
                let cur = q.position[axis] as f32;
                let nudged = if (cur as f64) > exact { cur.next_down() } else { cur.next_up() };
                q.position[axis] = nudged as f64;
                tries += 1;
            }
        }
        q
    }

    /// Deterministic `[2, size, size]` render: wall occupancy and a Gaussian
    /// agent blob with peak 1 at the agent position.
    pub fn render_state(&self, state: &EnvState) -> Observation {
        let n = self.render.size;
        let l = &self.layout;
        let px_per_cell = n as f64 / l.height().max(l.width()) as f64;
        let mut data = vec![0.0; IMAGE_CHANNELS * n * n];
        for i in 0..n {
            for j in 0..n {
                let row = ((i as f64 + 0.5) / px_per_cell).floor() as usize;
                let col = ((j as f64 + 0.5) / px_per_cell).floor() as usize;
                let wall = row >= l.height() || col >= l.width() || l.cell(row, col) == Cell::Wall;
                data[i * n + j] = if wall { 1.0 } else { 0.0 };
            }
        }
        let (ax, ay) = self.agent_pixel(state);
        let sigma = self.render.blob_sigma * px_per_cell / l.cell_size();
        let s2 = 2.0 * sigma * sigma;
        for i in 0..n {
            let dy = i as f64 + 0.5 - ay;
            for j in 0..n {
                let dx = j as f64 + 0.5 - ax;
                data[n * n + i * n + j] = (-(dx * dx + dy * dy) / s2).exp();
            }
        }
        Observation::Image(Tensor::new(vec![IMAGE_CHANNELS, n, n], data).expect("render shape"))
    }

    /// Observation in the configured mode.
    pub fn observe_state(&self, state: &EnvState) -> Observation {
        match self.obs_mode {
            ObsMode::Image => self.render_state(state),
            ObsMode::State => Observation::State(state.to_vec()),
        }
    }

    /// Agent position in continuous pixel coordinates `(column, row)`.
    pub fn agent_pixel(&self, state: &EnvState) -> (f64, f64) {
        let l = &self.layout;
        let px_per_cell = self.render.size as f64 / l.height().max(l.width()) as f64;
        let scale = px_per_cell / l.cell_size();
        ((state.position[0] - l.origin()[0]) * scale, (state.position[1] - l.origin()[1]) * scale)
    }

    /// World-space length of one pixel.
    pub fn pixel_size(&self) -> f64 {
        let l = &self.layout;
        l.cell_size() * l.height().max(l.width()) as f64 / self.render.size as f64
    }

    /// Uniform start over free space, at rest.
    pub fn sample_start(&self, rng: &mut impl Rng) -> EnvState {
        let cells = self.layout.free_cells();
        let (r, c) = cells[rng.random_range(0..cells.len())];
        let s = self.layout.cell_size();
        let o = self.layout.origin();
        let x = o[0] + (c as f64 + rng.random_range(0.02..0.98)) * s;
        let y = o[1] + (r as f64 + rng.random_range(0.02..0.98)) * s;
        quantize_state(&EnvState::at(x, y))
    }

    /// Uniform random raw action within bounds.
    pub fn sample_action(&self, rng: &mut impl Rng) -> [f64; 2] {
        let lim = self.raw_limit();
        [rng.random_range(-lim..=lim) as f32 as f64, rng.random_range(-lim..=lim) as f32 as f64]
    }

    /// Random rollout of `steps` raw steps with actions held for `frameskip` steps.
    pub fn random_rollout(&self, start: EnvState, steps: usize, rng: &mut impl Rng) -> (Vec<EnvState>, Vec<[f64; 2]>) {
        let mut states = vec![start];
        let mut actions = Vec::with_capacity(steps);
        let mut held = [0.0; 2];
        for t in 0..steps {
            if t % self.frameskip.max(1) == 0 {
                held = self.sample_action(rng);
            }
            let next = self.step_recorded(states.last().expect("nonempty"), held);
            actions.push(held);
            states.push(next);
        }
        (states, actions)
    }

    /// ChaCha stream `stream` of `seed`; per-item streams keep results independent of ordering.
    pub fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}

impl Environment for NavEnv {
    type State = EnvState;

    fn action_dim(&self) -> usize {
        2
    }

    fn action_limit(&self) -> f64 {
        self.raw_limit()
    }

    fn step(&self, state: &EnvState, action: &[f64]) -> EnvState {
        self.step_state(state, [action[0], action[1]])
    }

    fn observe(&self, state: &EnvState) -> Observation {
        self.observe_state(state)
    }

    fn goal_distance(&self, state: &EnvState, goal: &EnvState) -> f64 {
        state.distance(goal)
    }

    fn success_radius(&self) -> f64 {
        self.success_radius
    }
}

/// A start/goal pair whose goal is reachable within `budget` raw steps.
#[derive(Clone, Debug, PartialEq)]
pub struct GoalTask {
    pub id: usize,
    pub start: EnvState,
    pub goal: EnvState,
    /// Raw actions that lead from `start` to `goal`.
    pub actions: Vec<[f64; 2]>,
    pub budget: usize,
}

impl GoalTask {
    /// Planner horizon in model steps.
    pub fn horizon(&self, frameskip: usize) -> usize {
        self.budget / frameskip
    }

    /// Replays the recorded action log from `start`.
    pub fn replay(&self, env: &NavEnv) -> EnvState {
        self.actions.iter().fold(self.start, |s, a| env.step_recorded(&s, *a))
    }
}

/// Goal tasks are drawn by a random rollout of exactly `budget` raw steps from
/// a uniform start. Rollouts ending within the success radius of their start
/// are redrawn, since they would count as solved before any planning.
/// Task `id` uses ChaCha stream `id` of `seed`.
pub fn sample_goal_task(env: &NavEnv, seed: u64, id: usize, budget: usize) -> Result<GoalTask> {
    if budget == 0 || budget % env.frameskip.max(1) != 0 {
        return Err(Error::Contract(format!("budget {budget} must be a positive multiple of frameskip {}", env.frameskip)));
    }
    let mut rng = NavEnv::rng(seed, id as u64);
    let mut last = None;
    for _ in 0..MAX_TASK_REDRAWS {
        let start = env.sample_start(&mut rng);
        let (states, actions) = env.random_rollout(start, budget, &mut rng);
        let goal = *states.last().expect("nonempty");
        let task = GoalTask { id, start, goal, actions, budget };
        if goal.distance(&start) > env.success_radius {
            return Ok(task);
        }
        last = Some(task);
    }
    Ok(last.expect("at least one draw"))
}

const MAX_TASK_REDRAWS: usize = 100;

/// Tasks `0..n` for one seed.
pub fn sample_goal_tasks(env: &NavEnv, seed: u64, n: usize, budget: usize) -> Result<Vec<GoalTask>> {
    (0..n).map(|i| sample_goal_task(env, seed, i, budget)).collect()
}

pub fn quantize_state(s: &EnvState) -> EnvState {
    let q = |v: f64| v as f32 as f64;
    EnvState { position: [q(s.position[0]), q(s.position[1])], velocity: [q(s.velocity[0]), q(s.velocity[1])] }
}
