//! Kinematic navigation harness over assembled scenes: a differential-drive
//! disc agent, swept BEV collision checks, shaped rewards and episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::assembly::SceneSpec;
use crate::evaluation::{nav_metrics, CollisionEvent, CollisionKind, NavMetrics, TimedPose};
use crate::geometry::polygon::{contains, segment_polygon_distance};
use crate::geometry::{wrap_angle, OrientedBox, Vec2};

pub const MAX_LINEAR_V: f64 = 2.0;
pub const MAX_ANGULAR_V: f64 = 1.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum NavError {
    #[error("no valid goal found after {0} attempts")]
    NoGoal(usize),
    #[error("invalid episode config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub position: Vec2,
    pub heading: f64,
    pub linear_v: f64,
    pub angular_v: f64,
    pub time: f64,
}

impl AgentState {
    pub fn at_rest(position: Vec2, heading: f64) -> Self {
        Self { position, heading, linear_v: 0.0, angular_v: 0.0, time: 0.0 }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::new(self.heading.cos(), self.heading.sin()) * self.linear_v
    }

    pub fn pose(&self) -> TimedPose {
        TimedPose { t: self.time, position: self.position, heading: self.heading }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub dt: f64,
    pub horizon_steps: usize,
    pub goal_tol: f64,
    pub goal_dist_range: [f64; 2],
    pub waypoint_spacing: f64,
    pub agent_radius: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            dt: 0.2,
            horizon_steps: 300,
            goal_tol: 2.0,
            goal_dist_range: [10.0, 30.0],
            waypoint_spacing: 5.0,
            agent_radius: 0.4,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<(), NavError> {
        let bad = |m: &str| Err(NavError::Config(m.into()));
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.goal_tol >= 0.0) || !(self.agent_radius >= 0.0) {
            return bad("goal_tol and agent_radius must be non-negative");
        }
        if !(self.waypoint_spacing > 0.0) {
            return bad("waypoint_spacing must be positive");
        }
        let [lo, hi] = self.goal_dist_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad("goal_dist_range must satisfy 0 < lo <= hi");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapingTerm {
    pub std: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub arrive: f64,
    pub collide: f64,
    pub pos_coarse: ShapingTerm,
    pub pos_fine: ShapingTerm,
    pub velocity_weight: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            arrive: 2000.0,
            collide: -200.0,
            pos_coarse: ShapingTerm { std: 5.0, weight: 10.0 },
            pos_fine: ShapingTerm { std: 1.0, weight: 50.0 },
            velocity_weight: 10.0,
        }
    }
}

/// BEV view of a scene: obstacle footprints and walkable ground hulls.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NavScene {
    pub obstacles: Vec<(u32, [Vec2; 4])>,
    pub grounds: Vec<Vec<Vec2>>,
}

impl NavScene {
    pub fn new(obstacles: &[(u32, OrientedBox)], grounds: Vec<Vec<Vec2>>) -> Self {
        Self {
            obstacles: obstacles.iter().map(|(id, b)| (*id, b.bev_corners())).collect(),
            grounds: grounds.into_iter().filter(|g| g.len() >= 3).collect(),
        }
    }

    pub fn from_scene(scene: &SceneSpec) -> Self {
        let obstacles: Vec<(u32, OrientedBox)> =
            scene.placements.iter().map(|p| (p.node_id, p.footprint)).collect();
        Self::new(&obstacles, scene.grounds.iter().map(|g| g.boundary.clone()).collect())
    }

    /// First obstacle the disc sweeping from `a` to `b` touches.
    pub fn swept_hit(&self, a: &Vec2, b: &Vec2, radius: f64) -> Option<u32> {
        self.obstacles
            .iter()
            .find(|(_, poly)| segment_polygon_distance(a, b, poly) < radius)
            .map(|(id, _)| *id)
    }

    /// Scenes without ground hulls count as unbounded ground.
    pub fn on_ground(&self, p: &Vec2) -> bool {
        self.grounds.is_empty() || self.grounds.iter().any(|g| contains(g, p, 1e-9))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NavEvent {
    Collision(CollisionEvent),
    GoalReached,
}

/// Advances the agent by one kinematic step. Actions are clamped to
/// +-2 m/s and +-1.5 rad/s; non-finite actions become zero. The heading
/// turns first, then the agent translates along the new heading, and the
/// whole translation segment is checked against obstacles.
pub fn step(
    state: &AgentState,
    action: (f64, f64),
    scene: &NavScene,
    cfg: &EpisodeConfig,
    step_index: usize,
) -> (AgentState, Option<CollisionEvent>) {
    let clamp = |x: f64, m: f64| if x.is_finite() { x.clamp(-m, m) } else { 0.0 };
    let v = clamp(action.0, MAX_LINEAR_V);
    let w = clamp(action.1, MAX_ANGULAR_V);
    let heading = wrap_angle(state.heading + w * cfg.dt);
    let position = state.position + Vec2::new(heading.cos(), heading.sin()) * (v * cfg.dt);
    let next = AgentState {
        position,
        heading,
        linear_v: v,
        angular_v: w,
        time: state.time + cfg.dt,
    };
    let hit = |kind, node_id| CollisionEvent { step: step_index, t: next.time, kind, node_id };
    let collision = if let Some(id) = scene.swept_hit(&state.position, &position, cfg.agent_radius) {
        Some(hit(CollisionKind::Obstacle, Some(id)))
    } else if !scene.on_ground(&position) {
        Some(hit(CollisionKind::OffGround, None))
    } else {
        None
    };
    (next, collision)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardTerms {
    pub arrive: f64,
    pub collide: f64,
    pub position: f64,
    pub velocity: f64,
}

impl RewardTerms {
    pub fn total(&self) -> f64 {
        self.arrive + self.collide + self.position + self.velocity
    }
}

/// Per-step reward. The position term uses Gaussian kernels of the offset
/// from `next` to `target`; the velocity term is the cosine between the
/// agent's velocity and the direction from `prev` to `target` (zero when
/// either vanishes).
pub fn reward(
    prev: &AgentState,
    next: &AgentState,
    events: &[NavEvent],
    target: &Vec2,
    w: &RewardWeights,
) -> RewardTerms {
    let mut terms = RewardTerms::default();
    for e in events {
        match e {
            NavEvent::GoalReached => terms.arrive = w.arrive,
            NavEvent::Collision(_) => terms.collide = w.collide,
        }
    }
    let e2 = (target - next.position).norm_squared();
    let kernel = |s: &ShapingTerm| s.weight * (-e2 / (2.0 * s.std * s.std)).exp();
    terms.position = kernel(&w.pos_coarse) + kernel(&w.pos_fine);
    let vel = next.velocity();
    let dir = target - prev.position;
    let denom = vel.norm() * dir.norm();
    if denom > 0.0 {
        terms.velocity = w.velocity_weight * (vel.dot(&dir) / denom).clamp(-1.0, 1.0);
    }
    terms
}

/// Waypoints every `spacing` meters on the straight line from `start` to
/// `goal`; the goal itself is always the last waypoint.
pub fn make_route(start: &Vec2, goal: &Vec2, spacing: f64) -> Vec<Vec2> {
    let d = goal - start;
    let len = d.norm();
    let n = (len / spacing).ceil().max(1.0) as usize;
    let mut route: Vec<Vec2> = (1..n).map(|i| start + d * (i as f64 * spacing / len)).collect();
    route.push(*goal);
    route
}

pub trait Policy {
    fn act(&mut self, state: &AgentState, target: &Vec2, goal: &Vec2) -> (f64, f64);
}

impl<F: FnMut(&AgentState, &Vec2, &Vec2) -> (f64, f64)> Policy for F {
    fn act(&mut self, state: &AgentState, target: &Vec2, goal: &Vec2) -> (f64, f64) {
        self(state, target, goal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Steer at the goal.
    Straight,
    /// Steer at the current route waypoint.
    Waypoint,
}

/// Proportional heading controller with optional seeded Gaussian action
/// noise.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    pub kind: PolicyKind,
    pub cruise: f64,
    pub gain: f64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl ScriptedPolicy {
    pub fn new(kind: PolicyKind, seed: u64, noise_std: f64) -> Self {
        Self {
            kind,
            cruise: 1.5,
            gain: 2.0,
            noise: (noise_std > 0.0).then(|| Normal::new(0.0, noise_std).expect("finite std")),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Policy for ScriptedPolicy {
    fn act(&mut self, state: &AgentState, target: &Vec2, goal: &Vec2) -> (f64, f64) {
        let aim = match self.kind {
            PolicyKind::Straight => goal,
            PolicyKind::Waypoint => target,
        };
        let d = aim - state.position;
        let err = wrap_angle(d.y.atan2(d.x) - state.heading);
        let mut v = self.cruise * err.cos().max(0.0);
        let mut w = self.gain * err;
        if let Some(n) = &self.noise {
            v += n.sample(&mut self.rng);
            w += n.sample(&mut self.rng);
        }
        (v, w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Goal,
    Collision,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Episode {
    pub goal: Vec2,
    pub route: Vec<Vec2>,
    /// Start pose followed by one pose per step.
    pub trajectory: Vec<TimedPose>,
    pub actions: Vec<[f64; 2]>,
    pub rewards: Vec<RewardTerms>,
    pub collisions: Vec<CollisionEvent>,
    pub termination: Termination,
    pub total_return: f64,
    pub metrics: NavMetrics,
}

/// Runs one episode until collision, goal arrival or the horizon. The
/// target waypoint advances whenever the agent is within `goal_tol` of it.
pub fn run_episode(
    scene: &NavScene,
    start: AgentState,
    goal: Vec2,
    policy: &mut dyn Policy,
    cfg: &EpisodeConfig,
    w: &RewardWeights,
) -> Episode {
    let route = make_route(&start.position, &goal, cfg.waypoint_spacing);
    let advance = |mut idx: usize, p: &Vec2| {
        while idx + 1 < route.len() && (route[idx] - p).norm() <= cfg.goal_tol {
            idx += 1;
        }
        idx
    };
    let mut target = advance(0, &start.position);
    let mut state = start;
    let mut trajectory = vec![state.pose()];
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    let mut collisions = Vec::new();
    let mut termination = Termination::Horizon;
    for k in 0..cfg.horizon_steps {
        let action = policy.act(&state, &route[target], &goal);
        let (next, collision) = step(&state, action, scene, cfg, k);
        let mut events = Vec::new();
        if let Some(c) = collision {
            events.push(NavEvent::Collision(c));
            collisions.push(c);
            termination = Termination::Collision;
        } else if (next.position - goal).norm() <= cfg.goal_tol {
            events.push(NavEvent::GoalReached);
            termination = Termination::Goal;
        }
        rewards.push(reward(&state, &next, &events, &route[target], w));
        actions.push([next.linear_v, next.angular_v]);
        trajectory.push(next.pose());
        state = next;
        target = advance(target, &state.position);
        if !events.is_empty() {
            break;
        }
    }
    let total_return = rewards.iter().map(RewardTerms::total).sum();
    let metrics = nav_metrics(&trajectory, &route, &goal, cfg.goal_tol, &collisions);
    Episode { goal, route, trajectory, actions, rewards, collisions, termination, total_return, metrics }
}

/// Draws a goal at a uniform distance in `goal_dist_range` and uniform
/// bearing from `start`, rejecting goals off the ground or within the
/// agent radius of an obstacle.
pub fn sample_goal<R: Rng>(
    scene: &NavScene,
    start: &Vec2,
    cfg: &EpisodeConfig,
    rng: &mut R,
) -> Result<Vec2, NavError> {
    const ATTEMPTS: usize = 1000;
    let [lo, hi] = cfg.goal_dist_range;
    for _ in 0..ATTEMPTS {
        let r = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let g = start + Vec2::new(a.cos(), a.sin()) * r;
        if scene.on_ground(&g) && scene.swept_hit(&g, &g, cfg.agent_radius).is_none() {
            return Ok(g);
        }
    }
    Err(NavError::NoGoal(ATTEMPTS))
}
