//! Planar point-mass control benchmarks with scripted experts.
//!
//! Every task is a [`TaskSpec`]: dynamics parameters plus a short waypoint
//! path through the arena `[-1, 1]²`. The agent observes
//! `[px, py, vx, vy]`, acts with a force in `[-1, 1]²`, and integrates
//!
//! ```text
//! v' = (1 − damping)·v + (gain / mass)·a·Δt
//! p' = p + v'·Δt
//! ```
//!
//! Three suites probe different axes of task relatedness:
//!
//! * **scaled-dynamics** — five tasks sharing a goal, differing only in
//!   action gain (×0.5 … ×1.5);
//! * **morphology** — nominal dynamics plus one-parameter mass and drag
//!   perturbations (±25%) toward a shared goal;
//! * **sub-behavior** — four tasks that share the first leg of their route
//!   through a common waypoint at the origin and diverge afterwards
//!   (forward / veer-up / veer-down / stop).
//!
//! The expert is a saturated PD tracker that compensates the commanded force
//! by `mass / gain`, so its closed loop is identical across tasks whenever
//! the command is unsaturated — but the *actions* it demonstrates at a given
//! state differ per task, which is exactly the signal a multi-task policy
//! has to pick up. For two-waypoint routes the tracked target is a pure
//! function of position, so the demonstrated behaviour stays Markov in the
//! observation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::dataset::{DemoDataset, Trajectory};
use crate::error::{Error, Result};
use crate::seeding;

/// Integration step, seconds.
pub const DT: f64 = 0.05;
/// Hard episode cap, in steps.
pub const HORIZON: usize = 100;
/// A task counts as solved when the final position is this close to the goal.
pub const GOAL_TOLERANCE: f64 = 0.05;
/// Intermediate waypoints only need to be passed within this radius.
pub const WAYPOINT_TOLERANCE: f64 = 2.0 * GOAL_TOLERANCE;
/// The arena spans `[-ARENA_HALF_WIDTH, ARENA_HALF_WIDTH]` on both axes.
pub const ARENA_HALF_WIDTH: f64 = 1.0;
/// Per-axis force limit; both the expert and the simulator clip to it.
pub const ACTION_LIMIT: f64 = 1.0;
/// Observation width: `[px, py, vx, vy]`.
pub const STATE_DIM: usize = 4;
/// Action width: planar force.
pub const ACTION_DIM: usize = 2;

// Expert tuning. The PD gains put the unsaturated closed loop's slowest
// pole near 0.89 per step, fast enough for two legs plus a settle well
// inside HORIZON even on the weakest scaled-dynamics task.
const KP: f64 = 24.0;
const KD: f64 = 10.0;
// Two-waypoint routes: the tracked target blends from the hub toward the
// final goal as the agent closes in, reaching the goal fully inside the
// switch disc (or once the second leg is decisively closer). Blending keeps
// the demonstrated action map continuous along the route — an abrupt
// handover at cruise speed would put a step discontinuity right where the
// tasks' actions conflict, which is exactly the spot a cloned policy must
// get right.
const SWITCH_RADIUS: f64 = 0.06;
const BLEND_RADIUS: f64 = 0.22;
const LEG_PREFERENCE_MARGIN: f64 = 0.02;
// Demonstrations stop once the expert is parked strictly inside the goal
// tolerance, plus a short recorded hold so "stay put at the goal" appears
// in the data — closed-loop clones run the full horizon and have to keep
// station long after the expert would have stopped recording.
const SETTLE_DISTANCE: f64 = 0.9 * GOAL_TOLERANCE;
const SETTLE_SPEED: f64 = 0.08;
const HOLD_STEPS: usize = 8;

/// Physical parameters of one point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dynamics {
    /// Multiplier on the applied force.
    pub gain: f64,
    pub mass: f64,
    /// Per-step velocity decay in `[0, 1)`.
    pub damping: f64,
}

impl Dynamics {
    pub fn nominal() -> Self {
        Self {
            gain: 1.0,
            mass: 1.0,
            damping: 0.1,
        }
    }
}

/// Axis-aligned region initial positions are drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StartBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl StartBox {
    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        [
            rng.random_range(self.min[0]..self.max[0]),
            rng.random_range(self.min[1]..self.max[1]),
        ]
    }
}

/// One benchmark task: who the point mass is and where it has to go.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub name: String,
    pub dynamics: Dynamics,
    /// Route to follow in order; the last entry is the goal. One or two
    /// waypoints are supported.
    pub waypoints: Vec<[f64; 2]>,
    pub start_box: StartBox,
}

impl TaskSpec {
    pub fn goal(&self) -> [f64; 2] {
        *self.waypoints.last().expect("task has at least one waypoint")
    }
}

/// Simulator state. `step` counts applied actions since the episode start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub step: usize,
}

/// The observation vector `[px, py, vx, vy]`.
pub fn observe(state: &EnvState) -> Vec<f64> {
    vec![
        state.position[0],
        state.position[1],
        state.velocity[0],
        state.velocity[1],
    ]
}

/// Advance the point mass by one step. Actions are clipped per axis; the
/// arena walls are sticky (position clamps, the offending velocity component
/// zeroes). Stepping past [`HORIZON`] is an error.
pub fn env_step(dynamics: &Dynamics, state: &EnvState, action: &[f64]) -> Result<EnvState> {
    assert_eq!(action.len(), ACTION_DIM, "action length mismatch");
    if state.step >= HORIZON {
        return Err(Error::HorizonExceeded { horizon: HORIZON });
    }
    let scale = dynamics.gain / dynamics.mass;
    let keep = 1.0 - dynamics.damping;
    let mut position = state.position;
    let mut velocity = state.velocity;
    for i in 0..2 {
        let a = action[i].clamp(-ACTION_LIMIT, ACTION_LIMIT);
        velocity[i] = keep * velocity[i] + scale * a * DT;
        position[i] += velocity[i] * DT;
        if position[i] > ARENA_HALF_WIDTH {
            position[i] = ARENA_HALF_WIDTH;
            velocity[i] = 0.0;
        } else if position[i] < -ARENA_HALF_WIDTH {
            position[i] = -ARENA_HALF_WIDTH;
            velocity[i] = 0.0;
        }
    }
    Ok(EnvState {
        position,
        velocity,
        step: state.step + 1,
    })
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Distance from `p` to the segment `a → b`.
fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    dist(p, [a[0] + t * ab[0], a[1] + t * ab[1]])
}

/// The point the expert is currently steering toward — a pure function of
/// position, so the demonstrated behaviour stays Markov in the observation.
///
/// Two-leg routes track the hub from afar, then slide the target along
/// `hub → goal` as the hub gets closer: fully the goal inside
/// [`SWITCH_RADIUS`], interpolated inside [`BLEND_RADIUS`]. Once the point
/// is decisively closer to the second leg than the first (it has rounded
/// the corner), the goal takes over outright, so an overshoot past the hub
/// can never flip the target back.
pub fn current_target(spec: &TaskSpec, position: [f64; 2]) -> [f64; 2] {
    match spec.waypoints.len() {
        1 => spec.waypoints[0],
        2 => {
            let w = spec.waypoints[0];
            let g = spec.waypoints[1];
            let s = spec.start_box.center();
            let past_hub = segment_distance(position, w, g) + LEG_PREFERENCE_MARGIN
                < segment_distance(position, s, w);
            let u = if past_hub {
                1.0
            } else {
                let r = dist(position, w);
                ((BLEND_RADIUS - r) / (BLEND_RADIUS - SWITCH_RADIUS)).clamp(0.0, 1.0)
            };
            [
                (1.0 - u) * w[0] + u * g[0],
                (1.0 - u) * w[1] + u * g[1],
            ]
        }
        n => panic!("routes with {n} waypoints are not supported"),
    }
}

/// Scripted demonstrator: a saturated PD law toward [`current_target`],
/// compensated by `mass / gain` so the unsaturated closed loop matches
/// across tasks while the demonstrated actions differ.
pub fn expert_action(spec: &TaskSpec, state: &EnvState) -> Vec<f64> {
    let target = current_target(spec, state.position);
    let comp = spec.dynamics.mass / spec.dynamics.gain;
    (0..2)
        .map(|i| {
            let raw =
                (KP * (target[i] - state.position[i]) - KD * state.velocity[i]) * comp;
            raw.clamp(-ACTION_LIMIT, ACTION_LIMIT)
        })
        .collect()
}

/// Parked at the goal: strictly inside the success tolerance and slow.
pub fn settled(spec: &TaskSpec, state: &EnvState) -> bool {
    dist(state.position, spec.goal()) <= SETTLE_DISTANCE
        && state.velocity[0].hypot(state.velocity[1]) <= SETTLE_SPEED
}

/// The success predicate shared by demonstrations and policy rollouts: the
/// position sequence must pass every waypoint in order within
/// [`WAYPOINT_TOLERANCE`] and finish within [`GOAL_TOLERANCE`] of the goal.
pub fn path_success(spec: &TaskSpec, positions: &[[f64; 2]]) -> bool {
    let Some(&last) = positions.last() else {
        return false;
    };
    let mut cursor = 0;
    for &p in positions {
        while cursor < spec.waypoints.len() && dist(p, spec.waypoints[cursor]) <= WAYPOINT_TOLERANCE
        {
            cursor += 1;
        }
    }
    cursor == spec.waypoints.len() && dist(last, spec.goal()) <= GOAL_TOLERANCE
}

/// A zero-velocity episode start drawn from the task's start box.
pub fn sample_start(spec: &TaskSpec, rng: &mut ChaCha8Rng) -> EnvState {
    EnvState {
        position: spec.start_box.sample(rng),
        velocity: [0.0, 0.0],
        step: 0,
    }
}

/// Run the scripted expert from `start` until it settles or the horizon
/// runs out, then keep recording for a short hold at the goal. Returns the
/// recorded `(state, action)` pairs, the full visited position sequence (one
/// longer than the trajectory), and whether the episode settled.
///
/// `action_noise` perturbs the *executed* action per axis by a uniform draw
/// in `[-action_noise, action_noise]` while the *recorded* action stays the
/// expert's clean output at the visited state. The perturbations spread the
/// visited states into a tube around the nominal route, so a clone trained
/// on the data sees supervision at the slightly-off states its own
/// imperfect first steps will put it in; with zero noise the recorded
/// actions replay to the recorded states bit-exactly.
pub fn expert_episode(
    spec: &TaskSpec,
    start: EnvState,
    action_noise: f64,
    rng: &mut ChaCha8Rng,
) -> (Trajectory, Vec<[f64; 2]>, bool) {
    let mut state = start;
    let mut states = Vec::new();
    let mut actions = Vec::new();
    let mut positions = vec![state.position];
    let mut reached = false;
    let mut advance = |state: &EnvState, rng: &mut ChaCha8Rng| {
        let action = expert_action(spec, state);
        let executed: Vec<f64> = if action_noise > 0.0 {
            action
                .iter()
                .map(|a| a + rng.random_range(-action_noise..action_noise))
                .collect()
        } else {
            action.clone()
        };
        let next =
            env_step(&spec.dynamics, state, &executed).expect("stepping within the horizon");
        states.push(observe(state));
        actions.push(action);
        (next, next.position)
    };
    loop {
        if settled(spec, &state) {
            reached = true;
            break;
        }
        if state.step >= HORIZON {
            break;
        }
        let (next, pos) = advance(&state, rng);
        state = next;
        positions.push(pos);
    }
    if reached {
        for _ in 0..HOLD_STEPS {
            if state.step >= HORIZON {
                break;
            }
            let (next, pos) = advance(&state, rng);
            state = next;
            positions.push(pos);
        }
    }
    (Trajectory { states, actions }, positions, reached)
}

/// The benchmark families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SuiteKind {
    ScaledDynamics,
    Morphology,
    SubBehavior,
}

impl SuiteKind {
    pub fn all() -> [SuiteKind; 3] {
        [
            SuiteKind::ScaledDynamics,
            SuiteKind::Morphology,
            SuiteKind::SubBehavior,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            SuiteKind::ScaledDynamics => "scaled-dynamics",
            SuiteKind::Morphology => "morphology",
            SuiteKind::SubBehavior => "sub-behavior",
        }
    }
}

impl std::str::FromStr for SuiteKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scaled-dynamics" => Ok(SuiteKind::ScaledDynamics),
            "morphology" => Ok(SuiteKind::Morphology),
            "sub-behavior" => Ok(SuiteKind::SubBehavior),
            other => Err(Error::InvalidConfig(format!(
                "unknown suite '{other}' (expected scaled-dynamics, morphology, or sub-behavior)"
            ))),
        }
    }
}

/// A named family of related tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct Suite {
    pub kind: SuiteKind,
    pub tasks: Vec<TaskSpec>,
}

// Sub-behavior routes start well left of the hub so the shared first leg is
// long; the point-to-point suites start closer to their goals so even the
// weakest dynamics variant (gain ×0.5 cruises at half speed) settles inside
// the horizon.
const SHARED_START: StartBox = StartBox {
    min: [-0.85, -0.10],
    max: [-0.70, 0.10],
};
const SCALED_START: StartBox = StartBox {
    min: [-0.55, -0.08],
    max: [-0.40, 0.08],
};
const MORPH_START: StartBox = StartBox {
    min: [-0.60, -0.08],
    max: [-0.45, 0.08],
};

impl Suite {
    pub fn build(kind: SuiteKind) -> Self {
        match kind {
            SuiteKind::ScaledDynamics => Self::scaled_dynamics(),
            SuiteKind::Morphology => Self::morphology(),
            SuiteKind::SubBehavior => Self::sub_behavior(),
        }
    }

    /// Five tasks toward one goal, differing only in how strongly actions
    /// couple into the dynamics.
    pub fn scaled_dynamics() -> Self {
        let tasks = [0.5, 0.75, 1.0, 1.25, 1.5]
            .into_iter()
            .map(|gain| TaskSpec {
                name: format!("gain-{gain:.2}"),
                dynamics: Dynamics {
                    gain,
                    ..Dynamics::nominal()
                },
                waypoints: vec![[0.30, 0.20]],
                start_box: SCALED_START,
            })
            .collect();
        Suite {
            kind: SuiteKind::ScaledDynamics,
            tasks,
        }
    }

    /// Nominal dynamics plus one-parameter body variations, shared goal.
    pub fn morphology() -> Self {
        let variants: [(&str, f64, f64); 5] = [
            ("nominal", 1.0, 0.1),
            ("mass-heavy", 1.25, 0.1),
            ("mass-light", 0.75, 0.1),
            ("drag-high", 1.0, 0.125),
            ("drag-low", 1.0, 0.075),
        ];
        let tasks = variants
            .into_iter()
            .map(|(name, mass, damping)| TaskSpec {
                name: name.to_string(),
                dynamics: Dynamics {
                    gain: 1.0,
                    mass,
                    damping,
                },
                waypoints: vec![[0.35, -0.20]],
                start_box: MORPH_START,
            })
            .collect();
        Suite {
            kind: SuiteKind::Morphology,
            tasks,
        }
    }

    /// Four behaviours sharing their first leg: every route passes the
    /// origin, then heads somewhere different (or parks there). The
    /// continuations bend by at most ~45°, so the expert never has to
    /// reverse at speed — its action map stays effectively continuous along
    /// each route, which keeps the demonstrations cloneable.
    pub fn sub_behavior() -> Self {
        let hub = [0.0, 0.0];
        let routes: [(&str, Vec<[f64; 2]>); 4] = [
            ("forward", vec![hub, [0.7, 0.0]]),
            ("veer-up", vec![hub, [0.5, 0.45]]),
            ("veer-down", vec![hub, [0.5, -0.45]]),
            ("stop", vec![hub]),
        ];
        let tasks = routes
            .into_iter()
            .map(|(name, waypoints)| TaskSpec {
                name: name.to_string(),
                dynamics: Dynamics::nominal(),
                waypoints,
                start_box: SHARED_START,
            })
            .collect();
        Suite {
            kind: SuiteKind::SubBehavior,
            tasks,
        }
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Demonstration generation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoConfig {
    pub demos_per_task: usize,
    pub seed: u64,
    /// Fraction of failed attempts tolerated per task before giving up.
    pub tolerated_failure_rate: f64,
    /// Half-width of the uniform perturbation applied to executed expert
    /// actions during collection (see [`expert_episode`]). Recorded actions
    /// stay clean.
    pub action_noise: f64,
}

impl DemoConfig {
    pub fn new(demos_per_task: usize, seed: u64) -> Self {
        Self {
            demos_per_task,
            seed,
            tolerated_failure_rate: 0.05,
            action_noise: 0.1,
        }
    }
}

/// Collect expert demonstrations for every task of a suite. Each task draws
/// starts from its own derived random stream, so datasets are reproducible
/// per seed and adding tasks never shifts existing ones. A task whose
/// failure count exceeds the tolerated fraction of `demos_per_task` aborts
/// generation — the expert is supposed to be near-perfect, so failures mean
/// the task itself is miswired.
pub fn generate_demos(suite: &Suite, cfg: &DemoConfig) -> Result<DemoDataset> {
    if cfg.demos_per_task == 0 {
        return Err(Error::InvalidConfig("demos_per_task must be positive".into()));
    }
    if !(0.0..1.0).contains(&cfg.tolerated_failure_rate) {
        return Err(Error::InvalidConfig(format!(
            "tolerated_failure_rate {} outside [0, 1)",
            cfg.tolerated_failure_rate
        )));
    }
    if !cfg.action_noise.is_finite() || cfg.action_noise < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "action_noise {} must be finite and non-negative",
            cfg.action_noise
        )));
    }
    if suite.tasks.is_empty() {
        return Err(Error::InvalidConfig("suite has no tasks".into()));
    }

    let allowed = (cfg.tolerated_failure_rate * cfg.demos_per_task as f64).floor() as usize;
    let mut tasks = Vec::with_capacity(suite.tasks.len());
    for (k, spec) in suite.tasks.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, k as u64));
        let mut demos = Vec::with_capacity(cfg.demos_per_task);
        let mut failures = 0usize;
        while demos.len() < cfg.demos_per_task {
            let start = sample_start(spec, &mut rng);
            let (traj, positions, reached) = expert_episode(spec, start, cfg.action_noise, &mut rng);
            if reached && !traj.is_empty() && path_success(spec, &positions) {
                demos.push(traj);
            } else {
                failures += 1;
                if failures > allowed {
                    return Err(Error::ExpertFailure {
                        task: k,
                        failures,
                        attempts: demos.len() + failures,
                        tolerated: cfg.tolerated_failure_rate,
                    });
                }
            }
        }
        tasks.push(demos);
    }

    let dataset = DemoDataset {
        state_dim: STATE_DIM,
        action_dim: ACTION_DIM,
        tasks,
    };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_state(p: [f64; 2], v: [f64; 2]) -> EnvState {
        EnvState {
            position: p,
            velocity: v,
            step: 0,
        }
    }

    #[test]
    fn dynamics_integration_matches_hand_arithmetic() {
        let d = Dynamics::nominal();
        let s = nominal_state([0.0, 0.0], [0.0, 0.0]);
        let next = env_step(&d, &s, &[1.0, -0.5]).unwrap();
        // v' = 0.9·0 + 1·a·0.05, p' = p + v'·0.05
        assert_eq!(next.velocity, [0.05, -0.025]);
        assert_eq!(next.position, [0.05 * DT, -0.025 * DT]);
        assert_eq!(next.step, 1);

        let d2 = Dynamics {
            gain: 2.0,
            mass: 0.5,
            damping: 0.2,
        };
        let s2 = nominal_state([0.1, -0.2], [0.3, 0.4]);
        let next2 = env_step(&d2, &s2, &[-0.25, 1.0]).unwrap();
        // gain/mass = 4: vx' = 0.8·0.3 − 4·0.25·0.05 = 0.19
        //               vy' = 0.8·0.4 + 4·1.0·0.05  = 0.52
        assert!((next2.velocity[0] - 0.19).abs() < 1e-15);
        assert!((next2.velocity[1] - 0.52).abs() < 1e-15);
        assert!((next2.position[0] - (0.1 + 0.19 * DT)).abs() < 1e-15);
        assert!((next2.position[1] - (-0.2 + 0.52 * DT)).abs() < 1e-15);
    }

    #[test]
    fn env_step_clips_actions() {
        let d = Dynamics::nominal();
        let s = nominal_state([0.0, 0.0], [0.0, 0.0]);
        let wild = env_step(&d, &s, &[5.0, -7.0]).unwrap();
        let clipped = env_step(&d, &s, &[1.0, -1.0]).unwrap();
        assert_eq!(wild, clipped);
    }

    #[test]
    fn env_step_enforces_horizon() {
        let d = Dynamics::nominal();
        let mut s = nominal_state([0.0, 0.0], [0.0, 0.0]);
        s.step = HORIZON;
        assert!(matches!(
            env_step(&d, &s, &[0.0, 0.0]),
            Err(Error::HorizonExceeded { horizon: HORIZON })
        ));
    }

    #[test]
    fn walls_are_sticky() {
        let d = Dynamics::nominal();
        let s = nominal_state([0.999, 0.0], [0.5, 0.1]);
        let next = env_step(&d, &s, &[1.0, 0.0]).unwrap();
        assert_eq!(next.position[0], ARENA_HALF_WIDTH);
        assert_eq!(next.velocity[0], 0.0);
        assert!(next.velocity[1] != 0.0, "untouched axis keeps its velocity");
    }

    #[test]
    fn observation_layout() {
        let s = nominal_state([0.1, -0.2], [0.3, -0.4]);
        assert_eq!(observe(&s), vec![0.1, -0.2, 0.3, -0.4]);
    }

    #[test]
    fn suites_pin_their_task_structure() {
        let scaled = Suite::scaled_dynamics();
        assert_eq!(scaled.num_tasks(), 5);
        let gains: Vec<f64> = scaled.tasks.iter().map(|t| t.dynamics.gain).collect();
        assert_eq!(gains, vec![0.5, 0.75, 1.0, 1.25, 1.5]);
        assert!(scaled.tasks.iter().all(|t| t.waypoints == vec![[0.30, 0.20]]));

        let morph = Suite::morphology();
        assert_eq!(morph.num_tasks(), 5);
        assert_eq!(morph.tasks[0].dynamics, Dynamics::nominal());
        assert_eq!(morph.tasks[1].dynamics.mass, 1.25);
        assert_eq!(morph.tasks[2].dynamics.mass, 0.75);
        assert_eq!(morph.tasks[3].dynamics.damping, 0.125);
        assert_eq!(morph.tasks[4].dynamics.damping, 0.075);

        let sub = Suite::sub_behavior();
        assert_eq!(sub.num_tasks(), 4);
        for task in &sub.tasks {
            assert_eq!(task.waypoints[0], [0.0, 0.0], "routes share the hub");
            assert_eq!(task.dynamics, Dynamics::nominal());
        }
        assert_eq!(sub.tasks[3].waypoints.len(), 1, "stop parks at the hub");

        for kind in SuiteKind::all() {
            let suite = Suite::build(kind);
            assert_eq!(suite.kind, kind);
            let mut names: Vec<&str> = suite.tasks.iter().map(|t| t.name.as_str()).collect();
            names.sort_unstable();
            names.dedup();
            assert_eq!(names.len(), suite.num_tasks(), "task names must be unique");
            for task in &suite.tasks {
                for w in &task.waypoints {
                    assert!(w[0].abs() < ARENA_HALF_WIDTH && w[1].abs() < ARENA_HALF_WIDTH);
                }
            }
            assert_eq!(kind.name().parse::<SuiteKind>().unwrap(), kind);
        }
        assert!("warehouse".parse::<SuiteKind>().is_err());
    }

    #[test]
    fn expert_is_an_unsaturated_pd_law_near_the_target() {
        let spec = TaskSpec {
            name: "probe".into(),
            dynamics: Dynamics::nominal(),
            waypoints: vec![[0.02, 0.0]],
            start_box: SHARED_START,
        };
        let s = nominal_state([0.0, 0.0], [0.01, -0.02]);
        let a = expert_action(&spec, &s);
        // raw = KP·(target − p) − KD·v, compensation factor 1.
        assert!((a[0] - (KP * 0.02 - KD * 0.01)).abs() < 1e-15);
        assert!((a[1] - (KD * 0.02)).abs() < 1e-15);
    }

    #[test]
    fn expert_saturates_far_from_the_target() {
        let spec = &Suite::scaled_dynamics().tasks[2];
        let s = nominal_state([-0.8, -0.02], [0.0, 0.0]);
        let a = expert_action(spec, &s);
        assert_eq!(a[0], ACTION_LIMIT);
        assert!(a[1].abs() <= ACTION_LIMIT);
    }

    #[test]
    fn compensation_separates_expert_actions_across_scaled_tasks() {
        let suite = Suite::scaled_dynamics();
        let s = nominal_state([0.28, 0.20], [0.0, 0.0]);
        let actions: Vec<f64> = suite
            .tasks
            .iter()
            .map(|t| expert_action(t, &s)[0])
            .collect();
        for pair in actions.windows(2) {
            assert!(
                (pair[0] - pair[1]).abs() > 1e-6,
                "same state must demand different forces per task: {actions:?}"
            );
        }
    }

    #[test]
    fn phase_rule_hands_over_exactly_once() {
        let sub = Suite::sub_behavior();
        let forward = &sub.tasks[0];
        let veer_down = &sub.tasks[2];
        let stop = &sub.tasks[3];

        // Far out on the first leg: still heading squarely at the hub.
        assert_eq!(current_target(forward, [-0.5, 0.02]), [0.0, 0.0]);
        // Inside the handover disc: fully the goal.
        assert_eq!(current_target(forward, [-0.03, 0.01]), [0.7, 0.0]);
        // Out on the second leg, well past the disc.
        assert_eq!(current_target(forward, [0.3, 0.01]), [0.7, 0.0]);
        assert_eq!(current_target(veer_down, [0.25, -0.2]), [0.5, -0.45]);
        // Slight overshoot past the hub must not flip back to the first leg.
        assert_eq!(current_target(veer_down, [0.08, -0.01]), [0.5, -0.45]);
        // Mid-blend: at r = 0.15 the target has slid 7/16 of the way out.
        let mid = current_target(forward, [-0.15, 0.0]);
        let u = (0.22 - 0.15) / (0.22 - 0.06);
        assert!((mid[0] - u * 0.7).abs() < 1e-12, "blend arithmetic: {mid:?}");
        assert_eq!(mid[1], 0.0);
        // Single-waypoint routes never switch.
        assert_eq!(current_target(stop, [-0.5, 0.02]), [0.0, 0.0]);
        assert_eq!(current_target(stop, [0.3, 0.01]), [0.0, 0.0]);
    }

    #[test]
    fn settling_needs_both_position_and_speed() {
        let spec = &Suite::scaled_dynamics().tasks[2];
        let parked = nominal_state([0.32, 0.21], [0.03, 0.03]);
        assert!(settled(spec, &parked));
        let fast = nominal_state([0.32, 0.21], [0.06, 0.06]);
        assert!(!settled(spec, &fast));
        let off = nominal_state([0.25, 0.25], [0.0, 0.0]);
        assert!(!settled(spec, &off));
    }

    #[test]
    fn path_success_enforces_waypoint_order_and_final_tolerance() {
        let forward = &Suite::sub_behavior().tasks[0];
        // Straight through the hub to the goal.
        let good = vec![[-0.775, 0.0], [-0.3, 0.0], [0.05, 0.0], [0.4, 0.0], [0.68, 0.01]];
        assert!(path_success(forward, &good));
        // Teleporting to the goal without passing the hub fails.
        let skipped = vec![[-0.775, 0.0], [-0.4, 0.4], [0.68, 0.01]];
        assert!(!path_success(forward, &skipped));
        // Passing the hub but stopping short fails.
        let short = vec![[-0.775, 0.0], [0.05, 0.0], [0.4, 0.0]];
        assert!(!path_success(forward, &short));
        assert!(!path_success(forward, &[]));
    }

    #[test]
    fn experts_solve_every_suite_with_sensible_episode_lengths() {
        for kind in SuiteKind::all() {
            let suite = Suite::build(kind);
            // The tolerance allows zero failures at this count, so this also
            // asserts a 100% expert success rate on these draws.
            let demos = generate_demos(&suite, &DemoConfig::new(12, 0)).unwrap();
            assert_eq!(demos.num_tasks(), suite.num_tasks());
            demos.validate().unwrap();
            for (k, trajs) in demos.tasks.iter().enumerate() {
                assert_eq!(trajs.len(), 12);
                for traj in trajs {
                    assert!(
                        traj.len() >= 20 && traj.len() <= HORIZON,
                        "{} task {k}: episode length {} out of range",
                        kind.name(),
                        traj.len()
                    );
                }
            }
        }
    }

    #[test]
    fn demo_generation_is_deterministic_per_seed() {
        let suite = Suite::sub_behavior();
        let a = generate_demos(&suite, &DemoConfig::new(3, 7)).unwrap();
        let b = generate_demos(&suite, &DemoConfig::new(3, 7)).unwrap();
        assert_eq!(a, b);
        let c = generate_demos(&suite, &DemoConfig::new(3, 8)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn replaying_recorded_actions_reproduces_states_and_succeeds() {
        let suite = Suite::sub_behavior();
        let cfg = DemoConfig {
            action_noise: 0.0,
            ..DemoConfig::new(2, 3)
        };
        let demos = generate_demos(&suite, &cfg).unwrap();
        for (k, spec) in suite.tasks.iter().enumerate() {
            for traj in &demos.tasks[k] {
                let mut state = EnvState {
                    position: [traj.states[0][0], traj.states[0][1]],
                    velocity: [traj.states[0][2], traj.states[0][3]],
                    step: 0,
                };
                let mut positions = vec![state.position];
                for (t, action) in traj.actions.iter().enumerate() {
                    assert_eq!(
                        observe(&state),
                        traj.states[t],
                        "replay must match the recorded state stream bit for bit"
                    );
                    state = env_step(&spec.dynamics, &state, action).unwrap();
                    positions.push(state.position);
                }
                assert!(path_success(spec, &positions));
                assert!(settled(spec, &state));
            }
        }
    }

    #[test]
    fn noisy_collection_records_the_clean_expert_action_at_each_visited_state() {
        let suite = Suite::sub_behavior();
        let demos = generate_demos(&suite, &DemoConfig::new(3, 5)).unwrap();
        let mut spread: f64 = 0.0;
        for (k, spec) in suite.tasks.iter().enumerate() {
            for traj in &demos.tasks[k] {
                for (s, a) in traj.states.iter().zip(&traj.actions) {
                    let state = EnvState {
                        position: [s[0], s[1]],
                        velocity: [s[2], s[3]],
                        step: 0,
                    };
                    assert_eq!(
                        *a,
                        expert_action(spec, &state),
                        "stored actions are the expert's own output, not the noisy execution"
                    );
                    spread = spread.max(s[1].abs());
                }
            }
        }
        // The perturbations must actually widen the visited tube: with a
        // clean rollout the y-excursion along the first leg decays toward
        // zero, while noisy execution keeps wandering around it.
        assert!(
            spread > 0.1,
            "execution noise should spread the visited states (max |y| = {spread})"
        );
    }

    #[test]
    fn sub_behavior_tasks_share_their_first_leg() {
        let suite = Suite::sub_behavior();
        let start = nominal_state([-0.78, 0.03], [0.0, 0.0]);
        let mut streams: Vec<Vec<Vec<f64>>> = Vec::new();
        for spec in &suite.tasks {
            let mut state = start;
            let mut actions = Vec::new();
            for _ in 0..12 {
                let a = expert_action(spec, &state);
                state = env_step(&spec.dynamics, &state, &a).unwrap();
                actions.push(a);
            }
            streams.push(actions);
        }
        for other in &streams[1..] {
            assert_eq!(
                *other, streams[0],
                "early actions must be identical across tasks — the demonstrations alias"
            );
        }
    }

    #[test]
    fn mismatched_expert_still_reaches_but_flies_differently() {
        // The nominal-gain expert run on the weakest dynamics: under-actuated
        // but stable, so it still mostly gets there — just along a different
        // velocity profile than the matched expert.
        let suite = Suite::scaled_dynamics();
        let weak = &suite.tasks[0];
        let nominal = &suite.tasks[2];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut successes = 0;
        let mut max_gap: f64 = 0.0;
        let runs = 6;
        for _ in 0..runs {
            let start = sample_start(weak, &mut rng);

            let mut state = start;
            let mut cross_positions = vec![state.position];
            while state.step < HORIZON && !settled(weak, &state) {
                let a = expert_action(nominal, &state);
                state = env_step(&weak.dynamics, &state, &a).unwrap();
                cross_positions.push(state.position);
            }
            if path_success(weak, &cross_positions) {
                successes += 1;
            }

            let mut quiet = ChaCha8Rng::seed_from_u64(0);
            let (_, matched_positions, _) = expert_episode(weak, start, 0.0, &mut quiet);
            let overlap = cross_positions.len().min(matched_positions.len());
            for t in 0..overlap {
                max_gap = max_gap.max(dist(cross_positions[t], matched_positions[t]));
            }
        }
        assert!(
            successes * 2 >= runs,
            "a stable but uncompensated expert should succeed at least half the time"
        );
        // During cruise both controllers saturate identically; the profiles
        // only separate around braking, where compensation changes the
        // applied force, so the expected detour is small but must be clearly
        // above numerical noise.
        assert!(
            max_gap > 1e-3,
            "mismatched control must visibly change the flight path (gap {max_gap})"
        );
    }

    #[test]
    fn unreachable_goals_abort_generation() {
        let mut suite = Suite::scaled_dynamics();
        suite.tasks[0].waypoints = vec![[3.0, 3.0]];
        let err = generate_demos(&suite, &DemoConfig::new(2, 0)).unwrap_err();
        match err {
            Error::ExpertFailure { task, failures, .. } => {
                assert_eq!(task, 0);
                assert!(failures > 0);
            }
            other => panic!("expected ExpertFailure, got {other:?}"),
        }
    }

    #[test]
    fn start_sampling_stays_inside_the_box() {
        let spec = &Suite::morphology().tasks[0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s = sample_start(spec, &mut rng);
            assert!(spec.start_box.contains(s.position));
            assert_eq!(s.velocity, [0.0, 0.0]);
            assert_eq!(s.step, 0);
        }
    }

    #[test]
    fn demo_config_validation() {
        let suite = Suite::scaled_dynamics();
        assert!(matches!(
            generate_demos(&suite, &DemoConfig::new(0, 0)),
            Err(Error::InvalidConfig(_))
        ));
        let mut cfg = DemoConfig::new(1, 0);
        cfg.tolerated_failure_rate = 1.0;
        assert!(matches!(
            generate_demos(&suite, &cfg),
            Err(Error::InvalidConfig(_))
        ));
        let mut noisy = DemoConfig::new(1, 0);
        noisy.action_noise = -0.1;
        assert!(matches!(
            generate_demos(&suite, &noisy),
            Err(Error::InvalidConfig(_))
        ));
        let empty = Suite {
            kind: SuiteKind::ScaledDynamics,
            tasks: vec![],
        };
        assert!(matches!(
            generate_demos(&empty, &DemoConfig::new(1, 0)),
            Err(Error::InvalidConfig(_))
        ));
    }
}
