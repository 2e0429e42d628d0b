//! Closed-loop evaluation: rollouts, paired success rates, module-usage
//! reports, selector-term ablations, and baseline comparison tables.
//!
//! Everything here treats a policy as a black box behind the [`Policy`]
//! trait, so the gated model, the three behavioural-cloning baselines, the
//! scripted expert, and diagnostic variants (a single module forced on) all
//! run through the same rollout and success machinery. Comparisons are
//! *paired*: every method evaluated under the same `(suite, n_starts, seed)`
//! sees bit-identical start states.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::DemoDataset;
use crate::envs::{
    self, EnvState, Suite, SuiteKind, TaskSpec, ACTION_DIM, HORIZON,
};
use crate::error::{Error, Result};
use crate::nn::{self, MlpParams};
use crate::policy::{action_with_scores, policy_forward, MapsModel};
use crate::seeding;
use crate::selector::{self, SelectorLossWeights, TaskEncoding};
use crate::trainer::{
    self, train_maps, train_mt_bc, train_mtmh_bc, train_single_bc, BaselineKind, MapsTrainOutput,
    TrainConfig,
};

/// Anything that can act in the benchmark environments.
pub trait Policy {
    fn action(&self, obs: &[f64], task: &TaskEncoding) -> Vec<f64>;

    /// Gate scores at this state, for models that have any.
    fn gate_scores(&self, obs: &[f64], task: &TaskEncoding) -> Option<Vec<f64>> {
        let _ = (obs, task);
        None
    }
}

impl Policy for MapsModel {
    fn action(&self, obs: &[f64], task: &TaskEncoding) -> Vec<f64> {
        policy_forward(self, obs, task).0
    }

    fn gate_scores(&self, obs: &[f64], task: &TaskEncoding) -> Option<Vec<f64>> {
        Some(selector::selector_scores(&self.selector, obs, task).0)
    }
}

/// A trained behavioural-cloning baseline bound to its task layout.
pub struct BaselinePolicy {
    pub kind: BaselineKind,
    pub model: MlpParams,
    pub num_tasks: usize,
    pub action_dim: usize,
}

impl BaselinePolicy {
    pub fn new(kind: BaselineKind, model: MlpParams, num_tasks: usize) -> Self {
        Self {
            kind,
            model,
            num_tasks,
            action_dim: ACTION_DIM,
        }
    }
}

impl Policy for BaselinePolicy {
    fn action(&self, obs: &[f64], task: &TaskEncoding) -> Vec<f64> {
        let (input, offset) = trainer::baseline_encoding(
            self.kind,
            obs,
            task.index,
            self.num_tasks,
            self.action_dim,
        );
        let (output, _) = nn::forward(&self.model, &input);
        output[offset..offset + self.action_dim].to_vec()
    }
}

/// A family of independently trained per-task models, indexed by the task
/// encoding at call time.
pub struct SingleTaskSet {
    pub models: Vec<MlpParams>,
}

impl Policy for SingleTaskSet {
    fn action(&self, obs: &[f64], task: &TaskEncoding) -> Vec<f64> {
        nn::forward(&self.models[task.index], obs).0
    }
}

/// The scripted demonstrator behind the [`Policy`] interface — the
/// evaluation ceiling, useful for auditing the harness itself.
pub struct ExpertPolicy<'a> {
    pub suite: &'a Suite,
}

impl Policy for ExpertPolicy<'_> {
    fn action(&self, obs: &[f64], task: &TaskEncoding) -> Vec<f64> {
        let state = EnvState {
            position: [obs[0], obs[1]],
            velocity: [obs[2], obs[3]],
            step: 0,
        };
        envs::expert_action(&self.suite.tasks[task.index], &state)
    }
}

/// A gated model with the selector bypassed: module `module` is forced to a
/// one-hot score. Used to inspect what sub-behaviour a module encodes.
pub struct ForcedModule<'a> {
    pub model: &'a MapsModel,
    pub module: usize,
}

impl ForcedModule<'_> {
    fn one_hot(&self) -> Vec<f64> {
        let mut scores = vec![0.0; self.model.num_modules()];
        scores[self.module] = 1.0;
        scores
    }
}

impl Policy for ForcedModule<'_> {
    fn action(&self, obs: &[f64], _task: &TaskEncoding) -> Vec<f64> {
        action_with_scores(self.model, obs, &self.one_hot())
    }

    fn gate_scores(&self, _obs: &[f64], _task: &TaskEncoding) -> Option<Vec<f64>> {
        Some(self.one_hot())
    }
}

/// One closed-loop episode.
#[derive(Debug, Clone)]
pub struct Rollout {
    /// Observation at each acted step (`steps` entries).
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    /// Visited positions, one longer than `actions`.
    pub positions: Vec<[f64; 2]>,
    /// Per-step gate scores for models that expose them.
    pub scores: Option<Vec<Vec<f64>>>,
    /// A non-finite action ends the episode immediately as a failure.
    pub aborted: bool,
    pub success: bool,
}

/// Roll `policy` out from `start` for up to `horizon` steps (capped by the
/// simulator's own [`HORIZON`]). Fully deterministic.
pub fn rollout(
    policy: &dyn Policy,
    spec: &TaskSpec,
    task: &TaskEncoding,
    start: EnvState,
    horizon: usize,
) -> Rollout {
    let mut state = start;
    let mut observations = Vec::new();
    let mut actions = Vec::new();
    let mut positions = vec![state.position];
    let mut scores: Option<Vec<Vec<f64>>> = None;
    let mut aborted = false;
    for _ in 0..horizon.min(HORIZON) {
        let obs = envs::observe(&state);
        let action = policy.action(&obs, task);
        if !action.iter().all(|a| a.is_finite()) {
            aborted = true;
            break;
        }
        if let Some(g) = policy.gate_scores(&obs, task) {
            scores.get_or_insert_with(Vec::new).push(g);
        }
        state = envs::env_step(&spec.dynamics, &state, &action)
            .expect("rollout horizon is capped by the simulator's");
        observations.push(obs);
        actions.push(action);
        positions.push(state.position);
    }
    let success = !aborted && envs::path_success(spec, &positions);
    Rollout {
        observations,
        actions,
        positions,
        scores,
        aborted,
        success,
    }
}

/// The start states every method sees at evaluation time: one list per
/// task, drawn from per-task streams derived from `seed` alone, so two
/// policies evaluated with the same arguments are compared on identical
/// episodes.
pub fn paired_starts(suite: &Suite, n_starts: usize, seed: u64) -> Vec<Vec<EnvState>> {
    suite
        .tasks
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, k as u64));
            (0..n_starts).map(|_| envs::sample_start(spec, &mut rng)).collect()
        })
        .collect()
}

/// Per-task closed-loop success over [`paired_starts`].
pub fn success_rate(policy: &dyn Policy, suite: &Suite, n_starts: usize, seed: u64) -> Vec<f64> {
    let starts = paired_starts(suite, n_starts, seed);
    suite
        .tasks
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let task = TaskEncoding { index: k, num_tasks: suite.num_tasks() };
            let wins = starts[k]
                .iter()
                .filter(|&&s| rollout(policy, spec, &task, s, HORIZON).success)
                .count();
            wins as f64 / n_starts as f64
        })
        .collect()
}

/// How the trained selector distributes gate mass, task by task.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageReport {
    /// `(K, M)`: mean gate score of each module under each task's encoding,
    /// averaged over the dataset's states. Rows are simplex vectors.
    pub mean_gates: Vec<Vec<f64>>,
    /// `(K, M)`: fraction of states where each module carries the largest
    /// score — a hard-assignment view of the same data.
    pub argmax_share: Vec<Vec<f64>>,
    /// Per task: `exp(H(mean_gates[k]))`, in `[1, M]`.
    pub effective_modules: Vec<f64>,
}

/// `exp` of the Shannon entropy of a score row: 1 when one module takes all
/// the mass, `M` when the row is uniform.
pub fn effective_count(row: &[f64]) -> f64 {
    let h: f64 = row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    h.exp()
}

impl UsageReport {
    pub fn num_tasks(&self) -> usize {
        self.mean_gates.len()
    }

    pub fn num_modules(&self) -> usize {
        self.mean_gates.first().map_or(0, Vec::len)
    }

    /// Suite-level effective module count: the entropy exponent of the
    /// task-averaged gate row. This is the scalar used for collapse claims —
    /// "everything routes through one module" shows up as a value near 1
    /// even when individual tasks look one-hot on different modules only if
    /// they in fact pick the *same* one.
    pub fn aggregate_effective(&self) -> f64 {
        let k = self.num_tasks() as f64;
        let mut pooled = vec![0.0; self.num_modules()];
        for row in &self.mean_gates {
            for (p, &g) in pooled.iter_mut().zip(row) {
                *p += g / k;
            }
        }
        effective_count(&pooled)
    }

    /// Mean histogram intersection of gate rows over task pairs: 1 when all
    /// tasks gate identically, toward 0 as they specialise apart.
    pub fn pairwise_overlap(&self) -> f64 {
        let k = self.num_tasks();
        if k < 2 {
            return 1.0;
        }
        let mut total = 0.0;
        let mut pairs = 0;
        for i in 0..k {
            for j in i + 1..k {
                total += self.mean_gates[i]
                    .iter()
                    .zip(&self.mean_gates[j])
                    .map(|(a, b)| a.min(*b))
                    .sum::<f64>();
                pairs += 1;
            }
        }
        total / pairs as f64
    }
}

/// Mean gate scores of `model` over every state of `demos`, evaluated under
/// each task's own encoding.
pub fn module_usage(model: &MapsModel, demos: &DemoDataset) -> Result<UsageReport> {
    demos.validate()?;
    if demos.num_tasks() != model.num_tasks {
        return Err(Error::InvalidData(format!(
            "dataset has {} tasks, model expects {}",
            demos.num_tasks(),
            model.num_tasks
        )));
    }
    let m = model.num_modules();
    let mut mean_gates = Vec::with_capacity(demos.num_tasks());
    let mut argmax_share = Vec::with_capacity(demos.num_tasks());
    for (k, trajs) in demos.tasks.iter().enumerate() {
        let task = TaskEncoding { index: k, num_tasks: demos.num_tasks() };
        let mut mean = vec![0.0; m];
        let mut hard = vec![0.0; m];
        let mut count = 0usize;
        for traj in trajs {
            for state in &traj.states {
                let (scores, _) = selector::selector_scores(&model.selector, state, &task);
                let mut best = 0;
                for (i, &g) in scores.iter().enumerate() {
                    mean[i] += g;
                    if g > scores[best] {
                        best = i;
                    }
                }
                hard[best] += 1.0;
                count += 1;
            }
        }
        for v in &mut mean {
            *v /= count as f64;
        }
        for v in &mut hard {
            *v /= count as f64;
        }
        mean_gates.push(mean);
        argmax_share.push(hard);
    }
    let effective_modules = mean_gates.iter().map(|row| effective_count(row)).collect();
    Ok(UsageReport {
        mean_gates,
        argmax_share,
        effective_modules,
    })
}

/// Roll out with module `module` forced to a one-hot gate.
pub fn single_module_rollout(
    model: &MapsModel,
    spec: &TaskSpec,
    module: usize,
    start: EnvState,
) -> Rollout {
    assert!(module < model.num_modules(), "module index out of range");
    let forced = ForcedModule { model, module };
    // The task encoding is irrelevant with the selector bypassed; index 0
    // keeps the trait interface satisfied.
    let task = TaskEncoding { index: 0, num_tasks: model.num_tasks };
    rollout(&forced, spec, &task, start, HORIZON)
}

/// The four selector regularisers, as CLI-addressable names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectorTerm {
    Share,
    Explore,
    Sparse,
    Smooth,
}

impl SelectorTerm {
    pub fn all() -> [SelectorTerm; 4] {
        [
            SelectorTerm::Share,
            SelectorTerm::Explore,
            SelectorTerm::Sparse,
            SelectorTerm::Smooth,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            SelectorTerm::Share => "share",
            SelectorTerm::Explore => "explore",
            SelectorTerm::Sparse => "sparse",
            SelectorTerm::Smooth => "smooth",
        }
    }

    /// `weights` with this term's coefficient set to zero.
    pub fn zeroed(&self, weights: SelectorLossWeights) -> SelectorLossWeights {
        let mut w = weights;
        match self {
            SelectorTerm::Share => w.share = 0.0,
            SelectorTerm::Explore => w.explore = 0.0,
            SelectorTerm::Sparse => w.sparse = 0.0,
            SelectorTerm::Smooth => w.smooth = 0.0,
        }
        w
    }
}

impl std::str::FromStr for SelectorTerm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SelectorTerm::all()
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown selector term '{s}'")))
    }
}

/// Everything an ablation run produces.
pub struct AblationReport {
    pub term: SelectorTerm,
    /// The config actually trained: `base` with exactly one λ zeroed.
    pub config: TrainConfig,
    pub output: MapsTrainOutput,
    pub usage: UsageReport,
    pub success: Vec<f64>,
}

/// Retrain with one selector term removed and measure what changes.
pub fn ablate(
    base: &TrainConfig,
    suite: &Suite,
    demos: &DemoDataset,
    term: SelectorTerm,
    n_starts: usize,
    eval_seed: u64,
) -> Result<AblationReport> {
    let config = TrainConfig {
        selector_weights: term.zeroed(base.selector_weights),
        ..base.clone()
    };
    let output = train_maps(&config, demos)?;
    let usage = module_usage(&output.model, demos)?;
    let success = success_rate(&output.model, suite, n_starts, eval_seed);
    Ok(AblationReport {
        term,
        config,
        output,
        usage,
        success,
    })
}

/// The trained policy families the comparison harness knows about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Maps,
    Single,
    MultiTask,
    MultiHead,
}

impl Method {
    pub fn all() -> [Method; 4] {
        [
            Method::Maps,
            Method::Single,
            Method::MultiTask,
            Method::MultiHead,
        ]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Maps => "maps",
            Method::Single => "single",
            Method::MultiTask => "mt",
            Method::MultiHead => "mtmh",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::all()
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// One `(suite, demo budget, seed, method)` evaluation outcome.
#[derive(Debug, Clone)]
pub struct ComparisonCell {
    pub suite: SuiteKind,
    pub demos_per_task: usize,
    pub seed: u64,
    pub method: Method,
    /// Per-task success over the cell's paired starts.
    pub success: Vec<f64>,
}

/// Win/loss accounting of a method against single-task cloning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub better: usize,
    pub worse: usize,
    pub tie: usize,
}

impl Tally {
    pub fn total(&self) -> usize {
        self.better + self.worse + self.tie
    }
}

/// All cells from one [`compare`] run.
#[derive(Debug, Clone)]
pub struct ComparisonTable {
    pub cells: Vec<ComparisonCell>,
    pub n_starts: usize,
}

impl ComparisonTable {
    /// Mean and standard deviation of `method`'s per-task success on
    /// `(suite, demos_per_task)` across seeds, averaged over tasks.
    pub fn summary(&self, suite: SuiteKind, demos_per_task: usize, method: Method) -> (f64, f64) {
        let per_seed: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.suite == suite && c.demos_per_task == demos_per_task && c.method == method)
            .map(|c| c.success.iter().sum::<f64>() / c.success.len() as f64)
            .collect();
        let n = per_seed.len() as f64;
        let mean = per_seed.iter().sum::<f64>() / n;
        let var = per_seed.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    /// Count, over every `(suite, demo budget, seed, task)` instance, whether
    /// `method` beat, lost to, or tied single-task cloning on that task.
    /// Ties are tracked separately rather than folded into either side.
    pub fn tally(&self, method: Method) -> Tally {
        let mut tally = Tally::default();
        for cell in self.cells.iter().filter(|c| c.method == method) {
            let Some(single) = self.cells.iter().find(|c| {
                c.method == Method::Single
                    && c.suite == cell.suite
                    && c.demos_per_task == cell.demos_per_task
                    && c.seed == cell.seed
            }) else {
                continue;
            };
            for (a, b) in cell.success.iter().zip(&single.success) {
                if a > b {
                    tally.better += 1;
                } else if a < b {
                    tally.worse += 1;
                } else {
                    tally.tie += 1;
                }
            }
        }
        tally
    }
}

/// Train every method on every `(suite, demo budget, seed)` cell and
/// evaluate all of them on that cell's paired starts. Within a cell all
/// methods share the same demonstrations and the same start states; demo
/// and evaluation streams are derived from the cell coordinates, so any
/// sub-table of the full run is reproducible in isolation.
pub fn compare(
    base: &TrainConfig,
    suites: &[SuiteKind],
    expert_counts: &[usize],
    seeds: &[u64],
    n_starts: usize,
) -> Result<ComparisonTable> {
    let mut cells = Vec::new();
    for (si, &kind) in suites.iter().enumerate() {
        let suite = Suite::build(kind);
        for (ci, &count) in expert_counts.iter().enumerate() {
            for &seed in seeds {
                let cell_tag = (si * expert_counts.len() + ci) as u64;
                let demo_seed = seeding::derive(seed, 1 + cell_tag);
                let eval_seed = seeding::derive(seed, 1000 + cell_tag);
                let demos =
                    envs::generate_demos(&suite, &envs::DemoConfig::new(count, demo_seed))?;
                let cfg = TrainConfig {
                    seed,
                    ..base.clone()
                };
                for method in Method::all() {
                    let success = match method {
                        Method::Maps => {
                            let out = train_maps(&cfg, &demos)?;
                            success_rate(&out.model, &suite, n_starts, eval_seed)
                        }
                        Method::Single => {
                            let mut models = Vec::with_capacity(suite.num_tasks());
                            for k in 0..suite.num_tasks() {
                                models.push(train_single_bc(&cfg, &demos, k)?.model);
                            }
                            let set = SingleTaskSet { models };
                            success_rate(&set, &suite, n_starts, eval_seed)
                        }
                        Method::MultiTask => {
                            let out = train_mt_bc(&cfg, &demos)?;
                            let policy =
                                BaselinePolicy::new(out.kind, out.model, suite.num_tasks());
                            success_rate(&policy, &suite, n_starts, eval_seed)
                        }
                        Method::MultiHead => {
                            let out = train_mtmh_bc(&cfg, &demos)?;
                            let policy =
                                BaselinePolicy::new(out.kind, out.model, suite.num_tasks());
                            success_rate(&policy, &suite, n_starts, eval_seed)
                        }
                    };
                    cells.push(ComparisonCell {
                        suite: kind,
                        demos_per_task: count,
                        seed,
                        method,
                        success,
                    });
                }
            }
        }
    }
    Ok(ComparisonTable { cells, n_starts })
}
