//! Optimisation loops for the gated policy and the three cloning baselines.
//!
//! All four trainers share the same regime: trajectory-level train/val
//! split, task-stratified mini-batches, Adam, and early selection of the
//! parameters with the best validation imitation loss. Everything is
//! deterministic per seed — the split, the initial weights, and every epoch
//! shuffle draw from independent derived streams, so two runs with the same
//! config produce bit-identical histories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{DemoDataset, TransitionBatch, TransitionSample};
use crate::error::{Error, Result};
use crate::nn::{self, AdamHyper, AdamState, MlpGrads, MlpParams};
use crate::policy::{
    self, LossBreakdown, MapsGrads, MapsModel, ModelShape, TotalLossWeights,
};
use crate::seeding;
use crate::selector::SelectorLossWeights;

// Independent random streams derived from the config seed.
const STREAM_SPLIT: u64 = 1;
const STREAM_MODEL: u64 = 2;
const STREAM_EPOCH_BASE: u64 = 16;

/// Everything a training run needs besides the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Number of proto-policy modules `M`.
    pub num_modules: usize,
    /// Module feature width `d`.
    pub feature_dim: usize,
    pub module_hidden: Vec<usize>,
    pub selector_hidden: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub loss_weights: TotalLossWeights,
    pub selector_weights: SelectorLossWeights,
    /// Fraction of each task's trajectories used for training; the rest
    /// validate. Clamped so both sides keep at least one trajectory.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: five modules sized so a full run on the bundled
    /// benchmarks finishes in a couple of minutes on one CPU core while
    /// still reaching expert-level closed-loop success.
    fn default() -> Self {
        Self {
            num_modules: 5,
            feature_dim: 32,
            module_hidden: vec![64, 64],
            selector_hidden: vec![64, 64],
            batch_size: 32,
            epochs: 300,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            loss_weights: TotalLossWeights::default(),
            selector_weights: SelectorLossWeights::default(),
            train_fraction: 0.7,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_modules < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 modules, got {}",
                self.num_modules
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidConfig("feature_dim must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        for (name, beta) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("{name} {beta} outside [0, 1)")));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return Err(Error::InvalidConfig("adam_epsilon must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "train_fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }

    fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Trajectory-level split of a dataset, task by task.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: DemoDataset,
    pub val: DemoDataset,
}

/// Shuffle each task's trajectories and cut them into train/val pieces.
/// The cut point is `floor(n · fraction)` clamped to `[1, n − 1]`, so every
/// task contributes to both sides; tasks with fewer than two trajectories
/// are rejected.
pub fn split_dataset(ds: &DemoDataset, train_fraction: f64, seed: u64) -> Result<SplitDataset> {
    ds.validate()?;
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "train_fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut train_tasks = Vec::with_capacity(ds.num_tasks());
    let mut val_tasks = Vec::with_capacity(ds.num_tasks());
    for (k, trajs) in ds.tasks.iter().enumerate() {
        let n = trajs.len();
        if n < 2 {
            return Err(Error::InvalidData(format!(
                "task {k} has {n} trajectories; need at least 2 to split"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, k as u64));
        order.shuffle(&mut rng);
        let cut = ((n as f64 * train_fraction).floor() as usize).clamp(1, n - 1);
        train_tasks.push(order[..cut].iter().map(|&i| trajs[i].clone()).collect());
        val_tasks.push(order[cut..].iter().map(|&i| trajs[i].clone()).collect());
    }
    Ok(SplitDataset {
        train: DemoDataset {
            state_dim: ds.state_dim,
            action_dim: ds.action_dim,
            tasks: train_tasks,
        },
        val: DemoDataset {
            state_dim: ds.state_dim,
            action_dim: ds.action_dim,
            tasks: val_tasks,
        },
    })
}

/// Flatten one task's trajectories into transition samples, attaching each
/// non-initial state's predecessor for the smoothness term.
fn task_transitions(ds: &DemoDataset, task: usize) -> Vec<TransitionSample> {
    let mut out = Vec::with_capacity(ds.task_transitions(task));
    for traj in &ds.tasks[task] {
        for t in 0..traj.states.len() {
            out.push(TransitionSample {
                state: traj.states[t].clone(),
                prev_state: (t > 0).then(|| traj.states[t - 1].clone()),
                action: traj.actions[t].clone(),
                task,
            });
        }
    }
    out
}

/// Cut one epoch's worth of task-stratified mini-batches.
///
/// Every transition appears in exactly one batch, and every batch contains
/// samples from every task: the batch count is capped by the smallest
/// per-task transition count, and each task's shuffled samples are spread
/// evenly across all batches. When that cap binds, batches grow beyond
/// `batch_size` — stratification wins over the size target.
pub fn make_batches(
    ds: &DemoDataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<TransitionBatch> {
    assert!(batch_size > 0, "batch_size must be positive");
    let total = ds.num_transitions();
    assert!(total > 0, "cannot batch an empty dataset");
    let min_task = (0..ds.num_tasks())
        .map(|k| ds.task_transitions(k))
        .min()
        .expect("dataset has tasks");
    let n_batches = total.div_ceil(batch_size).min(min_task).max(1);

    let mut batches = vec![Vec::new(); n_batches];
    for k in 0..ds.num_tasks() {
        let mut samples = task_transitions(ds, k);
        samples.shuffle(rng);
        let n = samples.len();
        // Spread this task's samples across batches: batch j receives the
        // slice [j·n/B, (j+1)·n/B), never empty because n ≥ B.
        for (j, sample) in samples.into_iter().enumerate() {
            let target = j * n_batches / n;
            batches[target].push(sample);
        }
    }
    batches
        .into_iter()
        .map(|samples| TransitionBatch { samples })
        .collect()
}

/// Per-epoch loss record; `val` is evaluated on the whole validation set
/// after the epoch's updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

/// Loss curves of one gated-policy run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// A finished gated-policy run: the best-validation parameters, the loss
/// curves, and which epoch won.
#[derive(Debug, Clone)]
pub struct MapsTrainOutput {
    pub model: MapsModel,
    pub history: TrainHistory,
    pub best_epoch: usize,
}

struct MapsAdam {
    modules: Vec<AdamState>,
    selector: AdamState,
    head: AdamState,
}

impl MapsAdam {
    fn new(model: &MapsModel) -> Self {
        Self {
            modules: model.modules.iter().map(AdamState::new).collect(),
            selector: AdamState::new(&model.selector),
            head: AdamState::new(&model.head),
        }
    }

    fn step(&mut self, model: &mut MapsModel, grads: &MapsGrads, hyper: &AdamHyper) {
        for ((params, g), state) in model
            .modules
            .iter_mut()
            .zip(&grads.modules)
            .zip(&mut self.modules)
        {
            nn::adam_step(params, g, state, hyper);
        }
        nn::adam_step(&mut model.selector, &grads.selector, &mut self.selector, hyper);
        nn::adam_step(&mut model.head, &grads.head, &mut self.head, hyper);
    }
}

fn whole_set_batch(ds: &DemoDataset) -> TransitionBatch {
    let mut samples = Vec::with_capacity(ds.num_transitions());
    for k in 0..ds.num_tasks() {
        samples.extend(task_transitions(ds, k));
    }
    TransitionBatch { samples }
}

fn mean_breakdown(per_batch: &[LossBreakdown]) -> LossBreakdown {
    let n = per_batch.len() as f64;
    let mut acc = LossBreakdown {
        total: 0.0,
        bc: 0.0,
        share: 0.0,
        explore: 0.0,
        sparse: 0.0,
        smooth: 0.0,
    };
    for b in per_batch {
        acc.total += b.total;
        acc.bc += b.bc;
        acc.share += b.share;
        acc.explore += b.explore;
        acc.sparse += b.sparse;
        acc.smooth += b.smooth;
    }
    acc.total /= n;
    acc.bc /= n;
    acc.share /= n;
    acc.explore /= n;
    acc.sparse /= n;
    acc.smooth /= n;
    acc
}

/// Train a gated policy on a demonstration set.
///
/// Splits trajectories, then runs `epochs` passes of stratified mini-batch
/// Adam on the joint objective, recording train and validation loss
/// components per epoch. Returns the parameters from the epoch with the
/// lowest validation imitation loss. A non-finite batch loss aborts with
/// [`Error::Diverged`].
pub fn train_maps(cfg: &TrainConfig, demos: &DemoDataset) -> Result<MapsTrainOutput> {
    cfg.validate()?;
    let split = split_dataset(demos, cfg.train_fraction, seeding::derive(cfg.seed, STREAM_SPLIT))?;
    let shape = ModelShape {
        state_dim: demos.state_dim,
        action_dim: demos.action_dim,
        num_tasks: demos.num_tasks(),
        num_modules: cfg.num_modules,
        feature_dim: cfg.feature_dim,
        module_hidden: cfg.module_hidden.clone(),
        selector_hidden: cfg.selector_hidden.clone(),
    };
    let mut model = MapsModel::init(&shape, seeding::derive(cfg.seed, STREAM_MODEL))?;
    let mut adam = MapsAdam::new(&model);
    let hyper = cfg.adam();
    let val_batch = whole_set_batch(&split.val);

    let mut history = TrainHistory::default();
    let mut best: Option<(usize, f64, MapsModel)> = None;
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, STREAM_EPOCH_BASE + epoch as u64));
        let batches = make_batches(&split.train, cfg.batch_size, &mut rng);
        let mut per_batch = Vec::with_capacity(batches.len());
        for batch in &batches {
            let (breakdown, grads) =
                policy::total_loss(&model, batch, &cfg.loss_weights, &cfg.selector_weights)?;
            if !breakdown.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: breakdown.total,
                });
            }
            adam.step(&mut model, &grads, &hyper);
            per_batch.push(breakdown);
        }
        let val =
            policy::evaluate_loss(&model, &val_batch, &cfg.loss_weights, &cfg.selector_weights)?;
        if !val.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                loss: val.total,
            });
        }
        history.epochs.push(EpochRecord {
            epoch,
            train: mean_breakdown(&per_batch),
            val,
        });
        if best.as_ref().is_none_or(|(_, bc, _)| val.bc < *bc) {
            best = Some((epoch, val.bc, model.clone()));
        }
    }

    let (best_epoch, _, model) = best.expect("at least one epoch ran");
    Ok(MapsTrainOutput {
        model,
        history,
        best_epoch,
    })
}

/// Which cloning baseline a plain MLP run implements.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    /// One policy per task, trained on that task's demonstrations only.
    SingleTask,
    /// One policy for all tasks, task identity appended to the input.
    MultiTaskOneHot,
    /// One shared trunk with a separate output head per task.
    MultiTaskMultiHead,
}

/// Per-epoch imitation losses of a baseline run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineEpoch {
    pub epoch: usize,
    pub train_bc: f64,
    pub val_bc: f64,
}

/// A finished baseline run.
#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub kind: BaselineKind,
    pub model: MlpParams,
    pub history: Vec<BaselineEpoch>,
    pub best_epoch: usize,
}

/// How a baseline maps a state onto the shared MLP machinery: the network
/// input and the offset of the output block the task reads (and, during
/// training, supervises).
pub(crate) fn baseline_encoding(
    kind: BaselineKind,
    state: &[f64],
    task: usize,
    num_tasks: usize,
    action_dim: usize,
) -> (Vec<f64>, usize) {
    match kind {
        BaselineKind::SingleTask => (state.to_vec(), 0),
        BaselineKind::MultiTaskOneHot => {
            let mut input = state.to_vec();
            let mut one_hot = vec![0.0; num_tasks];
            one_hot[task] = 1.0;
            input.extend_from_slice(&one_hot);
            (input, 0)
        }
        BaselineKind::MultiTaskMultiHead => (state.to_vec(), task * action_dim),
    }
}

/// Mean squared action error of a baseline on a set of samples, with
/// parameter gradients when `grads` is supplied. Each sample supervises only
/// its own output block; the rest of the output gradient stays zero, which
/// for the multi-head baseline routes updates through the shared trunk to
/// exactly one head.
fn baseline_bc(
    kind: BaselineKind,
    params: &MlpParams,
    samples: &[TransitionSample],
    num_tasks: usize,
    action_dim: usize,
    mut grads: Option<&mut MlpGrads>,
) -> f64 {
    let b = samples.len() as f64;
    let mut loss = 0.0;
    for sample in samples {
        let (input, offset) =
            baseline_encoding(kind, &sample.state, sample.task, num_tasks, action_dim);
        let (output, trace) = nn::forward(params, &input);
        let mut dout = vec![0.0; output.len()];
        for i in 0..action_dim {
            let err = output[offset + i] - sample.action[i];
            loss += err * err;
            dout[offset + i] = 2.0 * err / b;
        }
        if let Some(acc) = grads.as_deref_mut() {
            let (g, _) = nn::backward(params, &trace, &dout);
            acc.add_scaled(&g, 1.0);
        }
    }
    loss / b
}

fn baseline_sizes(kind: BaselineKind, cfg: &TrainConfig, ds: &DemoDataset) -> Vec<usize> {
    let (input, output) = match kind {
        BaselineKind::SingleTask => (ds.state_dim, ds.action_dim),
        BaselineKind::MultiTaskOneHot => (ds.state_dim + ds.num_tasks(), ds.action_dim),
        BaselineKind::MultiTaskMultiHead => (ds.state_dim, ds.num_tasks() * ds.action_dim),
    };
    let mut sizes = vec![input];
    sizes.extend_from_slice(&cfg.module_hidden);
    sizes.push(output);
    sizes
}

fn train_baseline(
    kind: BaselineKind,
    cfg: &TrainConfig,
    demos: &DemoDataset,
    model_seed: u64,
) -> Result<BaselineOutput> {
    cfg.validate()?;
    let split = split_dataset(demos, cfg.train_fraction, seeding::derive(cfg.seed, STREAM_SPLIT))?;
    let sizes = baseline_sizes(kind, cfg, demos);
    let mut params = MlpParams::init(&sizes, model_seed)?;
    let mut adam = AdamState::new(&params);
    let hyper = cfg.adam();
    let num_tasks = demos.num_tasks();
    let action_dim = demos.action_dim;
    let val_samples = whole_set_batch(&split.val).samples;

    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, MlpParams)> = None;
    for epoch in 0..cfg.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, STREAM_EPOCH_BASE + epoch as u64));
        let batches = make_batches(&split.train, cfg.batch_size, &mut rng);
        let mut train_acc = 0.0;
        for batch in &batches {
            let mut grads = MlpGrads::zeros_like(&params);
            let loss = baseline_bc(
                kind,
                &params,
                &batch.samples,
                num_tasks,
                action_dim,
                Some(&mut grads),
            );
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            nn::adam_step(&mut params, &grads, &mut adam, &hyper);
            train_acc += loss;
        }
        let val_bc = baseline_bc(kind, &params, &val_samples, num_tasks, action_dim, None);
        if !val_bc.is_finite() {
            return Err(Error::Diverged { epoch, loss: val_bc });
        }
        history.push(BaselineEpoch {
            epoch,
            train_bc: train_acc / batches.len() as f64,
            val_bc,
        });
        if best.as_ref().is_none_or(|(_, bc, _)| val_bc < *bc) {
            best = Some((epoch, val_bc, params.clone()));
        }
    }

    let (best_epoch, _, model) = best.expect("at least one epoch ran");
    Ok(BaselineOutput {
        kind,
        model,
        history,
        best_epoch,
    })
}

/// Clone one task's expert with a plain MLP on that task's data alone.
pub fn train_single_bc(cfg: &TrainConfig, demos: &DemoDataset, task: usize) -> Result<BaselineOutput> {
    if task >= demos.num_tasks() {
        return Err(Error::InvalidConfig(format!(
            "task {task} out of range for {} tasks",
            demos.num_tasks()
        )));
    }
    let sub = DemoDataset {
        state_dim: demos.state_dim,
        action_dim: demos.action_dim,
        tasks: vec![demos.tasks[task].clone()],
    };
    train_baseline(
        BaselineKind::SingleTask,
        cfg,
        &sub,
        seeding::derive(seeding::derive(cfg.seed, STREAM_MODEL), task as u64),
    )
}

/// Clone all experts with one MLP that reads the task as a one-hot input.
pub fn train_mt_bc(cfg: &TrainConfig, demos: &DemoDataset) -> Result<BaselineOutput> {
    train_baseline(
        BaselineKind::MultiTaskOneHot,
        cfg,
        demos,
        seeding::derive(cfg.seed, STREAM_MODEL),
    )
}

/// Clone all experts with a shared trunk and one output head per task.
pub fn train_mtmh_bc(cfg: &TrainConfig, demos: &DemoDataset) -> Result<BaselineOutput> {
    train_baseline(
        BaselineKind::MultiTaskMultiHead,
        cfg,
        demos,
        seeding::derive(cfg.seed, STREAM_MODEL),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Trajectory;
    use crate::envs::{self, DemoConfig, Suite};

    /// A small synthetic dataset with recognisable, collision-free values:
    /// task k's trajectory t occupies x ∈ [100k + 10t, 100k + 10t + 0.1·steps),
    /// so every (task, trajectory, step) has a unique state.
    fn toy_dataset(tasks: usize, trajs_per_task: usize, steps: usize) -> DemoDataset {
        assert!(steps < 100, "steps must stay below the trajectory spacing");
        let tasks = (0..tasks)
            .map(|k| {
                (0..trajs_per_task)
                    .map(|t| {
                        let base = k as f64 * 100.0 + t as f64 * 10.0;
                        Trajectory {
                            states: (0..steps)
                                .map(|s| vec![base + s as f64 * 0.1, 0.5])
                                .collect(),
                            actions: (0..steps).map(|s| vec![base - s as f64 * 0.1]).collect(),
                        }
                    })
                    .collect()
            })
            .collect();
        DemoDataset {
            state_dim: 2,
            action_dim: 1,
            tasks,
        }
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            num_modules: 2,
            feature_dim: 16,
            module_hidden: vec![32],
            selector_hidden: vec![16],
            batch_size: 32,
            epochs: 8,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_validation_rejects_bad_fields() {
        let good = tiny_config(0);
        good.validate().unwrap();
        for breakage in [
            |c: &mut TrainConfig| c.num_modules = 1,
            |c: &mut TrainConfig| c.feature_dim = 0,
            |c: &mut TrainConfig| c.batch_size = 0,
            |c: &mut TrainConfig| c.epochs = 0,
            |c: &mut TrainConfig| c.learning_rate = 0.0,
            |c: &mut TrainConfig| c.learning_rate = -1.0,
            |c: &mut TrainConfig| c.adam_beta1 = 1.0,
            |c: &mut TrainConfig| c.adam_beta2 = -0.1,
            |c: &mut TrainConfig| c.adam_epsilon = 0.0,
            |c: &mut TrainConfig| c.train_fraction = 0.0,
            |c: &mut TrainConfig| c.train_fraction = 1.0,
        ] {
            let mut cfg = good.clone();
            breakage(&mut cfg);
            assert!(cfg.validate().is_err(), "breakage must be rejected: {cfg:?}");
        }
    }

    #[test]
    fn split_respects_fraction_and_keeps_every_trajectory() {
        let ds = toy_dataset(3, 10, 4);
        let split = split_dataset(&ds, 0.7, 5).unwrap();
        for k in 0..3 {
            assert_eq!(split.train.tasks[k].len(), 7);
            assert_eq!(split.val.tasks[k].len(), 3);
            // Disjoint cover: every original trajectory lands on exactly
            // one side.
            for traj in &ds.tasks[k] {
                let in_train = split.train.tasks[k].contains(traj);
                let in_val = split.val.tasks[k].contains(traj);
                assert!(in_train ^ in_val);
            }
        }
        // Extreme fractions still leave one trajectory on each side.
        let lop = split_dataset(&ds, 0.999, 5).unwrap();
        assert_eq!(lop.val.tasks[0].len(), 1);
        let tiny = split_dataset(&ds, 0.001, 5).unwrap();
        assert_eq!(tiny.train.tasks[0].len(), 1);
    }

    #[test]
    fn split_is_seed_deterministic_and_actually_shuffles() {
        let ds = toy_dataset(2, 12, 3);
        let a = split_dataset(&ds, 0.7, 9).unwrap();
        let b = split_dataset(&ds, 0.7, 9).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&ds, 0.7, 10).unwrap();
        assert_ne!(a, c, "different seeds should cut differently");
        let in_order: Vec<_> = ds.tasks[0][..8].to_vec();
        assert_ne!(
            a.train.tasks[0], in_order,
            "split must shuffle, not slice in order"
        );
    }

    #[test]
    fn split_rejects_single_trajectory_tasks() {
        let ds = toy_dataset(2, 1, 3);
        assert!(matches!(
            split_dataset(&ds, 0.7, 0),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn batches_cover_everything_once_and_stay_stratified() {
        let ds = toy_dataset(3, 4, 25); // 100 transitions per task
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches = make_batches(&ds, 32, &mut rng);
        assert_eq!(batches.len(), 300usize.div_ceil(32));

        let mut seen: Vec<(usize, String)> = Vec::new();
        for batch in &batches {
            assert_eq!(
                batch.tasks_present(),
                vec![0, 1, 2],
                "every batch carries every task"
            );
            for s in &batch.samples {
                seen.push((s.task, format!("{:?}", s.state)));
            }
        }
        assert_eq!(seen.len(), 300, "batches partition the transitions");
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 300, "no transition may repeat within an epoch");
    }

    #[test]
    fn batch_count_is_capped_by_the_smallest_task() {
        let mut ds = toy_dataset(2, 4, 25); // task sizes 100 / 6
        ds.tasks[1] = vec![
            Trajectory {
                states: vec![vec![9.0, 9.0]; 3],
                actions: vec![vec![1.0]; 3],
            },
            Trajectory {
                states: vec![vec![8.0, 8.0]; 3],
                actions: vec![vec![1.0]; 3],
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = make_batches(&ds, 16, &mut rng);
        assert_eq!(batches.len(), 6, "cap at the smallest task's transition count");
        for batch in &batches {
            assert_eq!(batch.tasks_present(), vec![0, 1]);
        }
    }

    #[test]
    fn batching_keeps_predecessor_links() {
        let ds = toy_dataset(1, 2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let batches = make_batches(&ds, 4, &mut rng);
        let mut starts = 0;
        for batch in &batches {
            for s in &batch.samples {
                match &s.prev_state {
                    None => starts += 1,
                    Some(prev) => {
                        // The predecessor is the state one step back along
                        // the same trajectory: x differs by exactly 0.1.
                        assert!((s.state[0] - prev[0] - 0.1).abs() < 1e-12);
                    }
                }
            }
        }
        assert_eq!(starts, 2, "exactly one start sample per trajectory");
    }

    #[test]
    fn maps_training_is_bit_reproducible_per_seed() {
        let ds = toy_dataset(2, 4, 6);
        let cfg = TrainConfig {
            epochs: 3,
            ..tiny_config(12)
        };
        let a = train_maps(&cfg, &ds).unwrap();
        let b = train_maps(&cfg, &ds).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert_eq!(a.best_epoch, b.best_epoch);

        let other = train_maps(&TrainConfig { seed: 13, ..cfg }, &ds).unwrap();
        assert_ne!(
            a.history, other.history,
            "a different seed must change the run"
        );
    }

    #[test]
    fn maps_training_learns_the_sub_behavior_demos() {
        // Small but real: a reduced gated policy on a reduced demo set must
        // cut its validation imitation loss by an order of magnitude against
        // actions of magnitude ~1.
        let suite = Suite::sub_behavior();
        let demos = envs::generate_demos(&suite, &DemoConfig::new(6, 11)).unwrap();
        let cfg = TrainConfig {
            num_modules: 3,
            feature_dim: 24,
            module_hidden: vec![48, 48],
            selector_hidden: vec![32],
            epochs: 80,
            learning_rate: 1e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train_maps(&cfg, &demos).unwrap();
        let first = out.history.epochs.first().unwrap();
        let best = &out.history.epochs[out.best_epoch];
        // Measured 0.08x / 0.016 on this seeded fixture; the bounds leave
        // ~3x headroom for batching or initialisation tweaks.
        assert!(
            best.val.bc < 0.25 * first.val.bc,
            "validation imitation loss should drop sharply: {} -> {}",
            first.val.bc,
            best.val.bc
        );
        assert!(
            best.val.bc < 0.05,
            "absolute validation imitation loss too high: {}",
            best.val.bc
        );
        // The recorded best epoch really is the argmin of the curve.
        let min_bc = out
            .history
            .epochs
            .iter()
            .map(|e| e.val.bc)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(min_bc, best.val.bc);
    }

    #[test]
    fn divergence_is_reported_not_propagated() {
        let ds = toy_dataset(2, 3, 5);
        let cfg = TrainConfig {
            learning_rate: 1e308,
            epochs: 4,
            ..tiny_config(0)
        };
        match train_maps(&cfg, &ds) {
            Err(Error::Diverged { loss, .. }) => assert!(!loss.is_finite()),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn baselines_learn_their_datasets() {
        let suite = Suite::sub_behavior();
        let demos = envs::generate_demos(&suite, &DemoConfig::new(4, 11)).unwrap();
        let cfg = TrainConfig {
            module_hidden: vec![48, 48],
            epochs: 50,
            learning_rate: 1e-3,
            seed: 1,
            ..tiny_config(1)
        };

        let single = train_single_bc(&cfg, &demos, 0).unwrap();
        assert_eq!(single.model.input_dim(), demos.state_dim);
        assert_eq!(single.model.output_dim(), demos.action_dim);

        let mt = train_mt_bc(&cfg, &demos).unwrap();
        assert_eq!(mt.model.input_dim(), demos.state_dim + 4);
        assert_eq!(mt.model.output_dim(), demos.action_dim);

        let mtmh = train_mtmh_bc(&cfg, &demos).unwrap();
        assert_eq!(mtmh.model.input_dim(), demos.state_dim);
        assert_eq!(mtmh.model.output_dim(), 4 * demos.action_dim);

        // Measured on this seeded fixture: ratios 0.10-0.31 with absolute
        // bests of 0.05-0.09; the one-hot baseline converges slowest.
        for out in [&single, &mt, &mtmh] {
            let first = out.history.first().unwrap().val_bc;
            let best = out.history[out.best_epoch].val_bc;
            assert!(
                best < 0.5 * first && best < 0.15,
                "{:?}: val loss should improve markedly: {first} -> {best}",
                out.kind
            );
        }
    }

    #[test]
    fn multi_head_gradients_stay_inside_the_sample_head() {
        let ds = toy_dataset(3, 2, 4);
        let cfg = tiny_config(7);
        let sizes = baseline_sizes(BaselineKind::MultiTaskMultiHead, &cfg, &ds);
        let params = MlpParams::init(&sizes, 0).unwrap();
        let samples = task_transitions(&ds, 1);
        let mut grads = MlpGrads::zeros_like(&params);
        baseline_bc(
            BaselineKind::MultiTaskMultiHead,
            &params,
            &samples[..2],
            3,
            1,
            Some(&mut grads),
        );
        let last = params.num_layers() - 1;
        let in_dim = params.layer_sizes[last];
        for head in 0..3 {
            let row = &grads.weights[last][head * in_dim..(head + 1) * in_dim];
            let touched = row.iter().any(|&g| g != 0.0) || grads.biases[last][head] != 0.0;
            assert_eq!(
                touched,
                head == 1,
                "only the supervised head may receive gradient (head {head})"
            );
        }
        // The shared trunk still learns from every sample.
        assert!(grads.weights[0].iter().any(|&g| g != 0.0));
    }

    #[test]
    fn baseline_runs_are_reproducible() {
        let ds = toy_dataset(2, 4, 6);
        let cfg = TrainConfig {
            epochs: 3,
            ..tiny_config(4)
        };
        let a = train_mt_bc(&cfg, &ds).unwrap();
        let b = train_mt_bc(&cfg, &ds).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn single_task_baseline_rejects_bad_task_index() {
        let ds = toy_dataset(2, 3, 4);
        assert!(matches!(
            train_single_bc(&tiny_config(0), &ds, 5),
            Err(Error::InvalidConfig(_))
        ));
    }
}

