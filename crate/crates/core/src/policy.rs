//! The composite gated policy.
//!
//! An action is produced in three stages:
//!
//! 1. `M` task-blind proto-policy modules map the raw state to feature
//!    vectors `μ_i(s) ∈ ℝ^d` — they never see the task;
//! 2. the selector maps `(s, one-hot task)` to gate scores `g ∈ Δ^M`;
//! 3. each feature block is scaled by its score and the concatenation
//!    `(g_1·μ_1, …, g_M·μ_M)` goes through a single affine head.
//!
//! The joint objective is `λ_imitate · L_BC + λ_selector · L_sel`, where
//! `L_BC` is the mean squared action error against the expert and `L_sel`
//! combines the four selector regularisers. [`total_loss`] evaluates the
//! objective on a batch and returns exact analytic gradients for every
//! parameter — modules, selector, and head — assembled by hand from the
//! pieces in [`nn`] and [`selector`](crate::selector) and validated against
//! finite differences.
//!
//! Relabelling modules is a symmetry of the architecture: permuting the
//! module list together with the selector output units and the head input
//! blocks leaves every action bit-identical, because both reductions that
//! cross module boundaries (the softmax normaliser and the head block sum)
//! are performed in value order.

use crate::dataset::TransitionBatch;
use crate::error::{Error, Result};
use crate::nn::{self, ForwardTrace, MlpGrads, MlpParams};
use crate::seeding;
use crate::selector::{
    self, SelectorBatchScores, SelectorLossWeights, SelectorTrace, TaskEncoding,
};

/// Structural description of a gated policy, everything except the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_tasks: usize,
    /// Number of proto-policy modules `M`, at least 2.
    pub num_modules: usize,
    /// Width `d` of each module's feature output.
    pub feature_dim: usize,
    /// Hidden widths of every proto-policy module.
    pub module_hidden: Vec<usize>,
    /// Hidden widths of the selector.
    pub selector_hidden: Vec<usize>,
}

/// A gated multi-task policy: `M` proto-policy modules, a selector, and an
/// affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct MapsModel {
    pub modules: Vec<MlpParams>,
    pub selector: MlpParams,
    /// Single affine layer `(M·d) → action_dim`.
    pub head: MlpParams,
    pub state_dim: usize,
    pub action_dim: usize,
    pub num_tasks: usize,
    pub feature_dim: usize,
}

impl MapsModel {
    /// Seeded construction. Module `i`, the selector, and the head each get
    /// an independent derived seed, so the same master seed always produces
    /// the same model.
    pub fn init(shape: &ModelShape, seed: u64) -> Result<Self> {
        if shape.num_modules < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 modules, got {}",
                shape.num_modules
            )));
        }
        if shape.state_dim == 0
            || shape.action_dim == 0
            || shape.feature_dim == 0
            || shape.num_tasks == 0
        {
            return Err(Error::InvalidConfig(
                "state_dim, action_dim, feature_dim, and num_tasks must be nonzero".into(),
            ));
        }

        let mut module_sizes = vec![shape.state_dim];
        module_sizes.extend_from_slice(&shape.module_hidden);
        module_sizes.push(shape.feature_dim);

        let mut selector_sizes = vec![shape.state_dim + shape.num_tasks];
        selector_sizes.extend_from_slice(&shape.selector_hidden);
        selector_sizes.push(shape.num_modules);

        let modules = (0..shape.num_modules)
            .map(|i| MlpParams::init(&module_sizes, seeding::derive(seed, i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let selector = MlpParams::init(
            &selector_sizes,
            seeding::derive(seed, shape.num_modules as u64),
        )?;
        let head = MlpParams::init(
            &[shape.num_modules * shape.feature_dim, shape.action_dim],
            seeding::derive(seed, shape.num_modules as u64 + 1),
        )?;

        Ok(Self {
            modules,
            selector,
            head,
            state_dim: shape.state_dim,
            action_dim: shape.action_dim,
            num_tasks: shape.num_tasks,
            feature_dim: shape.feature_dim,
        })
    }

    pub fn num_modules(&self) -> usize {
        self.modules.len()
    }

    /// Total scalar parameter count across modules, selector, and head.
    pub fn num_params(&self) -> usize {
        self.modules.iter().map(MlpParams::num_params).sum::<usize>()
            + self.selector.num_params()
            + self.head.num_params()
    }

    /// In-place `params += scale * grads` across every component.
    pub fn add_scaled(&mut self, grads: &MapsGrads, scale: f64) {
        assert_eq!(self.modules.len(), grads.modules.len(), "module count mismatch");
        for (m, g) in self.modules.iter_mut().zip(&grads.modules) {
            m.add_scaled(g, scale);
        }
        self.selector.add_scaled(&grads.selector, scale);
        self.head.add_scaled(&grads.head, scale);
    }
}

/// Gradients shaped like a [`MapsModel`].
#[derive(Debug, Clone)]
pub struct MapsGrads {
    pub modules: Vec<MlpGrads>,
    pub selector: MlpGrads,
    pub head: MlpGrads,
}

impl MapsGrads {
    pub fn zeros_like(model: &MapsModel) -> Self {
        Self {
            modules: model.modules.iter().map(MlpGrads::zeros_like).collect(),
            selector: MlpGrads::zeros_like(&model.selector),
            head: MlpGrads::zeros_like(&model.head),
        }
    }

    pub fn add_scaled(&mut self, other: &MapsGrads, scale: f64) {
        assert_eq!(self.modules.len(), other.modules.len(), "module count mismatch");
        for (a, b) in self.modules.iter_mut().zip(&other.modules) {
            a.add_scaled(b, scale);
        }
        self.selector.add_scaled(&other.selector, scale);
        self.head.add_scaled(&other.head, scale);
    }
}

/// Flat read access to parameter slot `idx` under the canonical order:
/// modules in index order, then selector, then head; within each network,
/// layers in order, weights before biases. Used by finite-difference checks.
pub fn param_at(model: &MapsModel, mut idx: usize) -> f64 {
    for module in &model.modules {
        let n = module.num_params();
        if idx < n {
            return *mlp_param_ref(module, idx);
        }
        idx -= n;
    }
    let n = model.selector.num_params();
    if idx < n {
        return *mlp_param_ref(&model.selector, idx);
    }
    idx -= n;
    *mlp_param_ref(&model.head, idx)
}

/// Mutable access to parameter slot `idx`; see [`param_at`] for the order.
pub fn param_at_mut(model: &mut MapsModel, mut idx: usize) -> &mut f64 {
    for mi in 0..model.modules.len() {
        let n = model.modules[mi].num_params();
        if idx < n {
            return mlp_param_mut(&mut model.modules[mi], idx);
        }
        idx -= n;
    }
    let n = model.selector.num_params();
    if idx < n {
        return mlp_param_mut(&mut model.selector, idx);
    }
    idx -= n;
    mlp_param_mut(&mut model.head, idx)
}

/// Gradient slot `idx` of grads aligned with [`param_at`]'s order.
pub fn grad_at(grads: &MapsGrads, idx: usize) -> f64 {
    let mut idx = idx;
    for g in &grads.modules {
        if let Some(v) = mlp_slot(g, &mut idx) {
            return v;
        }
    }
    if let Some(v) = mlp_slot(&grads.selector, &mut idx) {
        return v;
    }
    if let Some(v) = mlp_slot(&grads.head, &mut idx) {
        return v;
    }
    panic!("gradient index out of range");
}

fn mlp_slot(g: &MlpGrads, idx: &mut usize) -> Option<f64> {
    for l in 0..g.weights.len() {
        if *idx < g.weights[l].len() {
            return Some(g.weights[l][*idx]);
        }
        *idx -= g.weights[l].len();
        if *idx < g.biases[l].len() {
            return Some(g.biases[l][*idx]);
        }
        *idx -= g.biases[l].len();
    }
    None
}

fn mlp_param_ref(p: &MlpParams, mut idx: usize) -> &f64 {
    for l in 0..p.weights.len() {
        if idx < p.weights[l].len() {
            return &p.weights[l][idx];
        }
        idx -= p.weights[l].len();
        if idx < p.biases[l].len() {
            return &p.biases[l][idx];
        }
        idx -= p.biases[l].len();
    }
    panic!("parameter index out of range");
}

fn mlp_param_mut(p: &mut MlpParams, mut idx: usize) -> &mut f64 {
    for l in 0..p.weights.len() {
        if idx < p.weights[l].len() {
            return &mut p.weights[l][idx];
        }
        idx -= p.weights[l].len();
        if idx < p.biases[l].len() {
            return &mut p.biases[l][idx];
        }
        idx -= p.biases[l].len();
    }
    panic!("parameter index out of range");
}

/// Everything cached by one [`policy_forward`] evaluation.
#[derive(Debug, Clone)]
pub struct PolicyTrace {
    pub module_traces: Vec<ForwardTrace>,
    pub selector_trace: SelectorTrace,
    /// Gate scores used for the composition.
    pub scores: Vec<f64>,
    /// `blocks[i] = scores[i] * μ_i(state)`, the head input.
    pub blocks: Vec<Vec<f64>>,
    pub action: Vec<f64>,
}

/// Affine head over score-scaled feature blocks. The per-block partial dot
/// products are summed in value order so that permuting the blocks (with
/// their weights) cannot change the rounding of the result.
fn head_forward(head: &MlpParams, blocks: &[Vec<f64>]) -> Vec<f64> {
    let m = blocks.len();
    let d = blocks[0].len();
    assert_eq!(head.num_layers(), 1, "head must be a single affine layer");
    assert_eq!(head.input_dim(), m * d, "head width does not match M·d");

    let out_dim = head.output_dim();
    let w = &head.weights[0];
    let mut out = Vec::with_capacity(out_dim);
    let mut partials = vec![0.0f64; m];
    for j in 0..out_dim {
        let row = &w[j * m * d..(j + 1) * m * d];
        for (i, block) in blocks.iter().enumerate() {
            partials[i] = nn::dot(&row[i * d..(i + 1) * d], block);
        }
        partials.sort_by(f64::total_cmp);
        out.push(head.biases[0][j] + partials.iter().sum::<f64>());
    }
    out
}

/// Backward through the affine head: returns head parameter gradients and
/// the gradient with respect to each input block.
fn head_backward(
    head: &MlpParams,
    blocks: &[Vec<f64>],
    daction: &[f64],
) -> (MlpGrads, Vec<Vec<f64>>) {
    let m = blocks.len();
    let d = blocks[0].len();
    let out_dim = head.output_dim();
    assert_eq!(daction.len(), out_dim, "head grad length mismatch");

    let mut grads = MlpGrads::zeros_like(head);
    let mut dblocks = vec![vec![0.0f64; d]; m];
    let w = &head.weights[0];
    for j in 0..out_dim {
        let dj = daction[j];
        grads.biases[0][j] = dj;
        let grow = &mut grads.weights[0][j * m * d..(j + 1) * m * d];
        let wrow = &w[j * m * d..(j + 1) * m * d];
        for i in 0..m {
            for e in 0..d {
                grow[i * d + e] = dj * blocks[i][e];
                dblocks[i][e] = dj.mul_add(wrow[i * d + e], dblocks[i][e]);
            }
        }
    }
    (grads, dblocks)
}

/// Produce an action for `state` under `task`: modules → gate → scaled
/// blocks → head. Returns the action with the full trace.
pub fn policy_forward(
    model: &MapsModel,
    state: &[f64],
    task: &TaskEncoding,
) -> (Vec<f64>, PolicyTrace) {
    assert_eq!(state.len(), model.state_dim, "state length mismatch");
    assert_eq!(task.num_tasks, model.num_tasks, "task count mismatch");

    let (scores, selector_trace) = selector::selector_scores(&model.selector, state, task);
    let mut module_traces = Vec::with_capacity(model.modules.len());
    let mut blocks = Vec::with_capacity(model.modules.len());
    for (i, module) in model.modules.iter().enumerate() {
        let (features, trace) = nn::forward(module, state);
        blocks.push(features.iter().map(|&f| scores[i] * f).collect());
        module_traces.push(trace);
    }
    let action = head_forward(&model.head, &blocks);
    (
        action.clone(),
        PolicyTrace {
            module_traces,
            selector_trace,
            scores,
            blocks,
            action,
        },
    )
}

/// Compose an action from externally supplied gate scores (for forced
/// single-module evaluation and for gate-intervention studies). The modules
/// and head run exactly as in [`policy_forward`]; the selector is bypassed.
pub fn action_with_scores(model: &MapsModel, state: &[f64], scores: &[f64]) -> Vec<f64> {
    assert_eq!(state.len(), model.state_dim, "state length mismatch");
    assert_eq!(scores.len(), model.modules.len(), "score length mismatch");
    let blocks: Vec<Vec<f64>> = model
        .modules
        .iter()
        .zip(scores)
        .map(|(module, &g)| {
            let (features, _) = nn::forward(module, state);
            features.iter().map(|&f| g * f).collect()
        })
        .collect();
    head_forward(&model.head, &blocks)
}

/// Relative weights of imitation and selector regularisation in the joint
/// objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalLossWeights {
    pub imitate: f64,
    pub selector: f64,
}

impl Default for TotalLossWeights {
    fn default() -> Self {
        Self {
            imitate: 0.75,
            selector: 0.25,
        }
    }
}

/// Loss values of one batch. The component fields hold the *unweighted*
/// values; `total` is the weighted objective
/// `λ_imitate·bc + λ_selector·(λ₁·share + λ₂·explore + λ₃·sparse + λ₄·smooth)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub bc: f64,
    pub share: f64,
    pub explore: f64,
    pub sparse: f64,
    pub smooth: f64,
}

/// Behavioural-cloning loss: mean over the batch of the squared L2 distance
/// between policy and expert actions (sum over action dimensions, mean over
/// samples). Returns the loss with its exact gradients for every parameter.
pub fn bc_loss(model: &MapsModel, batch: &TransitionBatch) -> Result<(f64, MapsGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let mut grads = MapsGrads::zeros_like(model);
    let b = batch.len() as f64;
    let mut loss = 0.0;
    for sample in &batch.samples {
        let task = TaskEncoding {
            index: sample.task,
            num_tasks: model.num_tasks,
        };
        let (action, trace) = policy_forward(model, &sample.state, &task);
        assert_eq!(sample.action.len(), model.action_dim, "expert action length mismatch");

        let mut daction = Vec::with_capacity(model.action_dim);
        for (a, e) in action.iter().zip(&sample.action) {
            let err = a - e;
            loss += err * err;
            daction.push(2.0 * err / b);
        }

        let dscores = backprop_action_path(model, &trace, &daction, &mut grads, 1.0);
        let sel_grads =
            selector::selector_backward(&model.selector, &trace.selector_trace, &dscores);
        grads.selector.add_scaled(&sel_grads, 1.0);
    }
    Ok((loss / b, grads))
}

/// Push `daction` back through head and modules, accumulating their
/// parameter gradients into `grads` with weight `scale`. Returns the
/// gradient with respect to the gate scores (also scaled), which the caller
/// routes through the selector.
fn backprop_action_path(
    model: &MapsModel,
    trace: &PolicyTrace,
    daction: &[f64],
    grads: &mut MapsGrads,
    scale: f64,
) -> Vec<f64> {
    let (head_grads, dblocks) = head_backward(&model.head, &trace.blocks, daction);
    grads.head.add_scaled(&head_grads, scale);

    let mut dscores = vec![0.0f64; model.modules.len()];
    for (i, module) in model.modules.iter().enumerate() {
        let features = trace.module_traces[i].output();
        let g = trace.scores[i];
        // Block b_i = g_i · μ_i: split the incoming gradient.
        dscores[i] = scale * nn::dot(&dblocks[i], features);
        let dfeatures: Vec<f64> = dblocks[i].iter().map(|&db| g * db).collect();
        let (module_grads, _) = nn::backward(module, &trace.module_traces[i], &dfeatures);
        grads.modules[i].add_scaled(&module_grads, scale);
    }
    dscores
}

/// Forward-only evaluation of the joint objective — same quantities as
/// [`total_loss`] without any gradient work. Used for validation passes;
/// `total_loss_recombines_components` in the tests pins the two against
/// each other so they cannot drift apart.
pub fn evaluate_loss(
    model: &MapsModel,
    batch: &TransitionBatch,
    weights: &TotalLossWeights,
    selector_weights: &SelectorLossWeights,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(Error::InvalidData("empty batch".into()));
    }
    let b = batch.len() as f64;
    let k = model.num_tasks;
    let mut bc = 0.0;
    let mut by_task = Vec::with_capacity(batch.len());
    let mut own_task = Vec::with_capacity(batch.len());
    let mut prev = Vec::with_capacity(batch.len());
    for sample in &batch.samples {
        assert!(sample.task < k, "task index {} out of range", sample.task);
        let task = TaskEncoding {
            index: sample.task,
            num_tasks: k,
        };
        let (action, trace) = policy_forward(model, &sample.state, &task);
        for (a, e) in action.iter().zip(&sample.action) {
            let err = a - e;
            bc += err * err;
        }
        let mut rows = Vec::with_capacity(k);
        for other in 0..k {
            if other == sample.task {
                rows.push(trace.scores.clone());
            } else {
                let enc = TaskEncoding {
                    index: other,
                    num_tasks: k,
                };
                rows.push(selector::selector_scores(&model.selector, &sample.state, &enc).0);
            }
        }
        by_task.push(rows);
        own_task.push(sample.task);
        prev.push(sample.prev_state.as_ref().map(|p| {
            selector::selector_scores(&model.selector, p, &task).0
        }));
    }
    bc /= b;

    let score_batch = SelectorBatchScores {
        by_task,
        own_task,
        prev,
    };
    let (sel, _) = selector::selector_loss(&score_batch, selector_weights)?;
    Ok(LossBreakdown {
        total: weights.imitate * bc + weights.selector * sel.weighted_total,
        bc,
        share: sel.share,
        explore: sel.explore,
        sparse: sel.sparse,
        smooth: sel.smooth,
    })
}

/// The joint training objective on one batch.
///
/// Evaluates the behavioural-cloning term on each sample's own task, the
/// sharing term on selector scores under *every* task encoding, exploration
/// and sparsity on the own-task scores, and smoothness on
/// (current, predecessor) score pairs where a predecessor exists. Returns
/// the loss breakdown together with exact analytic gradients of the
/// weighted total for every parameter.
pub fn total_loss(
    model: &MapsModel,
    batch: &TransitionBatch,
    weights: &TotalLossWeights,
    selector_weights: &SelectorLossWeights,
) -> Result<(LossBreakdown, MapsGrads)> {
    if batch.is_empty() {
        return Err(Error::InvalidData("empty batch".into()));
    }

    let b = batch.len() as f64;
    let k = model.num_tasks;
    let mut grads = MapsGrads::zeros_like(model);

    // Forward everything, collecting the score views the selector losses need.
    let mut traces = Vec::with_capacity(batch.len());
    let mut other_traces: Vec<Vec<Option<SelectorTrace>>> = Vec::with_capacity(batch.len());
    let mut prev_traces: Vec<Option<SelectorTrace>> = Vec::with_capacity(batch.len());
    let mut by_task: Vec<Vec<Vec<f64>>> = Vec::with_capacity(batch.len());
    let mut own_task = Vec::with_capacity(batch.len());
    let mut prev_scores: Vec<Option<Vec<f64>>> = Vec::with_capacity(batch.len());
    let mut bc = 0.0;
    let mut dactions = Vec::with_capacity(batch.len());

    for sample in &batch.samples {
        assert!(sample.task < k, "task index {} out of range", sample.task);
        let task = TaskEncoding {
            index: sample.task,
            num_tasks: k,
        };
        let (action, trace) = policy_forward(model, &sample.state, &task);

        let mut daction = Vec::with_capacity(model.action_dim);
        for (a, e) in action.iter().zip(&sample.action) {
            let err = a - e;
            bc += err * err;
            daction.push(2.0 * err / b);
        }
        dactions.push(daction);

        // Selector under every other task encoding at the same state.
        let mut row_scores = vec![Vec::new(); k];
        let mut row_traces: Vec<Option<SelectorTrace>> = (0..k).map(|_| None).collect();
        row_scores[sample.task] = trace.scores.clone();
        for other in 0..k {
            if other == sample.task {
                continue;
            }
            let enc = TaskEncoding {
                index: other,
                num_tasks: k,
            };
            let (scores, strace) =
                selector::selector_scores(&model.selector, &sample.state, &enc);
            row_scores[other] = scores;
            row_traces[other] = Some(strace);
        }
        by_task.push(row_scores);
        own_task.push(sample.task);
        other_traces.push(row_traces);

        // Predecessor state under the sample's own task, for smoothness.
        if let Some(prev) = &sample.prev_state {
            let (scores, strace) = selector::selector_scores(&model.selector, prev, &task);
            prev_scores.push(Some(scores));
            prev_traces.push(Some(strace));
        } else {
            prev_scores.push(None);
            prev_traces.push(None);
        }

        traces.push(trace);
    }
    bc /= b;

    let score_batch = SelectorBatchScores {
        by_task,
        own_task,
        prev: prev_scores,
    };
    let (sel_breakdown, sel_grads) = selector::selector_loss(&score_batch, selector_weights)?;

    // Backward: action path (weighted by λ_imitate), then every selector
    // evaluation with its combined score gradient.
    for (s, sample) in batch.samples.iter().enumerate() {
        let mut dscores_own =
            backprop_action_path(model, &traces[s], &dactions[s], &mut grads, weights.imitate);
        for (dg, &reg) in dscores_own
            .iter_mut()
            .zip(&sel_grads.by_task[s][sample.task])
        {
            *dg += weights.selector * reg;
        }
        let own = selector::selector_backward(
            &model.selector,
            &traces[s].selector_trace,
            &dscores_own,
        );
        grads.selector.add_scaled(&own, 1.0);

        for other in 0..k {
            if other == sample.task {
                continue;
            }
            let strace = other_traces[s][other]
                .as_ref()
                .expect("trace recorded for every non-own task");
            let dg: Vec<f64> = sel_grads.by_task[s][other]
                .iter()
                .map(|&g| weights.selector * g)
                .collect();
            let other_grads = selector::selector_backward(&model.selector, strace, &dg);
            grads.selector.add_scaled(&other_grads, 1.0);
        }

        if let (Some(strace), Some(dprev)) = (&prev_traces[s], &sel_grads.prev[s]) {
            let dg: Vec<f64> = dprev.iter().map(|&g| weights.selector * g).collect();
            let prev_grads = selector::selector_backward(&model.selector, strace, &dg);
            grads.selector.add_scaled(&prev_grads, 1.0);
        }
    }

    let total = weights.imitate * bc + weights.selector * sel_breakdown.weighted_total;
    Ok((
        LossBreakdown {
            total,
            bc,
            share: sel_breakdown.share,
            explore: sel_breakdown.explore,
            sparse: sel_breakdown.sparse,
            smooth: sel_breakdown.smooth,
        },
        grads,
    ))
}
