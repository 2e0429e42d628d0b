//! Selector network and its four regularisers.
//!
//! The selector is an MLP that reads the state concatenated with a one-hot
//! task encoding and emits one logit per proto-policy module; a softmax
//! turns the logits into gate scores on the simplex. Four losses shape how
//! those scores behave across tasks, batches, samples, and time:
//!
//! * **sharing** — mean squared per-module score difference between every
//!   unordered pair of tasks evaluated at the same states; pulls different
//!   tasks toward reusing the same modules;
//! * **exploration** — penalises imbalanced per-module score mass within a
//!   batch; zero exactly when every module collects `b/M` of the mass;
//! * **sparsity** — a tempered-entropy term, maximal on uniform rows, so
//!   *minimising* it drives each sample's scores toward one-hot;
//! * **smoothness** — mean squared score change between consecutive states
//!   of the same trajectory.
//!
//! Every loss returns its value together with the exact analytic gradient
//! with respect to the scores, so the training loop can push gradients
//! through the softmax into the selector weights. Sharing, exploration, and
//! sparsity visibly compete: no score assignment can zero sharing and
//! exploration while keeping per-task rows one-hot (see the crate tests),
//! and that tension is what drives task decomposition.

use crate::error::{Error, Result};
use crate::nn::{self, ForwardTrace, MlpGrads, MlpParams};

/// Scores below this floor are clamped before the sparsity logarithm and
/// contribute zero gradient.
pub const SCORE_FLOOR: f64 = 1e-12;

/// One-hot task identity fed to the selector alongside the state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskEncoding {
    /// Task index in `0..num_tasks`.
    pub index: usize,
    /// Total number of tasks `K`.
    pub num_tasks: usize,
}

impl TaskEncoding {
    pub fn new(index: usize, num_tasks: usize) -> Result<Self> {
        if num_tasks == 0 || index >= num_tasks {
            return Err(Error::InvalidConfig(format!(
                "task index {index} out of range for {num_tasks} tasks"
            )));
        }
        Ok(Self { index, num_tasks })
    }

    /// The encoding vector: all zeros except a single 1 at `index`.
    pub fn one_hot(&self) -> Vec<f64> {
        assert!(
            self.index < self.num_tasks,
            "task index {} out of range for {} tasks",
            self.index,
            self.num_tasks
        );
        let mut v = vec![0.0; self.num_tasks];
        v[self.index] = 1.0;
        v
    }
}

/// Everything needed to backpropagate through one selector evaluation.
#[derive(Debug, Clone)]
pub struct SelectorTrace {
    /// MLP trace of the logit computation (input = state ++ one-hot).
    pub mlp: ForwardTrace,
    /// Softmax of the logits; sums to 1.
    pub scores: Vec<f64>,
}

/// Evaluate the selector on `state` under `task`: returns the gate scores
/// (softmax over module logits) and the trace for the backward pass.
///
/// Panics if the selector input width is not `state.len() + task.num_tasks`.
pub fn selector_scores(
    selector: &MlpParams,
    state: &[f64],
    task: &TaskEncoding,
) -> (Vec<f64>, SelectorTrace) {
    assert_eq!(
        selector.input_dim(),
        state.len() + task.num_tasks,
        "selector expects state ({}) ++ one-hot ({}) input, has width {}",
        state.len(),
        task.num_tasks,
        selector.input_dim()
    );
    let mut input = Vec::with_capacity(selector.input_dim());
    input.extend_from_slice(state);
    input.extend_from_slice(&task.one_hot());
    let (logits, mlp) = nn::forward(selector, &input);
    let scores = nn::softmax(&logits);
    (scores.clone(), SelectorTrace { mlp, scores })
}

/// Backward pass through one selector evaluation: maps `dL/dscores` through
/// the softmax and the MLP, returning selector parameter gradients. The
/// gradient with respect to the state input is discarded — states are data.
pub fn selector_backward(
    selector: &MlpParams,
    trace: &SelectorTrace,
    score_grad: &[f64],
) -> MlpGrads {
    let dlogits = nn::softmax_backward(&trace.scores, score_grad);
    let (grads, _input_grad) = nn::backward(selector, &trace.mlp, &dlogits);
    grads
}

/// Weights of the four selector regularisers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorLossWeights {
    pub share: f64,
    pub explore: f64,
    pub sparse: f64,
    pub smooth: f64,
}

impl Default for SelectorLossWeights {
    fn default() -> Self {
        Self {
            share: 1.0,
            explore: 0.1,
            sparse: 0.5,
            smooth: 1.0,
        }
    }
}

fn check_rows(scores: &[Vec<f64>], what: &str) -> usize {
    assert!(!scores.is_empty(), "{what}: empty score batch");
    let m = scores[0].len();
    assert!(m >= 1, "{what}: empty score rows");
    for row in scores {
        assert_eq!(row.len(), m, "{what}: ragged score rows");
    }
    m
}

/// Sharing loss: mean squared per-module score difference across all
/// unordered task pairs, evaluated at the same states.
///
/// `scores_by_task[s][k]` is the score row of state `s` under task `k`;
/// the mean runs over modules, states, and the `K(K−1)/2` task pairs.
/// Returns the loss and its gradient with the same shape as the input.
/// With a single task there are no pairs and the loss is zero.
pub fn sharing_loss(scores_by_task: &[Vec<Vec<f64>>]) -> (f64, Vec<Vec<Vec<f64>>>) {
    let b = scores_by_task.len();
    assert!(b >= 1, "sharing loss: empty batch");
    let k = scores_by_task[0].len();
    assert!(k >= 1, "sharing loss: no tasks");
    let m = scores_by_task[0][0].len();
    for per_task in scores_by_task {
        assert_eq!(per_task.len(), k, "sharing loss: ragged task axis");
        for row in per_task {
            assert_eq!(row.len(), m, "sharing loss: ragged score rows");
        }
    }

    let mut grad: Vec<Vec<Vec<f64>>> = scores_by_task
        .iter()
        .map(|per_task| per_task.iter().map(|row| vec![0.0; row.len()]).collect())
        .collect();

    let pairs = k * (k - 1) / 2;
    if pairs == 0 {
        return (0.0, grad);
    }

    let norm = 1.0 / (m as f64 * b as f64 * pairs as f64);
    let mut loss = 0.0;
    for (s, per_task) in scores_by_task.iter().enumerate() {
        for k1 in 0..k {
            for k2 in (k1 + 1)..k {
                for i in 0..m {
                    let diff = per_task[k1][i] - per_task[k2][i];
                    loss += diff * diff;
                    grad[s][k1][i] += 2.0 * norm * diff;
                    grad[s][k2][i] -= 2.0 * norm * diff;
                }
            }
        }
    }
    (loss * norm, grad)
}

/// Exploration loss: `(M/b²) · Σ_i (b/M − Σ_s g_i(s))²` over one batch of
/// score rows. Zero exactly when every module's score column sums to `b/M`,
/// which balances module usage across the batch without forcing individual
/// rows toward uniform. Returns the loss and its per-entry gradient.
pub fn exploration_loss(scores: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let m = check_rows(scores, "exploration loss");
    let b = scores.len() as f64;

    let mut col_sums = vec![0.0f64; m];
    for row in scores {
        for (acc, &g) in col_sums.iter_mut().zip(row) {
            *acc += g;
        }
    }

    let target = b / m as f64;
    let scale = m as f64 / (b * b);
    let mut loss = 0.0;
    for &s in &col_sums {
        let gap = target - s;
        loss += gap * gap;
    }
    loss *= scale;

    // d/dg[s][i] = scale · 2(Σ_s g_i − b/M); identical down each column.
    let col_grad: Vec<f64> = col_sums
        .iter()
        .map(|&s| 2.0 * scale * (s - target))
        .collect();
    let grad = scores.iter().map(|_| col_grad.clone()).collect();
    (loss, grad)
}

/// Sparsity loss: `−(1/(Mb)) · Σ_{s,i} g^(1/ln M) · ln g` with natural
/// logarithms and scores clamped at [`SCORE_FLOOR`].
///
/// The per-sample value is maximal (`ln(M)/e`, each term `e⁻¹·ln M`) on the
/// uniform row and shrinks toward zero as rows approach one-hot, so
/// minimising it sharpens the gate. Clamped entries contribute zero
/// gradient. `M = 1` is rejected: the exponent `1/ln M` is undefined.
pub fn sparsity_loss(scores: &[Vec<f64>]) -> Result<(f64, Vec<Vec<f64>>)> {
    let m = check_rows(scores, "sparsity loss");
    if m < 2 {
        return Err(Error::InvalidConfig(
            "sparsity loss needs at least 2 modules (1/ln M is undefined for M = 1)".into(),
        ));
    }
    let b = scores.len() as f64;
    let alpha = 1.0 / (m as f64).ln();
    let norm = 1.0 / (m as f64 * b);

    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(scores.len());
    for row in scores {
        let mut grow = Vec::with_capacity(row.len());
        for &g in row {
            if g < SCORE_FLOOR {
                let gc = SCORE_FLOOR;
                loss -= norm * gc.powf(alpha) * gc.ln();
                grow.push(0.0);
            } else {
                let lg = g.ln();
                loss -= norm * g.powf(alpha) * lg;
                // d/dg [−g^α ln g] = −g^(α−1) (α ln g + 1).
                grow.push(-norm * g.powf(alpha - 1.0) * (alpha * lg + 1.0));
            }
        }
        grad.push(grow);
    }
    Ok((loss, grad))
}

/// Smoothness loss: mean squared score change across consecutive
/// `(current, previous)` pairs from the same trajectory, normalised by
/// modules and pair count. An empty pair list (batch of trajectory starts)
/// yields zero. Returns the loss and per-pair gradients
/// `(d/d current, d/d previous)`.
pub fn smoothness_loss(pairs: &[(Vec<f64>, Vec<f64>)]) -> (f64, Vec<(Vec<f64>, Vec<f64>)>) {
    if pairs.is_empty() {
        return (0.0, Vec::new());
    }
    let m = pairs[0].0.len();
    for (cur, prev) in pairs {
        assert_eq!(cur.len(), m, "smoothness loss: ragged score rows");
        assert_eq!(prev.len(), m, "smoothness loss: ragged score rows");
    }

    let norm = 1.0 / (m as f64 * pairs.len() as f64);
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pairs.len());
    for (cur, prev) in pairs {
        let mut gc = Vec::with_capacity(m);
        let mut gp = Vec::with_capacity(m);
        for i in 0..m {
            let diff = cur[i] - prev[i];
            loss += diff * diff;
            gc.push(2.0 * norm * diff);
            gp.push(-2.0 * norm * diff);
        }
        grads.push((gc, gp));
    }
    (loss * norm, grads)
}

/// Score views of one training batch, as produced by the composite policy
/// forward pass.
#[derive(Debug, Clone)]
pub struct SelectorBatchScores {
    /// `by_task[s][k]` — scores for sample `s`'s state under every task
    /// encoding `k` (sharing needs all of them).
    pub by_task: Vec<Vec<Vec<f64>>>,
    /// The task each sample actually belongs to; `by_task[s][own_task[s]]`
    /// is the row the policy composition used.
    pub own_task: Vec<usize>,
    /// Scores of each sample's predecessor state under its own task, when
    /// the sample is not a trajectory start.
    pub prev: Vec<Option<Vec<f64>>>,
}

/// Per-component selector loss values plus their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelectorLossBreakdown {
    pub share: f64,
    pub explore: f64,
    pub sparse: f64,
    pub smooth: f64,
    /// `λ₁·share + λ₂·explore + λ₃·sparse + λ₄·smooth`.
    pub weighted_total: f64,
}

/// Gradients of the weighted selector loss with respect to every score view
/// in a [`SelectorBatchScores`].
#[derive(Debug, Clone)]
pub struct SelectorScoreGrads {
    pub by_task: Vec<Vec<Vec<f64>>>,
    pub prev: Vec<Option<Vec<f64>>>,
}

/// Combined selector loss over one batch: evaluates all four regularisers
/// on their respective score views, then accumulates the weighted analytic
/// gradients. Exploration, sparsity, and the current side of smoothness act
/// on each sample's own-task row; sharing acts on all task encodings.
pub fn selector_loss(
    batch: &SelectorBatchScores,
    weights: &SelectorLossWeights,
) -> Result<(SelectorLossBreakdown, SelectorScoreGrads)> {
    let b = batch.by_task.len();
    assert!(b >= 1, "selector loss: empty batch");
    assert_eq!(batch.own_task.len(), b, "own_task length mismatch");
    assert_eq!(batch.prev.len(), b, "prev length mismatch");

    let own_rows: Vec<Vec<f64>> = batch
        .by_task
        .iter()
        .zip(&batch.own_task)
        .map(|(per_task, &k)| per_task[k].clone())
        .collect();

    let (share, share_grad) = sharing_loss(&batch.by_task);
    let (explore, explore_grad) = exploration_loss(&own_rows);
    let (sparse, sparse_grad) = sparsity_loss(&own_rows)?;

    let mut pairs = Vec::new();
    let mut pair_samples = Vec::new();
    for (s, prev) in batch.prev.iter().enumerate() {
        if let Some(prev_row) = prev {
            pairs.push((own_rows[s].clone(), prev_row.clone()));
            pair_samples.push(s);
        }
    }
    let (smooth, smooth_grads) = smoothness_loss(&pairs);

    let weighted_total = weights.share * share
        + weights.explore * explore
        + weights.sparse * sparse
        + weights.smooth * smooth;

    // Accumulate weighted gradients onto the score views.
    let mut by_task_grad: Vec<Vec<Vec<f64>>> = share_grad;
    for per_task in &mut by_task_grad {
        for row in per_task.iter_mut() {
            for g in row.iter_mut() {
                *g *= weights.share;
            }
        }
    }
    for s in 0..b {
        let own = batch.own_task[s];
        let row = &mut by_task_grad[s][own];
        for (g, (&ge, &gs)) in row
            .iter_mut()
            .zip(explore_grad[s].iter().zip(&sparse_grad[s]))
        {
            *g += weights.explore * ge + weights.sparse * gs;
        }
    }
    let mut prev_grad: Vec<Option<Vec<f64>>> = vec![None; b];
    for (p, &s) in pair_samples.iter().enumerate() {
        let (ref cur_g, ref prev_g) = smooth_grads[p];
        let own = batch.own_task[s];
        for (g, &gc) in by_task_grad[s][own].iter_mut().zip(cur_g) {
            *g += weights.smooth * gc;
        }
        prev_grad[s] = Some(prev_g.iter().map(|&g| weights.smooth * g).collect());
    }

    Ok((
        SelectorLossBreakdown {
            share,
            explore,
            sparse,
            smooth,
            weighted_total,
        },
        SelectorScoreGrads {
            by_task: by_task_grad,
            prev: prev_grad,
        },
    ))
}
