//! Demonstration containers shared by the environments, the trainer, and
//! the on-disk formats.

use crate::error::{Error, Result};

/// One expert episode: `states[t]` is the observation the expert saw when it
/// emitted `actions[t]`. The two vectors always have equal, nonzero length.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// A multi-task demonstration set: trajectories grouped by task, with task
/// indices dense in `0..num_tasks()`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    /// `tasks[k]` holds every demonstration of task `k`.
    pub tasks: Vec<Vec<Trajectory>>,
}

impl DemoDataset {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Total number of `(state, action)` pairs across all tasks.
    pub fn num_transitions(&self) -> usize {
        self.tasks
            .iter()
            .flat_map(|trajs| trajs.iter().map(Trajectory::len))
            .sum()
    }

    /// Number of `(state, action)` pairs in task `k`.
    pub fn task_transitions(&self, k: usize) -> usize {
        self.tasks[k].iter().map(Trajectory::len).sum()
    }

    /// Structural validation: at least one task, every trajectory non-empty
    /// with consistent dimensions, every value finite.
    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidData("dataset has no tasks".into()));
        }
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::InvalidData(format!(
                "zero dimension: state_dim={}, action_dim={}",
                self.state_dim, self.action_dim
            )));
        }
        for (k, trajs) in self.tasks.iter().enumerate() {
            for (t, traj) in trajs.iter().enumerate() {
                if traj.is_empty() {
                    return Err(Error::InvalidData(format!(
                        "task {k} trajectory {t} is empty"
                    )));
                }
                if traj.states.len() != traj.actions.len() {
                    return Err(Error::InvalidData(format!(
                        "task {k} trajectory {t}: {} states vs {} actions",
                        traj.states.len(),
                        traj.actions.len()
                    )));
                }
                for (i, (s, a)) in traj.states.iter().zip(&traj.actions).enumerate() {
                    if s.len() != self.state_dim {
                        return Err(Error::InvalidData(format!(
                            "task {k} trajectory {t} step {i}: state dim {} != {}",
                            s.len(),
                            self.state_dim
                        )));
                    }
                    if a.len() != self.action_dim {
                        return Err(Error::InvalidData(format!(
                            "task {k} trajectory {t} step {i}: action dim {} != {}",
                            a.len(),
                            self.action_dim
                        )));
                    }
                    if s.iter().chain(a.iter()).any(|v| !v.is_finite()) {
                        return Err(Error::InvalidData(format!(
                            "task {k} trajectory {t} step {i}: non-finite value"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One training sample: a state, the expert action taken there, the owning
/// task, and — when the state is not a trajectory start — the predecessor
/// state, which the smoothness regulariser needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionSample {
    pub state: Vec<f64>,
    pub prev_state: Option<Vec<f64>>,
    pub action: Vec<f64>,
    pub task: usize,
}

/// A mini-batch of transitions. Batches produced by the trainer are
/// stratified: every task of the dataset appears at least once.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionBatch {
    pub samples: Vec<TransitionSample>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct tasks present, sorted ascending.
    pub fn tasks_present(&self) -> Vec<usize> {
        let mut tasks: Vec<usize> = self.samples.iter().map(|s| s.task).collect();
        tasks.sort_unstable();
        tasks.dedup();
        tasks
    }
}
