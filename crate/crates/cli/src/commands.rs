//! Subcommand implementations. Each function does the work of one CLI verb
//! and returns the human-readable summary the binary prints on success, so
//! integration tests can drive commands without spawning processes.

use crate::checkpoint::{self, Checkpoint, Kind};
use crate::config::{load_config, ConfigFile};
use crate::report;
use crate::{demo_file, CliError, Result};
use maps_core::dataset::DemoDataset;
use maps_core::envs::{self, DemoConfig, Suite, SuiteKind};
use maps_core::eval::{self, BaselinePolicy, Method, Policy, SelectorTerm, SingleTaskSet};
use maps_core::trainer::{self, TrainConfig};
use std::path::{Path, PathBuf};

/// Generate scripted-expert demonstrations and write them as a demo file.
pub fn gen_data(
    suite_kind: SuiteKind,
    per_task: usize,
    seed: u64,
    noise: Option<f64>,
    out: &Path,
) -> Result<String> {
    let suite = Suite::build(suite_kind);
    let mut cfg = DemoConfig::new(per_task, seed);
    if let Some(n) = noise {
        cfg.action_noise = n;
    }
    let demos = envs::generate_demos(&suite, &cfg)?;
    demo_file::write_demos(out, &demos)?;
    Ok(format!(
        "wrote {} trajectories ({} transitions, {} tasks) to {}",
        demos.tasks.iter().map(Vec::len).sum::<usize>(),
        demos.num_transitions(),
        demos.num_tasks(),
        out.display()
    ))
}

/// Train one method on a demo file. Produces one checkpoint (or, for
/// `single`, one per task with `.taskK` inserted before the extension) plus
/// a training-history CSV next to each checkpoint.
pub fn train(
    config_path: &Path,
    data_path: &Path,
    method: Method,
    out: &Path,
    history_override: Option<&Path>,
) -> Result<String> {
    let file = load_config(config_path)?;
    let cfg = file.to_train_config();
    let demos = demo_file::read_demos(data_path)?;
    let hash = file.hash();

    match method {
        Method::Maps => {
            let output = trainer::train_maps(&cfg, &demos)?;
            checkpoint::write_maps(out, &file, &output.model)?;
            let hist_path = history_path(out, history_override, None);
            report::write_text(&hist_path, &report::history_csv(&hash, &output.history))?;
            Ok(format!(
                "trained maps policy (best epoch {}) -> {} (history {})",
                output.best_epoch,
                out.display(),
                hist_path.display()
            ))
        }
        Method::Single => {
            let num_tasks = demos.num_tasks();
            let mut lines = Vec::new();
            for task in 0..num_tasks {
                let output = trainer::train_single_bc(&cfg, &demos, task)?;
                let ckpt_path = task_path(out, task);
                checkpoint::write_baseline(
                    &ckpt_path,
                    &file,
                    Kind::Single,
                    Some(task),
                    num_tasks,
                    demos.state_dim,
                    demos.action_dim,
                    &output.model,
                )?;
                let hist_path = history_path(out, history_override, Some(task));
                report::write_text(
                    &hist_path,
                    &report::baseline_history_csv(&hash, &output.history),
                )?;
                lines.push(format!(
                    "trained single policy for task {task} (best epoch {}) -> {}",
                    output.best_epoch,
                    ckpt_path.display()
                ));
            }
            Ok(lines.join("\n"))
        }
        Method::MultiTask | Method::MultiHead => {
            let (output, kind) = if method == Method::MultiTask {
                (trainer::train_mt_bc(&cfg, &demos)?, Kind::Mt)
            } else {
                (trainer::train_mtmh_bc(&cfg, &demos)?, Kind::Mtmh)
            };
            checkpoint::write_baseline(
                out,
                &file,
                kind,
                None,
                demos.num_tasks(),
                demos.state_dim,
                demos.action_dim,
                &output.model,
            )?;
            let hist_path = history_path(out, history_override, None);
            report::write_text(
                &hist_path,
                &report::baseline_history_csv(&hash, &output.history),
            )?;
            Ok(format!(
                "trained {} policy (best epoch {}) -> {} (history {})",
                kind.name(),
                output.best_epoch,
                out.display(),
                hist_path.display()
            ))
        }
    }
}

/// Closed-loop evaluation of one or more checkpoints on a benchmark suite.
/// A maps/mt/mtmh run takes exactly one checkpoint; a single-task run takes
/// one per task.
pub fn eval(
    ckpt_paths: &[PathBuf],
    suite_kind: SuiteKind,
    n_starts: usize,
    seed: u64,
    out: &Path,
) -> Result<String> {
    if ckpt_paths.is_empty() {
        return Err(CliError::Usage("at least one --ckpt is required".into()));
    }
    if n_starts == 0 {
        return Err(CliError::Usage("--starts must be positive".into()));
    }
    let suite = Suite::build(suite_kind);
    let policy = assemble_policy(ckpt_paths, &suite)?;
    let rates = eval::success_rate(policy.as_ref(), &suite, n_starts, seed);
    report::write_text(out, &report::success_csv(&rates, n_starts))?;
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    let per_task: Vec<String> = suite
        .tasks
        .iter()
        .zip(&rates)
        .map(|(t, r)| format!("{} {:.0}%", t.name, r * 100.0))
        .collect();
    Ok(format!(
        "success on {}: mean {:.1}% ({}) -> {}",
        suite_kind.name(),
        mean * 100.0,
        per_task.join(", "),
        out.display()
    ))
}

/// Module-usage report of a gated-policy checkpoint over a demo file:
/// CSV plus a grouped-bar SVG.
pub fn usage(
    ckpt_path: &Path,
    data_path: &Path,
    out_csv: &Path,
    svg_override: Option<&Path>,
) -> Result<String> {
    let ckpt = checkpoint::read(ckpt_path)?;
    let Checkpoint::Maps { model, .. } = ckpt else {
        return Err(CliError::Usage(format!(
            "usage needs a maps checkpoint, got kind '{}'",
            ckpt.kind().name()
        )));
    };
    let demos = demo_file::read_demos(data_path)?;
    let usage = eval::module_usage(&model, &demos)?;
    report::write_text(out_csv, &report::usage_csv(&usage))?;
    let svg_path = svg_override
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out_csv.with_extension("svg"));
    let names: Vec<String> = (0..usage.num_tasks()).map(|k| format!("task {k}")).collect();
    report::write_text(&svg_path, &report::usage_svg(&usage, &names))?;
    Ok(format!(
        "usage: aggregate effective modules {:.2}, pairwise overlap {:.2} -> {} / {}",
        usage.aggregate_effective(),
        usage.pairwise_overlap(),
        out_csv.display(),
        svg_path.display()
    ))
}

/// Retrain with one selector regulariser removed and report what changes.
pub fn ablate(
    config_path: &Path,
    data_path: &Path,
    term: SelectorTerm,
    suite_kind: SuiteKind,
    n_starts: usize,
    seed: u64,
    out: &Path,
) -> Result<String> {
    let file = load_config(config_path)?;
    let cfg = file.to_train_config();
    let suite = Suite::build(suite_kind);
    let demos = demo_file::read_demos(data_path)?;
    check_suite_match(&demos, &suite, suite_kind)?;
    let rep = eval::ablate(&cfg, &suite, &demos, term, n_starts, seed)?;
    report::write_text(out, &report::ablation_csv(&rep))?;
    let mean = rep.success.iter().sum::<f64>() / rep.success.len().max(1) as f64;
    Ok(format!(
        "ablated {}: mean success {:.1}%, aggregate effective modules {:.2} -> {}",
        term.name(),
        mean * 100.0,
        rep.usage.aggregate_effective(),
        out.display()
    ))
}

/// Full method-comparison grid over suites × demo budgets × seeds.
pub fn compare(
    config_path: &Path,
    suites: &[SuiteKind],
    counts: &[usize],
    seeds: &[u64],
    n_starts: usize,
    out: &Path,
) -> Result<String> {
    if suites.is_empty() || counts.is_empty() || seeds.is_empty() {
        return Err(CliError::Usage(
            "compare needs at least one --suite, --per-task, and --seed".into(),
        ));
    }
    let file = load_config(config_path)?;
    let cfg = file.to_train_config();
    let table = eval::compare(&cfg, suites, counts, seeds, n_starts)?;
    report::write_text(out, &report::comparison_csv(&table))?;
    let mut lines = vec![format!(
        "compared {} cells -> {}",
        table.cells.len(),
        out.display()
    )];
    for method in [Method::Maps, Method::MultiTask, Method::MultiHead] {
        let t = table.tally(method);
        lines.push(format!(
            "  {} vs single: {} better, {} worse, {} tied (of {} task cells)",
            method.name(),
            t.better,
            t.worse,
            t.tie,
            t.total()
        ));
    }
    Ok(lines.join("\n"))
}

/// `out` with `.taskK` inserted before the extension:
/// `model.ckpt` -> `model.task2.ckpt`.
fn task_path(out: &Path, task: usize) -> PathBuf {
    match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => out.with_extension(format!("task{task}.{ext}")),
        None => out.with_extension(format!("task{task}")),
    }
}

fn history_path(out: &Path, history_override: Option<&Path>, task: Option<usize>) -> PathBuf {
    let base = match history_override {
        Some(p) => p.to_path_buf(),
        None => out.with_extension("history.csv"),
    };
    match task {
        Some(k) => task_path(&base, k),
        None => base,
    }
}

fn check_suite_match(demos: &DemoDataset, suite: &Suite, kind: SuiteKind) -> Result<()> {
    if demos.num_tasks() != suite.num_tasks() {
        return Err(CliError::Usage(format!(
            "demo file has {} tasks but suite '{}' has {}",
            demos.num_tasks(),
            kind.name(),
            suite.num_tasks()
        )));
    }
    if demos.state_dim != envs::STATE_DIM || demos.action_dim != envs::ACTION_DIM {
        return Err(CliError::Usage(format!(
            "demo file dims ({}, {}) do not match the simulator ({}, {})",
            demos.state_dim,
            demos.action_dim,
            envs::STATE_DIM,
            envs::ACTION_DIM
        )));
    }
    Ok(())
}

/// Load checkpoints and build the policy they describe, validating counts,
/// kinds, and dimensions against the target suite.
fn assemble_policy(paths: &[PathBuf], suite: &Suite) -> Result<Box<dyn Policy>> {
    let ckpts = paths.iter().map(|p| checkpoint::read(p)).collect::<Result<Vec<_>>>()?;
    let first_kind = ckpts[0].kind();

    if first_kind != Kind::Single {
        if ckpts.len() != 1 {
            return Err(CliError::Usage(format!(
                "kind '{}' takes exactly one checkpoint, got {}",
                first_kind.name(),
                ckpts.len()
            )));
        }
        return match ckpts.into_iter().next().unwrap() {
            Checkpoint::Maps { model, .. } => {
                check_dims(model.num_tasks, model.state_dim, model.action_dim, suite)?;
                Ok(Box::new(model))
            }
            Checkpoint::Baseline {
                kind,
                model,
                num_tasks,
                state_dim,
                action_dim,
                ..
            } => {
                check_dims(num_tasks, state_dim, action_dim, suite)?;
                let baseline = kind.baseline().expect("non-maps checkpoint");
                Ok(Box::new(BaselinePolicy::new(baseline, model, num_tasks)))
            }
        };
    }

    // Single-task sets: one checkpoint per task, each tagged with its task,
    // together covering 0..K exactly and sharing one config.
    let k = suite.num_tasks();
    if ckpts.len() != k {
        return Err(CliError::Usage(format!(
            "suite needs {k} single-task checkpoints, got {}",
            ckpts.len()
        )));
    }
    let mut models: Vec<Option<maps_core::nn::MlpParams>> = vec![None; k];
    let first_config = ckpts[0].config().clone();
    for (path, ckpt) in paths.iter().zip(ckpts) {
        let Checkpoint::Baseline {
            kind: Kind::Single,
            task: Some(task),
            config,
            model,
            num_tasks,
            state_dim,
            action_dim,
        } = ckpt
        else {
            return Err(CliError::Usage(format!(
                "{}: expected a single-task checkpoint",
                path.display()
            )));
        };
        check_dims(num_tasks, state_dim, action_dim, suite)?;
        if config != first_config {
            return Err(CliError::Usage(format!(
                "{}: single-task checkpoints trained with different configs",
                path.display()
            )));
        }
        if models[task].replace(model).is_some() {
            return Err(CliError::Usage(format!(
                "{}: duplicate checkpoint for task {task}",
                path.display()
            )));
        }
    }
    let models = models
        .into_iter()
        .enumerate()
        .map(|(task, m)| {
            m.ok_or_else(|| CliError::Usage(format!("no checkpoint covers task {task}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Box::new(SingleTaskSet { models }))
}

fn check_dims(num_tasks: usize, state_dim: usize, action_dim: usize, suite: &Suite) -> Result<()> {
    if num_tasks != suite.num_tasks() || state_dim != envs::STATE_DIM || action_dim != envs::ACTION_DIM
    {
        return Err(CliError::Usage(format!(
            "checkpoint was trained for {num_tasks} tasks ({state_dim}/{action_dim} dims), \
             which does not match the suite ({} tasks, {}/{} dims)",
            suite.num_tasks(),
            envs::STATE_DIM,
            envs::ACTION_DIM
        )));
    }
    Ok(())
}

/// Canonical train config matching the library defaults, for `--config`-less
/// smoke use and the shipped example files.
pub fn default_config_file() -> ConfigFile {
    ConfigFile::from_train_config(&TrainConfig::default())
}
