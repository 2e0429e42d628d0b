//! CSV and SVG report emission.
//!
//! All writers render floats with Rust's shortest-round-trip `Display`, so a
//! bit-identical run produces a byte-identical file — reruns are diffable.

use maps_core::eval::{AblationReport, ComparisonTable, Method, UsageReport};
use maps_core::trainer::{BaselineEpoch, TrainHistory};
use std::path::Path;

use crate::{io_err, Result};

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Training history of a gated-policy run. One `train` and one `val` row per
/// epoch. `L_total` is the weighted objective; the four regulariser columns
/// hold the raw (unweighted) term values.
pub fn history_csv(config_hash: &str, history: &TrainHistory) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("epoch,split,L_total,L_BC,L_share,L_explore,L_sparse,L_smooth\n");
    for rec in &history.epochs {
        for (split, loss) in [("train", &rec.train), ("val", &rec.val)] {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                rec.epoch, split, loss.total, loss.bc, loss.share, loss.explore, loss.sparse,
                loss.smooth
            ));
        }
    }
    out
}

/// Baseline history in the same schema: a baseline's objective is imitation
/// only, so `L_total = L_BC` and the regulariser columns are zero.
pub fn baseline_history_csv(config_hash: &str, history: &[BaselineEpoch]) -> String {
    let mut out = String::new();
    out.push_str(&format!("# config_hash={config_hash}\n"));
    out.push_str("epoch,split,L_total,L_BC,L_share,L_explore,L_sparse,L_smooth\n");
    for rec in history {
        out.push_str(&format!("{},train,{},{},0,0,0,0\n", rec.epoch, rec.train_bc, rec.train_bc));
        out.push_str(&format!("{},val,{},{},0,0,0,0\n", rec.epoch, rec.val_bc, rec.val_bc));
    }
    out
}

/// Per-task closed-loop success, one row per task plus a `mean` row.
pub fn success_csv(rates: &[f64], n_starts: usize) -> String {
    let mut out = String::from("task,successes,starts,rate\n");
    for (task, rate) in rates.iter().enumerate() {
        let hits = (rate * n_starts as f64).round() as usize;
        out.push_str(&format!("{task},{hits},{n_starts},{rate}\n"));
    }
    let mean = rates.iter().sum::<f64>() / rates.len().max(1) as f64;
    out.push_str(&format!("mean,,,{mean}\n"));
    out
}

/// Module usage: soft occurrence (mean gate) and the fraction of steps where
/// the module wins the argmax, per (task, module) pair.
pub fn usage_csv(usage: &UsageReport) -> String {
    let mut out = String::from("task,module,mean_gate,argmax_share\n");
    for task in 0..usage.num_tasks() {
        for module in 0..usage.num_modules() {
            out.push_str(&format!(
                "{task},{module},{},{}\n",
                usage.mean_gates[task][module], usage.argmax_share[task][module]
            ));
        }
    }
    out
}

/// One ablation run: per-task success plus per-task and aggregate effective
/// module counts. The `task` column reads `aggregate` on the summary row.
pub fn ablation_csv(report: &AblationReport) -> String {
    let mut out = String::from("term,task,success,effective_modules\n");
    let term = report.term.name();
    for (task, rate) in report.success.iter().enumerate() {
        out.push_str(&format!(
            "{term},{task},{rate},{}\n",
            maps_core::eval::effective_count(&report.usage.mean_gates[task])
        ));
    }
    let mean = report.success.iter().sum::<f64>() / report.success.len().max(1) as f64;
    out.push_str(&format!(
        "{term},aggregate,{mean},{}\n",
        report.usage.aggregate_effective()
    ));
    out
}

/// The full comparison grid, one row per (suite, demo count, seed, method,
/// task) cell, preceded by per-method win/loss tallies against the
/// single-task baseline as comment lines.
pub fn comparison_csv(table: &ComparisonTable) -> String {
    let mut out = String::new();
    for method in [Method::Maps, Method::MultiTask, Method::MultiHead] {
        let tally = table.tally(method);
        out.push_str(&format!(
            "# tally method={} better={} worse={} tie={} total={}\n",
            method.name(),
            tally.better,
            tally.worse,
            tally.tie,
            tally.total()
        ));
    }
    out.push_str("suite,demos_per_task,seed,method,task,success\n");
    for cell in &table.cells {
        for (task, rate) in cell.success.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{task},{rate}\n",
                cell.suite.name(),
                cell.demos_per_task,
                cell.seed,
                cell.method.name()
            ));
        }
    }
    out
}

const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#76b7b2", "#edc948", "#9c755f",
];

/// Grouped bar chart of module usage: one group per task, one bar per module,
/// height = mean gate score. Pure string assembly; the output is valid
/// standalone SVG.
pub fn usage_svg(usage: &UsageReport, task_names: &[String]) -> String {
    let num_tasks = usage.num_tasks();
    let num_modules = usage.num_modules();
    assert_eq!(task_names.len(), num_tasks, "one name per task");

    let bar_w = 18.0;
    let group_gap = 28.0;
    let group_w = bar_w * num_modules as f64;
    let margin_left = 56.0;
    let margin_top = 34.0;
    let plot_h = 220.0;
    let label_h = 30.0;
    let legend_h = 24.0;
    let plot_w = num_tasks as f64 * group_w + (num_tasks as f64 - 1.0) * group_gap;
    let width = margin_left + plot_w + 24.0;
    let height = margin_top + plot_h + label_h + legend_h;

    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    ));
    s.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"18\" font-size=\"13\">Module usage by task (mean gate score)</text>\n",
        margin_left
    ));

    // y axis with ticks at 0, 0.5, 1.
    for (frac, label) in [(0.0, "0"), (0.5, "0.5"), (1.0, "1")] {
        let y = margin_top + plot_h * (1.0 - frac);
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#cccccc\"/>\n",
            margin_left,
            margin_left + plot_w
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>\n",
            margin_left - 6.0,
            y + 4.0
        ));
    }

    for (task, row) in usage.mean_gates.iter().enumerate() {
        let group_x = margin_left + task as f64 * (group_w + group_gap);
        for (module, &gate) in row.iter().enumerate() {
            let h = plot_h * gate.clamp(0.0, 1.0);
            let x = group_x + module as f64 * bar_w;
            let y = margin_top + plot_h - h;
            s.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{h:.1}\" \
                 fill=\"{}\"/>\n",
                bar_w - 2.0,
                PALETTE[module % PALETTE.len()]
            ));
        }
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n",
            group_x + group_w / 2.0,
            margin_top + plot_h + 16.0,
            xml_escape(&task_names[task])
        ));
    }

    let legend_y = margin_top + plot_h + label_h + 4.0;
    for module in 0..num_modules {
        let x = margin_left + module as f64 * 88.0;
        s.push_str(&format!(
            "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"{}\"/>\n",
            legend_y,
            PALETTE[module % PALETTE.len()]
        ));
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\">module {module}</text>\n",
            x + 14.0,
            legend_y + 9.0
        ));
    }

    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
