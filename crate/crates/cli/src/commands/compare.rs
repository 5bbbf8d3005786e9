use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use gmop::evaljoint::{aggregate_runs, read_reports, trend_check, write_summary, MetricsReport, SummaryRow};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::write_manifest;
use crate::config::ConfigFile;
use crate::error::CliError;
use crate::svg::strip_plot;

pub const TREND: &str = "trend.json";
const METRICS_PREFIX: &str = "variant,seed,joint_min_ade";

#[derive(Debug, Args, Serialize)]
pub struct CompareArgs {
    /// Metrics CSV files, or directories searched recursively for them
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    pub runs: Option<Vec<PathBuf>>,
    /// Summary CSV path
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional SVG strip plot of per-run metrics
    #[arg(long)]
    pub plot: Option<PathBuf>,
    /// Variant expected to have the lower mean joint NLL
    #[arg(long)]
    pub better: Option<String>,
    #[arg(long)]
    pub worse: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSettings {
    pub runs: Vec<PathBuf>,
    pub out: PathBuf,
    pub plot: Option<PathBuf>,
    pub better: String,
    pub worse: String,
}

impl Default for CompareSettings {
    fn default() -> Self {
        Self {
            runs: Vec::new(),
            out: PathBuf::from("summary.csv"),
            plot: None,
            better: "crossing".into(),
            worse: "no-heuristic".into(),
        }
    }
}

fn is_metrics_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "csv")
        && fs::read_to_string(path).is_ok_and(|t| t.lines().next().is_some_and(|l| l.starts_with(METRICS_PREFIX)))
}

fn collect(dir: &Path, found: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect(&p, found)?;
        } else if is_metrics_csv(&p) {
            found.push(p);
        }
    }
    Ok(())
}

/// Metrics files named directly or found under the given directories, in sorted order.
pub fn discover(runs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut found = Vec::new();
    for r in runs {
        if r.is_dir() {
            collect(r, &mut found)?;
        } else if r.is_file() {
            found.push(r.clone());
        } else {
            return Err(CliError::Usage(format!("run {} not found", r.display())));
        }
    }
    found.sort();
    found.dedup();
    Ok(found)
}

fn cell(mean: f64, std: f64, best: bool) -> String {
    format!("{}{mean:.4} ± {std:.4}", if best { "*" } else { " " })
}

pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut s = format!(
        "{:<30}{:>5}{:>20}{:>20}{:>20}{:>20}\n",
        "variant", "runs", "joint minADE", "joint minFDE", "joint NLL", "clf accuracy"
    );
    for r in rows {
        let acc = match (r.classifier_accuracy_mean, r.classifier_accuracy_std) {
            (Some(m), Some(sd)) => cell(m, sd, r.best_accuracy),
            _ => "-".into(),
        };
        s.push_str(&format!(
            "{:<30}{:>5}{:>20}{:>20}{:>20}{:>20}\n",
            r.variant,
            r.runs,
            cell(r.joint_min_ade_mean, r.joint_min_ade_std, r.best_ade),
            cell(r.joint_min_fde_mean, r.joint_min_fde_std, r.best_fde),
            cell(r.joint_nll_mean, r.joint_nll_std, r.best_nll),
            acc
        ));
    }
    s.push_str("* best mean per metric\n");
    s
}

pub fn run(args: &CompareArgs, file: &ConfigFile) -> Result<(), CliError> {
    let settings: CompareSettings = file.resolve("compare", args)?;
    let files = discover(&settings.runs)?;
    let mut reports: Vec<MetricsReport> = Vec::new();
    for f in &files {
        reports.extend(read_reports(f)?);
    }
    if reports.is_empty() {
        return Err(CliError::Usage("no evaluated runs found (pass --runs with metrics CSVs or directories)".into()));
    }
    let rows = aggregate_runs(&reports);
    if let Some(parent) = settings.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_summary(&settings.out, &rows)?;
    print!("{}", render_table(&rows));

    let trend = trend_check(&rows, &settings.better, &settings.worse);
    match &trend {
        Some(t) => println!("{}", t.line()),
        None => println!("trend {} <= {}: not checked, a variant is missing", settings.better, settings.worse),
    }
    let trend_path = settings.out.with_file_name(TREND);
    fs::write(&trend_path, serde_json::to_string_pretty(&trend)? + "\n")?;
    if let Some(plot) = &settings.plot {
        let order: Vec<String> = rows.iter().map(|r| r.variant.clone()).collect();
        fs::write(plot, strip_plot(&reports, &order))?;
    }
    let stem = settings.out.file_stem().map_or_else(|| "summary".into(), |s| s.to_string_lossy().into_owned());
    write_manifest(
        &settings.out.with_file_name(format!("{stem}.manifest.json")),
        "compare",
        &settings,
        json!({ "inputs": files, "n_runs": reports.len(), "trend": trend }),
    )?;
    Ok(())
}
