//! Figure data: reward curves per run and base-vs-controlled queue heatmaps.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use corridor_core::trainer::{MetricsLog, METRICS_FILE};

use crate::svg::{self, Series};

/// `root` itself if it holds a metrics log, otherwise every run directory below it (sorted).
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    collect_runs(root, 3, &mut out)?;
    out.sort();
    Ok(out)
}

fn collect_runs(dir: &Path, depth: usize, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join(METRICS_FILE).is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    if depth == 0 {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_runs(&path, depth - 1, out)?;
        }
    }
    Ok(())
}

pub fn run_name(run: &Path) -> String {
    run.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string())
}

/// Writes `<name>_curve.csv` and returns the log.
pub fn write_curve(run: &Path, out_dir: &Path) -> Result<MetricsLog> {
    let log = MetricsLog::read_csv(&run.join(METRICS_FILE)).with_context(|| format!("reading metrics of {}", run.display()))?;
    let path = out_dir.join(format!("{}_curve.csv", run_name(run)));
    let mut w = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(w, "episode,env_steps,wall_clock_h,episode_reward")?;
    for r in &log.rows {
        writeln!(w, "{},{},{},{}", r.episode, r.env_steps, r.wall_clock_s / 3600.0, r.episode_reward)?;
    }
    w.flush()?;
    Ok(log)
}

/// Reward curves for all runs under `runs`, one CSV per run plus two combined SVG plots.
pub fn curves(runs: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let found = find_runs(runs)?;
    if found.is_empty() {
        bail!("no run directory with {METRICS_FILE} under {}", runs.display());
    }
    std::fs::create_dir_all(out_dir)?;
    let mut by_time = Vec::new();
    let mut by_steps = Vec::new();
    for run in &found {
        let log = write_curve(run, out_dir)?;
        let label = run_name(run);
        by_time.push(Series {
            label: label.clone(),
            points: log.rows.iter().map(|r| (r.wall_clock_s / 3600.0, r.episode_reward)).collect(),
        });
        by_steps.push(Series {
            label,
            points: log.rows.iter().map(|r| (r.env_steps as f64, r.episode_reward)).collect(),
        });
    }
    std::fs::write(
        out_dir.join("reward_vs_wall_clock.svg"),
        svg::line_plot("Episode reward during training", "training time (h)", "episode reward", &by_time),
    )?;
    std::fs::write(
        out_dir.join("reward_vs_env_steps.svg"),
        svg::line_plot("Episode reward during training", "environment steps", "episode reward", &by_steps),
    )?;
    Ok(found)
}

/// Queue trace as `time -> per-link queue`, read from `time_s,link_id,queue` CSV.
pub fn read_queue_trace(path: &Path) -> Result<BTreeMap<u64, Vec<f64>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time_s", "link_id", "queue"] {
        bail!("{} is not a queue trace (header {:?})", path.display(), headers);
    }
    let mut out: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let t: u64 = rec[0].parse()?;
        let l: usize = rec[1].parse()?;
        let q: f64 = rec[2].parse()?;
        let row = out.entry(t).or_default();
        if row.len() <= l {
            row.resize(l + 1, 0.0);
        }
        row[l] = q;
    }
    Ok(out)
}

/// Writes `<name>.csv` (one row per control interval, one column per link) and `<name>.svg`.
pub fn heatmap(trace: &BTreeMap<u64, Vec<f64>>, name: &str, title: &str, vmax: f64, out_dir: &Path) -> Result<()> {
    let links = trace.values().map(|r| r.len()).max().unwrap_or(0);
    let mut w = std::io::BufWriter::new(std::fs::File::create(out_dir.join(format!("{name}.csv")))?);
    let cols: Vec<String> = (0..links).map(|l| format!("link_{l}")).collect();
    writeln!(w, "time_s,{}", cols.join(","))?;
    for (t, row) in trace {
        let vals: Vec<String> = (0..links).map(|l| row.get(l).copied().unwrap_or(0.0).to_string()).collect();
        writeln!(w, "{t},{}", vals.join(","))?;
    }
    w.flush()?;
    let values: Vec<Vec<f64>> = (0..links)
        .map(|l| trace.values().map(|r| r.get(l).copied().unwrap_or(0.0)).collect())
        .collect();
    let t0 = trace.keys().next().copied().unwrap_or(0) as f64;
    let t1 = trace.keys().last().copied().unwrap_or(0) as f64;
    std::fs::write(
        out_dir.join(format!("{name}.svg")),
        svg::heatmap(title, "time (s)", "link", (t0, t1), &cols, &values, vmax),
    )?;
    Ok(())
}

/// Side-by-side heatmaps on a shared colour scale.
pub fn queue_heatmaps(base: &Path, controlled: Option<&Path>, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let base = read_queue_trace(base)?;
    let ctrl = controlled.map(read_queue_trace).transpose()?;
    let vmax = base
        .values()
        .chain(ctrl.iter().flat_map(|c| c.values()))
        .flatten()
        .copied()
        .fold(0.0, f64::max);
    heatmap(&base, "heatmap_base", "Queue length, base case", vmax, out_dir)?;
    if let Some(c) = &ctrl {
        heatmap(c, "heatmap_controlled", "Queue length, controlled", vmax, out_dir)?;
    }
    Ok(())
}
