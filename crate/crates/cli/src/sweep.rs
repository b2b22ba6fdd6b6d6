//! Size x ratio x seed grids, one `corridor train` subprocess per cell.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use anyhow::{Context, Result};
use corridor_core::presets::PresetName;
use corridor_core::trainer::{MetricsLog, METRICS_FILE};
use serde::{Deserialize, Serialize};

use crate::manifest::{RunManifest, RunStatus};

pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_WINDOW: &str = "mean episode reward over the last 25% of logged episodes (at least one)";

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub size: PresetName,
    pub ratio: f64,
    pub seed: u64,
}

impl Cell {
    pub fn name(&self) -> String {
        format!("{}_r{}_s{}", self.size, self.ratio, self.seed)
    }
}

pub fn grid(sizes: &[PresetName], ratios: &[f64], seeds: &[u64]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &size in sizes {
        for &ratio in ratios {
            for &seed in seeds {
                cells.push(Cell { size, ratio, seed });
            }
        }
    }
    cells
}

/// Mean of the last quarter of the episode rewards.
pub fn final_window_mean(rewards: &[f64]) -> Option<f64> {
    if rewards.is_empty() {
        return None;
    }
    let k = rewards.len().div_ceil(4).max(1);
    let tail = &rewards[rewards.len() - k..];
    Some(tail.iter().sum::<f64>() / k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub name: String,
    pub size: PresetName,
    pub ratio: f64,
    pub seed: u64,
    pub dir: PathBuf,
    pub status: RunStatus,
    pub episodes: usize,
    pub final_window_mean_reward: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub final_window: String,
    pub cells: Vec<CellSummary>,
    /// Completed cells, best final-window reward first.
    pub ranking: Vec<String>,
}

fn summarize_cell(cell: &Cell, dir: &Path, exit_error: Option<String>) -> CellSummary {
    let manifest = RunManifest::try_load(dir);
    let log = MetricsLog::read_csv(&dir.join(METRICS_FILE)).ok();
    let rewards: Vec<f64> = log.map(|l| l.rows.iter().map(|r| r.episode_reward).collect()).unwrap_or_default();
    let status = match (&manifest, &exit_error) {
        (_, Some(_)) => RunStatus::Failed,
        (Some(m), None) => m.status,
        (None, None) => RunStatus::Failed,
    };
    let error = exit_error.or_else(|| manifest.and_then(|m| m.error));
    CellSummary {
        name: cell.name(),
        size: cell.size,
        ratio: cell.ratio,
        seed: cell.seed,
        dir: dir.to_path_buf(),
        status,
        episodes: rewards.len(),
        final_window_mean_reward: final_window_mean(&rewards),
        error,
    }
}

pub fn rank(cells: &[CellSummary]) -> Vec<String> {
    let mut done: Vec<&CellSummary> = cells
        .iter()
        .filter(|c| c.status == RunStatus::Completed && c.final_window_mean_reward.is_some())
        .collect();
    done.sort_by(|a, b| {
        b.final_window_mean_reward
            .partial_cmp(&a.final_window_mean_reward)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.name.cmp(&b.name))
    });
    done.into_iter().map(|c| c.name.clone()).collect()
}

pub struct SweepPlan {
    pub exe: PathBuf,
    pub out: PathBuf,
    pub cells: Vec<Cell>,
    /// Extra `train` flags shared by every cell.
    pub common_args: Vec<String>,
    pub jobs: usize,
}

pub fn is_complete(dir: &Path) -> bool {
    RunManifest::try_load(dir).is_some_and(|m| m.status == RunStatus::Completed)
}

/// Runs every unfinished cell, at most `jobs` at once, then writes the grid summary.
pub fn run(plan: &SweepPlan) -> Result<SweepSummary> {
    std::fs::create_dir_all(&plan.out)?;
    let mut pending: VecDeque<(usize, PathBuf)> = VecDeque::new();
    let mut exit_errors: Vec<Option<String>> = vec![None; plan.cells.len()];
    for (i, cell) in plan.cells.iter().enumerate() {
        let dir = plan.out.join(cell.name());
        if is_complete(&dir) {
            eprintln!("skip {} (completed)", cell.name());
        } else {
            pending.push_back((i, dir));
        }
    }
    let mut running: Vec<(usize, Child)> = Vec::new();
    let jobs = plan.jobs.max(1);
    while !pending.is_empty() || !running.is_empty() {
        while running.len() < jobs {
            let Some((i, dir)) = pending.pop_front() else { break };
            let cell = &plan.cells[i];
            std::fs::create_dir_all(&dir)?;
            let log = std::fs::File::create(dir.join("train.log"))?;
            let mut cmd = Command::new(&plan.exe);
            cmd.arg("train")
                .arg("--size")
                .arg(cell.size.to_string())
                .arg("--ratio")
                .arg(cell.ratio.to_string())
                .arg("--seed")
                .arg(cell.seed.to_string())
                .arg("--out")
                .arg(&dir)
                .args(&plan.common_args)
                .stdout(Stdio::from(log.try_clone()?))
                .stderr(Stdio::from(log));
            eprintln!("start {}", cell.name());
            match cmd.spawn() {
                Ok(child) => running.push((i, child)),
                Err(e) => exit_errors[i] = Some(format!("spawn failed: {e}")),
            }
        }
        if running.is_empty() {
            continue;
        }
        // Cells run for minutes; polling keeps this free of threads.
        let mut finished = None;
        while finished.is_none() {
            for (k, (_, child)) in running.iter_mut().enumerate() {
                if let Some(status) = child.try_wait()? {
                    finished = Some((k, status));
                    break;
                }
            }
            if finished.is_none() {
                std::thread::sleep(std::time::Duration::from_millis(50));
            }
        }
        let (k, status) = finished.expect("loop exits with a finished child");
        let (i, _) = running.swap_remove(k);
        let name = plan.cells[i].name();
        if status.success() {
            eprintln!("done  {name}");
        } else {
            eprintln!("FAIL  {name} ({status})");
            exit_errors[i] = Some(format!("train exited with {status}"));
        }
    }
    let cells: Vec<CellSummary> = plan
        .cells
        .iter()
        .zip(exit_errors)
        .map(|(cell, err)| summarize_cell(cell, &plan.out.join(cell.name()), err))
        .collect();
    let summary = SweepSummary {
        final_window: FINAL_WINDOW.to_string(),
        ranking: rank(&cells),
        cells,
    };
    let path = plan.out.join(SUMMARY_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&summary)?).with_context(|| format!("writing {}", path.display()))?;
    Ok(summary)
}
