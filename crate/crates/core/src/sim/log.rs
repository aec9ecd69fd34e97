use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::config::EpisodeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Success,
    Collision,
    Freeze,
    Timeout,
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Success => "success",
            Self::Collision => "collision",
            Self::Freeze => "freeze",
            Self::Timeout => "timeout",
        })
    }
}

/// One control step. Vectors are per agent unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    /// Joint state at the start of the step.
    pub state: Vec<f64>,
    /// Joint control applied at the first tracker tick, after latency,
    /// perturbation, noise and clipping.
    pub applied: Vec<f64>,
    /// Joint control commanded by the planners at this step.
    pub commanded: Vec<f64>,
    /// Mode belief each agent acted on.
    pub beliefs: Vec<Vec<f64>>,
    /// Agent 0's position-only baseline filter over agent 1.
    pub naive: Vec<f64>,
    /// `mode_values[i][z]`: agent `i`'s value of mode `z` at the current state.
    pub mode_values: Vec<Vec<f64>>,
    /// Wall time of an equilibrium solve published this step, else 0.
    pub ne_us: f64,
    /// Policy evaluation summed over agents.
    pub policy_us: f64,
    pub track_us: f64,
}

/// Nominal positions of every mode of a published bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankRecord {
    pub solve_step: usize,
    pub publish_step: usize,
    /// `positions[z][k]` is `[x0, y0, x1, y1]` at `solve_step + k`.
    pub positions: Vec<Vec<Vec<f64>>>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub config: EpisodeConfig,
    pub dt: f64,
    pub num_agents: usize,
    pub num_modes: usize,
    pub rows: Vec<StepRecord>,
    pub banks: Vec<BankRecord>,
    pub outcome: Outcome,
    /// Simulated time at which the outcome was decided.
    pub outcome_time: f64,
    pub min_distance: f64,
    pub ne_failures: usize,
    pub errors: Vec<String>,
}

const STATE_FIELDS: [&str; 8] = ["px", "py", "v", "theta", "zeta", "s", "n", "xi"];
const CONTROL_FIELDS: [&str; 2] = ["steer_rate", "accel"];

fn agent_name(i: usize) -> String {
    match i {
        0 => "ego".into(),
        1 => "other".into(),
        _ => format!("agent{i}"),
    }
}

/// Ratio of an outcome over several episodes.
pub fn rate(logs: &[EpisodeLog], outcome: Outcome) -> f64 {
    if logs.is_empty() {
        return 0.0;
    }
    logs.iter().filter(|l| l.outcome == outcome).count() as f64 / logs.len() as f64
}

/// `sum_t |u_{t+1} - u_t|` over one channel of a series.
pub fn total_variation(series: &[f64]) -> f64 {
    series.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// Total variation of one commanded control channel of one agent.
pub fn control_total_variation(log: &EpisodeLog, agent: usize, channel: usize) -> f64 {
    let m = log.rows.first().map_or(0, |r| r.commanded.len() / log.num_agents.max(1));
    let series: Vec<f64> = log.rows.iter().map(|r| r.commanded[agent * m + channel]).collect();
    total_variation(&series)
}

impl EpisodeLog {
    /// Per-step CSV header. Order: step, time; each agent's state; applied
    /// then commanded controls; each agent's belief; the naive belief; mode
    /// values per agent; loop timings.
    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["step".to_string(), "time".to_string()];
        for i in 0..self.num_agents {
            h.extend(STATE_FIELDS.iter().map(|f| format!("{}_{f}", agent_name(i))));
        }
        for prefix in ["", "cmd_"] {
            for i in 0..self.num_agents {
                h.extend(CONTROL_FIELDS.iter().map(|f| format!("{}_{prefix}{f}", agent_name(i))));
            }
        }
        for i in 0..self.num_agents {
            h.extend((0..self.num_modes).map(|z| format!("{}_b{z}", agent_name(i))));
        }
        h.extend((0..self.num_modes).map(|z| format!("naive_b{z}")));
        for i in 0..self.num_agents {
            h.extend((0..self.num_modes).map(|z| format!("{}_v_mode{z}", agent_name(i))));
        }
        h.extend(["ne_us", "policy_us", "track_us"].map(String::from));
        h
    }

    fn csv_row(&self, r: &StepRecord) -> Vec<String> {
        let mut out = vec![r.step.to_string(), format!("{}", r.time)];
        let nums = r
            .state
            .iter()
            .chain(&r.applied)
            .chain(&r.commanded)
            .chain(r.beliefs.iter().flatten())
            .chain(&r.naive)
            .chain(r.mode_values.iter().flatten())
            .chain([&r.ne_us, &r.policy_us, &r.track_us]);
        out.extend(nums.map(|v| format!("{v}")));
        out
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.csv_header()).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record(self.csv_row(r)).map_err(csv_err)?;
        }
        wr.flush().map_err(|e| Error::Io(e.to_string()))
    }

    /// Long-format mode predictions: `solve_step, publish_step, mode, k,
    /// ego_px, ego_py, other_px, other_py`.
    pub fn write_modes_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["solve_step", "publish_step", "mode", "k", "ego_px", "ego_py", "other_px", "other_py"])
            .map_err(csv_err)?;
        for b in &self.banks {
            for (z, traj) in b.positions.iter().enumerate() {
                for (k, p) in traj.iter().enumerate() {
                    let mut rec = vec![b.solve_step.to_string(), b.publish_step.to_string(), z.to_string(), k.to_string()];
                    rec.extend(p.iter().map(|v| format!("{v}")));
                    wr.write_record(rec).map_err(csv_err)?;
                }
            }
        }
        wr.flush().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn summary(&self) -> EpisodeSummary {
        let mean = |f: &dyn Fn(&StepRecord) -> f64| {
            let v: Vec<f64> = self.rows.iter().map(f).filter(|v| *v > 0.0).collect();
            if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 }
        };
        EpisodeSummary {
            ego: self.config.ego.to_string(),
            other: self.config.other.to_string(),
            seed: self.config.seed,
            latency_steps: self.config.latency_steps,
            perturbation: self.config.perturbation.to_string(),
            outcome: self.outcome,
            outcome_time: self.outcome_time,
            steps: self.rows.len(),
            min_distance: self.min_distance,
            ego_accel_tv: control_total_variation(self, 0, 1),
            other_accel_tv: control_total_variation(self, 1, 1),
            final_beliefs: self.rows.last().map(|r| r.beliefs.clone()).unwrap_or_default(),
            final_naive: self.rows.last().map(|r| r.naive.clone()).unwrap_or_default(),
            naive_peak: (0..self.num_modes)
                .map(|z| self.rows.iter().map(|r| r.naive[z]).fold(f64::NAN, f64::max))
                .collect(),
            ne_solves: self.banks.len(),
            ne_failures: self.ne_failures,
            ne_mean_us: mean(&|r| r.ne_us),
            policy_mean_us: mean(&|r| r.policy_us),
            track_mean_us: mean(&|r| r.track_us),
            errors: self.errors.clone(),
        }
    }

    /// Writes `<stem>.csv`, `<stem>_modes.csv` and `<stem>.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let paths = [
            dir.join(format!("{stem}.csv")),
            dir.join(format!("{stem}_modes.csv")),
            dir.join(format!("{stem}.json")),
        ];
        let open = |p: &Path| fs::File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())));
        self.write_csv(open(&paths[0])?)?;
        self.write_modes_csv(open(&paths[1])?)?;
        let json = serde_json::to_string_pretty(&self.summary()).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(&paths[2], json).map_err(|e| Error::Io(format!("{}: {e}", paths[2].display())))?;
        Ok(paths.to_vec())
    }

    /// Same states, controls and beliefs; timings are ignored.
    pub fn same_trajectory(&self, other: &EpisodeLog) -> bool {
        self.max_trajectory_gap(other) == Some(0.0)
    }

    /// Largest absolute difference in states, controls and beliefs, or
    /// `None` if the logs differ in length or outcome.
    pub fn max_trajectory_gap(&self, other: &EpisodeLog) -> Option<f64> {
        if self.rows.len() != other.rows.len() || self.outcome != other.outcome {
            return None;
        }
        let mut gap: f64 = 0.0;
        for (a, b) in self.rows.iter().zip(&other.rows) {
            let pairs = a
                .state
                .iter()
                .zip(&b.state)
                .chain(a.applied.iter().zip(&b.applied))
                .chain(a.commanded.iter().zip(&b.commanded))
                .chain(a.beliefs.iter().flatten().zip(b.beliefs.iter().flatten()))
                .chain(a.naive.iter().zip(&b.naive));
            for (x, y) in pairs {
                gap = gap.max((x - y).abs());
            }
        }
        Some(gap)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

/// Structured per-episode summary, written as JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub ego: String,
    pub other: String,
    pub seed: u64,
    pub latency_steps: usize,
    pub perturbation: String,
    pub outcome: Outcome,
    pub outcome_time: f64,
    pub steps: usize,
    pub min_distance: f64,
    pub ego_accel_tv: f64,
    pub other_accel_tv: f64,
    pub final_beliefs: Vec<Vec<f64>>,
    pub final_naive: Vec<f64>,
    /// Largest weight the baseline filter gave each mode.
    pub naive_peak: Vec<f64>,
    pub ne_solves: usize,
    pub ne_failures: usize,
    pub ne_mean_us: f64,
    pub policy_mean_us: f64,
    pub track_mean_us: f64,
    pub errors: Vec<String>,
}
