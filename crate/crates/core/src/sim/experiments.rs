use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::merge::MergeScenario;

use super::config::{EpisodeConfig, Perturbation, StrategyKind};
use super::log::{control_total_variation, rate, EpisodeLog, EpisodeSummary, Outcome};
use super::run_episode;

/// Lower triangle of the strategy table: row strategy as ego, column
/// strategy as the other agent, with the column index never above the row's.
pub fn lower_triangle() -> Vec<(StrategyKind, StrategyKind)> {
    let all = StrategyKind::ALL;
    (0..all.len())
        .flat_map(|r| (0..=r).map(move |c| (all[r], all[c])))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub ego: StrategyKind,
    pub other: StrategyKind,
    pub success: f64,
    pub collision: f64,
    pub freeze: f64,
    pub timeout: f64,
    pub episodes: Vec<EpisodeSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixResult {
    pub seeds: Vec<u64>,
    pub cells: Vec<MatrixCell>,
}

impl MatrixResult {
    pub fn cell(&self, ego: StrategyKind, other: StrategyKind) -> Option<&MatrixCell> {
        self.cells.iter().find(|c| c.ego == ego && c.other == other)
    }

    /// Success rates as a text table, ego strategies down the side.
    pub fn table(&self) -> String {
        let mut out = format!("{:>8}", "");
        for c in StrategyKind::ALL {
            out += &format!(" {:>8}", c.to_string());
        }
        out.push('\n');
        for r in StrategyKind::ALL {
            out += &format!("{:>8}", r.to_string());
            for c in StrategyKind::ALL {
                match self.cell(r, c) {
                    Some(cell) => out += &format!(" {:>8.1}", cell.success),
                    None => out += &format!(" {:>8}", ""),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every pair for every seed. `on_episode` sees each log as it finishes.
pub fn run_matrix(
    pairs: &[(StrategyKind, StrategyKind)],
    seeds: &[u64],
    base: &EpisodeConfig,
    scenario: &MergeScenario,
    mut on_episode: impl FnMut(&EpisodeLog) -> Result<()>,
) -> Result<MatrixResult> {
    let mut cells = Vec::with_capacity(pairs.len());
    for &(ego, other) in pairs {
        let mut logs = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let cfg = EpisodeConfig {
                ego,
                other,
                seed,
                ..base.clone()
            };
            let log = run_episode(&cfg, scenario)?;
            on_episode(&log)?;
            logs.push(log);
        }
        cells.push(MatrixCell {
            ego,
            other,
            success: rate(&logs, Outcome::Success),
            collision: rate(&logs, Outcome::Collision),
            freeze: rate(&logs, Outcome::Freeze),
            timeout: rate(&logs, Outcome::Timeout),
            episodes: logs.iter().map(EpisodeLog::summary).collect(),
        });
    }
    Ok(MatrixResult {
        seeds: seeds.to_vec(),
        cells,
    })
}

/// One seed of the oscillation experiment: the same disturbed opponent
/// against an ML ego and a QMDP ego.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbPair {
    pub seed: u64,
    pub ml_accel_tv: f64,
    pub qmdp_accel_tv: f64,
    pub ml: EpisodeSummary,
    pub qmdp: EpisodeSummary,
}

impl PerturbPair {
    pub fn ratio(&self) -> f64 {
        self.ml_accel_tv / self.qmdp_accel_tv
    }
}

/// Default disturbance of the oscillation experiment for a scenario.
pub fn default_perturbation(scenario: &MergeScenario) -> Perturbation {
    Perturbation::default_sinusoid(scenario.config.accel_max)
}

/// Paired ML and QMDP episodes on matched seeds. `base` fixes the opponent,
/// disturbance and latency; its ego strategy is ignored.
pub fn run_perturb(
    seeds: &[u64],
    base: &EpisodeConfig,
    scenario: &MergeScenario,
    mut on_episode: impl FnMut(&EpisodeLog) -> Result<()>,
) -> Result<Vec<PerturbPair>> {
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let mut run = |ego| -> Result<EpisodeLog> {
            let log = run_episode(&EpisodeConfig { ego, seed, ..base.clone() }, scenario)?;
            on_episode(&log)?;
            Ok(log)
        };
        let ml = run(StrategyKind::Ml)?;
        let qmdp = run(StrategyKind::Qmdp)?;
        out.push(PerturbPair {
            seed,
            ml_accel_tv: control_total_variation(&ml, 0, crate::merge::ACCEL),
            qmdp_accel_tv: control_total_variation(&qmdp, 0, crate::merge::ACCEL),
            ml: ml.summary(),
            qmdp: qmdp.summary(),
        });
    }
    Ok(out)
}
