use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::Strategy;
use crate::solver::SolverOptions;

/// How an agent picks its controls in an episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    /// Fixed mode in which the other agent goes first.
    Yield,
    /// Fixed mode in which this agent goes first.
    NoYield,
    Ml,
    Qmdp,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [Self::Yield, Self::NoYield, Self::Ml, Self::Qmdp];

    /// Planner strategy for `agent`. Mode `z` is the equilibrium in which
    /// agent `z` goes first.
    pub fn strategy(self, agent: usize, num_agents: usize) -> Strategy {
        match self {
            Self::Yield => Strategy::NoInference {
                mode: (agent + 1) % num_agents,
            },
            Self::NoYield => Strategy::NoInference { mode: agent },
            Self::Ml => Strategy::MaximumLikelihood,
            Self::Qmdp => Strategy::Qmdp,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Yield => "Yield",
            Self::NoYield => "NoYield",
            Self::Ml => "ML",
            Self::Qmdp => "QMDP",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "yield" => Ok(Self::Yield),
            "noyield" => Ok(Self::NoYield),
            "ml" => Ok(Self::Ml),
            "qmdp" => Ok(Self::Qmdp),
            _ => Err(Error::Config(format!("unknown strategy {s:?}; expected yield, noyield, ml or qmdp"))),
        }
    }
}

/// Disturbance added to the other agent's acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Perturbation {
    None,
    /// `amplitude * sin(2 pi t / period)`, m/s^2 and s.
    Sinusoid { amplitude: f64, period: f64 },
    /// Gaussian, redrawn every control step.
    Random { sigma: f64 },
}

impl Perturbation {
    /// Half the actuator limit over a 1.5 s period.
    pub fn default_sinusoid(accel_max: f64) -> Self {
        Self::Sinusoid {
            amplitude: 0.5 * accel_max,
            period: 1.5,
        }
    }
}

impl fmt::Display for Perturbation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => f.write_str("none"),
            Self::Sinusoid { amplitude, period } => write!(f, "sin:{amplitude},{period}"),
            Self::Random { sigma } => write!(f, "rand:{sigma}"),
        }
    }
}

fn parse_f64(what: &str, s: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Config(format!("{what}: cannot parse {s:?} as a number")))
}

impl FromStr for Perturbation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("none") {
            return Ok(Self::None);
        }
        if let Some(rest) = s.strip_prefix("sin:") {
            let (a, p) = rest
                .split_once(',')
                .ok_or_else(|| Error::Config(format!("expected sin:AMPLITUDE,PERIOD, got {s:?}")))?;
            let (amplitude, period) = (parse_f64("amplitude", a)?, parse_f64("period", p)?);
            if !(period > 0.0) {
                return Err(Error::Config(format!("sinusoid period must be positive, got {period}")));
            }
            return Ok(Self::Sinusoid { amplitude, period });
        }
        if let Some(rest) = s.strip_prefix("rand:") {
            let sigma = parse_f64("sigma", rest)?;
            if !(sigma >= 0.0) {
                return Err(Error::Config(format!("sigma must be non-negative, got {sigma}")));
            }
            return Ok(Self::Random { sigma });
        }
        Err(Error::Config(format!("unknown perturbation {s:?}; expected sin:A,P, rand:S or none")))
    }
}

/// Loop rates in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    /// Equilibrium re-solve.
    pub ne: f64,
    /// Belief update and policy; one tick per control step.
    pub belief: f64,
    /// Trajectory tracker.
    pub track: f64,
}

impl Default for Rates {
    fn default() -> Self {
        Self {
            ne: 2.0,
            belief: 20.0,
            track: 100.0,
        }
    }
}

impl FromStr for Rates {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("expected --rates ne,belief,track, got {s:?}")));
        }
        Ok(Self {
            ne: parse_f64("ne rate", parts[0])?,
            belief: parse_f64("belief rate", parts[1])?,
            track: parse_f64("track rate", parts[2])?,
        })
    }
}

fn integer_ratio(what: &str, num: f64, den: f64) -> Result<usize> {
    let r = num / den;
    let k = r.round();
    if k < 1.0 || (r - k).abs() > 1e-6 * k {
        return Err(Error::Config(format!("{what} must be a positive integer, got {r}")));
    }
    Ok(k as usize)
}

/// Loop periods in units of the next faster loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoopPeriods {
    /// Control steps between equilibrium re-solves.
    pub ne_steps: usize,
    /// Tracker ticks per control step.
    pub track_substeps: usize,
}

impl Rates {
    /// The belief loop runs once per control step, so its rate must be
    /// `1/dt`; the other two must divide or be multiples of it.
    pub fn periods(&self, dt: f64) -> Result<LoopPeriods> {
        if !(self.ne > 0.0 && self.belief > 0.0 && self.track > 0.0) {
            return Err(Error::Config(format!("rates must be positive, got {self:?}")));
        }
        if (self.belief * dt - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "belief rate {} Hz must equal the control rate 1/dt = {} Hz",
                self.belief,
                1.0 / dt
            )));
        }
        Ok(LoopPeriods {
            ne_steps: integer_ratio("belief rate / ne rate", self.belief, self.ne)?,
            track_substeps: integer_ratio("track rate / belief rate", self.track, self.belief)?,
        })
    }

    /// Every loop at the control rate.
    pub fn lockstep(dt: f64) -> Self {
        Self {
            ne: 1.0 / dt,
            belief: 1.0 / dt,
            track: 1.0 / dt,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheduling {
    /// Every loop runs once per control step, in order, on one thread.
    Sequential,
    /// Loops fire at their own rates from a deterministic tick schedule.
    MultiRate,
    /// As `MultiRate`, but equilibrium solves run on a worker thread and are
    /// picked up whenever they finish. Not reproducible across runs.
    Threaded,
}

impl FromStr for Scheduling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sequential" => Ok(Self::Sequential),
            "multirate" | "multi-rate" => Ok(Self::MultiRate),
            "threaded" => Ok(Self::Threaded),
            _ => Err(Error::Config(format!("unknown scheduling {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Agent 0.
    pub ego: StrategyKind,
    /// Agent 1.
    pub other: StrategyKind,
    pub seed: u64,
    /// Maximum number of control steps.
    pub steps: usize,
    /// Control steps between a command and its application.
    pub latency_steps: usize,
    pub perturbation: Perturbation,
    pub rates: Rates,
    pub scheduling: Scheduling,
    /// Standard deviation of Gaussian noise on every applied control.
    pub process_noise: f64,
    /// Budget for each equilibrium re-solve.
    pub solver: SolverOptions,
}

/// Re-solve budget: warm starts usually converge in a handful of
/// iterations, and a late bank is worse than a slightly loose one.
pub fn episode_solver_options() -> SolverOptions {
    SolverOptions {
        tolerance: 1e-4,
        max_iterations: 15,
        max_halvings: 4,
        ..SolverOptions::default()
    }
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            ego: StrategyKind::Qmdp,
            other: StrategyKind::NoYield,
            seed: 0,
            steps: 200,
            latency_steps: 0,
            perturbation: Perturbation::None,
            rates: Rates::default(),
            scheduling: Scheduling::MultiRate,
            process_noise: 1e-3,
            solver: episode_solver_options(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.process_noise >= 0.0) {
            return Err(Error::Config(format!("process noise must be non-negative, got {}", self.process_noise)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_cli_values() {
        assert_eq!("NoYield".parse::<StrategyKind>().unwrap(), StrategyKind::NoYield);
        assert!("maybe".parse::<StrategyKind>().is_err());
        assert_eq!(
            "sin:1,1.5".parse::<Perturbation>().unwrap(),
            Perturbation::Sinusoid { amplitude: 1.0, period: 1.5 }
        );
        assert_eq!("rand:0.2".parse::<Perturbation>().unwrap(), Perturbation::Random { sigma: 0.2 });
        assert_eq!("none".parse::<Perturbation>().unwrap(), Perturbation::None);
        assert!("sin:1".parse::<Perturbation>().is_err());
        assert!("sin:1,0".parse::<Perturbation>().is_err());
        assert_eq!("2,20,100".parse::<Rates>().unwrap(), Rates::default());
        assert!("2,20".parse::<Rates>().is_err());
    }

    #[test]
    fn perturbation_display_round_trips() {
        for p in [
            Perturbation::None,
            Perturbation::Sinusoid { amplitude: 0.75, period: 2.0 },
            Perturbation::Random { sigma: 0.1 },
        ] {
            assert_eq!(p.to_string().parse::<Perturbation>().unwrap(), p);
        }
    }

    #[test]
    fn default_rates_give_ten_step_resolves_and_five_substeps() {
        let p = Rates::default().periods(0.05).unwrap();
        assert_eq!(p, LoopPeriods { ne_steps: 10, track_substeps: 5 });
        assert_eq!(
            Rates::lockstep(0.05).periods(0.05).unwrap(),
            LoopPeriods { ne_steps: 1, track_substeps: 1 }
        );
        assert!("3,20,100".parse::<Rates>().unwrap().periods(0.05).is_err());
        assert!("2,10,100".parse::<Rates>().unwrap().periods(0.05).is_err());
    }

    #[test]
    fn yield_defers_to_the_other_agent() {
        assert_eq!(StrategyKind::Yield.strategy(0, 2), Strategy::NoInference { mode: 1 });
        assert_eq!(StrategyKind::Yield.strategy(1, 2), Strategy::NoInference { mode: 0 });
        assert_eq!(StrategyKind::NoYield.strategy(1, 2), Strategy::NoInference { mode: 1 });
    }
}
