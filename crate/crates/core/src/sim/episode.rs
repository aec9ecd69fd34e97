use std::collections::VecDeque;
use std::sync::mpsc::{channel, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::game::{DynamicsModel, ProductDynamics, Vector};
use crate::inference::{naive_belief_update, Belief, ModeBank, NAIVE_SIGMA};
use crate::merge::{Bicycle, MergeScenario, ACCEL, CONTROL_DIM, N, S, SINGULARITY_MARGIN, STATE_DIM, STEER_RATE, V};
use crate::planner::{EgoDecision, Planner};
use crate::solver::{RationalityBeta, SolverOptions};

use super::config::{EpisodeConfig, LoopPeriods, Perturbation, Rates, Scheduling};
use super::log::{BankRecord, EpisodeLog, Outcome, StepRecord};

/// Both agents stopped this long without either merging counts as a freeze.
pub const FREEZE_SECONDS: f64 = 2.0;
/// Speed below this fraction of `v_ref` counts as stopped.
pub const FREEZE_SPEED_FRACTION: f64 = 0.1;

struct SolveJob {
    x: Vector,
    step: usize,
    previous: Option<Arc<ModeBank>>,
}

type SolveResult = (usize, Result<ModeBank>);

enum Executor {
    Inline,
    Worker {
        jobs: Sender<SolveJob>,
        results: Receiver<SolveResult>,
        in_flight: bool,
    },
}

struct Episode<'a> {
    scenario: &'a MergeScenario,
    cfg: EpisodeConfig,
    periods: LoopPeriods,
    plant: ProductDynamics,
    beta: RationalityBeta,
    opts: SolverOptions,
    x: Vector,
    time: f64,
    bank: Option<Arc<ModeBank>>,
    planners: Vec<Planner>,
    decisions: Vec<EgoDecision>,
    naive: Belief,
    fifo: VecDeque<Vector>,
    noise_rng: ChaCha8Rng,
    perturb_rng: ChaCha8Rng,
    perturb_draw: f64,
    stopped_for: f64,
    published_us: f64,
    log: EpisodeLog,
    done: bool,
}

/// Runs one closed-loop episode. Solver and integration failures end the
/// episode as a timeout with the error recorded; only invalid configuration
/// is returned as an error.
pub fn run_episode(cfg: &EpisodeConfig, scenario: &MergeScenario) -> Result<EpisodeLog> {
    cfg.validate()?;
    if scenario.lanes.len() != 2 {
        return Err(Error::Config("episodes need exactly two agents".into()));
    }
    let dt = scenario.config.dt;
    let periods = match cfg.scheduling {
        Scheduling::Sequential => Rates::lockstep(dt).periods(dt)?,
        _ => cfg.rates.periods(dt)?,
    };
    let mut ep = Episode::new(cfg.clone(), scenario, periods)?;
    match cfg.scheduling {
        Scheduling::Sequential | Scheduling::MultiRate => ep.run(&mut Executor::Inline),
        Scheduling::Threaded => std::thread::scope(|s| {
            let (jobs, job_rx) = channel::<SolveJob>();
            let (res_tx, results) = channel::<SolveResult>();
            let (beta, opts) = (ep.beta, ep.opts);
            s.spawn(move || {
                for job in job_rx {
                    let bank = scenario.solve_bank(&job.x, job.step, job.previous.as_deref(), beta, &opts);
                    if res_tx.send((job.step, bank)).is_err() {
                        break;
                    }
                }
            });
            let mut exec = Executor::Worker {
                jobs,
                results,
                in_flight: false,
            };
            ep.run(&mut exec);
        }),
    }
    Ok(ep.log)
}

impl<'a> Episode<'a> {
    fn new(cfg: EpisodeConfig, scenario: &'a MergeScenario, periods: LoopPeriods) -> Result<Self> {
        let dt = scenario.config.dt;
        let tick = dt / periods.track_substeps as f64;
        let plant = ProductDynamics::new(
            scenario
                .lanes
                .iter()
                .map(|l| {
                    Arc::new(
                        Bicycle {
                            spline: l.clone(),
                            wheelbase: scenario.config.wheelbase,
                        }
                        .discretized(tick),
                    ) as Arc<dyn DynamicsModel>
                })
                .collect(),
        );
        let n = scenario.lanes.len();
        let planners = vec![
            Planner::new(0, cfg.ego.strategy(0, n)),
            Planner::new(1, cfg.other.strategy(1, n)),
        ];
        let log = EpisodeLog {
            config: cfg.clone(),
            dt,
            num_agents: n,
            num_modes: n,
            rows: Vec::new(),
            banks: Vec::new(),
            outcome: Outcome::Timeout,
            outcome_time: 0.0,
            min_distance: f64::INFINITY,
            ne_failures: 0,
            errors: Vec::new(),
        };
        Ok(Self {
            beta: RationalityBeta::new(scenario.config.beta)?,
            opts: cfg.solver,
            x: scenario.initial_state(),
            time: 0.0,
            bank: None,
            planners,
            decisions: Vec::new(),
            naive: Belief::uniform(n),
            fifo: VecDeque::new(),
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            perturb_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5851_f42d_4c95_7f2d),
            perturb_draw: 0.0,
            stopped_for: 0.0,
            published_us: 0.0,
            log,
            done: false,
            cfg,
            scenario,
            periods,
            plant,
        })
    }

    fn run(&mut self, exec: &mut Executor) {
        if let Err(e) = self.run_inner(exec) {
            self.log.errors.push(e.to_string());
            self.log.outcome = Outcome::Timeout;
            self.log.outcome_time = self.time;
        }
    }

    fn run_inner(&mut self, exec: &mut Executor) -> Result<()> {
        self.check_outcome();
        for step in 0..self.cfg.steps {
            if self.done {
                return Ok(());
            }
            self.observe(step)?;
            if step % self.periods.ne_steps == 0 {
                self.request_solve(exec, step)?;
            }
            self.poll_solve(exec, step)?;
            self.decide(step)?;
            for sub in 0..self.periods.track_substeps {
                self.track(sub)?;
                if self.done {
                    return Ok(());
                }
            }
        }
        self.log.outcome = Outcome::Timeout;
        self.log.outcome_time = self.time;
        Ok(())
    }

    fn request_solve(&mut self, exec: &mut Executor, step: usize) -> Result<()> {
        match exec {
            Executor::Inline => {
                let bank = self
                    .scenario
                    .solve_bank(&self.x, step, self.bank.as_deref(), self.beta, &self.opts);
                self.accept(bank, step)
            }
            Executor::Worker { jobs, in_flight, .. } => {
                if !*in_flight {
                    let job = SolveJob {
                        x: self.x.clone(),
                        step,
                        previous: self.bank.clone(),
                    };
                    jobs.send(job).map_err(|_| Error::Config("solver thread stopped".into()))?;
                    *in_flight = true;
                }
                Ok(())
            }
        }
    }

    fn poll_solve(&mut self, exec: &mut Executor, step: usize) -> Result<()> {
        let Executor::Worker { results, in_flight, .. } = exec else {
            return Ok(());
        };
        if !*in_flight {
            return Ok(());
        }
        let received = if self.bank.is_none() {
            results.recv().map_err(|_| Error::Config("solver thread stopped".into()))?
        } else {
            match results.try_recv() {
                Ok(r) => r,
                Err(TryRecvError::Empty) => return Ok(()),
                Err(TryRecvError::Disconnected) => return Err(Error::Config("solver thread stopped".into())),
            }
        };
        *in_flight = false;
        self.accept(received.1, step)
    }

    /// Publishes a solved bank, or keeps the stale one on failure.
    fn accept(&mut self, bank: Result<ModeBank>, step: usize) -> Result<()> {
        match bank {
            Ok(bank) => {
                self.published_us = bank.solve_time.as_secs_f64() * 1e6;
                self.log.banks.push(BankRecord {
                    solve_step: bank.solve_step,
                    publish_step: step,
                    positions: bank
                        .modes
                        .iter()
                        .map(|m| {
                            m.nominal
                                .states
                                .iter()
                                .map(|x| {
                                    let (a, b) = (self.scenario.position_indices(0), self.scenario.position_indices(1));
                                    vec![x[a[0]], x[a[1]], x[b[0]], x[b[1]]]
                                })
                                .collect()
                        })
                        .collect(),
                    iterations: bank.modes.iter().map(|m| m.diagnostics.iterations).collect(),
                    converged: bank.modes.iter().map(|m| m.diagnostics.converged).collect(),
                });
                self.bank = Some(Arc::new(bank));
                self.naive = Belief::uniform(self.log.num_modes);
                Ok(())
            }
            Err(e) if self.bank.is_some() => {
                self.log.ne_failures += 1;
                self.log.errors.push(format!("step {step}: {e}"));
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Filters on the transition into `step`, using the bank that produced it.
    fn observe(&mut self, step: usize) -> Result<()> {
        let Some(bank) = self.bank.clone() else {
            return Ok(());
        };
        for p in &mut self.planners {
            p.observe(&bank, step, &self.x)?;
        }
        if step > bank.solve_step {
            let idx = self.scenario.position_indices(1);
            let observed = Vector::from_vec(idx.iter().map(|&k| self.x[k]).collect());
            let upd = naive_belief_update(&self.naive, &bank, bank.local_step(step), &idx, &observed, NAIVE_SIGMA)?;
            self.naive = upd.belief;
        }
        Ok(())
    }

    fn decide(&mut self, step: usize) -> Result<()> {
        let bank = self.bank.clone().ok_or_else(|| Error::Config("no equilibrium bank".into()))?;
        let mut decisions = Vec::with_capacity(self.planners.len());
        for p in &mut self.planners {
            if p.belief().is_none() {
                p.observe(&bank, step, &self.x)?;
            }
            decisions.push(p.decide(&bank, step, &self.x)?);
        }
        let t = bank.local_step(step);
        let mode_values = (0..self.log.num_agents)
            .map(|i| {
                bank.modes
                    .iter()
                    .map(|m| {
                        let v = &m.values[i];
                        v.eval(t.min(v.len() - 1), &self.x)
                    })
                    .collect()
            })
            .collect();
        self.log.rows.push(StepRecord {
            step,
            time: step as f64 * self.log.dt,
            state: self.x.iter().copied().collect(),
            applied: Vec::new(),
            commanded: decisions.iter().flat_map(|d| d.control.iter().copied()).collect(),
            beliefs: decisions.iter().map(|d| d.belief.probs().to_vec()).collect(),
            naive: self.naive.probs().to_vec(),
            mode_values,
            ne_us: std::mem::take(&mut self.published_us),
            policy_us: decisions.iter().map(|d| d.policy_us).sum(),
            track_us: 0.0,
        });
        self.decisions = decisions;
        Ok(())
    }

    /// One tracker tick: affine feedback toward the interpolated plan, then
    /// latency, disturbances, clipping and integration.
    fn track(&mut self, sub: usize) -> Result<()> {
        let start = Instant::now();
        let cfg = &self.scenario.config;
        let frac = sub as f64 / self.periods.track_substeps as f64;
        let mut cmd = Vector::zeros(CONTROL_DIM * self.decisions.len());
        for (i, d) in self.decisions.iter().enumerate() {
            let reference = &d.state + (&d.predicted_next - &d.state) * frac;
            let u = &d.control - &d.gain * (&self.x - reference);
            cmd.rows_mut(i * CONTROL_DIM, CONTROL_DIM).copy_from(&u);
        }
        if self.fifo.is_empty() {
            let ticks = self.cfg.latency_steps * self.periods.track_substeps;
            self.fifo.extend(std::iter::repeat_n(cmd.clone(), ticks));
        }
        self.fifo.push_back(cmd);
        let mut u = self.fifo.pop_front().expect("fifo holds the current command");

        let other_accel = CONTROL_DIM + ACCEL;
        match self.cfg.perturbation {
            Perturbation::None => {}
            Perturbation::Sinusoid { amplitude, period } => {
                u[other_accel] += amplitude * (2.0 * std::f64::consts::PI * self.time / period).sin();
            }
            Perturbation::Random { sigma } => {
                if sub == 0 {
                    self.perturb_draw = sigma * sample_standard(&mut self.perturb_rng);
                }
                u[other_accel] += self.perturb_draw;
            }
        }
        if self.cfg.process_noise > 0.0 {
            let noise = Normal::new(0.0, self.cfg.process_noise).expect("validated noise level");
            for v in u.iter_mut() {
                *v += noise.sample(&mut self.noise_rng);
            }
        }
        for i in 0..self.decisions.len() {
            let o = i * CONTROL_DIM;
            u[o + STEER_RATE] = u[o + STEER_RATE].clamp(-cfg.steer_rate_max, cfg.steer_rate_max);
            u[o + ACCEL] = u[o + ACCEL].clamp(-cfg.accel_max, cfg.accel_max);
        }
        if sub == 0 {
            if let Some(row) = self.log.rows.last_mut() {
                row.applied = u.iter().copied().collect();
            }
        }

        for (i, lane) in self.scenario.lanes.iter().enumerate() {
            let o = i * STATE_DIM;
            let margin = 1.0 - self.x[o + N] * lane.kappa(self.x[o + S]);
            if margin <= SINGULARITY_MARGIN {
                return Err(Error::Singularity { s: self.x[o + S], margin });
            }
        }
        let next = self.plant.step(&self.x, &u);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite state at t = {:.2}", self.time)));
        }
        self.x = next;
        self.time += self.log.dt / self.periods.track_substeps as f64;
        if let Some(row) = self.log.rows.last_mut() {
            row.track_us += start.elapsed().as_secs_f64() * 1e6;
        }
        self.check_outcome();
        Ok(())
    }

    fn check_outcome(&mut self) {
        let sc = self.scenario;
        let d = sc.distance(&self.x);
        self.log.min_distance = self.log.min_distance.min(d);
        let radii: f64 = sc.config.agents.iter().map(|a| a.radius).sum();
        let merged: Vec<bool> = (0..2).map(|i| sc.has_merged(&self.x, i)).collect();
        let stopped = (0..2).all(|i| self.x[i * STATE_DIM + V] < FREEZE_SPEED_FRACTION * sc.config.agents[i].v_ref);
        if stopped && !merged.iter().any(|m| *m) {
            self.stopped_for += self.log.dt / self.periods.track_substeps as f64;
        } else {
            self.stopped_for = 0.0;
        }
        let outcome = if d < radii {
            Some(Outcome::Collision)
        } else if merged.iter().all(|m| *m) {
            Some(Outcome::Success)
        } else if self.stopped_for > FREEZE_SECONDS {
            Some(Outcome::Freeze)
        } else {
            None
        };
        if let Some(o) = outcome {
            self.log.outcome = o;
            self.log.outcome_time = self.time;
            self.done = true;
        }
    }
}

fn sample_standard(rng: &mut ChaCha8Rng) -> f64 {
    rand_distr::StandardNormal.sample(rng)
}
