//! The synchronous parameter-server loop.
//!
//! Round `t` runs in three phases:
//!
//! 1. every worker draws one sample token, evaluates it at `x_t` (and at
//!    `x_{t-1}` for mu2) and advances its estimator;
//! 2. the attack replaces the Byzantine submissions, having seen all honest ones;
//! 3. the server aggregates, takes the projected step
//!    `w_{t+1} = Pi_K(w_t - eta alpha_t d_hat_t)` and updates the Anytime
//!    average `x_{t+1}`.
//!
//! Phase 1 runs in parallel across workers; results are stored by worker
//! index so the evaluation order never changes a bit of the trace.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_attack, AttackKind, AttackSpec};
use crate::context::{byzantine_count, check_delta, RoundContext};
use crate::error::{Error, Result};
use crate::estimators::{
    anytime_step, anytime_step_gamma, AlphaSchedule, AnytimeState, EstimatorConfig, EstimatorState, StepWeights,
};
use crate::meta::{MetaKind, MetaSpec};
use crate::problems::{DataView, ProblemInstance, SampleToken};
use crate::rng::{domain, seeded_rng};
use crate::vector::{mean_of, WorkerVector};

/// Order in which phase 1 visits workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerOrder {
    #[default]
    Forward,
    Reverse,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub problem: Arc<ProblemInstance>,
    pub delta: f64,
    pub attack: AttackSpec,
    /// Meta-aggregator wrapping the base rule; `MetaKind::None` for a bare rule.
    pub aggregation: MetaSpec,
    pub estimator: EstimatorConfig,
    pub eta: f64,
    pub rounds: usize,
    pub seed: u64,
    /// `w_1 = x_1`; defaults to [`default_initial_point`].
    pub initial_point: Option<WorkerVector>,
    pub worker_order: WorkerOrder,
    /// Record wall-clock timings. Off by default so traces are reproducible.
    pub timing: bool,
    /// Enforce `eta <= 1/(4 L T)`.
    pub theory_mode: bool,
}

impl TrainConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        problem: Arc<ProblemInstance>,
        delta: f64,
        attack: AttackSpec,
        aggregation: MetaSpec,
        estimator: EstimatorConfig,
        eta: f64,
        rounds: usize,
        seed: u64,
    ) -> Self {
        Self {
            problem,
            delta,
            attack,
            aggregation,
            estimator,
            eta,
            rounds,
            seed,
            initial_point: None,
            worker_order: WorkerOrder::Forward,
            timing: false,
            theory_mode: false,
        }
    }

    pub fn workers(&self) -> usize {
        self.problem.workers
    }

    pub fn byzantine_set(&self) -> Vec<usize> {
        self.problem.byzantine()
    }

    /// `1 / (4 L T)`.
    pub fn theory_eta(&self) -> f64 {
        theory_eta(self.problem.constants.lipschitz, self.rounds)
    }

    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::invalid("eta", "must be positive and finite"));
        }
        if self.rounds == 0 {
            return Err(Error::invalid("rounds", "must be at least 1"));
        }
        let m = self.workers();
        let f = self.byzantine_set().len();
        if f > byzantine_count(self.delta, m) {
            return Err(Error::invalid(
                "byzantine",
                format!("{f} Byzantine workers exceed floor(delta*m) = {}", byzantine_count(self.delta, m)),
            ));
        }
        if self.attack.kind.flips_labels() && !self.problem.is_labeled() {
            return Err(Error::UnsupportedAttack {
                attack: "label_flip",
                reason: "the problem has no labels".into(),
            });
        }
        self.attack.validate()?;
        self.aggregation.validate()?;
        self.estimator.validate()?;
        if self.aggregation.delta != self.delta || self.aggregation.base.delta != self.delta {
            return Err(Error::invalid("delta", "aggregation delta differs from the run's delta"));
        }
        if self.theory_mode && self.eta > self.theory_eta() * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "eta",
                format!("{} exceeds 1/(4LT) = {}", self.eta, self.theory_eta()),
            ));
        }
        if let Some(p) = &self.initial_point {
            p.check_dim(self.problem.dimension)?;
            if !self.problem.domain.contains(p, 1e-12) {
                return Err(Error::invalid("initial_point", "lies outside the feasible set"));
            }
        }
        Ok(())
    }

    pub fn meta(&self) -> TraceMeta {
        TraceMeta {
            problem: self.problem.kind_name().to_string(),
            dimension: self.problem.dimension,
            workers: self.workers(),
            delta: self.delta,
            byzantine: self.byzantine_set(),
            attack: self.attack.kind.name().to_string(),
            aggregation: self.aggregation.label(),
            estimator: self.estimator.label(),
            eta: self.eta,
            rounds: self.rounds,
            seed: self.seed,
        }
    }
}

/// `1 / (4 L T)`.
pub fn theory_eta(lipschitz: f64, rounds: usize) -> f64 {
    1.0 / (4.0 * lipschitz * rounds as f64)
}

/// `center + (radius / 2) u` with `u = (1, ..., 1) / sqrt(d)`.
pub fn default_initial_point(problem: &ProblemInstance) -> WorkerVector {
    let k = &problem.domain;
    let step = 0.5 * k.radius / (k.dim() as f64).sqrt();
    k.center.iter().map(|c| c + step).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub problem: String,
    pub dimension: usize,
    pub workers: usize,
    pub delta: f64,
    pub byzantine: Vec<usize>,
    pub attack: String,
    pub aggregation: String,
    pub estimator: String,
    pub eta: f64,
    pub rounds: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub w: WorkerVector,
    pub x: WorkerVector,
    pub d_hat: WorkerVector,
    /// `f(x_t) - f(x*)`.
    pub excess_loss: f64,
    /// `||d_hat_t - grad f(x_t)||^2`.
    pub dev_sq: f64,
    /// `||eps_t^(i)||^2` for each honest worker, in index order.
    pub eps_sq: Vec<f64>,
    pub mean_eps_sq: f64,
    /// `||(1/|G|) sum_i eps_t^(i)||^2`.
    pub collective_eps_sq: f64,
    pub agg_time_ns: u64,
    pub round_time_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `Delta_T` of the last recorded round.
    pub fn final_excess_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.excess_loss)
    }

    pub fn excess_losses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.excess_loss).collect()
    }
}

/// A failed run with everything recorded before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training stopped after {} rounds: {source}", trace.rows.len())]
pub struct TrainError {
    pub trace: Box<TrainingTrace>,
    #[source]
    pub source: Error,
}

/// New estimator state and submitted vector; `None` for skipped workers.
type WorkerStep = Option<(EstimatorState, WorkerVector)>;

/// Mutable run state between rounds.
pub struct Trainer<'a> {
    config: &'a TrainConfig,
    byzantine: Vec<usize>,
    honest: Vec<usize>,
    t: usize,
    w: WorkerVector,
    anytime: AnytimeState,
    x_prev: Option<WorkerVector>,
    states: Vec<EstimatorState>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: &'a TrainConfig) -> Result<Self> {
        config.validate()?;
        let w1 = match &config.initial_point {
            Some(p) => p.clone(),
            None => default_initial_point(&config.problem),
        };
        let alpha1 = config.estimator.schedule(1)?.alpha;
        Ok(Self {
            config,
            byzantine: config.byzantine_set(),
            honest: config.problem.honest.clone(),
            t: 1,
            anytime: AnytimeState::new(w1.clone(), alpha1),
            w: w1,
            x_prev: None,
            states: vec![EstimatorState::new(config.estimator.kind); config.workers()],
        })
    }

    /// The round about to run.
    pub fn round(&self) -> usize {
        self.t
    }

    pub fn current_x(&self) -> &WorkerVector {
        &self.anytime.x_current
    }

    pub fn current_w(&self) -> &WorkerVector {
        &self.w
    }

    fn is_byzantine(&self, worker: usize) -> bool {
        self.byzantine.binary_search(&worker).is_ok()
    }

    /// Phase 1 without committing: the next estimator state and output of
    /// every worker that computes one, indexed by worker.
    fn worker_updates(&self, weights: &StepWeights) -> Result<Vec<Option<(EstimatorState, WorkerVector)>>> {
        let c = self.config;
        let m = c.workers();
        // Byzantine workers only need an honest-looking output when the
        // attack transforms or forwards it.
        let byz_compute = !matches!(c.attack.kind, AttackKind::Little | AttackKind::Empire);
        let order: Vec<usize> = match c.worker_order {
            WorkerOrder::Forward => (0..m).collect(),
            WorkerOrder::Reverse => (0..m).rev().collect(),
        };
        let x = &self.anytime.x_current;
        let computed: Vec<(usize, Result<WorkerStep>)> = order
            .par_iter()
            .map(|&i| {
                let byz = self.is_byzantine(i);
                if byz && !byz_compute {
                    return (i, Ok(None));
                }
                let view = if byz && c.attack.kind.flips_labels() {
                    DataView::FlippedLabels
                } else {
                    DataView::Clean
                };
                let result = (|| {
                    let token = SampleToken::new(c.seed, i, self.t, 0);
                    let mut state = self.states[i].clone();
                    let g_now = c.problem.sample_gradient_with(i, x, token, view)?;
                    let g_prev = match (&self.x_prev, state.needs_previous_point()) {
                        (Some(xp), true) => Some(c.problem.sample_gradient_with(i, xp, token, view)?),
                        _ => None,
                    };
                    let out = state.advance(weights, g_now, g_prev.as_ref())?;
                    Ok(Some((state, out)))
                })();
                (i, result)
            })
            .collect();
        let mut slots: Vec<Option<(EstimatorState, WorkerVector)>> = vec![None; m];
        let mut ordered: Vec<_> = computed;
        ordered.sort_by_key(|(i, _)| *i);
        for (i, r) in ordered {
            slots[i] = r?;
        }
        Ok(slots)
    }

    /// Honest phase-1 outputs of the coming round, in index order.
    pub fn honest_outputs(&self) -> Result<Vec<WorkerVector>> {
        let weights = self.config.estimator.schedule(self.t)?;
        let slots = self.worker_updates(&weights)?;
        Ok(self
            .honest
            .iter()
            .map(|&i| slots[i].as_ref().expect("honest workers always compute").1.clone())
            .collect())
    }

    /// Runs one round and returns its trace row.
    pub fn step(&mut self) -> Result<TraceRow> {
        let c = self.config;
        let started = c.timing.then(Instant::now);
        let t = self.t;
        let weights = c.estimator.schedule(t)?;
        let x = self.anytime.x_current.clone();

        let slots = self.worker_updates(&weights)?;
        let honest_out: Vec<WorkerVector> = self
            .honest
            .iter()
            .map(|&i| slots[i].as_ref().expect("honest workers always compute").1.clone())
            .collect();
        let own: Vec<WorkerVector> = self
            .byzantine
            .iter()
            .filter_map(|&i| slots[i].as_ref().map(|s| s.1.clone()))
            .collect();
        let ctx = RoundContext::new(t, c.workers(), c.delta, self.byzantine.clone(), c.seed)?;
        let byz_out = apply_attack(&c.attack, &honest_out, &own, &ctx)?;

        let mut submissions = Vec::with_capacity(c.workers());
        let (mut h, mut b) = (honest_out.iter(), byz_out.iter());
        for i in 0..c.workers() {
            let v = if self.is_byzantine(i) { b.next() } else { h.next() };
            submissions.push(v.expect("one submission per worker").clone());
        }

        let agg_started = c.timing.then(Instant::now);
        let mut rng = seeded_rng(c.seed, &[domain::BUCKETING, t as u64]);
        let d_hat = c.aggregation.aggregate(&submissions, &mut rng)?;
        let agg_time_ns = agg_started.map_or(0, |s| s.elapsed().as_nanos() as u64);

        let grads: Vec<WorkerVector> = self
            .honest
            .iter()
            .map(|&i| c.problem.true_gradient(i, &x))
            .collect::<Result<_>>()?;
        let eps: Vec<WorkerVector> = honest_out.iter().zip(&grads).map(|(d, g)| d.sub(g)).collect();
        let eps_sq: Vec<f64> = eps.iter().map(|e| e.norm_sq()).collect();
        let dim = x.dim();
        let full_grad = mean_of(&grads, dim);
        let row_without_timing = TraceRow {
            t,
            w: self.w.clone(),
            x: x.clone(),
            excess_loss: c.problem.excess_loss(&x),
            dev_sq: d_hat.dist_sq(&full_grad),
            mean_eps_sq: eps_sq.iter().sum::<f64>() / eps_sq.len() as f64,
            collective_eps_sq: mean_of(&eps, dim).norm_sq(),
            eps_sq,
            d_hat,
            agg_time_ns,
            round_time_ns: 0,
        };

        let mut stepped = self.w.clone();
        stepped.axpy(-c.eta * weights.alpha, &row_without_timing.d_hat);
        let w_next = c.problem.domain.project(&stepped)?;
        let next = c.estimator.schedule(t + 1)?;
        self.anytime = match c.estimator.alpha {
            AlphaSchedule::Linear => anytime_step(&self.anytime, &w_next, next.alpha)?,
            AlphaSchedule::FixedGamma(_) => anytime_step_gamma(&self.anytime, &w_next, next.gamma)?,
        };
        self.w = w_next;
        self.x_prev = Some(x);
        for (i, slot) in slots.into_iter().enumerate() {
            if let Some((state, _)) = slot {
                self.states[i] = state;
            }
        }
        self.t += 1;

        let round_time_ns = started.map_or(0, |s| s.elapsed().as_nanos() as u64);
        Ok(TraceRow {
            round_time_ns,
            ..row_without_timing
        })
    }
}

/// Runs `config.rounds` rounds. Any failure returns the rows recorded so far.
pub fn run_training(config: &TrainConfig) -> std::result::Result<TrainingTrace, TrainError> {
    let mut trace = TrainingTrace {
        meta: config.meta(),
        rows: Vec::with_capacity(config.rounds),
    };
    let mut trainer = match Trainer::new(config) {
        Ok(t) => t,
        Err(source) => return Err(TrainError { trace: Box::new(trace), source }),
    };
    for _ in 0..config.rounds {
        match trainer.step() {
            Ok(row) => trace.rows.push(row),
            Err(e) => {
                let round = trainer.round();
                return Err(TrainError {
                    trace: Box::new(trace),
                    source: Error::Round {
                        round,
                        source: Box::new(e),
                    },
                });
            }
        }
    }
    Ok(trace)
}

/// `||d_hat_t - grad f(x_t)||^2` for every recorded round.
pub fn measure_deviation(trace: &TrainingTrace, problem: &ProblemInstance) -> Vec<f64> {
    trace
        .rows
        .iter()
        .map(|r| r.d_hat.dist_sq(&problem.global_gradient(&r.x)))
        .collect()
}

/// `4 s/(t m) + 12 c s/t + 6 c xi^2` with `s = sigma_tilde^2`.
pub fn deviation_bound(sigma_tilde_sq: f64, xi: f64, c_delta: f64, m: usize, t: usize) -> f64 {
    let t = t as f64;
    4.0 * sigma_tilde_sq / (t * m as f64) + 12.0 * c_delta * sigma_tilde_sq / t + 6.0 * c_delta * xi * xi
}

/// `c_delta` of the aggregation as used in the deviation bound: 0 for a
/// plain average with no Byzantine workers.
pub fn aggregation_c_delta(aggregation: &MetaSpec, byzantine: usize) -> Result<f64> {
    use crate::aggregators::AggregatorKind;
    if byzantine == 0 && aggregation.kind == MetaKind::None && aggregation.base.kind == AggregatorKind::Average {
        return Ok(0.0);
    }
    aggregation
        .c_delta()?
        .value()
        .ok_or(Error::NotRobust("this aggregation has only an empirical bound"))
}

pub const CSV_HEADER: [&str; 6] = ["t", "excess_loss", "dev_sq", "mean_eps_sq", "agg_time_ns", "round_time_ns"];

/// Writes `# config_hash=<hash>` followed by the CSV rows.
pub fn write_trace_csv<W: Write>(trace: &TrainingTrace, config_hash: &str, mut out: W) -> std::io::Result<()> {
    writeln!(out, "# config_hash={config_hash}")?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in &trace.rows {
        writer.write_record([
            r.t.to_string(),
            r.excess_loss.to_string(),
            r.dev_sq.to_string(),
            r.mean_eps_sq.to_string(),
            r.agg_time_ns.to_string(),
            r.round_time_ns.to_string(),
        ])?;
    }
    writer.flush()
}

pub fn save_trace_csv(trace: &TrainingTrace, config_hash: &str, path: &Path) -> std::io::Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace_csv(trace, config_hash, file)
}

/// The hash on the first line of a file written by this crate, if any.
pub fn read_config_hash(path: &Path) -> std::io::Result<Option<String>> {
    use std::io::BufRead;
    let file = std::fs::File::open(path)?;
    let mut first = String::new();
    std::io::BufReader::new(file).read_line(&mut first)?;
    Ok(first
        .trim_end()
        .strip_prefix("# config_hash=")
        .map(str::to_string))
}
