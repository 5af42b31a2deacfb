//! Adaptive certified model: answers each query with the cheapest tier whose error bound
//! meets the tolerance, enriching the surrogates from full-order solves when neither does.
//! Also hosts the stagnation-driven tolerance controller used by the optimizer.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::FomProblem;
use crate::hapod::HapodConfig;
use crate::ml::{MlGenerator, MlRom};
use crate::mlp::{DnnConfig, DnnGenerator};
use crate::model::{OutputSignal, Parameter, StateModel, Trajectory};
use crate::rb::{RbGenerator, RbRom};
use crate::vkoga::{KernelConfig, VkogaGenerator};

/// Tier that produced an answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Ml,
    Rb,
    /// Full-order solve (enrichment, or reference mode at zero tolerance).
    Fom,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Ml => "ml",
            Tier::Rb => "rb",
            Tier::Fom => "fom",
        }
    }
}

/// Wall-clock seconds per phase of one query.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimes {
    pub ml_est: f64,
    pub ml_eval: f64,
    pub rb_est: f64,
    pub rb_eval: f64,
    /// Full-order solve including the streamed compression of its snapshots.
    pub fom: f64,
    pub rb_build: f64,
    pub ml_build: f64,
}

impl PhaseTimes {
    pub fn total(&self) -> f64 {
        self.ml_est + self.ml_eval + self.rb_est + self.rb_eval + self.fom + self.rb_build + self.ml_build
    }
}

/// Telemetry of one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub index: usize,
    pub mu: Vec<f64>,
    pub tier: Tier,
    /// Machine-learning bound, if a trained model existed.
    pub delta_ml: Option<f64>,
    /// Reduced-basis bound before any enrichment.
    pub delta_rb: Option<f64>,
    pub epsilon: f64,
    pub times: PhaseTimes,
    pub basis_dim: usize,
    pub ml_size: usize,
    /// Objective or quantity of interest attached by a driver.
    pub value: Option<f64>,
    /// Set when the machine-learning model was (re)trained during this query.
    pub retrained: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToleranceEvent {
    /// Number of queries answered before the drop.
    pub after_eval: usize,
    pub old: f64,
    pub new: f64,
    pub dropped_samples: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[derive(Default)]
pub enum RetrainPolicy {
    /// Retrain after every new sample.
    #[default]
    PerExtend,
    /// Retrain once `size` samples are pending.
    Batch { size: usize },
}


impl RetrainPolicy {
    fn due(&self, pending: usize) -> bool {
        match *self {
            RetrainPolicy::PerExtend => pending > 0,
            RetrainPolicy::Batch { size } => pending >= size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MlBackend {
    Vkoga {
        #[serde(default)]
        config: KernelConfig,
    },
    Mlp {
        #[serde(default)]
        config: DnnConfig,
    },
}

impl Default for MlBackend {
    fn default() -> Self {
        MlBackend::Vkoga { config: KernelConfig::default() }
    }
}

impl MlBackend {
    pub fn generator(&self, rb: Arc<RbRom>, fom: &FomProblem) -> Result<Box<dyn MlGenerator>> {
        Ok(match self {
            MlBackend::Vkoga { config } => Box::new(VkogaGenerator::new(rb, fom.parameter_box.clone(), *config)?),
            MlBackend::Mlp { config } => Box::new(DnnGenerator::new(rb, fom.parameter_box.clone(), config.clone())?),
        })
    }
}

enum Quantity {
    Output,
    State,
}

enum Answer {
    Reduced(Arc<RbRom>, Trajectory),
    Full(Trajectory),
    FullOutput(OutputSignal),
}

/// Surrogate hierarchy with certified answers; single owner, sequential queries.
pub struct AdaptiveModel {
    fom: Arc<FomProblem>,
    rb_gen: RbGenerator,
    rb: Arc<RbRom>,
    ml_gen: Box<dyn MlGenerator>,
    ml: Option<Arc<MlRom>>,
    epsilon: f64,
    policy: RetrainPolicy,
    records: Vec<EvalRecord>,
    events: Vec<ToleranceEvent>,
}

impl AdaptiveModel {
    /// Starts from empty surrogates. `epsilon = 0` disables them (pure full-order reference).
    pub fn new(fom: Arc<FomProblem>, epsilon: f64, hapod: HapodConfig, backend: &MlBackend, policy: RetrainPolicy) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be nonnegative, got {epsilon}")));
        }
        if let RetrainPolicy::Batch { size: 0 } = policy {
            return Err(Error::InvalidArgument("retraining batch size must be positive".into()));
        }
        let mut rb_gen = RbGenerator::new(Arc::clone(&fom), epsilon, hapod)?;
        let rb = rb_gen.precompute()?;
        let ml_gen = backend.generator(Arc::clone(&rb), &fom)?;
        Ok(Self { fom, rb_gen, rb, ml_gen, ml: None, epsilon, policy, records: Vec::new(), events: Vec::new() })
    }

    pub fn fom(&self) -> &Arc<FomProblem> {
        &self.fom
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rb(&self) -> &Arc<RbRom> {
        &self.rb
    }

    pub fn ml(&self) -> Option<&Arc<MlRom>> {
        self.ml.as_ref()
    }

    pub fn rb_generator(&self) -> &RbGenerator {
        &self.rb_gen
    }

    pub fn ml_generator(&self) -> &dyn MlGenerator {
        self.ml_gen.as_ref()
    }

    pub fn records(&self) -> &[EvalRecord] {
        &self.records
    }

    pub fn tolerance_events(&self) -> &[ToleranceEvent] {
        &self.events
    }

    /// Attaches a driver value to the latest record.
    pub fn annotate_last(&mut self, value: f64) {
        if let Some(r) = self.records.last_mut() {
            r.value = Some(value);
        }
    }

    /// Certified output: within `epsilon` of the full-order output in `L2(0, T)`.
    pub fn eval_output(&mut self, mu: &Parameter) -> Result<(OutputSignal, EvalRecord)> {
        let (answer, record) = self.cascade(mu, Quantity::Output)?;
        let out = match answer {
            Answer::Reduced(rb, traj) => rb.output(&traj)?,
            Answer::Full(traj) => self.fom.output_of(&traj),
            Answer::FullOutput(out) => out,
        };
        Ok((out, record))
    }

    /// Certified full-order trajectory (Dirichlet lifting included): within `epsilon` of the
    /// full-order state in `L2(0, T; V)`.
    pub fn eval_state(&mut self, mu: &Parameter) -> Result<(Trajectory, EvalRecord)> {
        let (answer, record) = self.cascade(mu, Quantity::State)?;
        let mut states = match answer {
            Answer::Reduced(rb, traj) => rb.reconstruct(&traj)?,
            Answer::Full(traj) => traj.coeffs,
            Answer::FullOutput(_) => unreachable!("state queries keep trajectories"),
        };
        add_lift(&mut states, &self.fom);
        Ok((Trajectory::new(self.fom.time_grid, states)?, record))
    }

    fn estimate(rb: &RbRom, traj: &Trajectory, mu: &Parameter, quantity: &Quantity) -> Result<f64> {
        let est = match quantity {
            Quantity::Output => rb.est_output_of(traj, mu),
            Quantity::State => rb.est_state(traj, mu),
        };
        match est {
            Err(Error::InitialNotInSpace) => Ok(f64::INFINITY),
            other => other,
        }
    }

    fn retrain_if_due(&mut self, times: &mut PhaseTimes) -> Result<bool> {
        if !self.policy.due(self.ml_gen.pending()) {
            return Ok(false);
        }
        let t = Instant::now();
        self.ml = Some(self.ml_gen.precompute()?);
        times.ml_build += t.elapsed().as_secs_f64();
        Ok(true)
    }

    fn cascade(&mut self, mu: &Parameter, quantity: Quantity) -> Result<(Answer, EvalRecord)> {
        self.fom.parameter_box.check(mu)?;
        let eps = self.epsilon;
        let mut times = PhaseTimes::default();
        let mut record = EvalRecord {
            index: self.records.len(),
            mu: mu.values().to_vec(),
            tier: Tier::Fom,
            delta_ml: None,
            delta_rb: None,
            epsilon: eps,
            times,
            basis_dim: self.rb.dim(),
            ml_size: self.ml_gen.model_size(),
            value: None,
            retrained: false,
        };

        let answer = 'answer: {
            if eps == 0.0 {
                let t = Instant::now();
                let answer = match quantity {
                    Quantity::Output => Answer::FullOutput(self.fom.eval_output(mu)?),
                    Quantity::State => Answer::Full(self.fom.eval_state(mu)?),
                };
                times.fom = t.elapsed().as_secs_f64();
                break 'answer answer;
            }

            if let Some(ml) = self.ml.clone() {
                let t = Instant::now();
                let traj = ml.predict(mu)?;
                times.ml_eval = t.elapsed().as_secs_f64();
                let t = Instant::now();
                let delta = Self::estimate(ml.rb(), &traj, mu, &quantity)?;
                times.ml_est = t.elapsed().as_secs_f64();
                record.delta_ml = Some(delta);
                if delta <= eps {
                    record.tier = Tier::Ml;
                    break 'answer Answer::Reduced(Arc::clone(ml.rb()), traj);
                }
            }

            let t = Instant::now();
            let traj = self.rb.solve(mu)?;
            times.rb_eval = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let delta = Self::estimate(&self.rb, &traj, mu, &quantity)?;
            times.rb_est = t.elapsed().as_secs_f64();
            record.delta_rb = Some(delta);
            if delta <= eps {
                record.tier = Tier::Rb;
                self.ml_gen.extend_with(mu, &traj)?;
                record.retrained = self.retrain_if_due(&mut times)?;
                break 'answer Answer::Reduced(Arc::clone(&self.rb), traj);
            }

            let t = Instant::now();
            let full = match quantity {
                Quantity::Output => {
                    self.rb_gen.extend(mu)?;
                    None
                }
                Quantity::State => Some(self.rb_gen.extend_collect(mu)?.1),
            };
            times.fom = t.elapsed().as_secs_f64();
            let t = Instant::now();
            self.rb = self.rb_gen.precompute()?;
            times.rb_build = t.elapsed().as_secs_f64();
            let t = Instant::now();
            self.ml_gen.prolong(Arc::clone(&self.rb))?;
            self.ml = self.ml_gen.current();
            times.ml_build = t.elapsed().as_secs_f64();

            let t = Instant::now();
            let traj = self.rb.solve(mu)?;
            times.rb_eval += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let enriched = Self::estimate(&self.rb, &traj, mu, &quantity)?;
            times.rb_est += t.elapsed().as_secs_f64();
            if !(enriched <= eps) {
                return Err(Error::EnrichmentFailed { estimate: enriched, tolerance: eps });
            }
            self.ml_gen.extend_with(mu, &traj)?;
            record.retrained = self.retrain_if_due(&mut times)?;
            record.tier = Tier::Fom;
            match full {
                Some(states) => Answer::Full(states),
                None => Answer::Reduced(Arc::clone(&self.rb), traj),
            }
        };

        record.times = times;
        record.basis_dim = self.rb.dim();
        record.ml_size = self.ml_gen.model_size();
        self.records.push(record.clone());
        Ok((answer, record))
    }

    /// Lowers the tolerance and discards training samples whose stored reduced trajectories
    /// no longer certify. Returns the number of discarded samples.
    pub fn apply_tolerance_drop(&mut self, new_epsilon: f64) -> Result<usize> {
        if !(new_epsilon >= 0.0 && new_epsilon < self.epsilon) {
            return Err(Error::InvalidArgument(format!(
                "new tolerance {new_epsilon} must be below the current {}",
                self.epsilon
            )));
        }
        let rb = Arc::clone(self.ml_gen.rb());
        let samples = self.ml_gen.samples();
        let mut keep = Vec::with_capacity(samples.len());
        for (mu, coeffs) in samples.params().iter().zip(samples.trajectories()) {
            let traj = Trajectory::new(rb.time_grid, coeffs.clone())?;
            keep.push(Self::estimate(&rb, &traj, mu, &Quantity::Output)? <= new_epsilon);
        }
        let dropped = self.ml_gen.retain_samples(&keep)?;
        self.ml = self.ml_gen.current();
        self.events.push(ToleranceEvent {
            after_eval: self.records.len(),
            old: self.epsilon,
            new: new_epsilon,
            dropped_samples: dropped,
        });
        self.epsilon = new_epsilon;
        self.rb_gen.set_tolerance(new_epsilon);
        Ok(dropped)
    }
}

fn add_lift(states: &mut DMatrix<f64>, fom: &FomProblem) {
    for mut row in states.row_iter_mut() {
        row += fom.lift.transpose();
    }
}

/// Settings of the stagnation detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StagnationConfig {
    /// Running-average width; `None` means twice the parameter dimension.
    pub n_av: Option<usize>,
    pub n_stag: usize,
    /// Threshold on the descent rate of the averaged objective.
    pub rate_tol: f64,
    /// Threshold on the descent rate divided by `J_avg / J(first)`.
    pub normalized_rate_tol: f64,
    pub divisor: f64,
    /// Starting tolerance; `None` means the `L2` norm of the target signal.
    pub initial_epsilon: Option<f64>,
    /// No drops below this tolerance.
    pub min_epsilon: f64,
}

impl Default for StagnationConfig {
    fn default() -> Self {
        Self { n_av: None, n_stag: 10, rate_tol: -1e-15, normalized_rate_tol: 1e-6, divisor: 10.0, initial_epsilon: None, min_epsilon: 1e-10 }
    }
}

impl StagnationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_av.is_some_and(|n| n < 2) || !(self.divisor > 1.0) || !(self.min_epsilon >= 0.0) {
            return Err(Error::InvalidArgument("stagnation detection needs n_av >= 2, divisor > 1, min_epsilon >= 0".into()));
        }
        Ok(())
    }
}

/// Tracks consecutive stagnating evaluations of an objective history.
#[derive(Clone, Debug)]
pub struct StagnationController {
    config: StagnationConfig,
    n_av: usize,
    epsilon: f64,
    consecutive: usize,
}

impl StagnationController {
    pub fn new(config: StagnationConfig, param_dim: usize, epsilon: f64) -> Result<Self> {
        config.validate()?;
        let n_av = config.n_av.unwrap_or(2 * param_dim).max(2);
        Ok(Self { config, n_av, epsilon, consecutive: 0 })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn consecutive(&self) -> usize {
        self.consecutive
    }

    /// Descent rate (negative least-squares slope) of the last `n_av` running averages of
    /// width `n_av`, together with the latest average; `None` until enough values exist.
    pub fn descent_rate(history: &[f64], n_av: usize) -> Option<(f64, f64)> {
        if history.len() < 2 * n_av - 1 {
            return None;
        }
        let averages: Vec<f64> = history.windows(n_av).map(|w| w.iter().sum::<f64>() / n_av as f64).collect();
        let window = &averages[averages.len() - n_av..];
        let xm = (n_av as f64 - 1.0) / 2.0;
        let ym = window.iter().sum::<f64>() / n_av as f64;
        let (mut sxy, mut sxx) = (0.0, 0.0);
        for (i, y) in window.iter().enumerate() {
            let dx = i as f64 - xm;
            sxy += dx * (y - ym);
            sxx += dx * dx;
        }
        Some((-sxy / sxx, *window.last().unwrap()))
    }

    /// Processes the history after a new evaluation; returns the lowered tolerance when
    /// more than `n_stag` consecutive evaluations stagnated.
    pub fn update(&mut self, history: &[f64]) -> Option<f64> {
        let Some((rate, latest)) = Self::descent_rate(history, self.n_av) else {
            return None;
        };
        let first = history[0];
        let ratio = if first > 0.0 { latest / first } else { 0.0 };
        let normalized_stalls = ratio > 0.0 && rate / ratio < self.config.normalized_rate_tol;
        if rate < self.config.rate_tol || normalized_stalls {
            self.consecutive += 1;
        } else {
            self.consecutive = 0;
        }
        if self.consecutive > self.config.n_stag && self.epsilon / self.config.divisor >= self.config.min_epsilon {
            self.consecutive = 0;
            self.epsilon /= self.config.divisor;
            return Some(self.epsilon);
        }
        None
    }
}
