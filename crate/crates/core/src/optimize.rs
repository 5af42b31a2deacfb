//! Derivative-free minimization: Nelder-Mead with componentwise clipping to a box, and the
//! output-misfit driver running it over the adaptive model.

use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveModel, EvalRecord, StagnationConfig, StagnationController, ToleranceEvent};
use crate::error::{Error, Result};
use crate::model::{l2_time_norm, linf_time_norm, OutputSignal, Parameter, ParameterBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NelderMeadConfig {
    /// Starting point; `None` means the box center.
    pub initial: Option<Vec<f64>>,
    /// Initial edge length as a fraction of the box width per coordinate.
    pub initial_step: f64,
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Largest coordinate distance from the best vertex at convergence.
    pub xtol: f64,
    /// Largest objective spread at convergence.
    pub ftol: f64,
    pub max_evals: usize,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            initial: None,
            initial_step: 0.05,
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            xtol: 1e-4,
            ftol: 1e-7,
            max_evals: 1000,
        }
    }
}

impl NelderMeadConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.initial_step > 0.0
            && self.reflection > 0.0
            && self.expansion > 1.0
            && self.contraction > 0.0
            && self.contraction < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.xtol > 0.0
            && self.ftol > 0.0
            && self.max_evals > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid Nelder-Mead configuration {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
    /// Objective value of every evaluation in order.
    pub history: Vec<f64>,
}

struct Budget;

struct Counted<'a, F> {
    f: &'a mut F,
    history: Vec<f64>,
    max: usize,
    stale: bool,
}

impl<F: FnMut(&[f64]) -> Result<Evaluation>> Counted<'_, F> {
    fn eval(&mut self, x: &[f64]) -> Result<std::result::Result<f64, Budget>> {
        if self.history.len() >= self.max {
            return Ok(Err(Budget));
        }
        let e = (self.f)(x)?;
        self.history.push(e.value);
        self.stale |= e.objective_changed;
        Ok(Ok(if e.value.is_nan() { f64::INFINITY } else { e.value }))
    }
}

/// Objective value, plus whether the objective itself changed with this evaluation (stored
/// simplex values are then re-evaluated before the next step).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub objective_changed: bool,
}

fn combine(a: &[f64], b: &[f64], t: f64, bounds: &ParameterBox) -> Vec<f64> {
    // a + t (a - b), clipped
    let x: Vec<f64> = a.iter().zip(b).map(|(ai, bi)| ai + t * (ai - bi)).collect();
    bounds.clip(&x)
}

/// Runs the simplex iteration; `Ok(false)` when the budget ran out.
fn iterate<F>(
    counted: &mut Counted<'_, F>,
    simplex: &mut Vec<(Vec<f64>, f64)>,
    x0: &[f64],
    bounds: &ParameterBox,
    config: &NelderMeadConfig,
) -> Result<bool>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    macro_rules! eval {
        ($x:expr) => {
            match counted.eval(&$x)? {
                Ok(v) => v,
                Err(Budget) => return Ok(false),
            }
        };
    }

    let n = x0.len();
    let f0 = eval!(x0);
    simplex.push((x0.to_vec(), f0));
    for i in 0..n {
        let mut x = x0.to_vec();
        let step = config.initial_step * (bounds.upper[i] - bounds.lower[i]);
        x[i] = if x0[i] + step <= bounds.upper[i] { x0[i] + step } else { x0[i] - step };
        let f = eval!(x);
        simplex.push((x, f));
    }

    loop {
        while counted.stale {
            counted.stale = false;
            for i in 0..simplex.len() {
                let x = simplex[i].0.clone();
                simplex[i].1 = eval!(x);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (best_x, best_f) = (simplex[0].0.clone(), simplex[0].1);
        let xspread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&best_x).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        let fspread = simplex[1..].iter().map(|(_, f)| (f - best_f).abs()).fold(0.0, f64::max);
        if xspread <= config.xtol && fspread <= config.ftol {
            return Ok(true);
        }

        let (worst_x, worst_f) = simplex[n].clone();
        let second_worst_f = simplex[n.saturating_sub(1)].1;
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            centroid.iter_mut().zip(x).for_each(|(c, v)| *c += v / n as f64);
        }

        let xr = combine(&centroid, &worst_x, config.reflection, bounds);
        let fr = eval!(xr);
        let mut shrink = false;
        if fr < best_f {
            let xe = combine(&centroid, &worst_x, config.reflection * config.expansion, bounds);
            let fe = eval!(xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < second_worst_f {
            simplex[n] = (xr, fr);
        } else if fr < worst_f {
            let xc = combine(&centroid, &worst_x, config.reflection * config.contraction, bounds);
            let fc = eval!(xc);
            if fc <= fr {
                simplex[n] = (xc, fc);
            } else {
                shrink = true;
            }
        } else {
            let xcc = combine(&centroid, &worst_x, -config.contraction, bounds);
            let fcc = eval!(xcc);
            if fcc < worst_f {
                simplex[n] = (xcc, fcc);
            } else {
                shrink = true;
            }
        }
        if shrink {
            for i in 1..=n {
                let x: Vec<f64> = best_x.iter().zip(&simplex[i].0).map(|(b, v)| b + config.shrink * (v - b)).collect();
                let f = eval!(x);
                simplex[i] = (x, f);
            }
        }
    }
}

/// Minimizes `objective` over `bounds`; every trial point is clipped into the box.
pub fn nelder_mead<F>(mut objective: F, bounds: &ParameterBox, config: &NelderMeadConfig) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    nelder_mead_varying(|x| Ok(Evaluation { value: objective(x)?, objective_changed: false }), bounds, config)
}

/// Like [`nelder_mead`] for an objective that may change between evaluations; after a change
/// the current simplex is kept and its values are recomputed.
pub fn nelder_mead_varying<F>(mut objective: F, bounds: &ParameterBox, config: &NelderMeadConfig) -> Result<NelderMeadResult>
where
    F: FnMut(&[f64]) -> Result<Evaluation>,
{
    config.validate()?;
    let n = bounds.dim();
    let x0 = match &config.initial {
        Some(x) if x.len() != n => return Err(Error::DimensionMismatch { expected: n, got: x.len() }),
        Some(x) => bounds.clip(x),
        None => bounds.center().0,
    };
    let mut counted = Counted { f: &mut objective, history: Vec::new(), max: config.max_evals, stale: false };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    let converged = iterate(&mut counted, &mut simplex, &x0, bounds, config)?;
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.first().cloned().unwrap_or((x0, f64::INFINITY));
    let history = counted.history;
    Ok(NelderMeadResult { x, f, evals: history.len(), converged, history })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizeReport {
    pub mu: Vec<f64>,
    pub objective: f64,
    pub evals: usize,
    pub converged: bool,
    /// Telemetry of every model evaluation, with the objective attached.
    pub records: Vec<EvalRecord>,
    pub tolerance_events: Vec<ToleranceEvent>,
    pub final_epsilon: f64,
}

/// `L2(0, T)` norm of the target, the default starting tolerance of adaptive runs.
pub fn initial_tolerance(target: &OutputSignal, stagnation: &StagnationConfig) -> f64 {
    stagnation.initial_epsilon.unwrap_or_else(|| l2_time_norm(target))
}

/// Minimizes `J(mu) = |target - f(mu)|_{L_inf(0, T)}` over the parameter box with outputs from
/// the adaptive model. With a stagnation configuration the tolerance is lowered whenever the
/// objective stalls and the simplex continues.
pub fn optimize_misfit(
    model: &mut AdaptiveModel,
    target: &OutputSignal,
    config: &NelderMeadConfig,
    stagnation: Option<&StagnationConfig>,
) -> Result<OptimizeReport> {
    let bounds = model.fom().parameter_box.clone();
    let first_record = model.records().len();
    let first_event = model.tolerance_events().len();
    let mut controller = match stagnation {
        Some(cfg) => Some(StagnationController::new(cfg.clone(), bounds.dim(), model.epsilon())?),
        None => None,
    };
    let mut history = Vec::new();
    let result = nelder_mead_varying(
        |x| {
            let (out, _) = model.eval_output(&Parameter(x.to_vec()))?;
            let j = linf_time_norm(&target.sub(&out)?);
            model.annotate_last(j);
            history.push(j);
            let mut objective_changed = false;
            if let Some(ctrl) = controller.as_mut() {
                if let Some(eps) = ctrl.update(&history) {
                    model.apply_tolerance_drop(eps)?;
                    objective_changed = true;
                }
            }
            Ok(Evaluation { value: j, objective_changed })
        },
        &bounds,
        config,
    )?;
    Ok(OptimizeReport {
        mu: result.x,
        objective: result.f,
        evals: result.evals,
        converged: result.converged,
        records: model.records()[first_record..].to_vec(),
        tolerance_events: model.tolerance_events()[first_event..].to_vec(),
        final_epsilon: model.epsilon(),
    })
}
