//! Feedforward networks trained from scratch (backpropagation, Adam, step learning-rate
//! decay, early stopping) and a generator of certified models that predict reduced
//! coefficients at arbitrary times.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{check_nested, MlGenerator, MlRom, SampleStore, StatePredictor};
use crate::model::{Parameter, ParameterBox, TimeGrid, Trajectory};
use crate::rb::RbRom;

/// Weights and biases; hidden layers use the rectifier, the last layer is affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        Ok(Self {
            weights: sizes.windows(2).map(|w| DMatrix::zeros(w[1], w[0])).collect(),
            biases: sizes[1..].iter().map(|n| DVector::zeros(*n)).collect(),
        })
    }

    /// Uniform `(-s, s)` entries with `s = sqrt(1 / fan_in)`.
    pub fn init_uniform<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(sizes)?;
        for (w, b) in p.weights.iter_mut().zip(&mut p.biases) {
            let s = (1.0 / w.ncols() as f64).sqrt();
            w.iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
            b.iter_mut().for_each(|v| *v = rng.gen_range(-s..s));
        }
        Ok(p)
    }

    /// Layer sizes `N_0, ..., N_L`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.weights[0].ncols()];
        s.extend(self.weights.iter().map(|w| w.nrows()));
        s
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    fn zip_mut(&mut self, other: &MlpParams, mut f: impl FnMut(&mut f64, f64)) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b.iter()).for_each(|(x, y)| f(x, *y));
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b.iter()).for_each(|(x, y)| f(x, *y));
        }
    }

    /// Adds zero-initialized output rows so the last layer has `n` outputs.
    pub fn grow_output(&mut self, n: usize) -> Result<()> {
        let last = self.weights.len() - 1;
        let old = self.weights[last].nrows();
        if n < old {
            return Err(Error::NonNestedBasis);
        }
        let w = &self.weights[last];
        let mut grown = DMatrix::zeros(n, w.ncols());
        grown.rows_mut(0, old).copy_from(w);
        self.weights[last] = grown;
        let mut b = DVector::zeros(n);
        b.rows_mut(0, old).copy_from(&self.biases[last]);
        self.biases[last] = b;
        Ok(())
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

fn relu_in_place(m: &mut DMatrix<f64>) {
    m.iter_mut().for_each(|v| *v = v.max(0.0));
}

fn affine(w: &DMatrix<f64>, b: &DVector<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = w * x;
    for mut col in z.column_iter_mut() {
        col += b;
    }
    z
}

/// Forward pass for a batch stored column-wise (`N_0 x B`).
pub fn mlp_forward_batch(params: &MlpParams, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != params.weights[0].ncols() {
        return Err(Error::DimensionMismatch { expected: params.weights[0].ncols(), got: x.nrows() });
    }
    let last = params.num_layers() - 1;
    let mut a = x.clone();
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        a = affine(w, b, &a);
        if l < last {
            relu_in_place(&mut a);
        }
    }
    Ok(a)
}

pub fn mlp_forward(params: &MlpParams, x: &[f64]) -> Result<DVector<f64>> {
    let out = mlp_forward_batch(params, &DMatrix::from_column_slice(x.len(), 1, x))?;
    Ok(out.column(0).into_owned())
}

/// Mean over the batch of the squared Euclidean output error, and its gradient.
/// Inputs and targets are stored column-wise.
pub fn mlp_loss_grad(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<(f64, MlpParams)> {
    let batch = x.ncols();
    if batch == 0 || y.ncols() != batch {
        return Err(Error::InvalidArgument("empty or inconsistent batch".into()));
    }
    let sizes = params.sizes();
    if x.nrows() != sizes[0] || y.nrows() != *sizes.last().unwrap() {
        return Err(Error::DimensionMismatch { expected: sizes[0], got: x.nrows() });
    }
    let last = params.num_layers() - 1;
    // activations[l] is the input of layer l
    let mut activations = Vec::with_capacity(params.num_layers() + 1);
    activations.push(x.clone());
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let mut z = affine(w, b, &activations[l]);
        if l < last {
            relu_in_place(&mut z);
        }
        activations.push(z);
    }
    let diff = &activations[last + 1] - y;
    let loss = diff.norm_squared() / batch as f64;

    let mut grads = MlpParams::zeros(&sizes)?;
    let mut delta = diff * (2.0 / batch as f64);
    for l in (0..=last).rev() {
        grads.weights[l] = &delta * activations[l].transpose();
        grads.biases[l] = delta.column_sum();
        if l > 0 {
            let mut back = params.weights[l].tr_mul(&delta);
            // rectifier derivative, zero at the kink
            back.zip_apply(&activations[l], |d, a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            });
            delta = back;
        }
    }
    Ok((loss, grads))
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates of Adam.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub first: MlpParams,
    pub second: MlpParams,
    pub step: u32,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        let z = MlpParams::zeros(&params.sizes()).expect("valid sizes");
        Self { first: z.clone(), second: z, step: 0 }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut MlpParams, grads: &MlpParams, state: &mut AdamState, lr: f64) {
    state.step += 1;
    state.first.zip_mut(grads, |m, g| *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g);
    state.second.zip_mut(grads, |v, g| *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g);
    let c1 = 1.0 - ADAM_BETA1.powi(state.step as i32);
    let c2 = 1.0 - ADAM_BETA2.powi(state.step as i32);
    let mut update = state.first.clone();
    update.zip_mut(&state.second, |m, v| *m = lr * (*m / c1) / ((v / c2).sqrt() + ADAM_EPS));
    params.zip_mut(&update, |p, u| *p -= u);
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Learning rate factor applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            batch_size: 128,
            max_epochs: 100,
            lr_decay: 0.7,
            decay_every: 10,
            patience: 10,
            validation_fraction: 0.05,
            restarts: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.max_epochs > 0
            && self.lr_decay > 0.0
            && self.decay_every > 0
            && self.patience > 0
            && self.validation_fraction > 0.0
            && self.validation_fraction < 1.0
            && self.restarts > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid training configuration {self:?}")));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Validation-loss bookkeeping: stops once `patience + 1` consecutive epochs fail to improve.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: 0, epoch: 0 }
    }

    /// Records an epoch; returns `(improved, stop)`.
    pub fn update(&mut self, loss: f64) -> (bool, bool) {
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        self.epoch += 1;
        (improved, self.epoch - 1 - self.best_epoch > self.patience)
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub params: MlpParams,
    pub best_validation_loss: f64,
    pub epochs: usize,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
}

fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |i, j| m[(i, idx[j])])
}

fn dataset_loss(params: &MlpParams, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
    let out = mlp_forward_batch(params, x).expect("consistent shapes");
    (out - y).norm_squared() / x.ncols() as f64
}

/// Trains on column-wise data. `hidden` are the hidden layer widths; `warm_start` (if its
/// shape fits) initializes the first run.
pub fn mlp_train(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    hidden: &[usize],
    config: &TrainConfig,
    warm_start: Option<&MlpParams>,
) -> Result<TrainReport> {
    config.validate()?;
    let n = x.ncols();
    if y.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: y.ncols() });
    }
    let n_val = ((config.validation_fraction * n as f64).ceil() as usize).max(1);
    if n < 2 || n_val >= n {
        return Err(Error::InsufficientTrainingData);
    }
    let mut sizes = vec![x.nrows()];
    sizes.extend_from_slice(hidden);
    sizes.push(y.nrows());
    check_sizes(&sizes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (val_idx, train_idx) = order.split_at(n_val);
    let (xv, yv) = (select_columns(x, val_idx), select_columns(y, val_idx));
    let mut train_idx = train_idx.to_vec();

    let mut best: Option<TrainReport> = None;
    for run in 0..config.restarts {
        let mut params = match warm_start {
            Some(p) if run == 0 && p.sizes() == sizes => p.clone(),
            _ => MlpParams::init_uniform(&sizes, &mut rng)?,
        };
        let mut adam = AdamState::new(&params);
        let mut stopper = EarlyStopping::new(config.patience);
        let mut best_params = params.clone();
        let mut report = TrainReport {
            params: params.clone(),
            best_validation_loss: f64::INFINITY,
            epochs: 0,
            train_losses: Vec::new(),
            validation_losses: Vec::new(),
        };
        // the starting point competes too, so a warm start is never made worse
        let initial = dataset_loss(&params, &xv, &yv);
        stopper.update(initial);
        for epoch in 0..config.max_epochs {
            let lr = config.learning_rate_at(epoch);
            train_idx.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            for chunk in train_idx.chunks(config.batch_size) {
                let (xb, yb) = (select_columns(x, chunk), select_columns(y, chunk));
                let (loss, grads) = mlp_loss_grad(&params, &xb, &yb)?;
                epoch_loss += loss * chunk.len() as f64;
                adam_step(&mut params, &grads, &mut adam, lr);
            }
            report.train_losses.push(epoch_loss / train_idx.len() as f64);
            let val = dataset_loss(&params, &xv, &yv);
            report.validation_losses.push(val);
            report.epochs = epoch + 1;
            let (improved, stop) = stopper.update(val);
            if improved {
                best_params = params.clone();
            }
            if stop {
                break;
            }
        }
        report.best_validation_loss = stopper.best();
        report.params = if stopper.best() < initial { best_params } else { report.params };
        if best.as_ref().is_none_or(|b| report.best_validation_loss < b.best_validation_loss) {
            best = Some(report);
        }
    }
    Ok(best.expect("at least one run"))
}

/// Affine map of `P x [0, T]` onto `[-1, 1]^{p+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InputScaling {
    pub parameter_box: ParameterBox,
    pub t_end: f64,
}

impl InputScaling {
    pub fn dim(&self) -> usize {
        self.parameter_box.dim() + 1
    }

    pub fn scale(&self, mu: &Parameter, t: f64) -> Vec<f64> {
        let mut x: Vec<f64> = self.parameter_box.to_unit(mu.values()).iter().map(|u| 2.0 * u - 1.0).collect();
        x.push(2.0 * t / self.t_end - 1.0);
        x
    }

    /// Inputs for every node of `grid` except the first, column-wise.
    fn trajectory_inputs(&self, mu: &Parameter, grid: &TimeGrid, skip_first: bool) -> DMatrix<f64> {
        let start = usize::from(skip_first);
        let cols: Vec<Vec<f64>> = (start..grid.num_nodes()).map(|k| self.scale(mu, grid.node(k))).collect();
        DMatrix::from_fn(self.dim(), cols.len(), |i, j| cols[j][i])
    }
}

/// Network evaluated at all time nodes in one batched pass.
#[derive(Clone, Debug)]
pub struct DnnPredictor {
    pub params: MlpParams,
    pub scaling: InputScaling,
}

impl StatePredictor for DnnPredictor {
    fn predict(&self, mu: &Parameter, grid: &TimeGrid) -> Result<DMatrix<f64>> {
        if mu.dim() != self.scaling.parameter_box.dim() {
            return Err(Error::DimensionMismatch { expected: self.scaling.parameter_box.dim(), got: mu.dim() });
        }
        let x = self.scaling.trajectory_inputs(mu, grid, false);
        Ok(mlp_forward_batch(&self.params, &x)?.transpose())
    }

    fn output_dim(&self) -> usize {
        *self.params.sizes().last().unwrap()
    }

    fn size(&self) -> usize {
        self.params.num_parameters()
    }
}

/// Generator settings for network models.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DnnConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for DnnConfig {
    fn default() -> Self {
        Self { hidden: vec![128; 4], train: TrainConfig::default() }
    }
}

/// Generator of certified network models trained on pairs `((mu, t_k), u_rb(mu; t_k))`.
pub struct DnnGenerator {
    rb: Arc<RbRom>,
    scaling: InputScaling,
    config: DnnConfig,
    store: SampleStore,
    pending: usize,
    params: Option<MlpParams>,
    current: Option<Arc<MlRom>>,
    trainings: usize,
    last_report: Option<TrainReport>,
}

impl DnnGenerator {
    pub fn new(rb: Arc<RbRom>, parameter_box: ParameterBox, config: DnnConfig) -> Result<Self> {
        config.train.validate()?;
        let scaling = InputScaling { parameter_box, t_end: rb.time_grid.t_end() };
        Ok(Self {
            rb,
            scaling,
            config,
            store: SampleStore::new(),
            pending: 0,
            params: None,
            current: None,
            trainings: 0,
            last_report: None,
        })
    }

    pub fn params(&self) -> Option<&MlpParams> {
        self.params.as_ref()
    }

    pub fn last_report(&self) -> Option<&TrainReport> {
        self.last_report.as_ref()
    }

    fn rebuild(&mut self) -> Result<()> {
        self.current = match &self.params {
            Some(p) => {
                let predictor = DnnPredictor { params: p.clone(), scaling: self.scaling.clone() };
                Some(Arc::new(MlRom::new(Arc::new(predictor), Arc::clone(&self.rb))?))
            }
            None => None,
        };
        Ok(())
    }

    fn train(&mut self) -> Result<()> {
        let grid = self.rb.time_grid;
        let per = grid.num_nodes() - 1;
        let total = per * self.store.len();
        let mut x = DMatrix::zeros(self.scaling.dim(), total);
        let mut y = DMatrix::zeros(self.rb.dim(), total);
        for (s, (mu, traj)) in self.store.params().iter().zip(self.store.trajectories()).enumerate() {
            x.columns_mut(s * per, per).copy_from(&self.scaling.trajectory_inputs(mu, &grid, true));
            y.columns_mut(s * per, per).copy_from(&traj.rows(1, per).transpose());
        }
        let mut config = self.config.train.clone();
        config.seed = config.seed.wrapping_add(self.trainings as u64);
        let report = mlp_train(&x, &y, &self.config.hidden, &config, self.params.as_ref())?;
        self.params = Some(report.params.clone());
        self.last_report = Some(report);
        self.trainings += 1;
        self.pending = 0;
        self.rebuild()
    }
}

impl MlGenerator for DnnGenerator {
    fn rb(&self) -> &Arc<RbRom> {
        &self.rb
    }

    fn extend_with(&mut self, mu: &Parameter, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.rb.dim() || traj.coeffs.nrows() != self.rb.time_grid.num_nodes() {
            return Err(Error::DimensionMismatch { expected: self.rb.dim(), got: traj.dim() });
        }
        self.scaling.parameter_box.check(mu)?;
        self.store.insert(mu.clone(), traj.coeffs.clone());
        self.pending += 1;
        Ok(())
    }

    fn precompute(&mut self) -> Result<Arc<MlRom>> {
        if self.store.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if self.pending > 0 || self.current.is_none() {
            self.train()?;
        }
        Ok(Arc::clone(self.current.as_ref().expect("trained")))
    }

    fn current(&self) -> Option<Arc<MlRom>> {
        self.current.clone()
    }

    fn pending(&self) -> usize {
        self.pending
    }

    fn prolong(&mut self, rb: Arc<RbRom>) -> Result<()> {
        check_nested(&self.rb, &rb)?;
        self.store.pad_to(rb.dim())?;
        if let Some(p) = &mut self.params {
            p.grow_output(rb.dim())?;
        }
        self.rb = rb;
        self.rebuild()
    }

    fn samples(&self) -> &SampleStore {
        &self.store
    }

    fn retain_samples(&mut self, keep: &[bool]) -> Result<usize> {
        let dropped = self.store.retain(keep)?;
        if dropped > 0 {
            if self.store.is_empty() {
                self.params = None;
                self.current = None;
                self.pending = 0;
            } else {
                self.train()?;
            }
        }
        Ok(dropped)
    }

    fn model_size(&self) -> usize {
        self.current.as_ref().map_or(0, |m| m.size())
    }
}
