//! Vectorial kernel greedy regression with a Gaussian kernel and its generator, predicting
//! all reduced coefficients of all time steps at once.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ml::{check_nested, Inserted, MlGenerator, MlRom, SampleStore, StatePredictor};
use crate::model::{Parameter, ParameterBox, TimeGrid, Trajectory};
use crate::rb::RbRom;

/// Greedy iteration stops once no candidate has a squared power function above this value.
pub const POWER_FLOOR: f64 = 1e-12;

/// `exp(-gamma |x - y|^2)`
pub fn gaussian_kernel(x: &[f64], y: &[f64], gamma: f64) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    /// Kernel exponent scale on unit-cube inputs; `None` means `1 / dim`.
    pub width: Option<f64>,
    pub regularization: f64,
    /// `None` allows every sample to become a center.
    pub max_centers: Option<usize>,
    /// Stop once the largest residual norm drops to this value.
    pub residual_tol: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { width: None, regularization: 0.0, max_centers: None, residual_tol: 0.0 }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(w) = self.width {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidArgument(format!("kernel width {w} must be positive")));
            }
        }
        if !(self.regularization >= 0.0) {
            return Err(Error::InvalidArgument(format!("regularization {} must be nonnegative", self.regularization)));
        }
        if !(self.residual_tol >= 0.0) {
            return Err(Error::InvalidArgument("residual tolerance must be nonnegative".into()));
        }
        Ok(())
    }

    fn gamma(&self, dim: usize) -> f64 {
        self.width.unwrap_or(1.0 / dim as f64)
    }
}

/// Fitted kernel expansion `s(x) = sum_j v_j(x) c_j` in the Newton basis `v_j`.
#[derive(Clone, Debug)]
pub struct KernelModel {
    scaling: ParameterBox,
    gamma: f64,
    centers: Vec<Vec<f64>>,
    /// Lower triangular, `newton[(i, j)] = v_j(center_i)`.
    newton: DMatrix<f64>,
    /// One row per center.
    coefficients: DMatrix<f64>,
    output_dim: usize,
}

impl KernelModel {
    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// Centers in unit-cube coordinates.
    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    fn newton_values(&self, x: &[f64]) -> DVector<f64> {
        let m = self.centers.len();
        let mut v = DVector::from_iterator(m, self.centers.iter().map(|c| gaussian_kernel(x, c, self.gamma)));
        for i in 0..m {
            let mut s = v[i];
            for j in 0..i {
                s -= self.newton[(i, j)] * v[j];
            }
            v[i] = s / self.newton[(i, i)];
        }
        v
    }

    pub fn predict(&self, mu: &Parameter) -> Result<DVector<f64>> {
        if mu.dim() != self.scaling.dim() {
            return Err(Error::DimensionMismatch { expected: self.scaling.dim(), got: mu.dim() });
        }
        if self.centers.is_empty() {
            return Ok(DVector::zeros(self.output_dim));
        }
        let v = self.newton_values(&self.scaling.to_unit(mu.values()));
        Ok(self.coefficients.tr_mul(&v))
    }
}

/// Incremental f-greedy fitting state: Newton basis values and residuals at all data points.
#[derive(Clone, Debug)]
pub struct VkogaFitter {
    scaling: ParameterBox,
    config: KernelConfig,
    gamma: f64,
    inputs: Vec<Vec<f64>>,
    residuals: Vec<DVector<f64>>,
    /// Newton basis values at each data point (one entry per center so far).
    values: Vec<Vec<f64>>,
    power: Vec<f64>,
    selected: Vec<usize>,
    coefficients: Vec<DVector<f64>>,
    history: Vec<f64>,
    output_dim: usize,
}

impl VkogaFitter {
    pub fn new(scaling: ParameterBox, config: KernelConfig, output_dim: usize) -> Result<Self> {
        config.validate()?;
        let gamma = config.gamma(scaling.dim());
        Ok(Self {
            scaling,
            config,
            gamma,
            inputs: Vec::new(),
            residuals: Vec::new(),
            values: Vec::new(),
            power: Vec::new(),
            selected: Vec::new(),
            coefficients: Vec::new(),
            history: Vec::new(),
            output_dim,
        })
    }

    pub fn num_samples(&self) -> usize {
        self.inputs.len()
    }

    pub fn num_centers(&self) -> usize {
        self.selected.len()
    }

    /// Largest residual norm before the first step and after every greedy step.
    pub fn history(&self) -> &[f64] {
        &self.history
    }

    /// Native-space norm of the final fit minus the fit after `m` steps, for every `m`:
    /// `sqrt(sum_{j >= m} |c_j|^2)`. Non-increasing by construction.
    pub fn native_history(&self) -> Vec<f64> {
        let mut tail = 0.0;
        let mut out: Vec<f64> = vec![0.0];
        for c in self.coefficients.iter().rev() {
            tail += c.norm_squared();
            out.push(tail.sqrt());
        }
        out.reverse();
        out
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().map(|r| r.norm()).fold(0.0, f64::max)
    }

    /// Appends a sample; existing centers stay valid.
    pub fn add_sample(&mut self, mu: &Parameter, target: DVector<f64>) -> Result<()> {
        if target.len() != self.output_dim {
            return Err(Error::DimensionMismatch { expected: self.output_dim, got: target.len() });
        }
        self.scaling.check(mu)?;
        let x = self.scaling.to_unit(mu.values());
        if self.inputs.contains(&x) {
            return Err(Error::CoincidentInputs);
        }
        // Newton basis values by forward substitution against the selected centers
        let m = self.selected.len();
        let mut v = vec![0.0; m];
        for j in 0..m {
            let c = self.selected[j];
            let mut s = gaussian_kernel(&x, &self.inputs[c], self.gamma);
            for (l, vl) in v.iter().enumerate().take(j) {
                s -= vl * self.values[c][l];
            }
            v[j] = s / self.values[c][j];
        }
        let mut r = target;
        for (vj, cj) in v.iter().zip(&self.coefficients) {
            r.axpy(-vj, cj, 1.0);
        }
        let power = 1.0 + self.config.regularization - v.iter().map(|a| a * a).sum::<f64>();
        self.inputs.push(x);
        self.residuals.push(r);
        self.values.push(v);
        self.power.push(power);
        Ok(())
    }

    fn next_candidate(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.inputs.len() {
            if self.selected.contains(&i) || !(self.power[i] > POWER_FLOOR) {
                continue;
            }
            let r = self.residuals[i].norm();
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        best.map(|(i, _)| i)
    }

    /// Runs greedy steps until a stopping rule fires; returns the number of new centers.
    pub fn run(&mut self) -> usize {
        let limit = self.config.max_centers.unwrap_or(usize::MAX);
        let mut added = 0;
        // samples added since the last run may have raised the largest residual
        self.history.truncate(self.selected.len());
        self.history.push(self.max_residual());
        while self.selected.len() < limit && *self.history.last().unwrap() > self.config.residual_tol {
            let Some(pick) = self.next_candidate() else { break };
            let m = self.selected.len();
            let xp = self.inputs[pick].clone();
            let vp = self.values[pick].clone();
            let mut column: Vec<f64> = (0..self.inputs.len())
                .map(|i| {
                    let mut u = gaussian_kernel(&self.inputs[i], &xp, self.gamma);
                    if i == pick {
                        u += self.config.regularization;
                    }
                    for l in 0..m {
                        u -= self.values[i][l] * vp[l];
                    }
                    u
                })
                .collect();
            let p = column[pick];
            if !(p > POWER_FLOOR) {
                break;
            }
            let sp = p.sqrt();
            column.iter_mut().for_each(|u| *u /= sp);
            let c = &self.residuals[pick] / sp;
            for (i, u) in column.iter().enumerate() {
                if *u != 0.0 {
                    self.residuals[i].axpy(-u, &c, 1.0);
                }
                self.values[i].push(*u);
                self.power[i] -= u * u;
            }
            self.residuals[pick].fill(0.0);
            self.power[pick] = 0.0;
            self.selected.push(pick);
            self.coefficients.push(c);
            self.history.push(self.max_residual());
            added += 1;
        }
        added
    }

    pub fn model(&self) -> KernelModel {
        let m = self.selected.len();
        let mut newton = DMatrix::zeros(m, m);
        for (i, c) in self.selected.iter().enumerate() {
            for j in 0..=i {
                newton[(i, j)] = self.values[*c][j];
            }
        }
        let mut coefficients = DMatrix::zeros(m, self.output_dim);
        for (j, c) in self.coefficients.iter().enumerate() {
            coefficients.row_mut(j).copy_from(&c.transpose());
        }
        KernelModel {
            scaling: self.scaling.clone(),
            gamma: self.gamma,
            centers: self.selected.iter().map(|c| self.inputs[*c].clone()).collect(),
            newton,
            coefficients,
            output_dim: self.output_dim,
        }
    }

    /// Zero-pads every target-shaped vector from `blocks x old` to `blocks x new` (row-major
    /// blocks); the greedy state is unchanged since padding does not affect any norm.
    fn pad(&mut self, blocks: usize, old: usize, new: usize) {
        let relayout = |v: &DVector<f64>| {
            let mut out = DVector::zeros(blocks * new);
            for k in 0..blocks {
                out.rows_mut(k * new, old).copy_from(&v.rows(k * old, old));
            }
            out
        };
        for r in &mut self.residuals {
            *r = relayout(r);
        }
        for c in &mut self.coefficients {
            *c = relayout(c);
        }
        self.output_dim = blocks * new;
    }
}

/// Fits a kernel model to `targets` (one row per input) with f-greedy center selection.
pub fn vkoga_fit(
    inputs: &[Parameter],
    targets: &DMatrix<f64>,
    scaling: &ParameterBox,
    config: KernelConfig,
) -> Result<(KernelModel, Vec<f64>)> {
    if inputs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if inputs.len() != targets.nrows() {
        return Err(Error::DimensionMismatch { expected: inputs.len(), got: targets.nrows() });
    }
    let mut fitter = VkogaFitter::new(scaling.clone(), config, targets.ncols())?;
    for (mu, row) in inputs.iter().zip(targets.row_iter()) {
        fitter.add_sample(mu, row.transpose())?;
    }
    fitter.run();
    Ok((fitter.model(), fitter.history().to_vec()))
}

/// Kernel model reshaped to reduced trajectories.
#[derive(Clone, Debug)]
pub struct VkogaPredictor {
    model: KernelModel,
    num_nodes: usize,
    dim: usize,
}

impl VkogaPredictor {
    pub fn new(model: KernelModel, num_nodes: usize, dim: usize) -> Result<Self> {
        if model.output_dim() != num_nodes * dim {
            return Err(Error::DimensionMismatch { expected: num_nodes * dim, got: model.output_dim() });
        }
        Ok(Self { model, num_nodes, dim })
    }

    pub fn model(&self) -> &KernelModel {
        &self.model
    }
}

impl StatePredictor for VkogaPredictor {
    fn predict(&self, mu: &Parameter, grid: &TimeGrid) -> Result<DMatrix<f64>> {
        if grid.num_nodes() != self.num_nodes {
            return Err(Error::DimensionMismatch { expected: self.num_nodes, got: grid.num_nodes() });
        }
        let flat = self.model.predict(mu)?;
        Ok(DMatrix::from_row_slice(self.num_nodes, self.dim, flat.as_slice()))
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn size(&self) -> usize {
        self.model.num_centers()
    }
}

fn flatten(coeffs: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(coeffs.len(), coeffs.row_iter().flat_map(|r| r.iter().copied().collect::<Vec<_>>()))
}

/// Generator of certified kernel models from reduced-basis trajectories.
pub struct VkogaGenerator {
    rb: Arc<RbRom>,
    scaling: ParameterBox,
    config: KernelConfig,
    store: SampleStore,
    fitter: Option<VkogaFitter>,
    /// Number of stored samples already handed to the fitter.
    fed: usize,
    current: Option<Arc<MlRom>>,
}

impl VkogaGenerator {
    pub fn new(rb: Arc<RbRom>, scaling: ParameterBox, config: KernelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { rb, scaling, config, store: SampleStore::new(), fitter: None, fed: 0, current: None })
    }

    pub fn config(&self) -> KernelConfig {
        self.config
    }

    /// Greedy residual history of the current fit.
    pub fn history(&self) -> &[f64] {
        self.fitter.as_ref().map_or(&[], |f| f.history())
    }

    fn output_dim(&self) -> usize {
        self.rb.time_grid.num_nodes() * self.rb.dim()
    }
}

impl MlGenerator for VkogaGenerator {
    fn rb(&self) -> &Arc<RbRom> {
        &self.rb
    }

    fn extend_with(&mut self, mu: &Parameter, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.rb.dim() || traj.coeffs.nrows() != self.rb.time_grid.num_nodes() {
            return Err(Error::DimensionMismatch { expected: self.rb.dim(), got: traj.dim() });
        }
        self.scaling.check(mu)?;
        if let Inserted::Replaced(i) = self.store.insert(mu.clone(), traj.coeffs.clone()) {
            if i < self.fed {
                // a target already in the fit changed: start over
                self.fitter = None;
                self.fed = 0;
            }
        }
        Ok(())
    }

    fn precompute(&mut self) -> Result<Arc<MlRom>> {
        if self.store.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        if self.fitter.is_none() {
            self.fitter = Some(VkogaFitter::new(self.scaling.clone(), self.config, self.output_dim())?);
            self.fed = 0;
        }
        let fitter = self.fitter.as_mut().unwrap();
        let fresh = self.fed < self.store.len();
        for i in self.fed..self.store.len() {
            fitter.add_sample(&self.store.params()[i], flatten(&self.store.trajectories()[i]))?;
        }
        self.fed = self.store.len();
        if let (false, Some(rom)) = (fresh, &self.current) {
            return Ok(Arc::clone(rom));
        }
        fitter.run();
        let predictor = VkogaPredictor::new(fitter.model(), self.rb.time_grid.num_nodes(), self.rb.dim())?;
        let rom = Arc::new(MlRom::new(Arc::new(predictor), Arc::clone(&self.rb))?);
        self.current = Some(Arc::clone(&rom));
        Ok(rom)
    }

    fn current(&self) -> Option<Arc<MlRom>> {
        self.current.clone()
    }

    fn pending(&self) -> usize {
        self.store.len() - self.fed
    }

    fn prolong(&mut self, rb: Arc<RbRom>) -> Result<()> {
        check_nested(&self.rb, &rb)?;
        let (old, new) = (self.rb.dim(), rb.dim());
        let blocks = rb.time_grid.num_nodes();
        self.store.pad_to(new)?;
        if let Some(f) = &mut self.fitter {
            f.pad(blocks, old, new);
        }
        self.rb = rb;
        self.current = match &self.fitter {
            Some(f) if f.num_centers() > 0 => {
                let predictor = VkogaPredictor::new(f.model(), blocks, new)?;
                Some(Arc::new(MlRom::new(Arc::new(predictor), Arc::clone(&self.rb))?))
            }
            _ => None,
        };
        Ok(())
    }

    fn samples(&self) -> &SampleStore {
        &self.store
    }

    fn retain_samples(&mut self, keep: &[bool]) -> Result<usize> {
        let dropped = self.store.retain(keep)?;
        if dropped > 0 {
            self.fitter = None;
            self.fed = 0;
            self.current = None;
            if !self.store.is_empty() {
                self.precompute()?;
            }
        }
        Ok(dropped)
    }

    fn model_size(&self) -> usize {
        self.current.as_ref().map_or(0, |m| m.size())
    }
}
