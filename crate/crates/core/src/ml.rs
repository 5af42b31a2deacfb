//! Machine-learned reduced models: predictors of reduced coefficients whose outputs are
//! certified by the reduced-basis estimator, plus the shared training-data store.

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{CertifiedModel, OutputSignal, Parameter, StateModel, TimeGrid, Trajectory};
use crate::rb::RbRom;

/// Predicts reduced coefficients (one row per time node) for a parameter.
pub trait StatePredictor: Send + Sync {
    fn predict(&self, mu: &Parameter, grid: &TimeGrid) -> Result<DMatrix<f64>>;
    /// Number of reduced coordinates produced.
    fn output_dim(&self) -> usize;
    /// Centers or trainable parameters, for telemetry.
    fn size(&self) -> usize;
}

/// A predictor combined with the reduced-basis model whose output map and estimator it shares.
#[derive(Clone)]
pub struct MlRom {
    predictor: Arc<dyn StatePredictor>,
    rb: Arc<RbRom>,
}

impl std::fmt::Debug for MlRom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MlRom").field("dim", &self.rb.dim()).field("size", &self.predictor.size()).finish()
    }
}

impl MlRom {
    pub fn new(predictor: Arc<dyn StatePredictor>, rb: Arc<RbRom>) -> Result<Self> {
        if predictor.output_dim() != rb.dim() {
            return Err(Error::DimensionMismatch { expected: rb.dim(), got: predictor.output_dim() });
        }
        Ok(Self { predictor, rb })
    }

    pub fn rb(&self) -> &Arc<RbRom> {
        &self.rb
    }

    pub fn size(&self) -> usize {
        self.predictor.size()
    }

    /// Predicted reduced trajectory; the first row is the exact reduced initial datum.
    pub fn predict(&self, mu: &Parameter) -> Result<Trajectory> {
        let grid = self.rb.time_grid;
        let mut coeffs = self.predictor.predict(mu, &grid)?;
        if coeffs.nrows() != grid.num_nodes() || coeffs.ncols() != self.rb.dim() {
            return Err(Error::DimensionMismatch { expected: self.rb.dim(), got: coeffs.ncols() });
        }
        let c0 = self.rb.initial_coefficients(mu);
        coeffs.row_mut(0).copy_from(&c0.transpose());
        Trajectory::new(grid, coeffs)
    }

    /// Prediction together with its certified output error bound.
    pub fn predict_certified(&self, mu: &Parameter) -> Result<(Trajectory, f64)> {
        let traj = self.predict(mu)?;
        let est = self.rb.est_output_of(&traj, mu)?;
        Ok((traj, est))
    }
}

impl StateModel for MlRom {
    fn time_grid(&self) -> TimeGrid {
        self.rb.time_grid
    }

    fn eval_state(&self, mu: &Parameter) -> Result<Trajectory> {
        self.predict(mu)
    }

    fn eval_output(&self, mu: &Parameter) -> Result<OutputSignal> {
        self.rb.output(&self.predict(mu)?)
    }
}

impl CertifiedModel for MlRom {
    fn est_output(&self, mu: &Parameter) -> Result<f64> {
        Ok(self.predict_certified(mu)?.1)
    }
}

/// Training pairs `(mu, reduced trajectory)`, unique in `mu`.
#[derive(Clone, Debug, Default)]
pub struct SampleStore {
    params: Vec<Parameter>,
    trajectories: Vec<DMatrix<f64>>,
}

/// Result of inserting a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Inserted {
    Appended,
    /// An existing sample with the same parameter was overwritten.
    Replaced(usize),
}

impl SampleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn trajectories(&self) -> &[DMatrix<f64>] {
        &self.trajectories
    }

    pub fn insert(&mut self, mu: Parameter, coeffs: DMatrix<f64>) -> Inserted {
        match self.params.iter().position(|p| *p == mu) {
            Some(i) => {
                self.trajectories[i] = coeffs;
                Inserted::Replaced(i)
            }
            None => {
                self.params.push(mu);
                self.trajectories.push(coeffs);
                Inserted::Appended
            }
        }
    }

    /// Appends zero columns so every trajectory has `dim` reduced coordinates.
    pub fn pad_to(&mut self, dim: usize) -> Result<()> {
        for t in &mut self.trajectories {
            if t.ncols() > dim {
                return Err(Error::NonNestedBasis);
            }
            if t.ncols() < dim {
                let mut padded = DMatrix::zeros(t.nrows(), dim);
                padded.columns_mut(0, t.ncols()).copy_from(t);
                *t = padded;
            }
        }
        Ok(())
    }

    /// Keeps the samples whose flag is set.
    pub fn retain(&mut self, keep: &[bool]) -> Result<usize> {
        if keep.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: keep.len() });
        }
        let mut it = keep.iter();
        self.params.retain(|_| *it.next().unwrap());
        let mut it = keep.iter();
        self.trajectories.retain(|_| *it.next().unwrap());
        Ok(keep.iter().filter(|k| !**k).count())
    }
}

/// Checks that the basis of `old` is a prefix of the basis of `new`.
pub fn check_nested(old: &RbRom, new: &RbRom) -> Result<()> {
    if Arc::ptr_eq(&old.basis, &new.basis) {
        return Ok(());
    }
    if old.dim() > new.dim() || old.basis.iter().zip(new.basis.iter()).any(|(a, b)| a != b) {
        return Err(Error::NonNestedBasis);
    }
    Ok(())
}

/// Generator of certified machine-learned models fed with reduced-basis trajectories.
pub trait MlGenerator: Send {
    /// Reduced-basis model providing data, output map and estimator.
    fn rb(&self) -> &Arc<RbRom>;

    /// Adds the sample `(mu, traj)`, `traj` being the reduced-basis trajectory at `mu`.
    fn extend_with(&mut self, mu: &Parameter, traj: &Trajectory) -> Result<()>;

    /// Adds the reduced-basis trajectory at `mu`.
    fn extend(&mut self, mu: &Parameter) -> Result<()> {
        let traj = self.rb().solve(mu)?;
        self.extend_with(mu, &traj)
    }

    /// Trains on all collected samples and returns the certified model.
    fn precompute(&mut self) -> Result<Arc<MlRom>>;

    /// Most recently trained model, if it still matches the reduced basis.
    fn current(&self) -> Option<Arc<MlRom>>;

    /// Samples added since the last training.
    fn pending(&self) -> usize;

    /// Switches to an enlarged, nested reduced basis.
    fn prolong(&mut self, rb: Arc<RbRom>) -> Result<()>;

    fn samples(&self) -> &SampleStore;

    /// Drops the samples whose flag is unset and retrains on the rest (or resets when none
    /// remain). Returns the number of dropped samples.
    fn retain_samples(&mut self, keep: &[bool]) -> Result<usize>;

    /// Centers or trainable parameters of the current model (0 if untrained).
    fn model_size(&self) -> usize;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_insert_pad_retain() {
        let mut s = SampleStore::new();
        let a = Parameter(vec![1.0]);
        assert_eq!(s.insert(a.clone(), DMatrix::from_element(2, 2, 1.0)), Inserted::Appended);
        assert_eq!(s.insert(Parameter(vec![2.0]), DMatrix::from_element(2, 2, 2.0)), Inserted::Appended);
        assert_eq!(s.insert(a, DMatrix::from_element(2, 2, 3.0)), Inserted::Replaced(0));
        assert_eq!(s.len(), 2);
        s.pad_to(3).unwrap();
        assert_eq!(s.trajectories()[0], DMatrix::from_row_slice(2, 3, &[3.0, 3.0, 0.0, 3.0, 3.0, 0.0]));
        assert!(matches!(s.pad_to(1), Err(Error::NonNestedBasis)));
        assert_eq!(s.retain(&[false, true]).unwrap(), 1);
        assert_eq!(s.params(), &[Parameter(vec![2.0])]);
    }
}
