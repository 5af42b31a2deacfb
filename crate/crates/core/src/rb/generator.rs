use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::riesz::{dual_norm, RieszImage};
use super::rom::{EstimatorData, OperatorCoefficient, RbRom, ReducedOperators};
use crate::error::Result;
use crate::fom::FomProblem;
use crate::hapod::{g_norm, Hapod, HapodConfig, OrthonormalSet};
use crate::model::{CertifiedModel, Parameter, Trajectory};

/// Number of times an extension is repeated with a halved POD tolerance when the training
/// parameter is still not certified.
const MAX_RETRIES: usize = 3;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExtendReport {
    pub added: usize,
    pub basis_dim: usize,
    pub retries: usize,
    pub peak_stored: usize,
    /// Estimated output error at the training parameter after the extension.
    pub estimate: f64,
}

/// Builds reduced bases from full-order trajectories compressed by HaPOD.
pub struct RbGenerator {
    fom: Arc<FomProblem>,
    tolerance: f64,
    config: HapodConfig,
    training: Vec<Parameter>,
    basis: OrthonormalSet,
    image: RieszImage,
    rhs_coords: Vec<Vec<f64>>,
    mass_coords: Vec<Vec<f64>>,
    operator_coords: Vec<Vec<Vec<f64>>>,
    output_dual_norm: f64,
    cached: Option<Arc<RbRom>>,
}

impl RbGenerator {
    pub fn new(fom: Arc<FomProblem>, tolerance: f64, config: HapodConfig) -> Result<Self> {
        config.validate()?;
        let output_dual_norm = dual_norm(fom.energy_solver(), &fom.output);
        let mut generator = Self {
            tolerance,
            config,
            training: Vec::new(),
            basis: OrthonormalSet::new(),
            image: RieszImage::new(),
            rhs_coords: Vec::new(),
            mass_coords: Vec::new(),
            operator_coords: vec![Vec::new(); fom.operator.terms().len()],
            output_dual_norm,
            cached: None,
            fom,
        };
        for term in generator.fom.rhs.terms() {
            let c = generator.image.insert(generator.fom.energy(), generator.fom.energy_solver(), &term.vector);
            generator.rhs_coords.push(c);
        }
        // the initial datum must lie in the reduced space for the estimator to apply
        if let Some(u0) = &generator.fom.initial {
            let seeds: Vec<DVector<f64>> = u0.terms().iter().map(|t| t.vector.clone()).collect();
            generator.add_vectors(seeds);
        }
        Ok(generator)
    }

    pub fn fom(&self) -> &Arc<FomProblem> {
        &self.fom
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn set_tolerance(&mut self, tolerance: f64) {
        self.tolerance = tolerance;
    }

    pub fn config(&self) -> HapodConfig {
        self.config
    }

    pub fn training_set(&self) -> &[Parameter] {
        &self.training
    }

    pub fn basis(&self) -> &[DVector<f64>] {
        &self.basis.vectors
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Appends vectors after orthonormalization; returns how many were kept.
    pub fn add_vectors(&mut self, vectors: Vec<DVector<f64>>) -> usize {
        let fom = Arc::clone(&self.fom);
        let gram = fom.energy();
        let mut added = 0;
        for v in vectors {
            if !self.basis.try_push(gram, v) {
                continue;
            }
            added += 1;
            let phi = self.basis.vectors.last().unwrap().as_slice();
            let mass = fom.mass.mul_vec(phi);
            let c = self.image.insert(gram, fom.energy_solver(), &mass);
            self.mass_coords.push(c);
            for (q, term) in fom.operator.terms().iter().enumerate() {
                let aphi = term.matrix.mul_vec(phi);
                let c = self.image.insert(gram, fom.energy_solver(), &aphi);
                self.operator_coords[q].push(c);
            }
        }
        if added > 0 {
            self.cached = None;
        }
        added
    }

    fn compress_trajectory(&mut self, mu: &Parameter, eps_pod: f64, collect: bool) -> Result<(usize, usize, Option<Trajectory>)> {
        let fom = Arc::clone(&self.fom);
        let config = HapodConfig { eps_pod, ..self.config };
        let k_nodes = fom.time_grid.num_nodes();
        let mut hapod = Hapod::new(fom.energy(), config, k_nodes)?;
        let mut stored = collect.then(|| DMatrix::zeros(k_nodes, fom.dim()));
        let basis = &self.basis;
        fom.solve_streaming(mu, |k, u| {
            if let Some(s) = stored.as_mut() {
                s.row_mut(k).copy_from(&u.transpose());
            }
            let mut remains = u.clone();
            basis.project_out(&mut remains);
            hapod.push(remains);
            Ok(())
        })?;
        let result = hapod.finish();
        let peak = result.peak_stored + self.basis.len();
        let added = self.add_vectors(result.modes);
        let traj = stored.map(|s| Trajectory { grid: fom.time_grid, coeffs: s });
        Ok((added, peak, traj))
    }

    /// Adds the trajectory at `mu` to the basis.
    pub fn extend(&mut self, mu: &Parameter) -> Result<ExtendReport> {
        Ok(self.extend_impl(mu, false)?.0)
    }

    /// Like `extend`, also returning the full-order trajectory.
    pub fn extend_collect(&mut self, mu: &Parameter) -> Result<(ExtendReport, Trajectory)> {
        let (report, traj) = self.extend_impl(mu, true)?;
        Ok((report, traj.expect("trajectory collected")))
    }

    fn extend_impl(&mut self, mu: &Parameter, collect: bool) -> Result<(ExtendReport, Option<Trajectory>)> {
        self.fom.parameter_box.check(mu)?;
        if !self.training.contains(mu) {
            self.training.push(mu.clone());
        }
        let mut report = ExtendReport::default();
        let mut eps_pod = self.config.eps_pod;
        let mut trajectory = None;
        for attempt in 0..=MAX_RETRIES {
            let (added, peak, traj) = self.compress_trajectory(mu, eps_pod, collect && trajectory.is_none())?;
            if traj.is_some() {
                trajectory = traj;
            }
            report.added += added;
            report.peak_stored = report.peak_stored.max(peak);
            report.retries = attempt;
            let rom = self.precompute()?;
            report.estimate = rom.est_output(mu)?;
            if report.estimate <= self.tolerance {
                break;
            }
            eps_pod *= 0.5;
        }
        report.basis_dim = self.dim();
        Ok((report, trajectory))
    }

    /// Projects all components and assembles the estimator data.
    pub fn precompute(&mut self) -> Result<Arc<RbRom>> {
        if let Some(rom) = &self.cached {
            return Ok(Arc::clone(rom));
        }
        let fom = &self.fom;
        let n = self.dim();
        let nh = fom.dim();
        let phi = if n == 0 { DMatrix::zeros(nh, 0) } else { DMatrix::from_columns(&self.basis.vectors) };
        let phi_t = phi.transpose();
        let project = |m: &crate::linalg::CsrMatrix| &phi_t * m.mul_dense(&phi);

        let initial: Vec<DVector<f64>> = fom
            .initial
            .iter()
            .flat_map(|u0| u0.terms())
            .map(|t| DVector::from_iterator(n, self.basis.gram_vectors.iter().map(|g| g.dot(&t.vector))))
            .collect();
        let initial_in_space = fom.initial.iter().flat_map(|u0| u0.terms()).all(|t| {
            let mut rest = t.vector.clone();
            self.basis.project_out(&mut rest);
            let full = g_norm(fom.energy(), &t.vector);
            g_norm(fom.energy(), &rest) <= 1e-10 * full
        });

        let reduced = ReducedOperators {
            mass: project(&fom.mass),
            operator: fom.operator.terms().iter().map(|t| project(&t.matrix)).collect(),
            rhs: fom.rhs.terms().iter().map(|t| &phi_t * &t.vector).collect(),
            output: &phi_t * &fom.output,
            initial,
        };

        let dprime = self.image.len();
        let to_matrix = |cols: &[Vec<f64>]| {
            let mut m = DMatrix::zeros(dprime, cols.len());
            for (j, col) in cols.iter().enumerate() {
                for (i, v) in col.iter().enumerate() {
                    m[(i, j)] = *v;
                }
            }
            m
        };
        let estimator = EstimatorData {
            rhs: to_matrix(&self.rhs_coords),
            mass: to_matrix(&self.mass_coords),
            operator: self.operator_coords.iter().map(|c| to_matrix(c)).collect(),
            output_dual_norm: self.output_dual_norm,
            reference_parameter: fom.reference_parameter.clone(),
            coercivity: OperatorCoefficient::from_operator(&fom.operator),
        };

        let rom = Arc::new(RbRom {
            time_grid: fom.time_grid,
            basis: Arc::new(self.basis.vectors.clone()),
            reduced,
            estimator,
            operator_coefficients: fom.operator.terms().iter().map(|t| t.coefficient).collect(),
            rhs_coefficients: fom.rhs.terms().iter().map(|t| (t.coefficient, t.ramp)).collect(),
            initial_coefficients: fom.initial.iter().flat_map(|u0| u0.terms()).map(|t| t.coefficient).collect(),
            output_shift: fom.output_shift,
            initial_in_space,
            param_dim: fom.param_dim(),
        });
        self.cached = Some(Arc::clone(&rom));
        Ok(rom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{l2_time_norm, StateModel};
    use crate::problems::{build_heat_test, HeatTestConfig};
    use crate::rb::{rb_residual_bruteforce, state_l2_energy_norm};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn heat() -> Arc<FomProblem> {
        Arc::new(build_heat_test(&HeatTestConfig::default()).unwrap())
    }

    #[test]
    fn empty_basis_gives_trivial_rom() {
        let fom = heat();
        let mut generator = RbGenerator::new(Arc::clone(&fom), 1e-3, HapodConfig::default()).unwrap();
        let rom = generator.precompute().unwrap();
        assert_eq!(rom.dim(), 0);
        let mu = fom.parameter_box.center();
        let est = rom.est_output(&mu).unwrap();
        let f = fom.eval_output(&mu).unwrap();
        assert!(est >= l2_time_norm(&f));
        assert!(est > 1e-3);
    }

    #[test]
    fn extend_certifies_training_parameters_and_nests() {
        let fom = heat();
        let eps = 1e-3;
        let mut generator = RbGenerator::new(Arc::clone(&fom), eps, HapodConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut previous: Vec<DVector<f64>> = Vec::new();
        for _ in 0..4 {
            let mu = fom.parameter_box.sample_uniform(&mut rng);
            let report = generator.extend(&mu).unwrap();
            assert!(report.estimate <= eps, "{report:?}");
            assert_eq!(report.retries, 0);
            let basis = generator.basis();
            assert_eq!(&basis[..previous.len()], &previous[..]);
            previous = basis.to_vec();
            let rom = generator.precompute().unwrap();
            for m in generator.training_set() {
                assert!(rom.est_output(m).unwrap() <= eps);
            }
        }
        // the same parameter again adds nothing
        let mu = generator.training_set()[0].clone();
        let report = generator.extend(&mu).unwrap();
        assert_eq!(report.added, 0);
        assert_eq!(generator.training_set().len(), 4);
    }

    #[test]
    fn streaming_peak_is_bounded() {
        let fom = heat();
        let config = HapodConfig { chunk_size: 10, ..Default::default() };
        let mut generator = RbGenerator::new(Arc::clone(&fom), 1e-3, config).unwrap();
        let report = generator.extend(&fom.parameter_box.center()).unwrap();
        assert!(report.peak_stored <= config.chunk_size + 2 * generator.dim() + 1, "{report:?}");
    }

    #[test]
    fn reduced_solve_matches_dense_galerkin() {
        let fom = heat();
        let mut generator = RbGenerator::new(Arc::clone(&fom), 1e-3, HapodConfig::default()).unwrap();
        generator.extend(&Parameter(vec![0.3, 0.8, 1.0])).unwrap();
        let rom = generator.precompute().unwrap();
        let mu = Parameter(vec![0.7, 0.2, 1.2]);
        let phi = DMatrix::from_columns(generator.basis());
        let a = fom.operator.assemble(&mu).unwrap().to_dense();
        let m = fom.mass.to_dense();
        let ar = phi.transpose() * &a * &phi;
        let mr = phi.transpose() * &m * &phi;
        let dt = fom.time_grid.dt();
        let lu = (&mr + &ar * dt).lu();
        let l = phi.transpose() * fom.rhs.evaluate(&mu, 0.0);
        let traj = rom.solve(&mu).unwrap();
        let mut c = DVector::zeros(rom.dim());
        for k in 1..fom.time_grid.num_nodes() {
            c = lu.solve(&(&mr * &c + &l * dt)).unwrap();
            let got = traj.coeffs.row(k).transpose();
            assert!((&got - &c).amax() <= 1e-12 * c.amax().max(1.0));
        }
    }

    #[test]
    fn estimators_bound_errors_and_match_bruteforce() {
        let fom = heat();
        let mut generator = RbGenerator::new(Arc::clone(&fom), 1e-1, HapodConfig::default()).unwrap();
        generator.extend(&Parameter(vec![0.5, 0.5, 1.0])).unwrap();
        let rom = generator.precompute().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let mu = fom.parameter_box.sample_uniform(&mut rng);
            let traj = rom.solve(&mu).unwrap();
            let online = rom.residual_dual_norms(&traj, &mu).unwrap();
            let oracle = rb_residual_bruteforce(&fom, &rom, &traj, &mu).unwrap();
            let scale = oracle.iter().fold(0.0f64, |m, v| m.max(*v));
            for (a, b) in online.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-8 * b.max(1e-12 * scale.max(1.0)) + 1e-12, "{a} vs {b}");
            }
            let truth = fom.eval_state(&mu).unwrap();
            let diff = &truth.coeffs - rom.reconstruct(&traj).unwrap();
            assert!(state_l2_energy_norm(&fom, &diff) <= rom.est_state(&traj, &mu).unwrap());
            let out_err = l2_time_norm(&fom.output_of(&truth).sub(&rom.output(&traj).unwrap()).unwrap());
            assert!(out_err <= rom.est_output_of(&traj, &mu).unwrap());
        }
    }
}
