use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{AffineOperator, Coefficient, Ramp};
use crate::fom::FomProblem;
use crate::model::{CertifiedModel, OutputSignal, Parameter, StateModel, TimeGrid, Trajectory};

/// Parameter dependence of one operator component, as needed by the coercivity bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorCoefficient {
    pub coefficient: Coefficient,
    pub symmetric: bool,
    pub positive: bool,
}

impl OperatorCoefficient {
    pub fn from_operator(op: &AffineOperator) -> Vec<Self> {
        op.terms()
            .iter()
            .map(|t| Self { coefficient: t.coefficient, symmetric: t.symmetric, positive: t.positive })
            .collect()
    }
}

/// Lower bound of the coercivity constant by the min-theta approach:
/// `min_q theta_q(mu) / theta_q(mu_ref)` over the symmetric components.
pub fn min_theta_alpha(terms: &[OperatorCoefficient], mu: &Parameter, reference: &Parameter) -> Result<f64> {
    let mut alpha = f64::INFINITY;
    for (q, t) in terms.iter().enumerate().filter(|(_, t)| t.symmetric) {
        if !t.positive {
            return Err(Error::MinThetaInapplicable(format!("component {q} is not flagged positive")));
        }
        let num = t.coefficient.eval(mu);
        let den = t.coefficient.eval(reference);
        if !(num > 0.0) || !(den > 0.0) {
            return Err(Error::MinThetaInapplicable(format!(
                "component {q} has nonpositive coefficient ({num}, reference {den})"
            )));
        }
        alpha = alpha.min(num / den);
    }
    if !alpha.is_finite() {
        return Err(Error::MinThetaInapplicable("no symmetric component".into()));
    }
    Ok(alpha)
}

/// Galerkin projections of all affine components onto the reduced space.
#[derive(Clone, Debug)]
pub struct ReducedOperators {
    pub mass: DMatrix<f64>,
    pub operator: Vec<DMatrix<f64>>,
    pub rhs: Vec<DVector<f64>>,
    pub output: DVector<f64>,
    pub initial: Vec<DVector<f64>>,
}

/// Offline data of the residual estimator.
///
/// Riesz representatives of all residual components are expressed in an orthonormal basis
/// of their span; the columns below are their coordinates. The Gram blocks of the
/// representatives are the corresponding products `B_i^T B_j`.
#[derive(Clone, Debug)]
pub struct EstimatorData {
    /// One column per right-hand side component.
    pub rhs: DMatrix<f64>,
    /// Column `n` represents `M phi_n`.
    pub mass: DMatrix<f64>,
    /// Per operator component, column `n` represents `A_q phi_n`.
    pub operator: Vec<DMatrix<f64>>,
    pub output_dual_norm: f64,
    pub reference_parameter: Parameter,
    pub coercivity: Vec<OperatorCoefficient>,
}

impl EstimatorData {
    pub fn image_dim(&self) -> usize {
        self.rhs.nrows()
    }

    /// Gram block of the Riesz representatives of two component groups.
    pub fn gram_block(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
        a.transpose() * b
    }
}

/// Certified reduced-basis model.
#[derive(Clone, Debug)]
pub struct RbRom {
    pub time_grid: TimeGrid,
    /// Orthonormal basis vectors in the energy product.
    pub basis: Arc<Vec<DVector<f64>>>,
    pub reduced: ReducedOperators,
    pub estimator: EstimatorData,
    pub operator_coefficients: Vec<Coefficient>,
    pub rhs_coefficients: Vec<(Coefficient, Ramp)>,
    pub initial_coefficients: Vec<Coefficient>,
    pub output_shift: f64,
    /// Whether the initial datum lies in the reduced space for every parameter.
    pub initial_in_space: bool,
    pub param_dim: usize,
}

impl RbRom {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    fn check_mu(&self, mu: &Parameter) -> Result<()> {
        if mu.dim() != self.param_dim {
            return Err(Error::DimensionMismatch { expected: self.param_dim, got: mu.dim() });
        }
        Ok(())
    }

    fn check_traj(&self, traj: &Trajectory) -> Result<()> {
        if traj.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: traj.dim() });
        }
        if traj.coeffs.nrows() != self.time_grid.num_nodes() {
            return Err(Error::DimensionMismatch { expected: self.time_grid.num_nodes(), got: traj.coeffs.nrows() });
        }
        Ok(())
    }

    /// Reduced coefficients of the initial datum.
    pub fn initial_coefficients(&self, mu: &Parameter) -> DVector<f64> {
        let mut c = DVector::zeros(self.dim());
        for (coef, v) in self.initial_coefficients.iter().zip(&self.reduced.initial) {
            c.axpy(coef.eval(mu), v, 1.0);
        }
        c
    }

    pub fn assemble_operator(&self, mu: &Parameter) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.dim(), self.dim());
        for (coef, aq) in self.operator_coefficients.iter().zip(&self.reduced.operator) {
            a += aq * coef.eval(mu);
        }
        a
    }

    /// Implicit Euler in the reduced space.
    pub fn solve(&self, mu: &Parameter) -> Result<Trajectory> {
        self.check_mu(mu)?;
        let n = self.dim();
        let k_nodes = self.time_grid.num_nodes();
        let mut coeffs = DMatrix::zeros(k_nodes, n);
        if n == 0 {
            return Trajectory::new(self.time_grid, coeffs);
        }
        let dt = self.time_grid.dt();
        let system = &self.reduced.mass + self.assemble_operator(mu) * dt;
        let lu = system.lu();
        if !lu.is_invertible() {
            return Err(Error::SingularReducedSystem);
        }
        let propagator = lu.solve(&self.reduced.mass).ok_or(Error::SingularReducedSystem)?;
        let sources: Vec<(Coefficient, Ramp, DVector<f64>)> = self
            .rhs_coefficients
            .iter()
            .zip(&self.reduced.rhs)
            .map(|((c, r), b)| lu.solve(b).map(|s| (*c, *r, s)).ok_or(Error::SingularReducedSystem))
            .collect::<Result<_>>()?;

        let mut c = self.initial_coefficients(mu);
        coeffs.row_mut(0).copy_from(&c.transpose());
        let mut next = DVector::zeros(n);
        for k in 1..k_nodes {
            let t = self.time_grid.node(k);
            next.gemv(1.0, &propagator, &c, 0.0);
            for (coef, ramp, s) in &sources {
                let w = dt * coef.eval(mu) * ramp.eval(t);
                if w != 0.0 {
                    next.axpy(w, s, 1.0);
                }
            }
            std::mem::swap(&mut c, &mut next);
            coeffs.row_mut(k).copy_from(&c.transpose());
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularReducedSystem);
        }
        Trajectory::new(self.time_grid, coeffs)
    }

    /// Output of an arbitrary reduced trajectory.
    pub fn output(&self, traj: &Trajectory) -> Result<OutputSignal> {
        self.check_traj(traj)?;
        let values = (&traj.coeffs * &self.reduced.output).iter().map(|v| v + self.output_shift).collect();
        OutputSignal::new(traj.grid, values)
    }

    /// Full-order states `Phi c_k`, one row per node.
    pub fn reconstruct(&self, traj: &Trajectory) -> Result<DMatrix<f64>> {
        self.check_traj(traj)?;
        let nh = self.basis.first().map_or(0, |v| v.len());
        let mut full = DMatrix::zeros(traj.coeffs.nrows(), nh);
        for (n, phi) in self.basis.iter().enumerate() {
            for k in 0..traj.coeffs.nrows() {
                let c = traj.coeffs[(k, n)];
                if c != 0.0 {
                    let mut row = full.row_mut(k);
                    for (r, p) in row.iter_mut().zip(phi.iter()) {
                        *r += c * p;
                    }
                }
            }
        }
        Ok(full)
    }

    /// Dual norms of the step defects `r_k = l(t_{k+1}) - M (c_{k+1} - c_k) / dt - A c_{k+1}`,
    /// one per step.
    pub fn residual_dual_norms(&self, traj: &Trajectory, mu: &Parameter) -> Result<Vec<f64>> {
        self.check_traj(traj)?;
        self.check_mu(mu)?;
        let est = &self.estimator;
        let steps = self.time_grid.num_nodes() - 1;
        let dprime = est.image_dim();
        if dprime == 0 {
            return Ok(vec![0.0; steps]);
        }
        let dt = self.time_grid.dt();
        let c = &traj.coeffs;
        let n = self.dim();

        let mut res = DMatrix::zeros(dprime, steps);
        if n > 0 {
            let next = c.rows(1, steps);
            let diff = (next - c.rows(0, steps)) / dt;
            let mut b_op = DMatrix::zeros(dprime, n);
            for (coef, bq) in self.operator_coefficients.iter().zip(&est.operator) {
                let theta = coef.eval(mu);
                if theta != 0.0 {
                    b_op += bq * theta;
                }
            }
            res.gemm(1.0, &est.mass, &diff.transpose(), 0.0);
            res.gemm(1.0, &b_op, &next.transpose(), 1.0);
        }
        for (q, (coef, ramp)) in self.rhs_coefficients.iter().enumerate() {
            let theta = coef.eval(mu);
            if theta == 0.0 {
                continue;
            }
            let col = est.rhs.column(q);
            for k in 0..steps {
                let w = theta * ramp.eval(self.time_grid.node(k + 1));
                if w != 0.0 {
                    res.column_mut(k).axpy(-w, &col, 1.0);
                }
            }
        }
        Ok(res.column_iter().map(|col| col.norm()).collect())
    }

    /// `(1 / alpha_LB(mu)) sqrt(sum_k dt |r_k|^2)`.
    pub fn est_state(&self, traj: &Trajectory, mu: &Parameter) -> Result<f64> {
        if !self.initial_in_space {
            return Err(Error::InitialNotInSpace);
        }
        let alpha = min_theta_alpha(&self.estimator.coercivity, mu, &self.estimator.reference_parameter)?;
        let dt = self.time_grid.dt();
        let sum: f64 = self.residual_dual_norms(traj, mu)?.iter().map(|r| dt * r * r).sum();
        Ok(sum.sqrt() / alpha)
    }

    /// Output error bound for any reduced trajectory: `|s|_{V'} * est_state`.
    pub fn est_output_of(&self, traj: &Trajectory, mu: &Parameter) -> Result<f64> {
        Ok(self.estimator.output_dual_norm * self.est_state(traj, mu)?)
    }
}

impl StateModel for RbRom {
    fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    fn eval_state(&self, mu: &Parameter) -> Result<Trajectory> {
        self.solve(mu)
    }

    fn eval_output(&self, mu: &Parameter) -> Result<OutputSignal> {
        self.output(&self.solve(mu)?)
    }
}

impl CertifiedModel for RbRom {
    fn est_output(&self, mu: &Parameter) -> Result<f64> {
        self.est_output_of(&self.solve(mu)?, mu)
    }
}

/// Reference computation of the residual dual norms: full-order reconstruction, residual
/// assembly and one Riesz solve per step.
pub fn rb_residual_bruteforce(fom: &FomProblem, rom: &RbRom, traj: &Trajectory, mu: &Parameter) -> Result<Vec<f64>> {
    let full = rom.reconstruct(traj)?;
    let dt = fom.time_grid.dt();
    let nh = fom.dim();
    let solver = fom.energy_solver();
    let mut norms = Vec::with_capacity(full.nrows().saturating_sub(1));
    for k in 0..full.nrows() - 1 {
        let u0: DVector<f64> = if full.ncols() == 0 { DVector::zeros(nh) } else { full.row(k).transpose() };
        let u1: DVector<f64> = if full.ncols() == 0 { DVector::zeros(nh) } else { full.row(k + 1).transpose() };
        let mut f = fom.rhs.evaluate(mu, fom.time_grid.node(k + 1));
        f -= fom.mass.mul_vec((&u1 - &u0).as_slice()) / dt;
        f -= fom.operator.apply(mu, u1.as_slice());
        let r = solver.solve(f.as_slice());
        norms.push(f.dot(&r).max(0.0).sqrt());
    }
    Ok(norms)
}

/// `sqrt(sum_{k < K-1} dt |e_k|_G^2)` for a difference of full-order trajectories (rows = nodes).
pub fn state_l2_energy_norm(fom: &FomProblem, diff: &DMatrix<f64>) -> f64 {
    let dt = fom.time_grid.dt();
    let g = fom.energy();
    let mut sum = 0.0;
    for k in 0..diff.nrows().saturating_sub(1) {
        let e: Vec<f64> = diff.row(k).iter().copied().collect();
        sum += dt * crate::linalg::bilinear(g, &e, &e);
    }
    sum.max(0.0).sqrt()
}
