//! Full-order model: implicit Euler on the assembled system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::fem::{apply_dirichlet_shift, energy_product, AffineFunctional, AffineOperator, DirichletLifting};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::model::{OutputSignal, Parameter, ParameterBox, StateModel, TimeGrid, Trajectory};

/// Ingredients of a full-order problem before constraints are applied.
#[derive(Clone, Debug)]
pub struct FomSpec {
    pub name: String,
    pub time_grid: TimeGrid,
    pub parameter_box: ParameterBox,
    /// Parameter defining the energy inner product.
    pub reference_parameter: Parameter,
    pub operator: AffineOperator,
    pub mass: CsrMatrix,
    pub rhs: AffineFunctional,
    /// Affine initial datum; `None` means zero.
    pub initial: Option<AffineFunctional>,
    pub output: DVector<f64>,
    pub lifting: Option<DirichletLifting>,
}

#[derive(Clone, Debug)]
pub struct FomProblem {
    pub name: String,
    pub time_grid: TimeGrid,
    pub parameter_box: ParameterBox,
    pub reference_parameter: Parameter,
    pub operator: AffineOperator,
    pub mass: CsrMatrix,
    pub rhs: AffineFunctional,
    pub initial: Option<AffineFunctional>,
    /// Output functional, zero on constrained DoFs.
    pub output: DVector<f64>,
    /// `s . g` for lifted problems.
    pub output_shift: f64,
    pub constrained: Vec<bool>,
    /// Extension of the Dirichlet data; states are stored shifted by it.
    pub lift: DVector<f64>,
    energy: CsrMatrix,
    energy_solver: BandedLu,
}

impl FomProblem {
    pub fn new(spec: FomSpec) -> Result<Self> {
        let n = spec.operator.dim();
        let check = |got: usize| {
            if got != n {
                Err(Error::DimensionMismatch { expected: n, got })
            } else {
                Ok(())
            }
        };
        check(spec.mass.nrows())?;
        check(spec.rhs.dim())?;
        check(spec.output.len())?;
        if let Some(u0) = &spec.initial {
            check(u0.dim())?;
        }
        if spec.reference_parameter.dim() != spec.parameter_box.dim() {
            return Err(Error::DimensionMismatch {
                expected: spec.parameter_box.dim(),
                got: spec.reference_parameter.dim(),
            });
        }
        let (operator, rhs, mass, constrained, output, output_shift, initial, lift) = match spec.lifting {
            Some(mut lifting) => {
                check(lifting.dim())?;
                let (op, rhs) = apply_dirichlet_shift(&spec.operator, &spec.rhs, &lifting)?;
                let shift = lifting.output_shift(&spec.output);
                lifting.shifted = true;
                let mass = spec.mass.constrained(&lifting.constrained);
                let mut s = spec.output.clone();
                let mut initial = spec.initial.clone();
                for (i, c) in lifting.constrained.iter().enumerate() {
                    if *c {
                        s[i] = 0.0;
                    }
                }
                if let Some(u0) = &mut initial {
                    let mut cleaned = AffineFunctional::new(n);
                    for t in u0.terms() {
                        let mut t = t.clone();
                        for (i, c) in lifting.constrained.iter().enumerate() {
                            if *c {
                                t.vector[i] = 0.0;
                            }
                        }
                        cleaned.push(t)?;
                    }
                    *u0 = cleaned;
                }
                (op, rhs, mass, lifting.constrained, s, shift, initial, lifting.values)
            }
            None => (spec.operator, spec.rhs, spec.mass, vec![false; n], spec.output, 0.0, spec.initial, DVector::zeros(n)),
        };
        let energy = energy_product(&operator, &spec.reference_parameter)?;
        let energy_solver = BandedLu::factor(&energy).map_err(|_| Error::EnergyNotSpd)?;
        Ok(Self {
            name: spec.name,
            time_grid: spec.time_grid,
            parameter_box: spec.parameter_box,
            reference_parameter: spec.reference_parameter,
            operator,
            mass,
            rhs,
            initial,
            output,
            output_shift,
            constrained,
            lift,
            energy,
            energy_solver,
        })
    }

    pub fn dim(&self) -> usize {
        self.operator.dim()
    }

    pub fn param_dim(&self) -> usize {
        self.parameter_box.dim()
    }

    /// Gram matrix of the energy inner product.
    pub fn energy(&self) -> &CsrMatrix {
        &self.energy
    }

    pub fn energy_solver(&self) -> &BandedLu {
        &self.energy_solver
    }

    pub fn initial_state(&self, mu: &Parameter) -> DVector<f64> {
        match &self.initial {
            Some(u0) => u0.evaluate(mu, 0.0),
            None => DVector::zeros(self.dim()),
        }
    }

    pub fn output_of_state(&self, u: &DVector<f64>) -> f64 {
        self.output.dot(u) + self.output_shift
    }

    /// Runs the time stepper and hands every state `u(t_k)` to `visit(k, u)` without
    /// storing the trajectory.
    pub fn solve_streaming<F>(&self, mu: &Parameter, mut visit: F) -> Result<()>
    where
        F: FnMut(usize, &DVector<f64>) -> Result<()>,
    {
        if mu.dim() != self.param_dim() {
            return Err(Error::DimensionMismatch { expected: self.param_dim(), got: mu.dim() });
        }
        let dt = self.time_grid.dt();
        let a = self.operator.assemble(mu)?;
        let system = CsrMatrix::linear_combination(&[(1.0, &self.mass), (dt, &a)])?;
        let lu = BandedLu::factor(&system).map_err(|_| Error::FomStepSingular)?;

        let mut u = self.initial_state(mu);
        visit(0, &u)?;
        let time_invariant = self.rhs.is_time_invariant();
        let constant_rhs = time_invariant.then(|| self.rhs.evaluate(mu, 0.0) * dt);
        let mut rhs = DVector::zeros(self.dim());
        let mut work = Vec::new();
        for k in 1..self.time_grid.num_nodes() {
            self.mass.mul_vec_into(u.as_slice(), rhs.as_mut_slice());
            match &constant_rhs {
                Some(b) => rhs += b,
                None => rhs.axpy(dt, &self.rhs.evaluate(mu, self.time_grid.node(k)), 1.0),
            }
            lu.solve_in_place(rhs.as_mut_slice(), &mut work);
            std::mem::swap(&mut u, &mut rhs);
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::FomStepSingular);
            }
            visit(k, &u)?;
        }
        Ok(())
    }

    /// Output signal from a full-order trajectory.
    pub fn output_of(&self, traj: &Trajectory) -> OutputSignal {
        let values = (&traj.coeffs * &self.output).iter().map(|v| v + self.output_shift).collect();
        OutputSignal { grid: traj.grid, values }
    }
}

impl StateModel for FomProblem {
    fn time_grid(&self) -> TimeGrid {
        self.time_grid
    }

    fn eval_state(&self, mu: &Parameter) -> Result<Trajectory> {
        let mut coeffs = DMatrix::zeros(self.time_grid.num_nodes(), self.dim());
        self.solve_streaming(mu, |k, u| {
            coeffs.row_mut(k).copy_from(&u.transpose());
            Ok(())
        })?;
        Trajectory::new(self.time_grid, coeffs)
    }

    fn eval_output(&self, mu: &Parameter) -> Result<OutputSignal> {
        let mut values = Vec::with_capacity(self.time_grid.num_nodes());
        self.solve_streaming(mu, |_, u| {
            values.push(self.output_of_state(u));
            Ok(())
        })?;
        OutputSignal::new(self.time_grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{
        assemble_diffusion, assemble_load, assemble_mass, build_grid, Coefficient, FieldRaster, FunctionalTerm,
        OperatorTerm, Ramp, Rect,
    };

    fn scalar_problem() -> FomProblem {
        let one = CsrMatrix::identity(1);
        let mut op = AffineOperator::new(1);
        op.push(OperatorTerm {
            name: "a".into(),
            coefficient: Coefficient::Constant(1.0),
            matrix: one.clone(),
            symmetric: true,
            positive: true,
        })
        .unwrap();
        let mut u0 = AffineFunctional::new(1);
        u0.push(FunctionalTerm {
            name: "u0".into(),
            coefficient: Coefficient::Constant(1.0),
            vector: DVector::from_element(1, 1.0),
            ramp: Ramp::None,
        })
        .unwrap();
        FomProblem::new(FomSpec {
            name: "scalar".into(),
            time_grid: TimeGrid::new(1.0, 11).unwrap(),
            parameter_box: ParameterBox::new(vec![0.0], vec![1.0]).unwrap(),
            reference_parameter: Parameter(vec![0.5]),
            operator: op,
            mass: one,
            rhs: AffineFunctional::new(1),
            initial: Some(u0),
            output: DVector::from_element(1, 1.0),
            lifting: None,
        })
        .unwrap()
    }

    /// Heat equation on a 4x4 grid, kappa = mu_0, unit source ramped, zero Dirichlet data.
    fn heat_4x4(source: f64) -> (FomProblem, CsrMatrix, CsrMatrix, DVector<f64>, Vec<bool>) {
        let g = build_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 4, 4).unwrap();
        let n = g.num_nodes();
        let k = assemble_diffusion(&g, &FieldRaster::constant(4, 4, 1.0)).unwrap();
        let m = assemble_mass(&g);
        let b = assemble_load(&g, &[true; 16]).unwrap();
        let mut op = AffineOperator::new(n);
        op.push(OperatorTerm {
            name: "k".into(),
            coefficient: Coefficient::param(0),
            matrix: k.clone(),
            symmetric: true,
            positive: true,
        })
        .unwrap();
        let mut rhs = AffineFunctional::new(n);
        rhs.push(FunctionalTerm {
            name: "f".into(),
            coefficient: Coefficient::Constant(source),
            vector: b.clone(),
            ramp: Ramp::Linear { rate: 2.0 },
        })
        .unwrap();
        let boundary: Vec<usize> = (0..n).filter(|i| g.is_boundary_node(*i)).collect();
        let zeros = vec![0.0; boundary.len()];
        let lifting = DirichletLifting::new(n, &boundary, &zeros).unwrap();
        let mask = lifting.constrained.clone();
        let p = FomProblem::new(FomSpec {
            name: "heat".into(),
            time_grid: TimeGrid::new(1.0, 21).unwrap(),
            parameter_box: ParameterBox::new(vec![0.1], vec![1.0]).unwrap(),
            reference_parameter: Parameter(vec![0.5]),
            operator: op,
            mass: m.clone(),
            rhs,
            initial: None,
            output: DVector::from_element(n, 1.0 / n as f64),
            lifting: Some(lifting),
        })
        .unwrap();
        (p, k, m, b, mask)
    }

    #[test]
    fn scalar_recursion() {
        let p = scalar_problem();
        let traj = p.eval_state(&Parameter(vec![0.5])).unwrap();
        let dt: f64 = 0.1;
        for k in 0..11 {
            let exact = (1.0 + dt).powi(-(k as i32));
            assert!((traj.coeffs[(k, 0)] - exact).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let (p, ..) = heat_4x4(0.0);
        let traj = p.eval_state(&Parameter(vec![0.4])).unwrap();
        assert_eq!(traj.coeffs.amax(), 0.0);
        let out = p.eval_output(&Parameter(vec![0.4])).unwrap();
        assert!(out.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn matches_dense_stepping_oracle() {
        let (p, k, m, b, mask) = heat_4x4(1.0);
        let mu = Parameter(vec![0.3]);
        let traj = p.eval_state(&mu).unwrap();

        // oracle: dense elimination of the free DoFs only
        let free: Vec<usize> = (0..25).filter(|i| !mask[*i]).collect();
        let kd = k.to_dense();
        let md = m.to_dense();
        let sub = |a: &DMatrix<f64>| DMatrix::from_fn(free.len(), free.len(), |r, c| a[(free[r], free[c])]);
        let (kf, mf) = (sub(&kd), sub(&md));
        let bf = DVector::from_fn(free.len(), |r, _| b[free[r]]);
        let dt = 0.05;
        let sys = (&mf + &kf * (0.3 * dt)).lu();
        let mut u = DVector::zeros(free.len());
        for step in 1..21 {
            let t = step as f64 * dt;
            let rhs = &mf * &u + &bf * (dt * (2.0 * t).min(1.0));
            u = sys.solve(&rhs).unwrap();
            for (r, &i) in free.iter().enumerate() {
                assert!((traj.coeffs[(step, i)] - u[r]).abs() < 1e-12);
            }
            for i in (0..25).filter(|i| mask[*i]) {
                assert_eq!(traj.coeffs[(step, i)], 0.0);
            }
        }
        assert_eq!(traj, p.eval_state(&mu).unwrap());
    }

    #[test]
    fn heat_energy_decays_without_source() {
        let g = build_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 6, 6).unwrap();
        let n = g.num_nodes();
        let mut op = AffineOperator::new(n);
        op.push(OperatorTerm {
            name: "k".into(),
            coefficient: Coefficient::Constant(1.0),
            matrix: assemble_diffusion(&g, &FieldRaster::constant(6, 6, 1.0)).unwrap(),
            symmetric: true,
            positive: true,
        })
        .unwrap();
        let mut u0 = AffineFunctional::new(n);
        let bump = DVector::from_fn(n, |i, _| {
            let (x, y) = g.node_coords(i);
            (std::f64::consts::PI * x).sin() * (std::f64::consts::PI * y).sin() + x * y
        });
        u0.push(FunctionalTerm { name: "u0".into(), coefficient: Coefficient::Constant(1.0), vector: bump, ramp: Ramp::None })
            .unwrap();
        let boundary: Vec<usize> = (0..n).filter(|i| g.is_boundary_node(*i)).collect();
        let lifting = DirichletLifting::new(n, &boundary, &vec![0.0; boundary.len()]).unwrap();
        let m = assemble_mass(&g);
        let p = FomProblem::new(FomSpec {
            name: "decay".into(),
            time_grid: TimeGrid::new(0.5, 30).unwrap(),
            parameter_box: ParameterBox::new(vec![0.0], vec![1.0]).unwrap(),
            reference_parameter: Parameter(vec![0.5]),
            operator: op,
            mass: m.clone(),
            rhs: AffineFunctional::new(n),
            initial: Some(u0),
            output: DVector::from_element(n, 1.0),
            lifting: Some(lifting),
        })
        .unwrap();
        let traj = p.eval_state(&Parameter(vec![0.5])).unwrap();
        let energies: Vec<f64> = (0..30)
            .map(|k| {
                let u = traj.coeffs.row(k).transpose();
                crate::linalg::bilinear(&m, u.as_slice(), u.as_slice()).sqrt()
            })
            .collect();
        assert!(energies.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    }
}
