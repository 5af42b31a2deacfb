use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{BandedLu, CsrMatrix};
use crate::model::Parameter;

/// Parameter dependence of an affine component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coefficient {
    Constant(f64),
    /// `scale * mu[index]`
    Parameter { index: usize, scale: f64 },
}

impl Coefficient {
    pub fn param(index: usize) -> Self {
        Coefficient::Parameter { index, scale: 1.0 }
    }

    pub fn eval(&self, mu: &Parameter) -> f64 {
        match *self {
            Coefficient::Constant(c) => c,
            Coefficient::Parameter { index, scale } => scale * mu.get(index),
        }
    }
}

/// Time modulation of a right-hand side component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    #[default]
    None,
    /// `min(rate * t, 1)`
    Linear { rate: f64 },
}

impl Ramp {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Ramp::None => 1.0,
            Ramp::Linear { rate } => (rate * t).min(1.0),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OperatorTerm {
    pub name: String,
    pub coefficient: Coefficient,
    pub matrix: CsrMatrix,
    pub symmetric: bool,
    /// The coefficient is positive on the whole parameter domain.
    pub positive: bool,
}

/// `A(mu) = sum_q theta_q(mu) A_q`.
#[derive(Clone, Debug)]
pub struct AffineOperator {
    dim: usize,
    terms: Vec<OperatorTerm>,
}

impl AffineOperator {
    pub fn new(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn push(&mut self, term: OperatorTerm) -> Result<()> {
        if term.matrix.nrows() != self.dim || term.matrix.ncols() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: term.matrix.nrows() });
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[OperatorTerm] {
        &self.terms
    }

    pub fn thetas(&self, mu: &Parameter) -> Vec<f64> {
        self.terms.iter().map(|t| t.coefficient.eval(mu)).collect()
    }

    pub fn assemble(&self, mu: &Parameter) -> Result<CsrMatrix> {
        let thetas = self.thetas(mu);
        let terms: Vec<_> = thetas.iter().zip(&self.terms).map(|(c, t)| (*c, &t.matrix)).collect();
        CsrMatrix::linear_combination(&terms)
    }

    pub fn apply(&self, mu: &Parameter, x: &[f64]) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        for (theta, t) in self.thetas(mu).into_iter().zip(&self.terms) {
            if theta != 0.0 {
                y.axpy(theta, &t.matrix.mul_vec(x), 1.0);
            }
        }
        y
    }
}

#[derive(Clone, Debug)]
pub struct FunctionalTerm {
    pub name: String,
    pub coefficient: Coefficient,
    pub vector: DVector<f64>,
    pub ramp: Ramp,
}

/// `l(mu; t) = sum_q theta_q(mu) r_q(t) b_q`.
#[derive(Clone, Debug)]
pub struct AffineFunctional {
    dim: usize,
    terms: Vec<FunctionalTerm>,
}

impl AffineFunctional {
    pub fn new(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn push(&mut self, term: FunctionalTerm) -> Result<()> {
        if term.vector.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: term.vector.len() });
        }
        self.terms.push(term);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[FunctionalTerm] {
        &self.terms
    }

    pub fn weights(&self, mu: &Parameter, t: f64) -> Vec<f64> {
        self.terms.iter().map(|q| q.coefficient.eval(mu) * q.ramp.eval(t)).collect()
    }

    pub fn evaluate(&self, mu: &Parameter, t: f64) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim);
        for (w, q) in self.weights(mu, t).into_iter().zip(&self.terms) {
            if w != 0.0 {
                b.axpy(w, &q.vector, 1.0);
            }
        }
        b
    }

    pub fn is_time_invariant(&self) -> bool {
        self.terms.iter().all(|t| t.ramp == Ramp::None)
    }
}

/// Dirichlet constraints with the extension `g` of the boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletLifting {
    pub constrained: Vec<bool>,
    /// Prescribed values on constrained DoFs, zero elsewhere.
    pub values: DVector<f64>,
    pub shifted: bool,
}

impl DirichletLifting {
    pub fn new(dim: usize, indices: &[usize], values: &[f64]) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: indices.len(), got: values.len() });
        }
        let mut constrained = vec![false; dim];
        let mut g = DVector::zeros(dim);
        for (&i, &v) in indices.iter().zip(values) {
            if i >= dim {
                return Err(Error::IndexOutOfRange { index: i, dim });
            }
            constrained[i] = true;
            g[i] = v;
        }
        Ok(Self { constrained, values: g, shifted: false })
    }

    pub fn dim(&self) -> usize {
        self.constrained.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    /// Constant `s . g` added to outputs of the shifted problem.
    pub fn output_shift(&self, s: &DVector<f64>) -> f64 {
        s.dot(&self.values)
    }

    fn zero_constrained(&self, v: &mut DVector<f64>) {
        for (vi, c) in v.iter_mut().zip(&self.constrained) {
            if *c {
                *vi = 0.0;
            }
        }
    }
}

/// Moves the problem to homogeneous constraints. Every operator component gets constrained
/// rows and columns with a unit diagonal, and each one contributes a right-hand side
/// component `-A_q g` carrying the same coefficient.
pub fn apply_dirichlet_shift(
    op: &AffineOperator,
    rhs: &AffineFunctional,
    lifting: &DirichletLifting,
) -> Result<(AffineOperator, AffineFunctional)> {
    if lifting.dim() != op.dim() || rhs.dim() != op.dim() {
        return Err(Error::DimensionMismatch { expected: op.dim(), got: lifting.dim() });
    }
    let mut new_op = AffineOperator::new(op.dim());
    for t in op.terms() {
        new_op.push(OperatorTerm { matrix: t.matrix.constrained(&lifting.constrained), ..t.clone() })?;
    }
    let mut new_rhs = AffineFunctional::new(rhs.dim());
    for t in rhs.terms() {
        let mut v = t.vector.clone();
        lifting.zero_constrained(&mut v);
        new_rhs.push(FunctionalTerm { vector: v, ..t.clone() })?;
    }
    if !lifting.is_zero() {
        for t in op.terms() {
            let mut v = -t.matrix.mul_vec(lifting.values.as_slice());
            lifting.zero_constrained(&mut v);
            new_rhs.push(FunctionalTerm {
                name: format!("lift:{}", t.name),
                coefficient: t.coefficient,
                vector: v,
                ramp: Ramp::None,
            })?;
        }
    }
    Ok((new_op, new_rhs))
}

/// Gram matrix `sum_{q symmetric} theta_q(mu_ref) A_q` of the energy inner product.
pub fn energy_product(op: &AffineOperator, reference: &Parameter) -> Result<CsrMatrix> {
    let sym: Vec<_> = op
        .terms()
        .iter()
        .filter(|t| t.symmetric)
        .map(|t| (t.coefficient.eval(reference), &t.matrix))
        .collect();
    if sym.is_empty() {
        return Err(Error::EnergyNotSpd);
    }
    let g = CsrMatrix::linear_combination(&sym)?;
    if g.asymmetry() > 1e-13 * g.max_abs() {
        return Err(Error::EnergyNotSpd);
    }
    match BandedLu::factor(&g) {
        Ok(lu) if lu.pivots_positive() => Ok(g),
        _ => Err(Error::EnergyNotSpd),
    }
}
