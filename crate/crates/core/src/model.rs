//! Shared model contracts, the time grid, parameters and time-signal norms.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equidistant time grid `0 = t_0 < ... < t_{K-1} = T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_end: f64,
    num_nodes: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, num_nodes: usize) -> Result<Self> {
        if num_nodes < 2 {
            return Err(Error::InvalidArgument(format!(
                "time grid needs at least 2 nodes, got {num_nodes}"
            )));
        }
        if !(t_end > 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidArgument(format!("final time must be positive, got {t_end}")));
        }
        Ok(Self { t_end, num_nodes })
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn dt(&self) -> f64 {
        self.t_end / (self.num_nodes - 1) as f64
    }

    /// Node `k` (zero based).
    pub fn node(&self, k: usize) -> f64 {
        if k + 1 == self.num_nodes {
            self.t_end
        } else {
            self.t_end * k as f64 / (self.num_nodes - 1) as f64
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.num_nodes).map(move |k| self.node(k))
    }
}

/// A point in parameter space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Parameter(pub Vec<f64>);

impl Parameter {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, i: usize) -> f64 {
        self.0[i]
    }
}

impl From<Vec<f64>> for Parameter {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl From<&[f64]> for Parameter {
    fn from(v: &[f64]) -> Self {
        Self(v.to_vec())
    }
}

/// Axis-aligned parameter domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    #[serde(default)]
    pub names: Vec<String>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch { expected: lower.len(), got: upper.len() });
        }
        if lower.is_empty() {
            return Err(Error::InvalidArgument("empty parameter box".into()));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) {
                return Err(Error::InvalidArgument(format!(
                    "parameter bound {i}: lower {l} must be below upper {u}"
                )));
            }
        }
        Ok(Self { lower, upper, names: Vec::new() })
    }

    pub fn with_names(mut self, names: Vec<String>) -> Self {
        self.names = names;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn center(&self) -> Parameter {
        Parameter(self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect())
    }

    pub fn contains(&self, mu: &Parameter) -> bool {
        mu.dim() == self.dim()
            && mu.0.iter().zip(self.lower.iter().zip(&self.upper)).all(|(x, (l, u))| *l <= *x && *x <= *u)
    }

    pub fn check(&self, mu: &Parameter) -> Result<()> {
        if mu.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: mu.dim() });
        }
        if !self.contains(mu) {
            return Err(Error::InvalidArgument(format!("parameter {:?} outside the box", mu.0)));
        }
        Ok(())
    }

    pub fn clip(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| v.clamp(*l, *u))
            .collect()
    }

    /// Affine map to `[0,1]^p`.
    pub fn to_unit(&self, mu: &[f64]) -> Vec<f64> {
        mu.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(v, (l, u))| (v - l) / (u - l))
            .collect()
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Parameter {
        Parameter(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(l, u)| l + (u - l) * rng.gen::<f64>())
                .collect(),
        )
    }
}

/// State trajectory, row `k` holds the coefficient vector at node `k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub coeffs: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() != grid.num_nodes() {
            return Err(Error::DimensionMismatch { expected: grid.num_nodes(), got: coeffs.nrows() });
        }
        Ok(Self { grid, coeffs })
    }

    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self { grid, coeffs: DMatrix::zeros(grid.num_nodes(), dim) }
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }
}

/// Scalar output signal sampled on the time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputSignal {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl OutputSignal {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_nodes() {
            return Err(Error::DimensionMismatch { expected: grid.num_nodes(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Self { grid, values: vec![0.0; grid.num_nodes()] }
    }

    pub fn sub(&self, other: &OutputSignal) -> Result<OutputSignal> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: other.values.len() });
        }
        Ok(OutputSignal {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }
}

/// `sqrt(sum_{k<K-1} dt * s_k^2)`: left-endpoint rule, the last node is excluded.
pub fn l2_time_norm(s: &OutputSignal) -> f64 {
    let dt = s.grid.dt();
    let n = s.values.len().saturating_sub(1);
    s.values[..n].iter().map(|v| dt * v * v).sum::<f64>().sqrt()
}

pub fn linf_time_norm(s: &OutputSignal) -> f64 {
    s.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Mean over the nodes inside the closed window `[a, b]`.
pub fn time_average(s: &OutputSignal, window: (f64, f64)) -> Result<f64> {
    let (a, b) = window;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, v) in s.values.iter().enumerate() {
        let t = s.grid.node(k);
        if t >= a && t <= b {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyTimeWindow);
    }
    Ok(sum / count as f64)
}

/// A model mapping parameters to state trajectories and output signals.
pub trait StateModel {
    fn time_grid(&self) -> TimeGrid;
    fn eval_state(&self, mu: &Parameter) -> Result<Trajectory>;
    fn eval_output(&self, mu: &Parameter) -> Result<OutputSignal>;
}

/// A state model equipped with a computable output error bound.
pub trait CertifiedModel: StateModel {
    fn est_output(&self, mu: &Parameter) -> Result<f64>;
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn grid(t: f64, k: usize) -> TimeGrid {
        TimeGrid::new(t, k).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::new(1.0, 1).is_err());
        assert!(TimeGrid::new(0.0, 5).is_err());
        let g = grid(5.0, 1001);
        assert_eq!(g.node(0), 0.0);
        assert_eq!(g.node(1000), 5.0);
        assert!((g.dt() - 0.005).abs() < 1e-15);
        let nodes: Vec<f64> = g.nodes().collect();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn l2_norm_examples() {
        let g = grid(1.0, 11);
        assert_eq!(l2_time_norm(&OutputSignal::zeros(g)), 0.0);
        let ones = OutputSignal::new(g, vec![1.0; 11]).unwrap();
        assert!((l2_time_norm(&ones) - 1.0).abs() < 1e-14);

        let g = grid(1.0, 101);
        let s = OutputSignal::new(g, g.nodes().collect()).unwrap();
        // independent oracle: explicit loop with t_k = k / 100
        let mut acc = 0.0;
        for k in 0..100 {
            let t = k as f64 / 100.0;
            acc += 0.01 * t * t;
        }
        assert!((l2_time_norm(&s) - acc.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn linf_examples() {
        let g = grid(1.0, 3);
        assert_eq!(linf_time_norm(&OutputSignal::zeros(g)), 0.0);
        let s = OutputSignal::new(g, vec![-3.0, 1.0, 2.0]).unwrap();
        assert_eq!(linf_time_norm(&s), 3.0);

        use rand::{Rng as _, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let g = grid(1.0, 1000);
        let vals: Vec<f64> = (0..1000).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let mut oracle = 0.0;
        for v in &vals {
            if v.abs() > oracle {
                oracle = v.abs();
            }
        }
        assert_eq!(linf_time_norm(&OutputSignal::new(g, vals).unwrap()), oracle);
    }

    #[test]
    fn time_average_examples() {
        let g = grid(1.0, 1000);
        let c = OutputSignal::new(g, vec![2.5; 1000]).unwrap();
        assert!((time_average(&c, (0.3, 0.4)).unwrap() - 2.5).abs() < 1e-14);

        let s = OutputSignal::new(g, (0..1000).map(|k| (k as f64).sin()).collect()).unwrap();
        let full = time_average(&s, (0.0, 1.0)).unwrap();
        assert!((full - s.values.iter().sum::<f64>() / 1000.0).abs() < 1e-14);

        let dt = 1.0 / 999.0;
        let picked: Vec<f64> = (0..1000)
            .filter(|k| {
                let t = if *k == 999 { 1.0 } else { *k as f64 * dt };
                (0.9..=1.0).contains(&t)
            })
            .map(|k| s.values[k])
            .collect();
        assert_eq!(picked.len(), 100);
        let oracle = picked.iter().sum::<f64>() / picked.len() as f64;
        assert!((time_average(&s, (0.9, 1.0)).unwrap() - oracle).abs() < 1e-14);

        let short = OutputSignal::new(grid(1.0, 3), vec![1.0; 3]).unwrap();
        assert!(matches!(time_average(&short, (0.1, 0.2)), Err(Error::EmptyTimeWindow)));
    }

    #[test]
    fn box_helpers() {
        let b = ParameterBox::new(vec![0.01, 9.0], vec![10.0, 11.0]).unwrap();
        assert_eq!(b.center().0, vec![5.005, 10.0]);
        assert_eq!(b.clip(&[-1.0, 12.0]), vec![0.01, 11.0]);
        assert!(ParameterBox::new(vec![1.0], vec![1.0]).is_err());
        assert!(b.check(&Parameter(vec![1.0, 8.0])).is_err());
    }

    proptest! {
        #[test]
        fn l2_norm_nonnegative_and_triangle(
            a in proptest::collection::vec(-10.0f64..10.0, 20),
            b in proptest::collection::vec(-10.0f64..10.0, 20),
        ) {
            let g = grid(2.0, 20);
            let sa = OutputSignal::new(g, a.clone()).unwrap();
            let sb = OutputSignal::new(g, b.clone()).unwrap();
            let sum = OutputSignal::new(g, a.iter().zip(&b).map(|(x, y)| x + y).collect()).unwrap();
            let na = l2_time_norm(&sa);
            let nb = l2_time_norm(&sb);
            prop_assert!(na >= 0.0);
            prop_assert!(l2_time_norm(&sum) <= (na + nb) * (1.0 + 1e-12));
        }

        #[test]
        fn l2_norm_zero_iff_zero_before_last(last in -5.0f64..5.0) {
            let g = grid(1.0, 6);
            let mut v = vec![0.0; 6];
            v[5] = last;
            prop_assert_eq!(l2_time_norm(&OutputSignal::new(g, v.clone()).unwrap()), 0.0);
            v[2] = 1e-3;
            prop_assert!(l2_time_norm(&OutputSignal::new(g, v).unwrap()) > 0.0);
        }
    }
}
