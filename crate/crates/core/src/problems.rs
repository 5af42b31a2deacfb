//! Problem builders: a small heat test, reactive flow through a pipe with a washcoat layer and
//! heat flow through a building floor.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{
    assemble_advection, assemble_diffusion, assemble_load, assemble_mass, assemble_output_average,
    assemble_reaction, assemble_weighted_diffusion, build_grid, AffineFunctional, AffineOperator, Coefficient,
    DirichletLifting, FieldRaster, FunctionalTerm, OperatorTerm, OutputRegion, Ramp, Rect, Side, StructuredGrid,
};
use crate::fom::{FomProblem, FomSpec};
use crate::model::{ParameterBox, TimeGrid};

fn op_term(name: &str, coefficient: Coefficient, matrix: crate::linalg::CsrMatrix, symmetric: bool) -> OperatorTerm {
    OperatorTerm { name: name.into(), coefficient, matrix, symmetric, positive: true }
}

fn boundary_indices(grid: &StructuredGrid) -> Vec<usize> {
    (0..grid.num_nodes()).filter(|n| grid.is_boundary_node(*n)).collect()
}

/// Unit square, homogeneous Dirichlet data, conductivities `mu[0]` (left half) and `mu[1]`
/// (right half), uniform source `mu[2]`, output = domain average.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeatTestConfig {
    pub nx: usize,
    pub ny: usize,
    pub num_time_nodes: usize,
    pub t_end: f64,
}

impl Default for HeatTestConfig {
    fn default() -> Self {
        Self { nx: 8, ny: 8, num_time_nodes: 50, t_end: 1.0 }
    }
}

pub fn build_heat_test(cfg: &HeatTestConfig) -> Result<FomProblem> {
    let domain = Rect::new(0.0, 1.0, 0.0, 1.0)?;
    let grid = build_grid(domain, cfg.nx, cfg.ny)?;
    let left = grid.cells_in(&Rect::new(0.0, 0.5, 0.0, 1.0)?);
    let weights = |inside: bool| left.iter().map(|l| if *l == inside { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let n = grid.num_nodes();
    let mut operator = AffineOperator::new(n);
    operator.push(op_term("kappa_left", Coefficient::param(0), assemble_weighted_diffusion(&grid, &weights(true))?, true))?;
    operator.push(op_term("kappa_right", Coefficient::param(1), assemble_weighted_diffusion(&grid, &weights(false))?, true))?;
    let mut rhs = AffineFunctional::new(n);
    rhs.push(FunctionalTerm {
        name: "source".into(),
        coefficient: Coefficient::param(2),
        vector: assemble_load(&grid, &vec![true; grid.num_cells()])?,
        ramp: Ramp::None,
    })?;
    let parameter_box = ParameterBox::new(vec![0.1, 0.1, 0.5], vec![1.0, 1.0, 1.5])?
        .with_names(vec!["kappa_left".into(), "kappa_right".into(), "source".into()]);
    let bnd = boundary_indices(&grid);
    FomProblem::new(FomSpec {
        name: "heat_test".into(),
        time_grid: TimeGrid::new(cfg.t_end, cfg.num_time_nodes)?,
        reference_parameter: parameter_box.center(),
        parameter_box,
        operator,
        mass: assemble_mass(&grid),
        rhs,
        initial: None,
        output: assemble_output_average(&grid, &OutputRegion::Cells { rect: domain })?,
        lifting: Some(DirichletLifting::new(n, &bnd, &vec![0.0; bnd.len()])?),
    })
}

/// Where the washcoat permeability comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum PermeabilitySource {
    /// Seeded layered log-uniform field.
    Synthetic { seed: u64 },
    /// CSV raster with one value per grid cell (`ny` rows, top row first, `nx` columns).
    File { path: PathBuf },
}

/// Reactive flow in `[0,5] x [0,1]` with parameters `(Da, Pe)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReactiveFlowConfig {
    pub nx: usize,
    pub ny: usize,
    pub num_time_nodes: usize,
    pub t_end: f64,
    pub washcoat_height: f64,
    pub damkoehler_range: [f64; 2],
    pub peclet_range: [f64; 2],
    pub permeability: PermeabilitySource,
    pub rescale: [f64; 2],
}

impl Default for ReactiveFlowConfig {
    fn default() -> Self {
        Self {
            nx: 100,
            ny: 20,
            num_time_nodes: 1001,
            t_end: 5.0,
            washcoat_height: 0.34,
            damkoehler_range: [0.01, 10.0],
            peclet_range: [9.0, 11.0],
            permeability: PermeabilitySource::Synthetic { seed: 7 },
            rescale: [0.001, 1.0],
        }
    }
}

/// Diffusion field used by the reactive-flow problem: one in the channel, the rescaled
/// permeability in the washcoat.
pub fn reactive_flow_diffusion(cfg: &ReactiveFlowConfig, grid: &StructuredGrid) -> Result<(FieldRaster, Vec<bool>)> {
    let raw = match &cfg.permeability {
        PermeabilitySource::Synthetic { seed } => FieldRaster::synthetic_layered(cfg.nx, cfg.ny, *seed),
        PermeabilitySource::File { path } => FieldRaster::from_csv_file(path, cfg.nx, cfg.ny)?,
    };
    let perm = raw.rescaled(cfg.rescale[0], cfg.rescale[1])?;
    let washcoat = grid.cells_in(&Rect::new(0.0, 5.0, 0.0, cfg.washcoat_height)?);
    let values = perm.values().iter().zip(&washcoat).map(|(p, w)| if *w { *p } else { 1.0 }).collect();
    Ok((FieldRaster::from_values(cfg.nx, cfg.ny, values)?, washcoat))
}

pub fn build_reactive_flow(cfg: &ReactiveFlowConfig) -> Result<FomProblem> {
    if !(cfg.washcoat_height > 0.0 && cfg.washcoat_height < 1.0) {
        return Err(Error::InvalidArgument(format!("washcoat height {} must lie in (0,1)", cfg.washcoat_height)));
    }
    let grid = build_grid(Rect::new(0.0, 5.0, 0.0, 1.0)?, cfg.nx, cfg.ny)?;
    let (kappa, washcoat) = reactive_flow_diffusion(cfg, &grid)?;
    if washcoat.iter().all(|w| *w) || !washcoat.iter().any(|w| *w) {
        return Err(Error::InvalidArgument("grid too coarse to resolve washcoat and channel".into()));
    }
    let velocity: Vec<[f64; 2]> = washcoat.iter().map(|w| if *w { [0.0, 0.0] } else { [1.0, 0.0] }).collect();

    let n = grid.num_nodes();
    let mut operator = AffineOperator::new(n);
    operator.push(op_term("diffusion", Coefficient::Constant(1.0), assemble_diffusion(&grid, &kappa)?, true))?;
    // skew part plus a nonnegative outflow term, hence positive semidefinite
    operator.push(op_term("advection", Coefficient::param(1), assemble_advection(&grid, &velocity)?, false))?;
    operator.push(op_term("reaction", Coefficient::param(0), assemble_reaction(&grid, &washcoat)?, true))?;

    let h_w = cfg.washcoat_height;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for node in 0..n {
        if !grid.is_boundary_node(node) {
            continue;
        }
        let (i, _) = grid.node_ij(node);
        let (x, y) = grid.node_coords(node);
        if i == grid.nx() && y >= h_w {
            continue; // outflow boundary: natural condition
        }
        indices.push(node);
        values.push(if x == 0.0 && y >= h_w { 1.0 } else { 0.0 });
    }

    let parameter_box = ParameterBox::new(
        vec![cfg.damkoehler_range[0], cfg.peclet_range[0]],
        vec![cfg.damkoehler_range[1], cfg.peclet_range[1]],
    )?
    .with_names(vec!["Da".into(), "Pe".into()]);
    FomProblem::new(FomSpec {
        name: "reactive_flow".into(),
        time_grid: TimeGrid::new(cfg.t_end, cfg.num_time_nodes)?,
        reference_parameter: parameter_box.center(),
        parameter_box,
        operator,
        mass: assemble_mass(&grid),
        rhs: AffineFunctional::new(n),
        initial: None,
        output: assemble_output_average(&grid, &OutputRegion::Boundary { side: Side::Right, from: h_w, to: 1.0 })?,
        lifting: Some(DirichletLifting::new(n, &indices, &values)?),
    })
}

/// A rectangular building component with its (possibly parametric) value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub name: String,
    pub rect: Rect,
    pub coefficient: Coefficient,
}

/// Layout of walls, doors and heaters on the floor `(0,2) x (0,1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloorPlan {
    /// Conductivity outside walls and doors.
    pub background: f64,
    pub walls: Vec<Component>,
    pub doors: Vec<Component>,
    /// Source strengths.
    pub heaters: Vec<Component>,
    /// Room whose mean temperature is the output.
    pub room: Rect,
    pub parameter_box: ParameterBox,
}

fn cell_rect(i0: usize, i1: usize, j0: usize, j1: usize) -> Rect {
    let h = 0.125;
    Rect { x0: i0 as f64 * h, x1: (i1 + 1) as f64 * h, y0: j0 as f64 * h, y1: (j1 + 1) as f64 * h }
}

impl Default for FloorPlan {
    /// Four rooms above and four below a corridor wall; vertical walls at x = 0.5, 1, 1.5, each
    /// with a door next to the corridor wall; six heaters along the bottom and six along the
    /// top boundary. Walls 7 and 10 and doors 8 and 9 are fixed. Parameters are the remaining
    /// walls (0..8), doors (8..16) and heaters (16..28).
    fn default() -> Self {
        let wall_value = 0.05;
        let door_value = 0.75;
        let mut walls = Vec::new();
        let mut doors = Vec::new();
        let mut next_param = 0;
        let param_or = |fixed: bool, value: f64, next: &mut usize| {
            if fixed {
                Coefficient::Constant(value)
            } else {
                *next += 1;
                Coefficient::param(*next - 1)
            }
        };
        // vertical walls below and above the corridor wall, each with a door at the corridor
        let mut vertical = Vec::new();
        for (j0, j1) in [(0, 2), (6, 7)] {
            for col in [4, 8, 12] {
                vertical.push(cell_rect(col, col, j0, j1));
            }
        }
        let mut vertical_doors = Vec::new();
        for row in [3, 5] {
            for col in [4, 8, 12] {
                vertical_doors.push(cell_rect(col, col, row, row));
            }
        }
        let corridor: Vec<(Rect, Rect)> =
            (0..4).map(|s| (cell_rect(4 * s, 4 * s + 2, 4, 4), cell_rect(4 * s + 3, 4 * s + 3, 4, 4))).collect();
        let wall_rects: Vec<Rect> = vertical.into_iter().chain(corridor.iter().map(|c| c.0)).collect();
        let door_rects: Vec<Rect> = vertical_doors.into_iter().chain(corridor.iter().map(|c| c.1)).collect();
        for (k, rect) in wall_rects.into_iter().enumerate() {
            let number = k + 1;
            let coefficient = param_or(number == 7 || number == 10, wall_value, &mut next_param);
            walls.push(Component { name: format!("wall{number}"), rect, coefficient });
        }
        for (k, rect) in door_rects.into_iter().enumerate() {
            let number = k + 1;
            let coefficient = param_or(number == 8 || number == 9, door_value, &mut next_param);
            doors.push(Component { name: format!("door{number}"), rect, coefficient });
        }
        let mut heaters = Vec::new();
        for row in [0, 7] {
            for col in [1, 2, 6, 10, 13, 14] {
                heaters.push(Component {
                    name: format!("heater{}", heaters.len() + 1),
                    rect: cell_rect(col, col, row, row),
                    coefficient: Coefficient::param(next_param),
                });
                next_param += 1;
            }
        }
        let mut lower = vec![0.025; 8];
        let mut upper = vec![0.1; 8];
        lower.extend([0.5; 8]);
        upper.extend([1.0; 8]);
        lower.extend([50.0; 12]);
        upper.extend([100.0; 12]);
        let names = walls
            .iter()
            .chain(&doors)
            .chain(&heaters)
            .filter(|c| matches!(c.coefficient, Coefficient::Parameter { .. }))
            .map(|c| c.name.clone())
            .collect();
        let parameter_box = ParameterBox::new(lower, upper).expect("valid default box").with_names(names);
        Self {
            background: 1.0,
            walls,
            doors,
            heaters,
            room: Rect { x0: 0.625, x1: 1.0, y0: 0.625, y1: 1.0 },
            parameter_box,
        }
    }
}

/// Heat flow through a building floor with 28 parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BuildingConfig {
    pub nx: usize,
    pub ny: usize,
    pub num_time_nodes: usize,
    pub t_end: f64,
    /// Heaters are switched on as `min(ramp_rate * t, 1)`.
    pub ramp_rate: f64,
    /// Time window of the averaged quantity of interest.
    pub output_window: [f64; 2],
    pub plan: FloorPlan,
}

impl Default for BuildingConfig {
    fn default() -> Self {
        Self {
            nx: 16,
            ny: 8,
            num_time_nodes: 100,
            t_end: 1.0,
            ramp_rate: 2.0,
            output_window: [0.9, 1.0],
            plan: FloorPlan::default(),
        }
    }
}

fn check_component(c: &Component, domain: &Rect, dim: usize) -> Result<()> {
    c.rect.validate()?;
    if !c.rect.inside(domain) {
        return Err(Error::InvalidArgument(format!("component {} lies outside the floor", c.name)));
    }
    match c.coefficient {
        Coefficient::Parameter { index, .. } if index >= dim => Err(Error::IndexOutOfRange { index, dim }),
        _ => Ok(()),
    }
}

/// Cell masks of the conductivity components and the heaters of a plan.
pub fn building_masks(plan: &FloorPlan, grid: &StructuredGrid) -> Result<(Vec<Vec<bool>>, Vec<Vec<bool>>)> {
    let domain = grid.domain();
    let dim = plan.parameter_box.dim();
    let conductive: Vec<&Component> = plan.walls.iter().chain(&plan.doors).collect();
    let all: Vec<&Component> = conductive.iter().copied().chain(&plan.heaters).collect();
    for (k, a) in all.iter().enumerate() {
        check_component(a, &domain, dim)?;
        for b in &all[k + 1..] {
            if a.rect.overlaps(&b.rect) {
                return Err(Error::OverlappingRectangles(format!("{} and {}", a.name, b.name)));
            }
        }
    }
    let masks = |list: &[&Component]| -> Result<Vec<Vec<bool>>> {
        let mut owner: Vec<Option<usize>> = vec![None; grid.num_cells()];
        let mut out = Vec::new();
        for (k, c) in list.iter().enumerate() {
            let mask = grid.cells_in(&c.rect);
            if !mask.iter().any(|m| *m) {
                return Err(Error::InvalidArgument(format!("component {} covers no cell center", c.name)));
            }
            for (cell, m) in mask.iter().enumerate() {
                if *m {
                    if let Some(prev) = owner[cell] {
                        return Err(Error::OverlappingRectangles(format!("{} and {}", list[prev].name, c.name)));
                    }
                    owner[cell] = Some(k);
                }
            }
            out.push(mask);
        }
        Ok(out)
    };
    let heaters: Vec<&Component> = plan.heaters.iter().collect();
    Ok((masks(&conductive)?, masks(&heaters)?))
}

pub fn build_building(cfg: &BuildingConfig) -> Result<FomProblem> {
    let plan = &cfg.plan;
    let domain = Rect::new(0.0, 2.0, 0.0, 1.0)?;
    if !plan.room.inside(&domain) {
        return Err(Error::InvalidArgument("room lies outside the floor".into()));
    }
    if !(plan.background > 0.0) {
        return Err(Error::InvalidArgument(format!("background conductivity {} must be positive", plan.background)));
    }
    let grid = build_grid(domain, cfg.nx, cfg.ny)?;
    let (conductive, heater_masks) = building_masks(plan, &grid)?;
    let n = grid.num_nodes();

    let covered: Vec<bool> = (0..grid.num_cells()).map(|c| conductive.iter().any(|m| m[c])).collect();
    let background: Vec<f64> = covered.iter().map(|c| if *c { 0.0 } else { 1.0 }).collect();
    let mut operator = AffineOperator::new(n);
    operator.push(op_term(
        "background",
        Coefficient::Constant(plan.background),
        assemble_weighted_diffusion(&grid, &background)?,
        true,
    ))?;
    for (c, mask) in plan.walls.iter().chain(&plan.doors).zip(&conductive) {
        let weights: Vec<f64> = mask.iter().map(|m| if *m { 1.0 } else { 0.0 }).collect();
        operator.push(op_term(&c.name, c.coefficient, assemble_weighted_diffusion(&grid, &weights)?, true))?;
    }
    let mut rhs = AffineFunctional::new(n);
    for (c, mask) in plan.heaters.iter().zip(&heater_masks) {
        rhs.push(FunctionalTerm {
            name: c.name.clone(),
            coefficient: c.coefficient,
            vector: assemble_load(&grid, mask)?,
            ramp: Ramp::Linear { rate: cfg.ramp_rate },
        })?;
    }
    let bnd = boundary_indices(&grid);
    FomProblem::new(FomSpec {
        name: "building".into(),
        time_grid: TimeGrid::new(cfg.t_end, cfg.num_time_nodes)?,
        reference_parameter: plan.parameter_box.center(),
        parameter_box: plan.parameter_box.clone(),
        operator,
        mass: assemble_mass(&grid),
        rhs,
        initial: None,
        output: assemble_output_average(&grid, &OutputRegion::Cells { rect: plan.room })?,
        lifting: Some(DirichletLifting::new(n, &bnd, &vec![0.0; bnd.len()])?),
    })
}

/// Problem selection for configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemConfig {
    HeatTest(HeatTestConfig),
    ReactiveFlow(ReactiveFlowConfig),
    Building(BuildingConfig),
}

impl ProblemConfig {
    pub fn build(&self) -> Result<FomProblem> {
        match self {
            ProblemConfig::HeatTest(c) => build_heat_test(c),
            ProblemConfig::ReactiveFlow(c) => build_reactive_flow(c),
            ProblemConfig::Building(c) => build_building(c),
        }
    }

    /// Time window for averaged quantities of interest.
    pub fn output_window(&self) -> (f64, f64) {
        match self {
            ProblemConfig::Building(c) => (c.output_window[0], c.output_window[1]),
            ProblemConfig::HeatTest(c) => (0.0, c.t_end),
            ProblemConfig::ReactiveFlow(c) => (0.0, c.t_end),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::ElementMatrices;
    use crate::linalg::CsrMatrix;
    use crate::model::{l2_time_norm, Parameter, StateModel};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_flow() -> ReactiveFlowConfig {
        ReactiveFlowConfig { nx: 20, ny: 5, num_time_nodes: 51, ..Default::default() }
    }

    /// Dense implicit Euler with a monolithically assembled matrix and load.
    fn dense_outputs(fom: &FomProblem, a: &DMatrix<f64>, load: impl Fn(f64) -> DVector<f64>) -> Vec<f64> {
        let free: Vec<usize> = (0..fom.dim()).filter(|i| !fom.constrained[*i]).collect();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(free.len(), free.len(), |i, j| m[(free[i], free[j])]);
        let mass = pick(&fom.mass.to_dense());
        let a = pick(a);
        let dt = fom.time_grid.dt();
        let lu = (&mass + &a * dt).lu();
        let mut u = DVector::zeros(free.len());
        let s = DVector::from_iterator(free.len(), free.iter().map(|i| fom.output[*i]));
        let mut out = vec![s.dot(&u) + fom.output_shift];
        for k in 1..fom.time_grid.num_nodes() {
            let l = load(fom.time_grid.node(k));
            let l = DVector::from_iterator(free.len(), free.iter().map(|i| l[*i]));
            u = lu.solve(&(&mass * &u + l * dt)).unwrap();
            out.push(s.dot(&u) + fom.output_shift);
        }
        out
    }

    #[test]
    fn heat_test_shape() {
        let fom = build_heat_test(&HeatTestConfig::default()).unwrap();
        assert_eq!(fom.dim(), 81);
        assert_eq!(fom.param_dim(), 3);
        assert_eq!(fom.time_grid.num_nodes(), 50);
        assert_eq!(fom.operator.thetas(&Parameter(vec![0.2, 0.3, 1.0])), vec![0.2, 0.3]);
        let out = fom.eval_output(&Parameter(vec![0.5, 0.5, 1.0])).unwrap();
        assert!(out.values.windows(2).all(|w| w[1] >= w[0]));
        assert!(out.values[49] > 0.0);
    }

    #[test]
    fn reactive_flow_coefficients_and_size() {
        let fom = build_reactive_flow(&ReactiveFlowConfig { num_time_nodes: 3, ..Default::default() }).unwrap();
        assert_eq!(fom.dim(), 2121);
        assert_eq!(fom.operator.thetas(&Parameter(vec![1.0, 1.0])), vec![1.0, 1.0, 1.0]);
        assert_eq!(fom.reference_parameter.0, vec![5.005, 10.0]);
        assert_eq!(fom.output_shift, 0.0);
    }

    #[test]
    fn reactive_flow_matches_monolithic_assembly() {
        let cfg = small_flow();
        let fom = build_reactive_flow(&cfg).unwrap();
        let grid = build_grid(Rect::new(0.0, 5.0, 0.0, 1.0).unwrap(), cfg.nx, cfg.ny).unwrap();
        let (kappa, washcoat) = reactive_flow_diffusion(&cfg, &grid).unwrap();
        let e = ElementMatrices::new(grid.hx(), grid.hy());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..3 {
            let mu = fom.parameter_box.sample_uniform(&mut rng);
            let (da, pe) = (mu.get(0), mu.get(1));
            let mut triplets = Vec::new();
            for c in 0..grid.num_cells() {
                let (i, j) = grid.cell_ij(c);
                let nodes = grid.cell_nodes(c);
                let k = kappa.get(i, j);
                let w = washcoat[c];
                for a in 0..4 {
                    for b in 0..4 {
                        let mut v = k * e.stiffness[a][b];
                        if w {
                            v += da * e.mass[a][b];
                        } else {
                            v += pe * e.convection_x[a][b];
                        }
                        triplets.push((nodes[a], nodes[b], v));
                    }
                }
            }
            let full = CsrMatrix::from_triplets(fom.dim(), fom.dim(), &triplets).to_dense();
            let g = fom.lift.clone();
            let load = -(&full * &g);
            let dense = dense_outputs(&fom, &full, |_| load.clone());
            let affine = fom.eval_output(&mu).unwrap().values;
            for (x, y) in dense.iter().zip(&affine) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
            // outflow concentration stays within the maximum-principle band (with slack)
            assert!(affine.iter().all(|v| *v >= -1e-2 && *v <= 1.0 + 1e-2));
        }
    }

    #[test]
    fn pure_diffusion_approaches_stationary_state() {
        let cfg = ReactiveFlowConfig { nx: 20, ny: 5, num_time_nodes: 401, t_end: 200.0, ..Default::default() };
        let fom = build_reactive_flow(&cfg).unwrap();
        let mu = Parameter(vec![0.0, 0.0]);
        let out = fom.eval_output(&mu).unwrap();
        // stationary problem A u = l solved directly
        let a = fom.operator.assemble(&mu).unwrap();
        let l = fom.rhs.evaluate(&mu, 0.0);
        let u = crate::linalg::BandedLu::factor(&a).unwrap().solve(l.as_slice());
        let steady = fom.output_of_state(&u);
        assert!((out.values.last().unwrap() - steady).abs() < 1e-6 * steady.abs().max(1.0));
        assert!(steady > 0.0 && steady < 1.0);
    }

    #[test]
    fn default_plan_has_28_parameters() {
        let plan = FloorPlan::default();
        assert_eq!(plan.parameter_box.dim(), 28);
        assert_eq!(plan.walls.len(), 10);
        assert_eq!(plan.doors.len(), 10);
        assert_eq!(plan.heaters.len(), 12);
        let fixed: Vec<&str> = plan
            .walls
            .iter()
            .chain(&plan.doors)
            .filter(|c| matches!(c.coefficient, Coefficient::Constant(_)))
            .map(|c| c.name.as_str())
            .collect();
        assert_eq!(fixed, ["wall7", "wall10", "door8", "door9"]);
        let json = serde_json::to_string(&BuildingConfig::default()).unwrap();
        let back: BuildingConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, BuildingConfig::default());
    }

    #[test]
    fn building_superposition() {
        let fom = build_building(&BuildingConfig { num_time_nodes: 21, ..Default::default() }).unwrap();
        let mut mu = fom.parameter_box.center();
        for h in 16..28 {
            mu.0[h] = 0.0;
        }
        let zero = fom.eval_output(&mu).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let mu1 = fom.parameter_box.center();
        let mut mu2 = mu1.clone();
        for h in 16..28 {
            mu2.0[h] *= 2.0;
        }
        let f1 = fom.eval_output(&mu1).unwrap();
        let f2 = fom.eval_output(&mu2).unwrap();
        for (a, b) in f1.values.iter().zip(&f2.values) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        assert!(l2_time_norm(&f1) > 0.0);
    }

    #[test]
    fn single_heater_matches_monolithic_assembly() {
        let cfg = BuildingConfig { num_time_nodes: 21, ..Default::default() };
        let fom = build_building(&cfg).unwrap();
        let grid = build_grid(Rect::new(0.0, 2.0, 0.0, 1.0).unwrap(), cfg.nx, cfg.ny).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut mu = fom.parameter_box.sample_uniform(&mut rng);
        for h in 17..28 {
            mu.0[h] = 0.0;
        }
        // cellwise conductivity and heater density from the plan, evaluated directly
        let plan = &cfg.plan;
        let mut kappa = vec![plan.background; grid.num_cells()];
        let mut density = vec![0.0; grid.num_cells()];
        for c in 0..grid.num_cells() {
            let (x, y) = grid.cell_center(c);
            for comp in plan.walls.iter().chain(&plan.doors) {
                if comp.rect.contains(x, y) {
                    kappa[c] = comp.coefficient.eval(&mu);
                }
            }
            for comp in &plan.heaters {
                if comp.rect.contains(x, y) {
                    density[c] = comp.coefficient.eval(&mu);
                }
            }
        }
        let a = assemble_weighted_diffusion(&grid, &kappa).unwrap().to_dense();
        let e = ElementMatrices::new(grid.hx(), grid.hy());
        let mut load = DVector::zeros(grid.num_nodes());
        for c in 0..grid.num_cells() {
            for (k, n) in grid.cell_nodes(c).into_iter().enumerate() {
                load[n] += density[c] * e.load[k];
            }
        }
        let dense = dense_outputs(&fom, &a, |t| &load * (2.0 * t).min(1.0));
        let affine = fom.eval_output(&mu).unwrap().values;
        let scale = affine.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        for (x, y) in dense.iter().zip(&affine) {
            assert!((x - y).abs() <= 1e-12 * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn overlapping_components_rejected() {
        let mut cfg = BuildingConfig::default();
        let wall = cfg.plan.walls[0].rect;
        cfg.plan.heaters[0].rect = wall;
        assert!(matches!(build_building(&cfg), Err(Error::OverlappingRectangles(_))));
    }

    #[test]
    fn problem_config_json() {
        let cfg: ProblemConfig = serde_json::from_str(r#"{"kind": "heat_test", "num_time_nodes": 10}"#).unwrap();
        assert_eq!(cfg, ProblemConfig::HeatTest(HeatTestConfig { num_time_nodes: 10, ..Default::default() }));
        let cfg: ProblemConfig =
            serde_json::from_str(r#"{"kind": "reactive_flow", "permeability": {"source": "synthetic", "seed": 3}}"#)
                .unwrap();
        assert!(matches!(cfg, ProblemConfig::ReactiveFlow(_)));
        assert!(serde_json::from_str::<ProblemConfig>(r#"{"kind": "heat_test", "nz": 3}"#).is_err());
    }
}
