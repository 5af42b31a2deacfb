use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::grid::{Rect, Side, StructuredGrid};
use super::raster::FieldRaster;
use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;

type Local = [[f64; 4]; 4];

/// Element integrals on an `hx x hy` cell, evaluated by 2x2 Gauss quadrature.
#[derive(Clone, Copy, Debug)]
pub struct ElementMatrices {
    pub mass: Local,
    pub stiffness: Local,
    /// `int (d phi_j / dx) phi_i`
    pub convection_x: Local,
    /// `int (d phi_j / dy) phi_i`
    pub convection_y: Local,
    /// `int phi_i`
    pub load: [f64; 4],
}

impl ElementMatrices {
    pub fn new(hx: f64, hy: f64) -> Self {
        let g = 0.5 / 3f64.sqrt();
        let points = [0.5 - g, 0.5 + g];
        let weight = 0.25 * hx * hy;
        let mut e = Self {
            mass: [[0.0; 4]; 4],
            stiffness: [[0.0; 4]; 4],
            convection_x: [[0.0; 4]; 4],
            convection_y: [[0.0; 4]; 4],
            load: [0.0; 4],
        };
        for &xi in &points {
            for &eta in &points {
                let phi = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), (1.0 - xi) * eta, xi * eta];
                let dx = [-(1.0 - eta) / hx, (1.0 - eta) / hx, -eta / hx, eta / hx];
                let dy = [-(1.0 - xi) / hy, -xi / hy, (1.0 - xi) / hy, xi / hy];
                for a in 0..4 {
                    e.load[a] += weight * phi[a];
                    for b in 0..4 {
                        e.mass[a][b] += weight * phi[a] * phi[b];
                        e.stiffness[a][b] += weight * (dx[a] * dx[b] + dy[a] * dy[b]);
                        e.convection_x[a][b] += weight * dx[b] * phi[a];
                        e.convection_y[a][b] += weight * dy[b] * phi[a];
                    }
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                e.mass[a][b] = e.mass[b][a];
                e.stiffness[a][b] = e.stiffness[b][a];
            }
        }
        e
    }
}

fn assemble_cellwise(grid: &StructuredGrid, mut local: impl FnMut(usize) -> Option<Local>) -> CsrMatrix {
    let n = grid.num_nodes();
    let mut triplets = Vec::with_capacity(16 * grid.num_cells());
    for c in 0..grid.num_cells() {
        if let Some(m) = local(c) {
            let nodes = grid.cell_nodes(c);
            for a in 0..4 {
                for b in 0..4 {
                    if m[a][b] != 0.0 {
                        triplets.push((nodes[a], nodes[b], m[a][b]));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

fn scaled(m: &Local, s: f64) -> Local {
    let mut out = *m;
    out.iter_mut().flatten().for_each(|v| *v *= s);
    out
}

fn check_mask(grid: &StructuredGrid, len: usize) -> Result<()> {
    if len != grid.num_cells() {
        return Err(Error::DimensionMismatch { expected: grid.num_cells(), got: len });
    }
    Ok(())
}

pub fn assemble_mass(grid: &StructuredGrid) -> CsrMatrix {
    let e = ElementMatrices::new(grid.hx(), grid.hy());
    assemble_cellwise(grid, |_| Some(e.mass))
}

/// Mass matrix restricted to the masked cells.
pub fn assemble_reaction(grid: &StructuredGrid, mask: &[bool]) -> Result<CsrMatrix> {
    check_mask(grid, mask.len())?;
    let e = ElementMatrices::new(grid.hx(), grid.hy());
    Ok(assemble_cellwise(grid, |c| mask[c].then_some(e.mass)))
}

/// `int kappa grad u . grad v` for a strictly positive cellwise field.
pub fn assemble_diffusion(grid: &StructuredGrid, field: &FieldRaster) -> Result<CsrMatrix> {
    if field.nx() != grid.nx() || field.ny() != grid.ny() {
        return Err(Error::RasterSizeMismatch { expected: grid.num_cells(), got: field.values().len() });
    }
    if let Some(c) = field.values().iter().position(|v| !(*v > 0.0)) {
        return Err(Error::NonpositiveDiffusion(c));
    }
    assemble_weighted_diffusion(grid, field.values())
}

/// Diffusion with nonnegative cell weights; zero weights drop the cell.
pub fn assemble_weighted_diffusion(grid: &StructuredGrid, weights: &[f64]) -> Result<CsrMatrix> {
    check_mask(grid, weights.len())?;
    if let Some(c) = weights.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::NonpositiveDiffusion(c));
    }
    let e = ElementMatrices::new(grid.hx(), grid.hy());
    Ok(assemble_cellwise(grid, |c| (weights[c] != 0.0).then(|| scaled(&e.stiffness, weights[c]))))
}

/// Convective term `int (v . grad u) w` for a cellwise constant velocity.
pub fn assemble_advection(grid: &StructuredGrid, velocity: &[[f64; 2]]) -> Result<CsrMatrix> {
    check_mask(grid, velocity.len())?;
    let e = ElementMatrices::new(grid.hx(), grid.hy());
    Ok(assemble_cellwise(grid, |c| {
        let [vx, vy] = velocity[c];
        if vx == 0.0 && vy == 0.0 {
            return None;
        }
        let mut m = [[0.0; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                m[a][b] = vx * e.convection_x[a][b] + vy * e.convection_y[a][b];
            }
        }
        Some(m)
    }))
}

/// `int_{mask} phi_i` for every node.
pub fn assemble_load(grid: &StructuredGrid, mask: &[bool]) -> Result<DVector<f64>> {
    check_mask(grid, mask.len())?;
    let e = ElementMatrices::new(grid.hx(), grid.hy());
    let mut b = DVector::zeros(grid.num_nodes());
    for c in (0..grid.num_cells()).filter(|c| mask[*c]) {
        for (a, n) in grid.cell_nodes(c).into_iter().enumerate() {
            b[n] += e.load[a];
        }
    }
    Ok(b)
}

/// Region over which an output functional averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputRegion {
    /// Boundary edges on `side` whose midpoints lie in `[from, to]` (tangential coordinate).
    Boundary { side: Side, from: f64, to: f64 },
    /// Cells whose centers lie in the rectangle.
    Cells { rect: Rect },
}

/// Vector `s` with `s . u` the average of `u` over the region.
pub fn assemble_output_average(grid: &StructuredGrid, region: &OutputRegion) -> Result<DVector<f64>> {
    let mut s = DVector::zeros(grid.num_nodes());
    let measure = match region {
        OutputRegion::Boundary { side, from, to } => {
            let (count, h) = match side {
                Side::Left | Side::Right => (grid.ny(), grid.hy()),
                Side::Bottom | Side::Top => (grid.nx(), grid.hx()),
            };
            let mut length = 0.0;
            for e in 0..count {
                let (n0, n1, mid) = match side {
                    Side::Left => (grid.node_index(0, e), grid.node_index(0, e + 1), grid.y_coord(e) + 0.5 * h),
                    Side::Right => (
                        grid.node_index(grid.nx(), e),
                        grid.node_index(grid.nx(), e + 1),
                        grid.y_coord(e) + 0.5 * h,
                    ),
                    Side::Bottom => (grid.node_index(e, 0), grid.node_index(e + 1, 0), grid.x_coord(e) + 0.5 * h),
                    Side::Top => (
                        grid.node_index(e, grid.ny()),
                        grid.node_index(e + 1, grid.ny()),
                        grid.x_coord(e) + 0.5 * h,
                    ),
                };
                if mid >= *from && mid <= *to {
                    s[n0] += 0.5 * h;
                    s[n1] += 0.5 * h;
                    length += h;
                }
            }
            length
        }
        OutputRegion::Cells { rect } => {
            let mask = grid.cells_in(rect);
            let area = mask.iter().filter(|m| **m).count() as f64 * grid.hx() * grid.hy();
            s = assemble_load(grid, &mask)?;
            area
        }
    };
    if measure <= 0.0 {
        return Err(Error::EmptyRegion);
    }
    Ok(s / measure)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::grid::build_grid;
    use nalgebra::DMatrix;

    fn unit() -> StructuredGrid {
        build_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 1, 1).unwrap()
    }

    #[test]
    fn element_mass_and_stiffness() {
        let g = unit();
        let m = assemble_mass(&g).to_dense();
        let mo = DMatrix::from_row_slice(4, 4, &[4., 2., 2., 1., 2., 4., 1., 2., 2., 1., 4., 2., 1., 2., 2., 4.]) / 36.0;
        assert!((m - mo).amax() < 1e-15);
        let k = assemble_diffusion(&g, &FieldRaster::constant(1, 1, 1.0)).unwrap().to_dense();
        let ko = DMatrix::from_row_slice(
            4,
            4,
            &[4., -1., -1., -2., -1., 4., -2., -1., -1., -2., 4., -1., -2., -1., -1., 4.],
        ) / 6.0;
        assert!((k - &ko).amax() < 1e-15);
        let k2 = assemble_diffusion(&g, &FieldRaster::constant(1, 1, 2.0)).unwrap().to_dense();
        assert!((k2 - ko * 2.0).amax() < 1e-15);
    }

    #[test]
    fn partition_of_unity() {
        let g = build_grid(Rect::new(0.0, 5.0, 0.0, 1.0).unwrap(), 13, 7).unwrap();
        let m = assemble_mass(&g);
        let total: f64 = m.triplets().map(|t| t.2).sum();
        assert!((total - 5.0).abs() < 1e-12);
        assert!(m.asymmetry() == 0.0);
        let k = assemble_diffusion(&g, &FieldRaster::synthetic_layered(13, 7, 1)).unwrap();
        assert!(k.mul_vec(&vec![1.0; g.num_nodes()]).amax() < 1e-12);
        assert!(k.asymmetry() <= 1e-13 * k.max_abs());
        assert!(matches!(
            assemble_diffusion(&g, &FieldRaster::constant(13, 7, 0.0)),
            Err(Error::NonpositiveDiffusion(0))
        ));
    }

    #[test]
    fn advection_examples() {
        let g = build_grid(Rect::new(0.0, 1.0, 0.0, 1.0).unwrap(), 4, 4).unwrap();
        let zero = assemble_advection(&g, &vec![[0.0, 0.0]; 16]).unwrap();
        assert_eq!(zero.nnz(), 0);
        let c = assemble_advection(&g, &vec![[0.7, -0.3]; 16]).unwrap();
        let ones = c.mul_vec(&[1.0; 25]);
        for n in 0..25 {
            if !g.is_boundary_node(n) {
                assert!(ones[n].abs() < 1e-14);
            }
        }
    }

    #[test]
    fn advection_single_cell_matches_quadrature_oracle() {
        // independent oracle: closed-form integrals on the unit square with v = (1, 0)
        // int (d phi_b/dx) phi_a, phi in local order (0,0),(1,0),(0,1),(1,1)
        let g = unit();
        let c = assemble_advection(&g, &[[1.0, 0.0]]).unwrap().to_dense();
        let oracle = DMatrix::from_row_slice(
            4,
            4,
            &[
                -2.0, 2.0, -1.0, 1.0, //
                -2.0, 2.0, -1.0, 1.0, //
                -1.0, 1.0, -2.0, 2.0, //
                -1.0, 1.0, -2.0, 2.0,
            ],
        ) / 12.0;
        assert!((c - oracle).amax() < 1e-15);
    }

    #[test]
    fn reaction_examples() {
        let g = build_grid(Rect::new(0.0, 2.0, 0.0, 1.0).unwrap(), 4, 2).unwrap();
        assert_eq!(assemble_reaction(&g, &[false; 8]).unwrap().nnz(), 0);
        assert_eq!(assemble_reaction(&g, &[true; 8]).unwrap(), assemble_mass(&g));
        let half: Vec<bool> = (0..8).map(|c| g.cell_center(c).0 < 1.0).collect();
        let total: f64 = assemble_reaction(&g, &half).unwrap().triplets().map(|t| t.2).sum();
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn output_average_examples() {
        let g = build_grid(Rect::new(0.0, 5.0, 0.0, 1.0).unwrap(), 10, 5).unwrap();
        let s = assemble_output_average(&g, &OutputRegion::Boundary { side: Side::Right, from: 0.3, to: 1.0 }).unwrap();
        assert!((s.sum() - 1.0).abs() < 1e-14);
        let x: Vec<f64> = (0..g.num_nodes()).map(|n| g.node_coords(n).0).collect();
        assert!((s.dot(&DVector::from_vec(x)) - 5.0).abs() < 1e-12);
        assert!(matches!(
            assemble_output_average(&g, &OutputRegion::Boundary { side: Side::Right, from: 2.0, to: 3.0 }),
            Err(Error::EmptyRegion)
        ));

        // room average on a 2x2 grid: oracle by exact cellwise integration of u(x,y) = x + 2y
        let g = build_grid(Rect::new(0.0, 2.0, 0.0, 1.0).unwrap(), 2, 2).unwrap();
        let room = Rect::new(1.0, 2.0, 0.0, 0.5).unwrap();
        let s = assemble_output_average(&g, &OutputRegion::Cells { rect: room }).unwrap();
        let u: Vec<f64> = (0..9)
            .map(|n| {
                let (x, y) = g.node_coords(n);
                x + 2.0 * y
            })
            .collect();
        // mean of x + 2y over [1,2]x[0,0.5] = 1.5 + 0.5
        assert!((s.dot(&DVector::from_vec(u)) - 2.0).abs() < 1e-14);
        assert!((s.sum() - 1.0).abs() < 1e-14);
    }
}
