use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0,x1] x [y0,y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let r = Self { x0, x1, y0, y1 };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.x0, self.x1, self.y0, self.y1].iter().all(|v| v.is_finite());
        if !finite || !(self.x0 < self.x1) || !(self.y0 < self.y1) {
            return Err(Error::InvalidArgument(format!("degenerate rectangle {self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    /// True if the intersection has positive area.
    pub fn overlaps(&self, other: &Rect) -> bool {
        self.x0.max(other.x0) < self.x1.min(other.x1) && self.y0.max(other.y0) < self.y1.min(other.y1)
    }

    pub fn inside(&self, outer: &Rect) -> bool {
        self.x0 >= outer.x0 && self.x1 <= outer.x1 && self.y0 >= outer.y0 && self.y1 <= outer.y1
    }
}

/// Side of the rectangular domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Tensor-product quadrilateral mesh. Node `(i, j)` has index `j * (nx + 1) + i`,
/// cell `(i, j)` has index `j * nx + i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuredGrid {
    domain: Rect,
    nx: usize,
    ny: usize,
}

pub fn build_grid(domain: Rect, nx: usize, ny: usize) -> Result<StructuredGrid> {
    StructuredGrid::new(domain, nx, ny)
}

impl StructuredGrid {
    pub fn new(domain: Rect, nx: usize, ny: usize) -> Result<Self> {
        domain.validate()?;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument(format!("grid needs nx, ny >= 1, got {nx}x{ny}")));
        }
        Ok(Self { domain, nx, ny })
    }

    pub fn domain(&self) -> Rect {
        self.domain
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn hx(&self) -> f64 {
        self.domain.width() / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.domain.height() / self.ny as f64
    }

    pub fn num_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn num_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn node_ij(&self, n: usize) -> (usize, usize) {
        (n % (self.nx + 1), n / (self.nx + 1))
    }

    pub fn x_coord(&self, i: usize) -> f64 {
        if i == self.nx {
            self.domain.x1
        } else {
            self.domain.x0 + i as f64 * self.hx()
        }
    }

    pub fn y_coord(&self, j: usize) -> f64 {
        if j == self.ny {
            self.domain.y1
        } else {
            self.domain.y0 + j as f64 * self.hy()
        }
    }

    pub fn node_coords(&self, n: usize) -> (f64, f64) {
        let (i, j) = self.node_ij(n);
        (self.x_coord(i), self.y_coord(j))
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn cell_ij(&self, c: usize) -> (usize, usize) {
        (c % self.nx, c / self.nx)
    }

    /// Corner nodes in local order `(i,j), (i+1,j), (i,j+1), (i+1,j+1)`.
    pub fn cell_nodes(&self, c: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(c);
        [
            self.node_index(i, j),
            self.node_index(i + 1, j),
            self.node_index(i, j + 1),
            self.node_index(i + 1, j + 1),
        ]
    }

    pub fn cell_center(&self, c: usize) -> (f64, f64) {
        let (i, j) = self.cell_ij(c);
        (
            self.domain.x0 + (i as f64 + 0.5) * self.hx(),
            self.domain.y0 + (j as f64 + 0.5) * self.hy(),
        )
    }

    pub fn is_boundary_node(&self, n: usize) -> bool {
        let (i, j) = self.node_ij(n);
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Cells whose centers lie in `rect`.
    pub fn cells_in(&self, rect: &Rect) -> Vec<bool> {
        (0..self.num_cells())
            .map(|c| {
                let (x, y) = self.cell_center(c);
                rect.contains(x, y)
            })
            .collect()
    }
}
