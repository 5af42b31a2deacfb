//! Bilinear finite elements on structured rectangular grids.

mod affine;
mod assembly;
mod grid;
mod raster;

pub use affine::{
    apply_dirichlet_shift, energy_product, AffineFunctional, AffineOperator, Coefficient, DirichletLifting,
    FunctionalTerm, OperatorTerm, Ramp,
};
pub use assembly::{
    assemble_advection, assemble_diffusion, assemble_load, assemble_mass, assemble_output_average,
    assemble_reaction, assemble_weighted_diffusion, ElementMatrices, OutputRegion,
};
pub use grid::{build_grid, Rect, Side, StructuredGrid};
pub use raster::FieldRaster;
