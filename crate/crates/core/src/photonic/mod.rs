//! Hardware-facing mathematics: block approximation of weight matrices,
//! MZI mesh programming and the MZI-count area model.

pub mod approx;
pub mod cost;
pub mod mesh;

pub use approx::{
    approximate_block, approximate_layer, assemble, closest_orthogonal, fit_diagonal, svd, ApproxFactor, SvdFactors,
};
pub use cost::{mzi_cost, CostReport, LayerCost};
pub use mesh::{decompose_orthogonal, decompose_unitary, mzi_transfer, reconstruct, MeshProgram, Mzi};
