//! Boundary weight maps, the boundary-weighted cross-entropy loss and the mIoU metric.

mod boundary;
mod ce;
mod mask;
mod metrics;

pub use boundary::{
    boundary_band, boundary_weight_map, boundary_weight_map_with, distance_to_boundary,
    extract_boundary, BoundaryWeightMap, WeightMapMode,
};
pub use ce::{weighted_ce_loss, LossOutput};
pub use mask::BinaryMask;
pub use metrics::{miou, miou_in_region, ConfusionCounts};
