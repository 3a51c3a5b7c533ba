//! Simulation and compensation of central vision loss.
//!
//! A [`DeficitModel`] describes the patient's deficit as a mixture of
//! Gaussian kernels. [`raster::simulate`] renders what the patient perceives
//! of an image; [`inverse::compensate`] pre-distorts an image so that the
//! perceived result approximates the original.

pub mod error;
pub mod field;
pub mod inverse;
pub mod io;
pub mod model;
pub mod raster;

pub use error::{Error, Result};
pub use field::DisplacementGrid;
pub use inverse::{
    compensate, invert_field, psnr, roundtrip_report, Compensation, Inversion, RoundtripReport,
};
pub use model::{
    eval_gamma, in_region, kernel_value, lipschitz_estimate, psi_displacement, rot_displacement,
    total_map, validate_model, DeficitModel, FieldEvaluator, GaussianKernel, Point2, Validation,
    Vec2,
};
pub use raster::{amsler_grid, field_export, region_mask, sample_bilinear, simulate, Exec, Image};
