//! Shared geometric and image types.

pub mod contour;
pub mod electrode;
pub mod image;
pub mod raster;
pub mod resample;
pub mod streamline;
pub mod volume;

pub use contour::{contour_area, point_in_contour, Contour, ContourRecord};
pub use electrode::{ElectrodeGrid, GridPose};
pub use image::{DirectionField, Grid2, Image2D, Mask2D};
pub use resample::{resample_onto, resample_volume, Resample};
pub use streamline::Streamline;
pub use volume::{Grid3, LabelVolume, ScalarVolume, Volume, VoxelValue};
