//! Post-processing and augmentation toolkit for LiDAR 3D detection.
//!
//! * [`geometry`]: rotated 3D boxes, BEV polygon clipping, BEV / 3D IoU.
//! * [`niv`]: neighbor IoU-voting confidence rectification.
//! * [`suppression`]: greedy rotated NMS.
//! * [`augment`]: object resampling (range-banded sparsification and
//!   pyramid occlusion) and global flip / rotate / scale.
//! * [`evalkit`]: matching, PR curves, AP at 11 / 40 recall points, Pearson
//!   correlation.
//! * [`datio`]: KITTI binaries and text, JSON interchange, CSV exports.
//! * [`simulate`]: synthetic detection ensembles and the calibration
//!   experiment built on them.

pub mod augment;
pub mod datio;
pub mod evalkit;
pub mod geometry;
pub mod niv;
pub mod seeding;
pub mod simulate;
pub mod suppression;

pub use geometry::{Box3D, IouMode};
pub use niv::{Detection, NivConfig, NivStats};
pub use suppression::NmsConfig;
