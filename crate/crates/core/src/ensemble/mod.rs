//! Cross-validation training, checkpoint ensembling, joint inference,
//! decision thresholds and the prediction file.

mod cv;
mod joint;
mod models;
mod predictions;
mod sweep;

pub use cv::*;
pub use joint::*;
pub use models::*;
pub use predictions::*;
pub use sweep::*;
