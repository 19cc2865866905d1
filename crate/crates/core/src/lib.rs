pub mod annotation;
pub mod decode;
pub mod error;
pub mod eval;
pub mod image;
pub mod model;

pub use annotation::{Annotation, Keypoint};
pub use error::{Error, Result};
pub use image::Image;
pub mod skeleton;
pub mod supervision;
pub mod synthdata;
