pub mod diff;
pub mod eval;
pub mod geometry;
pub mod imageio;
pub mod model;
pub mod softrender;
pub mod losses;
pub mod synthdata;
pub mod trainer;
