pub mod linalg;
pub mod model;
pub mod augment;
pub mod sfactor;
pub mod loopshift;
pub mod riccati;
pub mod synthesis;
pub mod sim;
