pub mod behavior;
pub mod discretize;
pub mod error;
pub mod exec;
pub mod hp;
pub mod search;
pub mod sim;
pub mod space;
pub mod verify;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
