pub mod autograd;
pub mod data;
pub mod error;
pub mod networks;
pub mod objectives;
pub mod trainer;
pub mod evaluation;
