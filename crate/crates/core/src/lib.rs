pub mod crypto;
pub mod endpoints;
pub mod token;
pub mod transport;
pub mod wire;
