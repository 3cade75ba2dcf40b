pub mod aggregation;
pub mod crypto;
pub mod lottery;
pub mod overlay;
pub mod simnet;
