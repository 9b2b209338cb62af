pub mod agentcore;
pub mod canvas;
pub mod hpcsim;
pub mod numerics;
pub mod planner;
pub mod qeio;
pub mod rng;
pub mod structlab;
pub mod surrogate;
pub mod units;
pub mod workflow;
