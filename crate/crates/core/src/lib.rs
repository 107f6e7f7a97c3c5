pub mod auxctrl;
pub mod controller;
pub mod dualopt;
pub mod engine;
pub mod experiment;
pub mod format;
pub mod lp;
pub mod model;
pub mod queueing;
