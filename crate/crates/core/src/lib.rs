pub mod geom;
pub mod handmodel;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod policy;
pub mod retarget;
pub mod synth;
