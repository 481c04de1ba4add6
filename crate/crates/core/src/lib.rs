pub mod dfpo;
pub mod eval;
pub mod diff;
pub mod executor;
pub mod formulation;
pub mod rational;
pub mod response;
pub mod reward;
pub mod solver;
pub mod synthesis;
pub mod teacher;
