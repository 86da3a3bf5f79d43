pub mod agent;
pub mod autodiff;
pub mod embed;
pub mod models;
pub mod proof;
pub mod protocol;
pub mod rewrite;
pub mod sexpr;
pub mod synth;
pub mod term;
pub mod trace;
