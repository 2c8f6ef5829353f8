pub mod expr;
pub mod grid;
pub mod growth;
pub mod models;
pub mod operator;
pub mod diagnostics;
pub mod solver;
pub mod kernel;
pub mod config;
pub mod io;
