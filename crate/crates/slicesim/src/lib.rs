//! Std side of the slice simulator: catalog files, result CSVs and plots,
//! the LLM planner adapter and the `slicesim` command line.

pub mod catalog;
pub mod cli;
pub mod llm;
pub mod output;
pub mod plot;
