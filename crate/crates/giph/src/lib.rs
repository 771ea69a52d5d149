//! File formats, datasets, checkpoints, experiments and the command line for
//! the learned placement toolkit in [`giph_core`].

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod experiment;
pub mod format;
pub mod grid;
pub mod report;
pub mod run;
