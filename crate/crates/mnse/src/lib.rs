//! Command-line tools and file formats around [`mnse_core`].
//!
//! * [`config`]: flat `key = value` configuration files.
//! * [`io`]: dataset directories and atomic writes.
//! * [`model_file`]: JSON model files with exact float round trips.
//! * [`report`]: evaluation and bound reports plus their schema check.
//! * [`batch`]: multi-threaded evaluation of whole test sets.
//! * [`cli`]: the `mnse` command line.

pub mod batch;
pub mod cli;
pub mod config;
pub mod io;
pub mod model_file;
pub mod report;
