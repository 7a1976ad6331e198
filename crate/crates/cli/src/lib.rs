//! Library side of the command-line tool: file formats and the randomized
//! verification runners, shared with the integration and acceptance tests.

pub mod formats;
pub mod runner;
