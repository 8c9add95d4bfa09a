//! The `nsedit` command-line tool: config parsing, experiment runs and
//! report files.

pub mod bench;
pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod project;
pub mod selftest;
pub mod simulate;
pub mod track;

pub use cli::{Cli, Command};
pub use config::ExperimentConfig;
pub use error::{CliError, Result};

/// Runs a parsed command line inside a rayon pool of `cli.jobs` threads.
pub fn run(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Runtime(format!("thread pool: {e}")))?;
    let parallel = pool.current_num_threads() > 1;
    pool.install(|| match &cli.command {
        Command::Simulate(a) => simulate::simulate(a),
        Command::Track(a) => track::track(a, parallel),
        Command::Project(a) => project::project(a),
        Command::Bench(a) => bench::bench(a).map(|_| ()),
        Command::Selftest(a) => selftest::selftest(a.seed),
    })
}
