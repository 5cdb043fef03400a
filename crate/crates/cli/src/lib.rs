//! Library side of the `annobert` command: argument types, configuration
//! and one function per subcommand.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;

pub use commands::{cmd_analyze, cmd_fit_embeddings, cmd_generate, cmd_preprocess, cmd_train_eval, Manifest};
pub use config::RunConfig;
pub use error::CliError;

use args::{Cli, Command};

pub fn run(cli: Cli) -> Result<Manifest, CliError> {
    match cli.command {
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Generate(a) => cmd_generate(&a),
        Command::FitEmbeddings(o) => cmd_fit_embeddings(&RunConfig::resolve(&o)?),
        Command::TrainEval(o) => cmd_train_eval(&RunConfig::resolve(&o)?),
        Command::Analyze(a) => cmd_analyze(&a),
    }
}
