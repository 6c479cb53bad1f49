use clap::Parser;
use prefcvae::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
