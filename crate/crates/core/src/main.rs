use clap::Parser;

use privbandit::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
