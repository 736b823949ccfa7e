use clap::Parser;
use fcs_dpc::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
