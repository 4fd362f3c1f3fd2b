use clap::Parser;
use illumsplat::cli::{run, Cli};

fn main() {
    // clap exits with status 2 on usage errors, which matches the config
    // error code
    let cli = Cli::parse();
    std::process::exit(run(cli));
}
