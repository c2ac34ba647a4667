use clap::Parser;

use alexkit::cli::{dispatch, exit_code, thread_count, Cli};

fn main() {
    let cli = Cli::parse();
    if let Some(n) = thread_count(cli.threads) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("alexkit: cannot configure {n} threads: {e}");
            std::process::exit(1);
        }
    }
    let result = dispatch(&cli);
    if let Err(e) = &result {
        eprintln!("alexkit: {e}");
    }
    std::process::exit(exit_code(&result));
}
