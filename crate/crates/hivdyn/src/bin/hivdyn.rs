use clap::Parser;

fn main() {
    let cli = hivdyn::cli::Cli::parse();
    if let Err(e) = hivdyn::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
