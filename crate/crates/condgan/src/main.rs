use clap::Parser;

fn main() {
    let cli = condgan::cli::Cli::parse();
    if let Err(e) = condgan::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
