use clap::Parser;

fn main() {
    let cli = espressivo::cli::Cli::parse();
    if let Err(e) = espressivo::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
