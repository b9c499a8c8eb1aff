use clap::Parser;

fn main() {
    let cli = distkm::cli::Cli::parse();
    if let Err(e) = distkm::cli::run(cli) {
        eprintln!("distkm: {e}");
        std::process::exit(e.kind().exit_code());
    }
}
