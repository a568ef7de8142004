use clap::Parser;

fn main() {
    let cli = darsa_cli::Cli::parse();
    std::process::exit(darsa_cli::run(cli));
}
