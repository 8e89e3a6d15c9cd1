use clap::Parser;

fn main() {
    let cli = bwshare_cli::Cli::parse();
    if let Err(err) = bwshare_cli::run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}
