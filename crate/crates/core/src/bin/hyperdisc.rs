use clap::Parser;

fn main() {
    let cli = hyperdisc::cli::Cli::parse();
    if let Err(e) = hyperdisc::cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
