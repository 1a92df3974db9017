use clap::Parser;

fn main() {
    let cli = ggdgan_cli::Cli::parse();
    if let Err(e) = ggdgan_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
