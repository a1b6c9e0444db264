use clap::Parser;

fn main() {
    let cli = sdjls_cli::args::Cli::parse();
    let mut stdout = std::io::stdout().lock();
    if let Err(e) = sdjls_cli::execute(cli, &mut stdout) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
