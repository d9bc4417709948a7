use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = affordloop_cli::Cli::parse();
    if let Err(e) = affordloop_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
