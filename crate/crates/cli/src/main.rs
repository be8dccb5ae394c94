use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = dicodesign_cli::Cli::parse();
    let code = match dicodesign_cli::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            dicodesign_cli::exit_code(&e)
        }
    };
    std::process::exit(code);
}
