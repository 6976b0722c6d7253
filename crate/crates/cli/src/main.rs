use clap::Parser;
use grasp_cli::{exit_code, run, Cli, EXIT_OK, EXIT_USER};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USER } else { EXIT_OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    match run(cli) {
        Ok(summary) => {
            print!("{summary}");
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(exit_code(&e));
        }
    }
}
