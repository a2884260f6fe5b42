use std::process::ExitCode;

use topodeg_cli::run::{EXIT_IO, EXIT_OK, EXIT_USAGE};
use topodeg_cli::{ConfigError, RunConfig};

fn main() -> ExitCode {
    let cfg = match RunConfig::from_args(std::env::args_os()) {
        Ok(c) => c,
        Err(ConfigError::Display(s)) => {
            print!("{s}");
            return ExitCode::from(EXIT_OK as u8);
        }
        Err(ConfigError::Usage(s)) => {
            eprintln!("{s}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
        Err(ConfigError::Io(s)) => {
            eprintln!("{s}");
            return ExitCode::from(EXIT_IO as u8);
        }
    };
    if let Some(j) = cfg.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j).build_global() {
            eprintln!("{e}");
            return ExitCode::from(EXIT_USAGE as u8);
        }
    }
    let stdout = std::io::stdout();
    let code = topodeg_cli::run(&cfg, &mut stdout.lock());
    ExitCode::from(code as u8)
}
