use clap::Parser;
use preview_cli::{run, Cli};

fn main() {
    match run(Cli::parse()) {
        Ok(outcome) => {
            if outcome.partial {
                eprintln!("{}", outcome.message);
            } else {
                println!("{}", outcome.message);
            }
            std::process::exit(outcome.exit_code());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
