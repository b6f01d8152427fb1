use clap::Parser;
use lrinfer_tool::commands::{run, Cli};
use std::io::Write;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("LRINFER_LOG", "warn")).init();
    let cli = Cli::parse();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let result = run(&cli, &mut out).and_then(|()| out.flush().map_err(Into::into));
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.kind.exit_code());
    }
}
