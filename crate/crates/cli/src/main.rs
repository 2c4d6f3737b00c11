use clap::error::ErrorKind;
use clap::Parser;
use payload_sentinel_cli::{configure_threads, run, Cli};

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            std::process::exit(code);
        }
    };
    let result = configure_threads().and_then(|()| run(cli, &mut std::io::stdout().lock()));
    if let Err(e) = result {
        eprintln!("payload-sentinel: {e}");
        std::process::exit(e.exit_code());
    }
}
