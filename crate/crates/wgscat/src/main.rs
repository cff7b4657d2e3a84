use clap::Parser;

fn main() {
    let cli = match wgscat::cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests exit cleanly; usage mistakes are
            // config errors.
            let code = if err.exit_code() == 0 { 0 } else { 1 };
            let _ = err.print();
            std::process::exit(code);
        }
    };
    if let Err(err) = wgscat::cli::run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
