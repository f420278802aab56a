use std::process::ExitCode;

fn main() -> ExitCode {
    let cli = match hips_cli::parse_from(std::env::args_os()) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 0 for --help/--version and 2 for usage errors
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match hips_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hips: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
