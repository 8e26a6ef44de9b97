use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args.iter().any(|a| a == "--help" || a == "-h") {
        println!("{}", otrom::usage());
        return if args.is_empty() { ExitCode::from(2) } else { ExitCode::SUCCESS };
    }
    let (cmd, cfg) = match otrom::parse_args(&args) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}\n{}", otrom::usage());
            return ExitCode::from(2);
        }
    };
    match otrom::run(cmd, &cfg) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
