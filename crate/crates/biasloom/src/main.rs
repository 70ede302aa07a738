use std::net::{IpAddr, SocketAddr};
use std::process::ExitCode;

use biasloom::cli::{execute, Cli, Command, EXIT_USAGE};
use biasloom::server;
use biasloom_core::interface::Engine;
use clap::error::ErrorKind;
use clap::Parser;

fn exit(code: i32) -> ExitCode {
    ExitCode::from(u8::try_from(code).unwrap_or(1))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return exit(EXIT_USAGE);
        }
    };
    let engine = match Engine::from_env() {
        Ok(e) => e,
        Err(e) => {
            eprint!("{}", e.to_document());
            return exit(e.code.exit_code());
        }
    };

    if let Command::Serve { port, host } = &cli.command {
        let Ok(ip) = host.parse::<IpAddr>() else {
            eprintln!("invalid --host `{host}`");
            return exit(EXIT_USAGE);
        };
        let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
        return match runtime.block_on(server::serve(engine, SocketAddr::new(ip, *port))) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("server error: {e}");
                exit(1)
            }
        };
    }

    match execute(&cli.command, &engine) {
        Ok(doc) => {
            print!("{doc}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprint!("{}", f.message);
            if !f.message.ends_with('\n') {
                eprintln!();
            }
            exit(f.exit_code)
        }
    }
}
