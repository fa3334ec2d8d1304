mod args;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        netpanel::exec::init_global_threads(t);
    }
    let seed = cli.seed;
    let result = match &cli.command {
        Command::Simulate(a) => run::simulate(a, seed),
        Command::SelectNetwork(a) => run::select_network(a, seed),
        Command::Fit(a) => run::fit(a, seed),
        Command::Impacts(a) => run::impacts(a, seed),
        Command::Spillins(a) => run::spillin_cmd(a, seed),
        Command::Homophily(a) => run::homophily(a, seed),
        Command::Pipeline(a) => run::pipeline(a, seed),
        Command::Report(a) => run::report_cmd(a).map(|text| print!("{text}")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
