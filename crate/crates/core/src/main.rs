use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use bgcn::cli::{report_table, run, validate, Args};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match try_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn try_main() -> anyhow::Result<()> {
    let cfg = Args::parse().resolve()?;
    let errs = validate(&cfg);
    if !errs.is_empty() {
        for e in &errs {
            eprintln!("invalid {e}");
        }
        anyhow::bail!("{} invalid setting(s)", errs.len());
    }
    let report = run(&cfg).with_context(|| format!("run on {}", cfg.dataset_dir.display()))?;
    print!("{}", report_table(&report.summary));
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}
