use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use etcsim::campaign::{run_campaign, CampaignOptions, Execution};
use etcsim::coupling::ExclusionClear;
use etcsim::{parse_config, Campaign};

#[derive(Parser)]
#[command(
    name = "etcsim",
    version,
    about = "Event-triggered leader-follower consensus campaigns"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more campaign files and write their artifacts.
    Run(RunArgs),
    /// Parse and validate campaign files without running them.
    Check {
        #[arg(required = true)]
        configs: Vec<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Campaign files (TOML, or JSON with a .json extension).
    #[arg(required = true)]
    configs: Vec<PathBuf>,

    /// Seeds to run instead of the file's list: `0..20` or `1,4,9`.
    #[arg(long, value_parser = parse_seeds)]
    seeds: Option<SeedList>,

    /// Output directory. With several files, each gets a subdirectory named
    /// after the file. Defaults to each file's `output_dir`.
    #[arg(long, env = "ETCSIM_OUT")]
    out: Option<PathBuf>,

    /// Print and write a median RMSE / E / Total Events table per file.
    #[arg(long)]
    replicate_tables: bool,

    /// Steps between spectral monitor samples.
    #[arg(long)]
    stability_stride: Option<usize>,

    /// Steps between samples kept in trace CSVs.
    #[arg(long)]
    trace_stride: Option<usize>,

    /// When excluded neighbors are forgotten.
    #[arg(long, value_parser = clap::value_parser!(ExclusionClear))]
    exclusion_clear: Option<ExclusionClear>,

    /// Also write long-format plot data per run.
    #[arg(long)]
    plot_data: bool,

    /// Run on the calling thread only.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone)]
struct SeedList(Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let bad = |_| format!("invalid seed list `{s}`");
    let seeds: Vec<u64> = match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (u64, u64) = (
                a.trim().parse().map_err(bad)?,
                b.trim().parse().map_err(bad)?,
            );
            (a..b).collect()
        }
        None => s
            .split(',')
            .map(|p| p.trim().parse().map_err(bad))
            .collect::<Result<_, _>>()?,
    };
    if seeds.is_empty() {
        return Err(format!("seed list `{s}` is empty"));
    }
    Ok(SeedList(seeds))
}

fn load(path: &Path) -> Result<Campaign, String> {
    parse_config(path).map_err(|e| e.to_string())
}

fn apply_overrides(campaign: &mut Campaign, args: &RunArgs) -> Result<(), String> {
    if let Some(seeds) = &args.seeds {
        campaign.seeds = seeds.0.clone();
    }
    for s in &mut campaign.scenarios {
        if let Some(v) = args.stability_stride {
            s.stability_stride = v;
        }
        if let Some(v) = args.trace_stride {
            s.trace_stride = v;
        }
        if let Some(v) = args.exclusion_clear {
            s.exclusion_clear = v;
        }
        s.validate().map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn output_dir(args: &RunArgs, path: &Path, campaign: &Campaign) -> PathBuf {
    match &args.out {
        Some(out) if args.configs.len() > 1 => {
            let stem = path
                .file_stem()
                .map_or_else(|| "campaign".into(), |s| s.to_os_string());
            out.join(stem)
        }
        Some(out) => out.clone(),
        None => campaign.output_dir.clone(),
    }
}

fn run(args: RunArgs) -> ExitCode {
    let mut campaigns = Vec::new();
    for path in &args.configs {
        let mut campaign = match load(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        };
        if let Err(e) = apply_overrides(&mut campaign, &args) {
            eprintln!("error: {}: {e}", path.display());
            return ExitCode::from(2);
        }
        campaigns.push((path, campaign));
    }

    let options = CampaignOptions {
        execution: if args.sequential {
            Execution::Sequential
        } else {
            Execution::Parallel
        },
        plot_data: args.plot_data,
    };
    let mut failed = false;
    let mut tables = Vec::new();
    for (path, campaign) in &campaigns {
        let out = output_dir(&args, path, campaign);
        let runs = campaign.scenarios.len() * campaign.seeds.len();
        eprintln!("{}: {runs} runs -> {}", path.display(), out.display());
        let report = match run_campaign(campaign, &out, options) {
            Ok(r) => r,
            Err(e) => {
                eprintln!("error: {}: {e}", out.display());
                failed = true;
                continue;
            }
        };
        for r in report.failures() {
            failed = true;
            eprintln!(
                "run failed: {} seed {}: {}",
                r.scenario,
                r.seed,
                r.outcome.as_ref().unwrap_err()
            );
        }
        for p in &report.pairings {
            println!(
                "{} / {}: rmse x{:.3}  E x{:.3}  events x{:.3}  peak |u| x{:.3}  ({} seeds)",
                p.a,
                p.b,
                p.rmse_ratio,
                p.effort_ratio,
                p.event_ratio,
                p.peak_control_ratio,
                p.seeds_compared
            );
        }
        if args.replicate_tables {
            let table = report.replication_table(&path.display().to_string());
            if let Err(e) = std::fs::write(out.join("tables.md"), &table) {
                eprintln!("error: {}: {e}", out.display());
                failed = true;
            }
            tables.push(table);
        }
    }
    if !tables.is_empty() {
        println!("\n{}", tables.join("\n"));
    }
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Check { configs } => {
            for path in &configs {
                match load(path) {
                    Ok(c) => println!(
                        "{}: {} scenarios, {} seeds, {} pairings",
                        path.display(),
                        c.scenarios.len(),
                        c.seeds.len(),
                        c.pairings.len()
                    ),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(2);
                    }
                }
            }
            ExitCode::SUCCESS
        }
    }
}
