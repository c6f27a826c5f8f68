use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tocp::config::{Override, RunConfig, Scenario, SolverKind};
use tocp::{compare, plot, run, store};
use trigger_ocp::scenarios::Formulation;

const EXIT_CONFIG: u8 = 4;

#[derive(Parser)]
#[command(name = "tocp", version, about = "Solve and compare triggered-constraint optimal control scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum FormulationArg {
    Minlp,
    Mpvc,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one scenario and persist the record.
    Solve {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long, value_enum)]
        formulation: FormulationArg,
        #[arg(long, value_enum)]
        solver: SolverKind,
        /// TOML (or .json) parameter file; missing keys keep their defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Polytope file; defaults to the built-in regions.
        #[arg(long)]
        regions: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `key=value` on the scenario parameters, or `solver.key=value`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Also write the homotopy trace or node log.
        #[arg(long)]
        trace: bool,
    },
    /// Tabulate records side by side.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write per-node state and control series next to a record.
    PlotData {
        #[arg(long)]
        input: PathBuf,
    },
}

fn solve(cfg: RunConfig) -> ExitCode {
    let resolved = match cfg.resolve() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let out = match run::run(&resolved) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("model error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let path = match store::persist(&cfg.out, &resolved, &out, cfg.trace) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("writing results: {e:#}");
            return ExitCode::from(3);
        }
    };
    let r = &out.record;
    println!(
        "{} {} objective {} in {:.2} s -> {}",
        r.run_id,
        r.status,
        r.objective.map_or("-".into(), |v| format!("{v:.6}")),
        r.runtime_seconds,
        path.display()
    );
    ExitCode::from(r.outcome.exit_code() as u8)
}

fn compare_cmd(inputs: &[PathBuf]) -> anyhow::Result<()> {
    let records = store::collect_records(inputs)?.iter().map(|p| store::load_record(p)).collect::<anyhow::Result<Vec<_>>>()?;
    print!("{}", compare::compare(&records)?.render());
    Ok(())
}

fn plot_cmd(input: &Path) -> anyhow::Result<()> {
    store::load_record(input)?;
    let sol = store::load_solution(input)?;
    let built = run::Built::new(&sol.config)?;
    let data = plot::emit_plot_data(&built, &sol.x);
    let base = input.to_string_lossy();
    let base = base.strip_suffix(".record.json").unwrap_or(&base);
    for (suffix, text) in [("states", &data.states), ("controls", &data.controls)] {
        let path = PathBuf::from(format!("{base}.{suffix}.tsv"));
        store::write_atomic(&path, text.as_bytes())?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            scenario,
            formulation,
            solver,
            params,
            regions,
            out,
            seed,
            overrides,
            trace,
        } => {
            let overrides: Result<Vec<Override>, _> = overrides.iter().map(|s| s.parse()).collect();
            let overrides = match overrides {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            let formulation = match formulation {
                FormulationArg::Minlp => Formulation::Minlp,
                FormulationArg::Mpvc => Formulation::Mpvc,
            };
            solve(RunConfig {
                scenario,
                formulation,
                solver,
                params,
                regions,
                out,
                seed,
                overrides,
                trace,
            })
        }
        Command::Compare { inputs } => match compare_cmd(&inputs) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("compare: {e:#}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::PlotData { input } => match plot_cmd(&input) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("plot-data: {e:#}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
    }
}
