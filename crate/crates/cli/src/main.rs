use std::fmt::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use fairplan::allocator::simulate;
use fairplan::explain::{indicators, Indicators};
use fairplan::model::{apply_edits, PlanningConfig};
use fairplan::recommend::{materialize, recommend, RecommendConstraints, RecommendationPlan};
use fairplan::scenario;
use fairplan::store::{load_city_with, load_json, load_population, save_city, save_json, save_population, versioned};
use fairplan::synth::{generate_population, PopulationSpec};
use serde_json::json;

#[derive(Parser)]
#[command(name = "fairplan", version, about = "Fair floor-area planning from the command line")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Uniform,
}

#[derive(clap::Args)]
struct Inputs {
    #[arg(long)]
    city: PathBuf,
    #[arg(long)]
    population: PathBuf,
    /// Planning config; built-in defaults when absent.
    #[arg(long, env = "FAIRPLAN_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Print benefit and inequality indicators for a design.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Run one seeded allocation and write the result.
    Allocate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search for floor-area changes that lower inequality.
    Recommend {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        constraints: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn a recommendation's block changes into building edits.
    Apply {
        #[arg(long)]
        city: PathBuf,
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum, default_value = "uniform")]
        strategy: Strategy,
        #[arg(long, env = "FAIRPLAN_CONFIG")]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic population.
    SynthPop {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bundled scenarios.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Start the HTTP API on the bundled scenario.
    Serve {
        #[arg(long, env = "FAIRPLAN_PORT", default_value_t = fairplan_server::DEFAULT_PORT)]
        port: u16,
        #[arg(long, env = "FAIRPLAN_DATA_DIR", default_value = "fairplan-data")]
        data: PathBuf,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Evaluate, recommend, apply and evaluate again; writes a before/after report.
    Run {
        #[arg(long, default_value = scenario::BUNDLED)]
        name: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a scenario's city, population, config and constraints files.
    Export {
        #[arg(long, default_value = scenario::BUNDLED)]
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// List bundled scenario names.
    List,
}

fn load_config(path: Option<&Path>) -> Result<PlanningConfig> {
    let config = match path {
        Some(p) => load_json(p)?,
        None => PlanningConfig::default(),
    };
    config.validate()?;
    Ok(config)
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"))
}

fn table(report: &Indicators) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed              {}", report.seed);
    let _ = writeln!(s, "allocated         {} / {}", report.allocated, report.capacity);
    let _ = writeln!(s, "mean benefit      {}", fmt_opt(report.mean_benefit));
    let _ = writeln!(s, "inequality total  {}", fmt_opt(report.total_inequality));
    let _ = writeln!(s, "  between         {}", fmt_opt(report.between));
    let _ = writeln!(s, "  within          {}", fmt_opt(report.within));
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>14} {:>14} {:>12}",
        "group", "count", "mean", "sd", "inequality"
    );
    for (id, count) in &report.group_counts {
        let mean = report.group_means.get(id).copied().flatten();
        let sd = report.group_sd.get(id).copied().flatten();
        let ge = report.per_group_inequality.get(id).map(|g| g.0);
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>14} {:>14} {:>12}",
            id,
            count,
            fmt_opt(mean),
            fmt_opt(sd),
            fmt_opt(ge)
        );
    }
    s
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Evaluate { inputs, format } => {
            let config = load_config(inputs.config.as_deref())?;
            let city = load_city_with(&inputs.city, &config)?;
            let population = load_population(&inputs.population)?;
            let report = indicators(&city, &population, &config, inputs.seed)?;
            match format {
                Format::Json => println!("{}", versioned(&report)?),
                Format::Table => print!("{}", table(&report)),
            }
        }
        Command::Allocate { inputs, out } => {
            let config = load_config(inputs.config.as_deref())?;
            let city = load_city_with(&inputs.city, &config)?;
            let population = load_population(&inputs.population)?;
            let sim = simulate(&city, &population, &config, inputs.seed)?;
            save_json(&sim.allocation, &out)?;
        }
        Command::Recommend {
            inputs,
            constraints,
            out,
        } => {
            let config = load_config(inputs.config.as_deref())?;
            let city = load_city_with(&inputs.city, &config)?;
            let population = load_population(&inputs.population)?;
            let constraints: RecommendConstraints = load_json(&constraints)?;
            let plan = recommend(&city, &population, &constraints, &config, inputs.seed)?;
            save_json(&plan, &out)?;
        }
        Command::Apply {
            city,
            plan,
            strategy: Strategy::Uniform,
            config,
            out,
        } => {
            let config = load_config(config.as_deref())?;
            let city = load_city_with(&city, &config)?;
            let plan: RecommendationPlan = load_json(&plan)?;
            let edits = materialize(&city, &plan.plan.deltas)?;
            let next = if edits.is_empty() {
                city
            } else {
                apply_edits(&city, &edits)?
            };
            save_city(&next, &out)?;
        }
        Command::SynthPop { spec, seed, out } => {
            let spec: PopulationSpec = load_json(&spec)?;
            save_population(&generate_population(&spec, seed)?, &out)?;
        }
        Command::Scenario { command } => match command {
            ScenarioCommand::Run { name, seed, out } => {
                let sc = scenario::load(&name)?;
                let report = scenario::run(&sc, seed)?;
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                save_json(&report, &out.join("report.json"))?;
                save_json(&report.recommendation, &out.join("plan.json"))?;
                let after = materialize(&sc.design, &report.recommendation.plan.deltas)?;
                let after = if after.is_empty() {
                    sc.design.clone()
                } else {
                    apply_edits(&sc.design, &after)?
                };
                save_city(&sc.design, &out.join("city-before.json"))?;
                save_city(&after, &out.join("city-after.json"))?;
                println!(
                    "{}",
                    json!({
                        "name": report.name,
                        "before": report.before.total_inequality,
                        "after": report.after.total_inequality,
                        "relative_reduction": report.relative_reduction,
                    })
                );
            }
            ScenarioCommand::Export { name, out } => {
                let sc = scenario::load(&name)?;
                std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
                save_city(&sc.design, &out.join("city.json"))?;
                save_population(&sc.population, &out.join("population.json"))?;
                save_json(&sc.config, &out.join("config.json"))?;
                save_json(&sc.constraints, &out.join("constraints.json"))?;
                save_json(&scenario::bundled_population_spec(), &out.join("population-spec.json"))?;
            }
            ScenarioCommand::List => {
                for name in scenario::names() {
                    println!("{name}");
                }
            }
        },
        Command::Serve { port, data } => {
            let sc = scenario::load(scenario::BUNDLED)?;
            let state = fairplan_server::AppState::new(sc, data, Box::new(fairplan_server::SystemClock))?;
            let addr = SocketAddr::from(([127, 0, 0, 1], port));
            let rt = tokio::runtime::Runtime::new()?;
            eprintln!("listening on http://{addr}");
            rt.block_on(fairplan_server::serve(addr, state))?;
        }
    }
    Ok(())
}

fn error_code(err: &anyhow::Error) -> &'static str {
    use fairplan::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::UnknownId { .. } | E::NotFound(_)) => "not_found",
        Some(E::Conflict(_)) => "conflict",
        Some(E::Validation(_)) => "validation_failed",
        Some(E::Parse { .. }) => "parse_error",
        Some(E::Io(_)) => "io_error",
        Some(E::NonConvergence { .. } | E::Lp(_)) => "solver_failed",
        Some(E::CorruptIndex(_)) => "corrupt_index",
        Some(_) => "invalid_input",
        None if err.downcast_ref::<std::io::Error>().is_some() => "io_error",
        None => "error",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let details = match err.downcast_ref::<fairplan::Error>() {
                Some(fairplan::Error::Validation(v)) => serde_json::to_value(v).unwrap_or_default(),
                _ => serde_json::Value::Null,
            };
            let body = json!({ "code": error_code(&err), "message": format!("{err:#}"), "details": details });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn table_lists_every_group() {
        let sc = scenario::load(scenario::BUNDLED).unwrap();
        let report = indicators(&sc.design, &sc.population, &sc.config, 0).unwrap();
        let text = table(&report);
        for id in report.group_counts.keys() {
            assert!(text.contains(id.as_str()));
        }
    }

    #[test]
    fn missing_input_maps_to_not_found() {
        let err = anyhow::Error::from(load_population(Path::new("/nonexistent/p.json")).unwrap_err());
        assert_eq!(error_code(&err), "not_found");
        assert_eq!(error_code(&anyhow::anyhow!("plain")), "error");
    }
}
