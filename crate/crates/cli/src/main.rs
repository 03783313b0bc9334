use std::path::PathBuf;
use std::process::ExitCode;

use causal_repair::{
    cmd_build_model, cmd_discretize, cmd_export_heatmap, cmd_interpolate, cmd_repair, cmd_search, cmd_validate, Which,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "causal-repair", version, about = "Diagnose and repair a failing closed-loop controller")]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Panel {
    Factual,
    Counterfactual,
    Interpolated,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline described by a config file.
    Repair { config: PathBuf },
    /// Re-simulate a repair (cause.json or an assignment file).
    Validate {
        repair: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Write a cell map as CSV, one row per input cell.
    ExportHeatmap {
        /// g.json or cause.json
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Behavior to export from a cause file.
        #[arg(long, value_enum, default_value = "interpolated")]
        panel: Panel,
        /// Input axis names for the column headers.
        #[arg(long, value_delimiter = ',', default_value = "pos,vel")]
        names: Vec<String>,
    },
    /// Refine the grids and write the cell map g.
    Discretize {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Build the causal model of a cell map; writes model.json and factual.json.
    BuildModel {
        g: PathBuf,
        #[arg(long, default_value = "mountain_car")]
        label: String,
        #[arg(short, long)]
        output_dir: PathBuf,
    },
    /// Sample a counterfactual that satisfies the property.
    Search {
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Reduce a counterfactual to a minimal repair.
    Interpolate {
        config: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        factual: PathBuf,
        #[arg(long)]
        counterfactual: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let t = cli.threads;
    let code = match &cli.command {
        Command::Repair { config } => cmd_repair(config, t),
        Command::Validate { repair, config } => cmd_validate(repair, config, t),
        Command::ExportHeatmap {
            input,
            output,
            panel,
            names,
        } => {
            let which = match panel {
                Panel::Factual => Which::Factual,
                Panel::Counterfactual => Which::Counterfactual,
                Panel::Interpolated => Which::Interpolated,
            };
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            cmd_export_heatmap(input, output, which, &names)
        }
        Command::Discretize { config, output } => cmd_discretize(config, output, t),
        Command::BuildModel { g, label, output_dir } => cmd_build_model(g, label, output_dir),
        Command::Search { config, model, output } => cmd_search(config, model, output, t),
        Command::Interpolate {
            config,
            model,
            factual,
            counterfactual,
            output,
        } => cmd_interpolate(config, model, factual, counterfactual, output),
    };
    ExitCode::from(code as u8)
}
