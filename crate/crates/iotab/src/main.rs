//! Command-line driver. Subcommands mirror the pipeline stages so a run can
//! be executed end to end (`pipeline`) or one stage at a time, with the
//! stages communicating through files in the output directory.
//!
//! Exit codes: 0 success, 2 usage, 3 bad input data, 4 solver gave up.
//! `IOTAB_LOG` selects the log level (error/warn/info/debug).

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use iotab::augment::{generate_augmented_set, load_augmented_split, write_augmented_set};
use iotab::balance::{balance_with_report, SolverConfig};
use iotab::error::{Error, Result};
use iotab::features::{load_pipeline, save_pipeline, FittedPipeline, RegionView};
use iotab::metrics::{MetricsReport, Scope};
use iotab::pipeline::{
    load_config, read_gross_outputs, run_pipeline, table_from_predictions, train_all_items,
    training_matrices, write_balance_report, write_evaluation, write_gross_outputs,
    write_run_config, PipelineConfig, RunMode,
};
use iotab::store::{load_item_model, save_item_model};
use iotab::synth::{generate, write_economy, SynthConfig};
use iotab::table::{
    collect_region_variables, infer_table_dims, load_io_table, load_region_dataset,
    read_long_rows, write_io_table,
};
use iotab::targets::{all_items, renormalize_gross_outputs, ItemAddress};

#[derive(Parser)]
#[command(
    name = "iotab",
    version,
    about = "Estimates regional input-output tables: augmentation, per-item regression networks, cross-entropy balancing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic economy plus a ready-to-run config
    Synth(SynthArgs),
    /// Draw the augmented sample set and persist it under the output dir
    Augment(RunArgs),
    /// Fit the feature pipeline on the augmented training split
    FitPipeline(RunArgs),
    /// Train one model per table item on the augmented training split
    Train(RunArgs),
    /// Predict the target region's table from the trained models
    Predict(PredictArgs),
    /// Balance a table against per-industry gross-output targets
    Balance(BalanceArgs),
    /// Compare an estimated table against the actual one
    Evaluate(EvaluateArgs),
    /// Run every stage end to end
    Pipeline(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file (flat `key = value` lines)
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's training worker count
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the config's output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = load_config(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(jobs) = self.jobs {
            cfg.jobs = jobs;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct PredictArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Total gross output of the target region (the one quantity the models
    /// do not estimate)
    #[arg(long = "total-output")]
    total_output: f64,
}

#[derive(Args)]
struct BalanceArgs {
    /// Prior table (grid CSV with I/D/V labels)
    #[arg(long)]
    table: PathBuf,
    /// Per-industry gross-output targets (CSV: industry,value)
    #[arg(long = "gross-outputs")]
    gross_outputs: PathBuf,
    /// Target table total (must equal the sum of the gross outputs)
    #[arg(long)]
    total: f64,
    /// Drop the linked final-demand-column / value-added-row constraint
    #[arg(long = "no-phi")]
    no_phi: bool,
    /// Linked pair position as 1-based `FD_COLUMN,GVA_ROW`
    #[arg(long, default_value = "1,1", value_parser = parse_phi)]
    phi: (usize, usize),
    /// Convergence tolerance on the constraint residuals
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Iteration budget
    #[arg(long = "max-iterations", default_value_t = 200)]
    max_iterations: usize,
    /// Directory for balanced_table.csv and balance_report.csv
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Estimated table
    #[arg(long)]
    estimate: PathBuf,
    /// Actual table to compare against
    #[arg(long)]
    actual: PathBuf,
    /// Directory for the metric grid, heatmaps and histogram
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory to create the economy (and its run.cfg) in
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    industries: usize,
    #[arg(long = "gva-rows", default_value_t = 2)]
    gva_rows: usize,
    #[arg(long = "fd-cols", default_value_t = 3)]
    fd_cols: usize,
    #[arg(long, default_value_t = 45)]
    regions: usize,
    /// Half-width of per-cell multiplicative noise
    #[arg(long, default_value_t = 0.05)]
    noise: f64,
    /// Generate without a linked row/column pair
    #[arg(long = "no-phi")]
    no_phi: bool,
    /// Augmented samples the written config asks for
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    /// Network width the written config asks for
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Residual blocks the written config asks for
    #[arg(long, default_value_t = 3)]
    blocks: usize,
    /// Epoch cap the written config asks for
    #[arg(long, default_value_t = 30)]
    epochs: usize,
}

fn parse_phi(s: &str) -> std::result::Result<(usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let [col, row] = parts.as_slice() else {
        return Err("expected FD_COLUMN,GVA_ROW".into());
    };
    let col: usize = col.trim().parse().map_err(|_| format!("bad column index {col:?}"))?;
    let row: usize = row.trim().parse().map_err(|_| format!("bad row index {row:?}"))?;
    if col == 0 || row == 0 {
        return Err("indices are 1-based".into());
    }
    Ok((col, row))
}

fn main() {
    // Die quietly when a downstream pipe closes, like other unix tools.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("IOTAB_LOG", "info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Augment(args) => cmd_augment(args),
        Command::FitPipeline(args) => cmd_fit_pipeline(args),
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Balance(args) => cmd_balance(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Pipeline(args) => cmd_pipeline(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        industries: args.industries,
        gva_rows: args.gva_rows,
        fd_cols: args.fd_cols,
        use_phi: !args.no_phi,
        n_regions: args.regions,
        noise: args.noise,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let econ = generate(&cfg)?;
    write_economy(&args.out, &econ)?;

    // The config references the economy with relative paths, so the whole
    // directory can be moved or checked in as a worked example.
    let mut run = PipelineConfig::template();
    run.dataset_dir = "dataset".into();
    run.recipe = "recipe.csv".into();
    run.target_variables = "target_variables.csv".into();
    run.actual_table = Some("actual_table.csv".into());
    run.output_dir = "out".into();
    run.total_output = Some(econ.target_total);
    run.seed = args.seed;
    run.pca_components = econ.recipe.len();
    run.augmentation.n_samples = args.samples;
    run.augmentation.scale = iotab::augment::ScaleMode::Fixed(cfg.base_population);
    run.network.width = args.width;
    run.network.n_blocks = args.blocks;
    run.network.max_epochs = args.epochs;
    write_run_config(&args.out.join("run.cfg"), &run)?;

    println!(
        "wrote {} regions ({} industries, {} value-added rows, {} final-demand columns) to {}",
        cfg.n_regions,
        cfg.industries,
        cfg.gva_rows,
        cfg.fd_cols,
        args.out.display()
    );
    println!("run it with: iotab pipeline --config {}", args.out.join("run.cfg").display());
    Ok(())
}

fn cmd_augment(args: RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let dataset = load_region_dataset(&cfg.dataset_dir)?;
    let set = generate_augmented_set(&dataset, &cfg.augmentation_config())?;
    let dir = cfg.output_dir.join("augmented");
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    write_augmented_set(&dir, &set)?;
    let n_train = set.samples.iter().filter(|s| s.train).count();
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        set.samples.len(),
        n_train,
        set.samples.len() - n_train,
        dir.display()
    );
    Ok(())
}

fn cmd_fit_pipeline(args: RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let dataset = load_region_dataset(&cfg.dataset_dir)?;
    let recipe = iotab::features::load_recipe(&cfg.recipe)?;
    let train = load_augmented_split(&cfg.output_dir.join("augmented"), dataset.dims, "train")?;
    let fitted = FittedPipeline::fit(train.iter(), &recipe, cfg.pca_components)?;
    save_pipeline(&cfg.output_dir, &fitted)?;
    println!(
        "fitted pipeline {} on {} samples: {} features -> {} components",
        fitted.id(),
        train.len(),
        fitted.recipe.len(),
        fitted.n_components
    );
    Ok(())
}

fn cmd_train(args: RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let dataset = load_region_dataset(&cfg.dataset_dir)?;
    let fitted = load_pipeline(&cfg.output_dir)?;
    let train = load_augmented_split(&cfg.output_dir.join("augmented"), dataset.dims, "train")?;
    let items = all_items(dataset.dims);
    let (scores, targets) = training_matrices(&fitted, &train, &items)?;
    let models = train_all_items(
        &items,
        &scores,
        &targets,
        &cfg.network_template(),
        &fitted.id(),
        cfg.jobs,
    )?;
    let model_dir = cfg.model_dir();
    let mut constants = 0;
    for model in &models {
        save_item_model(&model_dir, model)?;
        constants += usize::from(model.network.is_none());
    }
    println!(
        "trained {} items ({} constant) into {}",
        models.len(),
        constants,
        model_dir.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let mut cfg = args.run.load()?;
    cfg.total_output = Some(args.total_output);
    cfg.validate()?;
    let total = args.total_output;

    let dataset = load_region_dataset(&cfg.dataset_dir)?;
    let dims = dataset.dims;
    let fitted = load_pipeline(&cfg.output_dir)?;
    let pipeline_ref = fitted.id();
    let rows = read_long_rows(&cfg.target_variables)?;
    let (pop15, variables) = collect_region_variables(&rows, &cfg.target_variables)?;
    let scores = fitted.transform(RegionView { variables: &variables, pop15 })?;

    let model_dir = cfg.model_dir();
    let mut ratios = BTreeMap::new();
    for item in all_items(dims) {
        let model = load_item_model(&model_dir, item)?;
        ratios.insert(item, model.predict(&scores, &pipeline_ref)?);
    }
    let y_ratios: Vec<f64> =
        (0..dims.industries).map(|i| ratios[&ItemAddress::gross_output(i)]).collect();
    let y_star = renormalize_gross_outputs(&y_ratios, total)?;
    let predicted = table_from_predictions(dims, &ratios, &y_star, total)?;
    write_io_table(&cfg.output_dir.join("predicted_table.csv"), &predicted)?;
    write_gross_outputs(&cfg.output_dir.join("predicted_outputs.csv"), &y_star)?;
    println!(
        "predicted {} items; wrote {} and {}",
        ratios.len(),
        cfg.output_dir.join("predicted_table.csv").display(),
        cfg.output_dir.join("predicted_outputs.csv").display()
    );
    Ok(())
}

fn cmd_balance(args: BalanceArgs) -> Result<()> {
    let mut dims = infer_table_dims(&args.table)?;
    if !args.no_phi {
        let (col, row) = args.phi;
        if col > dims.fd_cols || row > dims.gva_rows {
            return Err(Error::Config(format!(
                "linked pair D{col}/V{row} is outside a table with {} final-demand columns and {} value-added rows",
                dims.fd_cols, dims.gva_rows
            )));
        }
        dims = dims.with_phi(col - 1, row - 1);
    }
    let prior = load_io_table(&args.table, dims)?;
    let outputs = read_gross_outputs(&args.gross_outputs)?;
    if outputs.len() != dims.industries {
        return Err(Error::InvalidData(format!(
            "{} gross outputs for a table with {} industries",
            outputs.len(),
            dims.industries
        )));
    }
    let solver = SolverConfig {
        tolerance: args.tol,
        max_iterations: args.max_iterations,
        ..SolverConfig::default()
    };
    let (balanced, report) =
        balance_with_report(&prior, &outputs, args.total, !args.no_phi, &solver)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    write_io_table(&args.out.join("balanced_table.csv"), &balanced)?;
    write_balance_report(&args.out.join("balance_report.csv"), &report)?;
    println!(
        "balanced in {} iterations, max residual {:.3e}, objective {:.6}",
        report.iterations, report.max_residual, report.objective
    );
    Ok(())
}

fn print_metrics_grid(report: &MetricsReport) {
    let fmt = |v: Option<f64>| match v {
        Some(x) => format!("{x:>14.6}"),
        None => format!("{:>14}", "-"),
    };
    println!(
        "{:<28}{:>14}{:>14}{:>14}{:>14}{:>14}",
        "scope", "STPE", "MAD", "U2", "RMSE", "MAPE"
    );
    for scope in Scope::ALL {
        let m = report.get(scope);
        println!(
            "{:<28}{}{}{}{}{}",
            scope.label(),
            fmt(m.stpe),
            fmt(m.mad),
            fmt(m.u2),
            fmt(m.rmse),
            fmt(m.mape)
        );
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let dims = infer_table_dims(&args.actual)?;
    let actual = load_io_table(&args.actual, dims)?;
    let estimate = load_io_table(&args.estimate, dims)?;
    let report = write_evaluation(&args.out, &estimate, &actual)?;
    print_metrics_grid(&report);
    Ok(())
}

fn cmd_pipeline(args: RunArgs) -> Result<()> {
    let cfg = args.load()?;
    let manifest = run_pipeline(&cfg)?;
    for (stage, status) in &manifest.stages {
        println!("stage {stage}: {status}");
    }
    if let Some(balance) = &manifest.balance {
        println!(
            "balance: {} iterations, max residual {:.3e}",
            balance.iterations, balance.max_residual
        );
    }
    if let Some(metrics) = &manifest.metrics {
        print_metrics_grid(metrics);
    }
    if matches!(cfg.mode, RunMode::OurMethod) {
        let constants = manifest.items.iter().filter(|i| i.kind == "constant").count();
        println!("items: {} trained, {} constant", manifest.items.len(), constants);
    }
    println!("artifacts in {}", cfg.output_dir.display());
    Ok(())
}
