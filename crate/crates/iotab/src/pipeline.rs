//! Run orchestration: the flat config file, stage sequencing, artifact
//! emission and the run manifest.
//!
//! A run is a fixed stage sequence. The estimation mode goes
//! load → augment → fit-pipeline → train → predict → balance → evaluate;
//! the baseline mode skips the learning stages and balances a supplied prior
//! table against the actual gross outputs, which is the conventional
//! procedure the learned method is compared with. Any stage error stops the
//! run, but the manifest collected so far is still written so a failed run
//! leaves a record of how far it got.
//!
//! Everything a run produces is a function of (input files, config, seed):
//! per-item training seeds are derived from the global seed and the item
//! address, so results do not depend on `jobs`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use crate::augment::{
    generate_augmented_set, write_augmented_set, AugmentationConfig, ScaleMode, VirtualRegion,
};
use crate::balance::{balance_with_report, BalanceReport, SolverConfig};
use crate::csvio::{self, fmt_f64};
use crate::error::{Error, Result};
use crate::features::{load_recipe, save_pipeline, FeatureRecipe, FittedPipeline, RegionView};
use crate::mat::Mat;
use crate::metrics::{
    compute_metrics, diff_heatmaps, error_rate_histogram, render_heatmap_svg, write_heatmap_csv,
    write_histogram_csv, write_metrics_csv, MetricsReport,
};
use crate::net::{Head, NetworkConfig};
use crate::rng::derive_seed;
use crate::store::save_item_model;
use crate::table::{
    collect_region_variables, load_io_table, load_region_dataset, read_long_rows, write_io_table,
    CellGrid, IODimensions, IOTable,
};
use crate::targets::{all_items, renormalize_gross_outputs, target_ratio, ItemAddress, Section};
use crate::train::{train_item, TrainedItemModel};

#[derive(Clone, Debug, PartialEq)]
pub enum RunMode {
    /// Learn per-item models from augmented data, predict, then balance.
    OurMethod,
    /// Balance the given prior table against the actual gross outputs.
    ConventionalBaseline { prior_table: PathBuf },
}

#[derive(Clone, Debug)]
pub struct PipelineConfig {
    pub mode: RunMode,
    pub dataset_dir: PathBuf,
    pub recipe: PathBuf,
    /// Long-format variables (population row plus explanatory variables) of
    /// the region whose table is being estimated.
    pub target_variables: PathBuf,
    /// Known table when there is one; enables the evaluate stage.
    pub actual_table: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// Model store location; defaults to `<output_dir>/models`.
    pub model_dir: Option<PathBuf>,
    /// Total gross output of the target region. Required for estimation;
    /// the baseline takes totals from the actual table instead.
    pub total_output: Option<f64>,
    /// Enforce the linked row/column constraint; defaults to whether the
    /// dataset's dimensions declare a linked pair.
    pub use_phi: Option<bool>,
    pub seed: u64,
    /// Worker threads for the train stage.
    pub jobs: usize,
    pub pca_components: usize,
    pub augmentation: AugmentationConfig,
    /// Hyperparameter template; input width, head and seed are set per item.
    pub network: NetworkConfig,
    pub solver: SolverConfig,
}

impl PipelineConfig {
    /// Config with every knob at its default, pointing at nothing. Callers
    /// fill in the paths.
    pub fn template() -> Self {
        PipelineConfig {
            mode: RunMode::OurMethod,
            dataset_dir: PathBuf::new(),
            recipe: PathBuf::new(),
            target_variables: PathBuf::new(),
            actual_table: None,
            output_dir: PathBuf::new(),
            model_dir: None,
            total_output: None,
            use_phi: None,
            seed: 0,
            jobs: 1,
            pca_components: 10,
            augmentation: AugmentationConfig::default(),
            network: NetworkConfig::new(1, Head::Sigmoid),
            solver: SolverConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.jobs == 0 {
            return bad("jobs must be at least 1".into());
        }
        if self.pca_components == 0 {
            return bad("pca_components must be at least 1".into());
        }
        match self.mode {
            RunMode::OurMethod => match self.total_output {
                Some(t) if t.is_finite() && t > 0.0 => {}
                Some(t) => return bad(format!("total_output must be positive, got {t}")),
                None => return bad("estimation needs total_output".into()),
            },
            RunMode::ConventionalBaseline { .. } => {
                if self.actual_table.is_none() {
                    return bad("the baseline takes its row/column totals from actual_table; set it".into());
                }
            }
        }
        self.network.validate()
    }

    pub fn model_dir(&self) -> PathBuf {
        self.model_dir.clone().unwrap_or_else(|| self.output_dir.join("models"))
    }

    /// Augmentation settings with the sampling seed derived from the run
    /// seed, so the global seed governs every random choice.
    pub fn augmentation_config(&self) -> AugmentationConfig {
        let mut aug = self.augmentation.clone();
        aug.seed = derive_seed(self.seed, "augment");
        aug
    }

    /// Hyperparameter template with the training seed derived from the run
    /// seed; per-item seeds are derived from it and the item address.
    pub fn network_template(&self) -> NetworkConfig {
        let mut template = self.network.clone();
        template.rng_seed = derive_seed(self.seed, "train");
        template
    }

    /// Canonical key/value listing: what `write_run_config` writes and the
    /// manifest echoes. Optional keys are omitted when unset.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| out.push((k.to_string(), v));
        match &self.mode {
            RunMode::OurMethod => push("mode", "our-method".into()),
            RunMode::ConventionalBaseline { prior_table } => {
                push("mode", "conventional-baseline".into());
                push("prior_table", prior_table.display().to_string());
            }
        }
        push("dataset_dir", self.dataset_dir.display().to_string());
        push("recipe", self.recipe.display().to_string());
        push("target_variables", self.target_variables.display().to_string());
        if let Some(p) = &self.actual_table {
            push("actual_table", p.display().to_string());
        }
        push("output_dir", self.output_dir.display().to_string());
        if let Some(p) = &self.model_dir {
            push("model_dir", p.display().to_string());
        }
        if let Some(t) = self.total_output {
            push("total_output", fmt_f64(t));
        }
        if let Some(u) = self.use_phi {
            push("use_phi", u.to_string());
        }
        push("seed", self.seed.to_string());
        push("jobs", self.jobs.to_string());
        push("pca_components", self.pca_components.to_string());
        push("augment.samples", self.augmentation.n_samples.to_string());
        push("augment.train_fraction", fmt_f64(self.augmentation.train_fraction));
        push("augment.members_min", self.augmentation.members_min.to_string());
        push("augment.members_max", self.augmentation.members_max.to_string());
        let scale = match self.augmentation.scale {
            ScaleMode::Fixed(p) => format!("fixed:{}", fmt_f64(p)),
            ScaleMode::UniformRange(lo, hi) => format!("uniform:{}:{}", fmt_f64(lo), fmt_f64(hi)),
        };
        push("augment.scale", scale);
        let n = &self.network;
        push("net.width", n.width.to_string());
        push("net.blocks", n.n_blocks.to_string());
        let after: Vec<String> = n.dropout_after.iter().map(|i| i.to_string()).collect();
        push("net.dropout_after", after.join(";"));
        push("net.dropout_prob", fmt_f64(n.dropout_prob));
        push("net.batch_norm", n.batch_norm.to_string());
        push("net.l1", fmt_f64(n.l1_lambda));
        push("net.batch_size", n.batch_size.to_string());
        push("net.momentum", fmt_f64(n.momentum));
        push("net.lr_lo", fmt_f64(n.lr_lo));
        push("net.lr_hi", fmt_f64(n.lr_hi));
        push("net.lr_step", n.lr_step.to_string());
        push("net.max_epochs", n.max_epochs.to_string());
        push("net.patience", n.patience.to_string());
        push("net.val_fraction", fmt_f64(n.val_fraction));
        push("solver.tolerance", fmt_f64(self.solver.tolerance));
        push("solver.max_iterations", self.solver.max_iterations.to_string());
        out
    }
}

/// Parses the flat `key = value` format. `#` starts a comment, blank lines
/// are skipped, keys may appear once. Relative paths are resolved against
/// `base`; `origin` only labels error messages.
pub fn parse_config_text(text: &str, base: &Path, origin: &Path) -> Result<PipelineConfig> {
    let mut seen: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::parse(origin, line, format!("expected `key = value`, got {content:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        if seen.insert(key, (line, value)).is_some() {
            return Err(Error::parse(origin, line, format!("duplicate key {key}")));
        }
    }

    let mut cfg = PipelineConfig::template();
    let resolve = |v: &str| -> PathBuf {
        let p = Path::new(v);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut prior_table: Option<PathBuf> = None;
    let mut mode_name: Option<String> = None;
    for (key, (line, value)) in &seen {
        let line = *line;
        let value = *value;
        let parse_f = || csvio::parse_f64(value, origin, line);
        let parse_u = || -> Result<usize> {
            value.parse().map_err(|_| Error::parse(origin, line, format!("{key} wants an integer, got {value:?}")))
        };
        let parse_b = || -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::parse(origin, line, format!("{key} wants true or false, got {value:?}"))),
            }
        };
        match *key {
            "mode" => mode_name = Some(value.to_string()),
            "prior_table" => prior_table = Some(resolve(value)),
            "dataset_dir" => cfg.dataset_dir = resolve(value),
            "recipe" => cfg.recipe = resolve(value),
            "target_variables" => cfg.target_variables = resolve(value),
            "actual_table" => cfg.actual_table = Some(resolve(value)),
            "output_dir" => cfg.output_dir = resolve(value),
            "model_dir" => cfg.model_dir = Some(resolve(value)),
            "total_output" => cfg.total_output = Some(parse_f()?),
            "use_phi" => cfg.use_phi = Some(parse_b()?),
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| Error::parse(origin, line, format!("seed wants an integer, got {value:?}")))?;
            }
            "jobs" => cfg.jobs = parse_u()?,
            "pca_components" => cfg.pca_components = parse_u()?,
            "augment.samples" => cfg.augmentation.n_samples = parse_u()?,
            "augment.train_fraction" => cfg.augmentation.train_fraction = parse_f()?,
            "augment.members_min" => cfg.augmentation.members_min = parse_u()?,
            "augment.members_max" => cfg.augmentation.members_max = parse_u()?,
            "augment.scale" => {
                let parts: Vec<&str> = value.split(':').collect();
                cfg.augmentation.scale = match parts.as_slice() {
                    ["fixed", p] => ScaleMode::Fixed(csvio::parse_f64(p, origin, line)?),
                    ["uniform", lo, hi] => ScaleMode::UniformRange(
                        csvio::parse_f64(lo, origin, line)?,
                        csvio::parse_f64(hi, origin, line)?,
                    ),
                    _ => {
                        return Err(Error::parse(
                            origin,
                            line,
                            format!("augment.scale wants fixed:<pop> or uniform:<lo>:<hi>, got {value:?}"),
                        ))
                    }
                };
            }
            "net.width" => cfg.network.width = parse_u()?,
            "net.blocks" => cfg.network.n_blocks = parse_u()?,
            "net.dropout_after" => {
                let mut after = Vec::new();
                for part in value.split(';').filter(|p| !p.trim().is_empty()) {
                    after.push(part.trim().parse().map_err(|_| {
                        Error::parse(origin, line, format!("net.dropout_after wants integers, got {part:?}"))
                    })?);
                }
                cfg.network.dropout_after = after;
            }
            "net.dropout_prob" => cfg.network.dropout_prob = parse_f()?,
            "net.batch_norm" => cfg.network.batch_norm = parse_b()?,
            "net.l1" => cfg.network.l1_lambda = parse_f()?,
            "net.batch_size" => cfg.network.batch_size = parse_u()?,
            "net.momentum" => cfg.network.momentum = parse_f()?,
            "net.lr_lo" => cfg.network.lr_lo = parse_f()?,
            "net.lr_hi" => cfg.network.lr_hi = parse_f()?,
            "net.lr_step" => cfg.network.lr_step = parse_u()?,
            "net.max_epochs" => cfg.network.max_epochs = parse_u()?,
            "net.patience" => cfg.network.patience = parse_u()?,
            "net.val_fraction" => cfg.network.val_fraction = parse_f()?,
            "solver.tolerance" => cfg.solver.tolerance = parse_f()?,
            "solver.max_iterations" => cfg.solver.max_iterations = parse_u()?,
            other => return Err(Error::parse(origin, line, format!("unknown key {other}"))),
        }
    }

    cfg.mode = match mode_name.as_deref() {
        None | Some("our-method") => RunMode::OurMethod,
        Some("conventional-baseline") => {
            let prior = prior_table.take().ok_or_else(|| {
                Error::Config("conventional-baseline needs prior_table".into())
            })?;
            RunMode::ConventionalBaseline { prior_table: prior }
        }
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown mode {other:?} (expected our-method or conventional-baseline)"
            )))
        }
    };
    if prior_table.is_some() {
        return Err(Error::Config("prior_table only makes sense with mode = conventional-baseline".into()));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_text(&text, base, path)
}

/// Writes the config in the same format `load_config` reads. Paths are
/// written as stored, so a config built with relative paths stays portable.
pub fn write_run_config(path: &Path, cfg: &PipelineConfig) -> Result<()> {
    let mut text = String::from("# run configuration\n");
    for (key, value) in cfg.entries() {
        text.push_str(&format!("{key} = {value}\n"));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-industry gross outputs as a two-column CSV (`industry,value`,
/// 1-based dense indices).
pub fn read_gross_outputs(path: &Path) -> Result<Vec<f64>> {
    let rows = csvio::read_rows(path)?;
    let mut entries: BTreeMap<usize, f64> = BTreeMap::new();
    for (line, fields) in rows.iter().skip(1) {
        csvio::expect_fields(fields, 2, path, *line)?;
        let idx: usize = fields[0]
            .parse()
            .map_err(|_| Error::parse(path, *line, format!("bad industry index {:?}", fields[0])))?;
        if idx == 0 {
            return Err(Error::parse(path, *line, "industry indices are 1-based"));
        }
        if entries.insert(idx - 1, csvio::parse_f64(&fields[1], path, *line)?).is_some() {
            return Err(Error::parse(path, *line, format!("duplicate industry {idx}")));
        }
    }
    if entries.is_empty() {
        return Err(Error::InvalidData(format!("{} lists no gross outputs", path.display())));
    }
    let n = entries.len();
    let mut out = vec![0.0; n];
    for (i, v) in entries {
        if i >= n {
            return Err(Error::InvalidData(format!("{} has index gaps", path.display())));
        }
        out[i] = v;
    }
    Ok(out)
}

pub fn write_gross_outputs(path: &Path, values: &[f64]) -> Result<()> {
    let mut rows = vec![vec!["industry".to_string(), "value".to_string()]];
    rows.extend(values.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), fmt_f64(*v)]));
    csvio::write_rows(path, &rows)
}

pub fn write_balance_report(path: &Path, report: &BalanceReport) -> Result<()> {
    let rows = [
        vec!["key".to_string(), "value".to_string()],
        vec!["iterations".into(), report.iterations.to_string()],
        vec!["max_residual".into(), fmt_f64(report.max_residual)],
        vec!["converged".into(), report.converged.to_string()],
        vec!["objective".into(), fmt_f64(report.objective)],
    ];
    csvio::write_rows(path, &rows)
}

/// Emits the full evaluation bundle for an estimate against the actual
/// table: the metric grid, both difference heatmaps as CSV and SVG, and the
/// error-rate histogram.
pub fn write_evaluation(dir: &Path, estimate: &IOTable, actual: &IOTable) -> Result<MetricsReport> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = compute_metrics(estimate, actual);
    write_metrics_csv(&dir.join("metrics.csv"), &report)?;
    let heat = diff_heatmaps(estimate, actual);
    write_heatmap_csv(&dir.join("heatmap_abs.csv"), actual.dims, &heat.abs)?;
    write_heatmap_csv(&dir.join("heatmap_rate.csv"), actual.dims, &heat.rate)?;
    let abs_svg = render_heatmap_svg(actual.dims, &heat.abs, true);
    std::fs::write(dir.join("heatmap_abs.svg"), abs_svg).map_err(|e| Error::io(dir.join("heatmap_abs.svg"), e))?;
    let rate_svg = render_heatmap_svg(actual.dims, &heat.rate, false);
    std::fs::write(dir.join("heatmap_rate.svg"), rate_svg).map_err(|e| Error::io(dir.join("heatmap_rate.svg"), e))?;
    let hist = error_rate_histogram(estimate, actual, 0.1);
    write_histogram_csv(&dir.join("histogram.csv"), &hist)?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct ItemSummary {
    pub address: ItemAddress,
    /// "constant" or "network".
    pub kind: &'static str,
    pub epochs_run: usize,
    pub best_val_loss: Option<f64>,
    pub prediction: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct RunManifest {
    pub config: Vec<(String, String)>,
    pub seed: u64,
    pub pipeline_ref: Option<String>,
    /// (stage name, "completed" or "failed: <error>") in execution order.
    pub stages: Vec<(String, String)>,
    /// One entry per item address, in canonical item order (estimation mode).
    pub items: Vec<ItemSummary>,
    pub balance: Option<BalanceReport>,
    pub metrics: Option<MetricsReport>,
}

pub const MANIFEST_FILE: &str = "run_manifest.csv";

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let mut rows = vec![vec!["section".to_string(), "name".to_string(), "field".to_string(), "value".to_string()]];
    let mut row = |a: &str, b: &str, c: &str, d: String| {
        rows.push(vec![a.to_string(), b.to_string(), c.to_string(), d]);
    };
    for (key, value) in &manifest.config {
        row("config", key, "", value.clone());
    }
    row("run", "seed", "", manifest.seed.to_string());
    if let Some(r) = &manifest.pipeline_ref {
        row("run", "pipeline_ref", "", r.clone());
    }
    for (stage, status) in &manifest.stages {
        row("run", "stage", stage, status.clone());
    }
    for item in &manifest.items {
        let name = item.address.to_string();
        row("item", &name, "kind", item.kind.to_string());
        row("item", &name, "epochs", item.epochs_run.to_string());
        if let Some(v) = item.best_val_loss {
            row("item", &name, "best_val_loss", fmt_f64(v));
        }
        if let Some(v) = item.prediction {
            row("item", &name, "prediction", fmt_f64(v));
        }
    }
    if let Some(b) = &manifest.balance {
        row("balance", "iterations", "", b.iterations.to_string());
        row("balance", "max_residual", "", fmt_f64(b.max_residual));
        row("balance", "converged", "", b.converged.to_string());
        row("balance", "objective", "", fmt_f64(b.objective));
    }
    if manifest.metrics.is_some() {
        row("evaluate", "metrics", "", "evaluation/metrics.csv".to_string());
    }
    csvio::write_rows(path, &rows)
}

struct Runner {
    manifest: RunManifest,
    out: PathBuf,
}

impl Runner {
    /// Runs one stage; on failure the partial manifest is persisted before
    /// the error propagates, so the variant (and exit code) is preserved.
    fn stage<T>(&mut self, name: &str, f: impl FnOnce(&mut RunManifest) -> Result<T>) -> Result<T> {
        log::info!("stage {name}");
        match f(&mut self.manifest) {
            Ok(v) => {
                self.manifest.stages.push((name.to_string(), "completed".to_string()));
                Ok(v)
            }
            Err(e) => {
                log::error!("stage {name} failed: {e}");
                self.manifest.stages.push((name.to_string(), format!("failed: {e}")));
                let _ = write_manifest(&self.out.join(MANIFEST_FILE), &self.manifest);
                Err(e)
            }
        }
    }
}

/// Builds a dense table from per-item ratio predictions. Gross outputs come
/// in absolute units (already renormalized); frame cells are ratio × total.
pub fn table_from_predictions(
    dims: IODimensions,
    ratios: &BTreeMap<ItemAddress, f64>,
    gross_outputs: &[f64],
    total: f64,
) -> Result<IOTable> {
    let k = dims.industries;
    let cell = |section: Section, r: usize, c: usize| -> Option<f64> {
        Some(ratios[&ItemAddress::cell(section, r, c)] * total)
    };
    let intermediate = CellGrid::from_fn(k, k, |i, j| cell(Section::Intermediate, i, j));
    let final_demand = CellGrid::from_fn(k, dims.fd_cols, |i, g| cell(Section::FinalDemand, i, g));
    let value_added = CellGrid::from_fn(dims.gva_rows, k, |h, j| cell(Section::ValueAdded, h, j));
    let outputs = gross_outputs.iter().map(|v| Some(*v)).collect();
    IOTable::new(dims, intermediate, final_demand, value_added, outputs)
}

/// Component scores and per-item ratio targets for a set of training
/// regions: one score row and one target entry per region, targets grouped
/// by item in the order given.
pub fn training_matrices(
    fitted: &FittedPipeline,
    regions: &[VirtualRegion],
    items: &[ItemAddress],
) -> Result<(Mat, Vec<Vec<f64>>)> {
    let mut score_rows = Vec::with_capacity(regions.len());
    for region in regions {
        score_rows.push(fitted.transform(region.into())?);
    }
    let scores = Mat::from_rows(&score_rows);
    let mut targets: Vec<Vec<f64>> = vec![Vec::with_capacity(regions.len()); items.len()];
    for region in regions {
        for (slot, item) in targets.iter_mut().zip(items) {
            slot.push(target_ratio(&region.io_table, *item)?);
        }
    }
    Ok((scores, targets))
}

/// Trains every item concurrently (bounded by `jobs`) and returns the models
/// in item order. Per-item seeds depend only on the template seed and the
/// address, so the schedule cannot change results.
pub fn train_all_items(
    items: &[ItemAddress],
    scores: &Mat,
    targets: &[Vec<f64>],
    template: &NetworkConfig,
    pipeline_ref: &str,
    jobs: usize,
) -> Result<Vec<TrainedItemModel>> {
    let slots: Vec<OnceLock<Result<TrainedItemModel>>> =
        (0..items.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.min(items.len()).max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                log::info!("training item {}", items[i]);
                let model = train_item(items[i], scores, &targets[i], template, pipeline_ref);
                let _ = slots[i].set(model);
            });
        }
    });
    let mut models = Vec::with_capacity(items.len());
    for (slot, item) in slots.into_iter().zip(items) {
        match slot.into_inner() {
            Some(Ok(m)) => models.push(m),
            Some(Err(e)) => return Err(e),
            None => return Err(Error::InvalidData(format!("item {item} was never trained"))),
        }
    }
    Ok(models)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let mut runner = Runner {
        manifest: RunManifest { config: cfg.entries(), seed: cfg.seed, ..RunManifest::default() },
        out: cfg.output_dir.clone(),
    };

    let (dataset, recipe, actual) = runner.stage("load", |_| {
        let dataset = load_region_dataset(&cfg.dataset_dir)?;
        let recipe = load_recipe(&cfg.recipe)?;
        let actual = match &cfg.actual_table {
            Some(path) => Some(load_io_table(path, dataset.dims)?),
            None => None,
        };
        Ok((dataset, recipe, actual))
    })?;
    let dims = dataset.dims;
    let use_phi = cfg.use_phi.unwrap_or(dims.phi_fd.is_some());

    let balanced = match &cfg.mode {
        RunMode::OurMethod => {
            run_estimation(cfg, &mut runner, &dataset, &recipe, use_phi)?
        }
        RunMode::ConventionalBaseline { prior_table } => {
            let actual_ref = actual.as_ref().expect("validate() requires actual_table");
            runner.stage("balance", |manifest| {
                let prior = load_io_table(prior_table, dims)?;
                let outputs: Vec<f64> =
                    actual_ref.gross_outputs.iter().map(|v| v.unwrap_or(0.0)).collect();
                let (table, report) =
                    balance_with_report(&prior, &outputs, actual_ref.total, use_phi, &cfg.solver)?;
                write_io_table(&cfg.output_dir.join("balanced_table.csv"), &table)?;
                write_balance_report(&cfg.output_dir.join("balance_report.csv"), &report)?;
                manifest.balance = Some(report);
                Ok(table)
            })?
        }
    };

    if let Some(actual) = &actual {
        runner.stage("evaluate", |manifest| {
            let report = write_evaluation(&cfg.output_dir.join("evaluation"), &balanced, actual)?;
            manifest.metrics = Some(report);
            Ok(())
        })?;
    }

    write_manifest(&cfg.output_dir.join(MANIFEST_FILE), &runner.manifest)?;
    Ok(runner.manifest)
}

/// The learning path: augment, fit the feature pipeline, train one model per
/// item, predict the target region, renormalize gross outputs and balance.
fn run_estimation(
    cfg: &PipelineConfig,
    runner: &mut Runner,
    dataset: &crate::table::RegionDataset,
    recipe: &FeatureRecipe,
    use_phi: bool,
) -> Result<IOTable> {
    let dims = dataset.dims;
    let total = cfg.total_output.expect("validate() requires total_output");

    let train_regions: Vec<VirtualRegion> = runner.stage("augment", |_| {
        let set = generate_augmented_set(dataset, &cfg.augmentation_config())?;
        write_augmented_set(&cfg.output_dir.join("augmented"), &set)?;
        let mut train = Vec::new();
        for sample in set.samples {
            if sample.train {
                train.push(sample.region);
            }
        }
        if train.is_empty() {
            return Err(Error::InvalidData("augmentation produced an empty training split".into()));
        }
        Ok(train)
    })?;

    let fitted = runner.stage("fit-pipeline", |manifest| {
        let fitted = FittedPipeline::fit(train_regions.iter(), recipe, cfg.pca_components)?;
        save_pipeline(&cfg.output_dir, &fitted)?;
        manifest.pipeline_ref = Some(fitted.id());
        Ok(fitted)
    })?;
    let pipeline_ref = fitted.id();

    let items = all_items(dims);
    let models = runner.stage("train", |manifest| {
        let (scores, targets) = training_matrices(&fitted, &train_regions, &items)?;
        let template = cfg.network_template();
        let models = train_all_items(&items, &scores, &targets, &template, &pipeline_ref, cfg.jobs)?;
        let model_dir = cfg.model_dir();
        for model in &models {
            save_item_model(&model_dir, model)?;
        }
        manifest.items = models
            .iter()
            .map(|m| ItemSummary {
                address: m.address,
                kind: if m.network.is_some() { "network" } else { "constant" },
                epochs_run: m.history.len(),
                best_val_loss: m.best_val_loss,
                prediction: None,
            })
            .collect();
        Ok(models)
    })?;

    let (predicted, y_star) = runner.stage("predict", |manifest| {
        let rows = read_long_rows(&cfg.target_variables)?;
        let (pop15, variables) = collect_region_variables(&rows, &cfg.target_variables)?;
        let scores = fitted.transform(RegionView { variables: &variables, pop15 })?;
        let mut ratios = BTreeMap::new();
        for (model, summary) in models.iter().zip(&mut manifest.items) {
            let value = model.predict(&scores, &pipeline_ref)?;
            summary.prediction = Some(value);
            ratios.insert(model.address, value);
        }
        let y_ratios: Vec<f64> =
            (0..dims.industries).map(|i| ratios[&ItemAddress::gross_output(i)]).collect();
        let y_star = renormalize_gross_outputs(&y_ratios, total)?;
        let predicted = table_from_predictions(dims, &ratios, &y_star, total)?;
        write_io_table(&cfg.output_dir.join("predicted_table.csv"), &predicted)?;
        Ok((predicted, y_star))
    })?;

    runner.stage("balance", |manifest| {
        let (table, report) = balance_with_report(&predicted, &y_star, total, use_phi, &cfg.solver)?;
        write_io_table(&cfg.output_dir.join("balanced_table.csv"), &table)?;
        write_balance_report(&cfg.output_dir.join("balance_report.csv"), &report)?;
        manifest.balance = Some(report);
        Ok(table)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn write(path: &Path, text: &str) {
        std::fs::write(path, text).unwrap();
    }

    #[test]
    fn config_round_trips_through_the_flat_format() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = PipelineConfig::template();
        cfg.dataset_dir = "dataset".into();
        cfg.recipe = "recipe.csv".into();
        cfg.target_variables = "target_variables.csv".into();
        cfg.actual_table = Some("actual_table.csv".into());
        cfg.output_dir = "out".into();
        cfg.total_output = Some(123.5);
        cfg.use_phi = Some(true);
        cfg.seed = 7;
        cfg.pca_components = 4;
        cfg.augmentation.n_samples = 500;
        cfg.augmentation.scale = ScaleMode::UniformRange(1e5, 2e6);
        cfg.network.width = 64;
        cfg.network.dropout_after = vec![2, 3];
        cfg.solver.max_iterations = 77;

        let path = dir.path().join("run.cfg");
        write_run_config(&path, &cfg).unwrap();
        let loaded = load_config(&path).unwrap();

        assert_eq!(loaded.mode, RunMode::OurMethod);
        assert_eq!(loaded.dataset_dir, dir.path().join("dataset"));
        assert_eq!(loaded.actual_table, Some(dir.path().join("actual_table.csv")));
        assert_eq!(loaded.total_output, Some(123.5));
        assert_eq!(loaded.use_phi, Some(true));
        assert_eq!(loaded.seed, 7);
        assert_eq!(loaded.pca_components, 4);
        assert_eq!(loaded.augmentation.n_samples, 500);
        assert_eq!(loaded.augmentation.scale, ScaleMode::UniformRange(1e5, 2e6));
        assert_eq!(loaded.network.width, 64);
        assert_eq!(loaded.network.dropout_after, vec![2, 3]);
        assert_eq!(loaded.solver.max_iterations, 77);
    }

    #[test]
    fn comments_blanks_and_unknown_keys() {
        let base = Path::new("/tmp");
        let origin = Path::new("test.cfg");
        let cfg = parse_config_text(
            "# header\n\nseed = 3 # trailing comment\n net.width=9\n",
            base,
            origin,
        )
        .unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.network.width, 9);

        let err = parse_config_text("nonsense = 1\n", base, origin).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
        let err = parse_config_text("seed = 1\nseed = 2\n", base, origin).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        let err = parse_config_text("just words\n", base, origin).unwrap_err();
        assert!(err.to_string().contains("key = value"), "{err}");
    }

    #[test]
    fn baseline_mode_needs_a_prior_and_rejects_strays() {
        let base = Path::new("/tmp");
        let origin = Path::new("test.cfg");
        let err = parse_config_text("mode = conventional-baseline\n", base, origin).unwrap_err();
        assert!(err.to_string().contains("prior_table"), "{err}");
        let err = parse_config_text("prior_table = t.csv\n", base, origin).unwrap_err();
        assert!(err.to_string().contains("conventional-baseline"), "{err}");
        let cfg =
            parse_config_text("mode = conventional-baseline\nprior_table = t.csv\n", base, origin)
                .unwrap();
        assert_eq!(cfg.mode, RunMode::ConventionalBaseline { prior_table: "/tmp/t.csv".into() });
    }

    #[test]
    fn gross_outputs_round_trip_and_reject_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("y.csv");
        write_gross_outputs(&path, &[1.5, 0.0, 2.25]).unwrap();
        assert_eq!(read_gross_outputs(&path).unwrap(), vec![1.5, 0.0, 2.25]);

        write(&path, "industry,value\n1,1.0\n3,2.0\n");
        assert!(read_gross_outputs(&path).is_err());
        write(&path, "industry,value\n0,1.0\n");
        assert!(read_gross_outputs(&path).is_err());
    }

    /// Baseline fixed point: balancing the actual table against its own
    /// gross outputs leaves it unchanged, so every metric is zero.
    #[test]
    fn baseline_on_the_actual_table_scores_zero_everywhere() {
        let dir = tempfile::tempdir().unwrap();
        let econ = synth::generate(&synth::SynthConfig {
            industries: 3,
            gva_rows: 2,
            fd_cols: 2,
            n_regions: 6,
            seed: 5,
            ..synth::SynthConfig::default()
        })
        .unwrap();
        synth::write_economy(dir.path(), &econ).unwrap();

        let mut cfg = PipelineConfig::template();
        cfg.mode = RunMode::ConventionalBaseline { prior_table: dir.path().join("actual_table.csv") };
        cfg.dataset_dir = dir.path().join("dataset");
        cfg.recipe = dir.path().join("recipe.csv");
        cfg.target_variables = dir.path().join("target_variables.csv");
        cfg.actual_table = Some(dir.path().join("actual_table.csv"));
        cfg.output_dir = dir.path().join("out");

        let manifest = run_pipeline(&cfg).unwrap();
        let report = manifest.metrics.as_ref().unwrap();
        let overall = report.get(crate::metrics::Scope::All);
        assert!(overall.stpe.unwrap() < 1e-10, "stpe {:?}", overall.stpe);
        assert!(overall.mad.unwrap() < 1e-8 * econ.target_total);
        assert!(overall.rmse.unwrap() < 1e-8 * econ.target_total);
        assert!(manifest.balance.as_ref().unwrap().converged);
        assert!(dir.path().join("out/balanced_table.csv").exists());
        assert!(dir.path().join("out/evaluation/metrics.csv").exists());
        assert!(dir.path().join("out/run_manifest.csv").exists());
    }

    /// Failures stop the run but still leave a manifest describing how far
    /// it got and which stage broke.
    #[test]
    fn failed_stage_persists_a_partial_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let econ = synth::generate(&synth::SynthConfig {
            industries: 3,
            gva_rows: 2,
            fd_cols: 2,
            n_regions: 6,
            seed: 5,
            ..synth::SynthConfig::default()
        })
        .unwrap();
        synth::write_economy(dir.path(), &econ).unwrap();

        let mut cfg = PipelineConfig::template();
        cfg.mode = RunMode::ConventionalBaseline { prior_table: dir.path().join("missing.csv") };
        cfg.dataset_dir = dir.path().join("dataset");
        cfg.recipe = dir.path().join("recipe.csv");
        cfg.target_variables = dir.path().join("target_variables.csv");
        cfg.actual_table = Some(dir.path().join("actual_table.csv"));
        cfg.output_dir = dir.path().join("out");

        let err = run_pipeline(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let manifest_text = std::fs::read_to_string(dir.path().join("out/run_manifest.csv")).unwrap();
        assert!(manifest_text.contains("load,completed"), "{manifest_text}");
        assert!(manifest_text.contains("balance,failed"), "{manifest_text}");
    }

    /// Small end-to-end estimation run; checks artifacts, determinism and
    /// that the balanced table is consistent.
    #[test]
    fn estimation_mode_runs_end_to_end_and_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let econ = synth::generate(&synth::SynthConfig {
            industries: 3,
            gva_rows: 2,
            fd_cols: 2,
            n_regions: 8,
            noise: 0.02,
            seed: 9,
            ..synth::SynthConfig::default()
        })
        .unwrap();
        synth::write_economy(dir.path(), &econ).unwrap();

        let mut cfg = PipelineConfig::template();
        cfg.dataset_dir = dir.path().join("dataset");
        cfg.recipe = dir.path().join("recipe.csv");
        cfg.target_variables = dir.path().join("target_variables.csv");
        cfg.actual_table = Some(dir.path().join("actual_table.csv"));
        cfg.output_dir = dir.path().join("out");
        cfg.total_output = Some(econ.target_total);
        cfg.seed = 21;
        cfg.jobs = 2;
        cfg.pca_components = 5;
        cfg.augmentation.n_samples = 60;
        cfg.augmentation.scale = ScaleMode::Fixed(1e6);
        cfg.network.width = 16;
        cfg.network.n_blocks = 1;
        cfg.network.batch_size = 8;
        cfg.network.max_epochs = 4;
        cfg.network.patience = 2;

        let manifest = run_pipeline(&cfg).unwrap();
        let n_items = all_items(econ.shared.dims).len();
        assert_eq!(manifest.items.len(), n_items);
        assert!(manifest.items.iter().all(|i| i.prediction.is_some()));
        assert!(manifest.balance.as_ref().unwrap().converged);
        assert!(manifest.metrics.is_some());
        for f in ["predicted_table.csv", "balanced_table.csv", "balance_report.csv",
                  "augmented/manifest.csv", "pipeline/pca_meta.csv", "evaluation/metrics.csv"] {
            assert!(dir.path().join("out").join(f).exists(), "{f} missing");
        }
        let model_dir = dir.path().join("out/models");
        assert!(crate::store::model_exists(&model_dir, ItemAddress::gross_output(0)));

        let balanced =
            load_io_table(&cfg.output_dir.join("balanced_table.csv"), econ.shared.dims).unwrap();
        let violations = crate::table::validate_io_table(&balanced, 1e-6 * econ.target_total);
        assert!(violations.is_empty(), "{violations:?}");

        // Same config and seed, different jobs count: identical outputs.
        let mut cfg2 = cfg.clone();
        cfg2.output_dir = dir.path().join("out2");
        cfg2.model_dir = Some(dir.path().join("out2/models"));
        cfg2.jobs = 1;
        run_pipeline(&cfg2).unwrap();
        let a = std::fs::read_to_string(dir.path().join("out/balanced_table.csv")).unwrap();
        let b = std::fs::read_to_string(dir.path().join("out2/balanced_table.csv")).unwrap();
        assert_eq!(a, b);
        let a = std::fs::read_to_string(dir.path().join("out/run_manifest.csv")).unwrap();
        let b = std::fs::read_to_string(dir.path().join("out2/run_manifest.csv")).unwrap();
        // Manifests may differ only in the echo of the deliberately varied
        // keys (paths, jobs); everything computed must match.
        let scrub = |s: &str| -> String {
            s.replace("out2", "out")
                .lines()
                .filter(|l| !l.starts_with("config,jobs") && !l.starts_with("config,model_dir"))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(scrub(&a), scrub(&b));
    }
}
