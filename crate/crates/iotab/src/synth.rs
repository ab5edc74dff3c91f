//! Seeded synthetic-economy generator.
//!
//! Produces a family of regions that share one ratio structure: a single
//! set of table shares (cell value divided by the table total) applies to
//! every region, each region scales it by its own total output, and
//! per-cell multiplicative noise hides the structure to a configurable
//! degree. The target region is emitted clean, so its table is exact ground
//! truth for end-to-end recovery tests: a method that denoises the regional
//! family well will reproduce the target table closely.
//!
//! The shared structure is balanced by construction:
//!
//! * industry shares `y` sum to 1;
//! * the intermediate block takes a fraction `c` of each industry's row
//!   (`A_ij = c * y_i * G_ij` with row-stochastic `G`), final demand the
//!   rest, spread over columns by shares `delta` whose last entry is
//!   negative when there are at least two columns (net exports);
//! * value added absorbs each column's remainder, spread over rows by
//!   shares `nu`.
//!
//! When the linked row/column pair is enabled, `nu[phi_gva]` is forced equal
//! to `delta[phi_fd]`, which makes the two linked totals identical.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::features::{FeatureDef, FeatureRecipe, POP15_PSEUDO_VARIABLE};
use crate::mat::Mat;
use crate::rng::stream_rng;
use crate::table::{
    region_variable_rows, write_io_table, write_long_rows, write_region_dataset, CellGrid,
    IODimensions, IOTable, RegionDataset, RegionRecord, VariableSchema, VariableValue,
};

pub const EMPLOYMENT_VAR: &str = "Employment";
pub const INCOME_VAR: &str = "Income";
pub const OUTPUT_BY_INDUSTRY_VAR: &str = "OutputByIndustry";

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub industries: usize,
    pub gva_rows: usize,
    pub fd_cols: usize,
    /// Link the first final-demand column and first value-added row.
    pub use_phi: bool,
    pub n_regions: usize,
    /// Half-width of the per-cell multiplicative noise, e.g. 0.05 draws
    /// factors uniformly from [0.95, 1.05].
    pub noise: f64,
    /// Output per head; region totals are this times population.
    pub per_capita_output: f64,
    pub base_population: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            industries: 4,
            gva_rows: 2,
            fd_cols: 3,
            use_phi: true,
            n_regions: 45,
            noise: 0.05,
            per_capita_output: 2.4,
            base_population: 1.0e6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.industries < 2 || self.gva_rows == 0 || self.fd_cols == 0 {
            return bad(format!(
                "table shape {}x{}x{} too small to generate",
                self.industries, self.gva_rows, self.fd_cols
            ));
        }
        if self.use_phi && (self.gva_rows < 2 || self.fd_cols < 2) {
            return bad("the linked pair needs at least 2 value-added rows and 2 final-demand columns".into());
        }
        if self.n_regions < 2 {
            return bad(format!("need at least 2 regions, got {}", self.n_regions));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return bad(format!("noise {} must lie in [0, 0.5)", self.noise));
        }
        if !(self.per_capita_output > 0.0 && self.base_population > 0.0) {
            return bad("per-capita output and base population must be positive".into());
        }
        Ok(())
    }

    fn dims(&self) -> IODimensions {
        let d = IODimensions::new(self.industries, self.gva_rows, self.fd_cols);
        if self.use_phi {
            d.with_phi(0, 0)
        } else {
            d
        }
    }
}

/// The generator's ground truth: every block as a share of the table total.
#[derive(Clone, Debug, PartialEq)]
pub struct SharedStructure {
    pub dims: IODimensions,
    pub y: Vec<f64>,
    pub intermediate: Mat,
    pub final_demand: Mat,
    pub value_added: Mat,
}

impl SharedStructure {
    /// Table with these exact shares at the given total.
    pub fn table_at(&self, total: f64) -> IOTable {
        let k = self.dims.industries;
        let a = CellGrid::from_fn(k, k, |i, j| Some(total * self.intermediate[(i, j)]));
        let d = CellGrid::from_fn(k, self.dims.fd_cols, |i, g| Some(total * self.final_demand[(i, g)]));
        let v = CellGrid::from_fn(self.dims.gva_rows, k, |h, j| Some(total * self.value_added[(h, j)]));
        let gross = self.y.iter().map(|s| Some(total * s)).collect();
        IOTable::new(self.dims, a, d, v, gross).expect("structure shapes are consistent")
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticEconomy {
    pub dataset: RegionDataset,
    pub shared: SharedStructure,
    /// Clean target region: population, variables, total and true table.
    pub target_pop15: f64,
    pub target_variables: BTreeMap<String, VariableValue>,
    pub target_total: f64,
    pub actual_table: IOTable,
    pub recipe: FeatureRecipe,
}

const STRUCTURE_STREAM: u64 = 0;
const POPULATION_STREAM: u64 = 1;
const REGION_STREAM_BASE: u64 = 16;

fn draw_structure(cfg: &SynthConfig) -> SharedStructure {
    let dims = cfg.dims();
    let (k, l, m) = (cfg.industries, cfg.gva_rows, cfg.fd_cols);
    let mut rng = stream_rng(cfg.seed, STRUCTURE_STREAM);

    let mut y: Vec<f64> = (0..k).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let ysum: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= ysum);

    // Intermediate fraction of each industry's row; kept at or below 1/2 so
    // value-added remainders stay positive for any mild texture.
    let c = 0.3 + 0.2 * rng.gen::<f64>();
    let mut g = Mat::from_fn(k, k, |_, j| y[j] * (rng.gen_range(-0.3..0.3) as f64).exp());
    for i in 0..k {
        let row_sum: f64 = g.row(i).iter().sum();
        g.row_mut(i).iter_mut().for_each(|v| *v /= row_sum);
    }
    let intermediate = Mat::from_fn(k, k, |i, j| c * y[i] * g[(i, j)]);

    // Final-demand column shares; the last column is net exports (negative)
    // when there is more than one column.
    let mut delta: Vec<f64> = (0..m).map(|_| 0.4 + rng.gen::<f64>()).collect();
    if m >= 2 {
        let neg = 0.1 + 0.1 * rng.gen::<f64>();
        let pos_sum: f64 = delta[..m - 1].iter().sum();
        for d in &mut delta[..m - 1] {
            *d *= (1.0 + neg) / pos_sum;
        }
        delta[m - 1] = -neg;
    } else {
        delta[0] = 1.0;
    }
    let final_demand = Mat::from_fn(k, m, |i, gc| (1.0 - c) * y[i] * delta[gc]);

    // Value-added row shares; the linked row mirrors the linked column so
    // the two linked totals agree exactly.
    let mut nu: Vec<f64> = (0..l).map(|_| 0.4 + rng.gen::<f64>()).collect();
    if cfg.use_phi {
        let rest: f64 = 1.0 - delta[0];
        let tail_sum: f64 = nu[1..].iter().sum();
        for v in &mut nu[1..] {
            *v *= rest / tail_sum;
        }
        nu[0] = delta[0];
    } else {
        let total: f64 = nu.iter().sum();
        nu.iter_mut().for_each(|v| *v /= total);
    }
    let col_remainder: Vec<f64> = (0..k)
        .map(|j| y[j] - (0..k).map(|i| intermediate[(i, j)]).sum::<f64>())
        .collect();
    debug_assert!(col_remainder.iter().all(|r| *r > 0.0), "texture too strong");
    let value_added = Mat::from_fn(l, k, |h, j| nu[h] * col_remainder[j]);

    SharedStructure { dims, y, intermediate, final_demand, value_added }
}

fn noisy(base: f64, noise: f64, rng: &mut impl Rng) -> f64 {
    base * (1.0 + noise * rng.gen_range(-1.0..1.0))
}

fn region_variables(
    cfg: &SynthConfig,
    shared: &SharedStructure,
    pop15: f64,
    total: f64,
    noise: f64,
    rng: &mut impl Rng,
) -> BTreeMap<String, VariableValue> {
    let mut vars = BTreeMap::new();
    vars.insert(EMPLOYMENT_VAR.to_string(), VariableValue::Scalar(noisy(0.55 * pop15, noise, rng)));
    vars.insert(INCOME_VAR.to_string(), VariableValue::Scalar(noisy(0.42 * total, noise, rng)));
    let outputs: Vec<f64> =
        (0..cfg.industries).map(|i| noisy(shared.y[i] * total, noise, rng)).collect();
    vars.insert(OUTPUT_BY_INDUSTRY_VAR.to_string(), VariableValue::Vector(outputs));
    vars
}

fn noisy_table(shared: &SharedStructure, total: f64, noise: f64, rng: &mut impl Rng) -> IOTable {
    let clean = shared.table_at(total);
    let dims = shared.dims;
    let a = CellGrid::from_fn(dims.industries, dims.industries, |i, j| {
        clean.intermediate.get(i, j).map(|v| noisy(v, noise, rng))
    });
    let d = CellGrid::from_fn(dims.industries, dims.fd_cols, |i, g| {
        clean.final_demand.get(i, g).map(|v| noisy(v, noise, rng))
    });
    let v = CellGrid::from_fn(dims.gva_rows, dims.industries, |h, j| {
        clean.value_added.get(h, j).map(|v| noisy(v, noise, rng))
    });
    let gross = (0..dims.industries)
        .map(|i| clean.gross_outputs[i].map(|v| noisy(v, noise, rng)))
        .collect();
    IOTable::new(dims, a, d, v, gross).expect("shapes preserved")
}

/// The feature set the bundled runs use: income per worker, workforce
/// participation, the industry output mix, and raw population.
pub fn default_recipe(industries: usize) -> FeatureRecipe {
    let mut entries = vec![
        FeatureDef::Ratio {
            num: INCOME_VAR.into(),
            num_idx: None,
            den: EMPLOYMENT_VAR.into(),
            den_idx: None,
        },
        FeatureDef::Ratio {
            num: EMPLOYMENT_VAR.into(),
            num_idx: None,
            den: POP15_PSEUDO_VARIABLE.into(),
            den_idx: None,
        },
    ];
    entries.extend(
        (0..industries).map(|i| FeatureDef::Share { var: OUTPUT_BY_INDUSTRY_VAR.into(), idx: i }),
    );
    entries.push(FeatureDef::Level { var: POP15_PSEUDO_VARIABLE.into(), idx: None });
    FeatureRecipe { entries }
}

pub fn generate(cfg: &SynthConfig) -> Result<SyntheticEconomy> {
    cfg.validate()?;
    let shared = draw_structure(cfg);

    let mut pop_rng = stream_rng(cfg.seed, POPULATION_STREAM);
    let populations: Vec<f64> = (0..cfg.n_regions)
        .map(|_| cfg.base_population * pop_rng.gen_range(-0.7..0.7f64).exp())
        .collect();

    let width = cfg.n_regions.to_string().len().max(2);
    let mut regions = Vec::with_capacity(cfg.n_regions);
    for (r, &pop15) in populations.iter().enumerate() {
        let mut rng = stream_rng(cfg.seed, REGION_STREAM_BASE + r as u64);
        let total = noisy(cfg.per_capita_output * pop15, cfg.noise, &mut rng);
        let variables = region_variables(cfg, &shared, pop15, total, cfg.noise, &mut rng);
        let io_table = noisy_table(&shared, total, cfg.noise, &mut rng);
        regions.push(RegionRecord {
            region_id: format!("r{:0width$}", r + 1),
            name: format!("Region {:0width$}", r + 1),
            parent_id: None,
            pop15,
            variables,
            io_table: Some(io_table),
        });
    }

    let schema = vec![
        VariableSchema { name: EMPLOYMENT_VAR.into(), len: None },
        VariableSchema { name: INCOME_VAR.into(), len: None },
        VariableSchema { name: OUTPUT_BY_INDUSTRY_VAR.into(), len: Some(cfg.industries) },
    ];
    let dataset = RegionDataset { dims: shared.dims, regions, schema };
    dataset.validate()?;

    // The target region is noise-free: its table is the exact structure.
    let target_pop15 = cfg.base_population;
    let target_total = cfg.per_capita_output * target_pop15;
    let mut no_noise = stream_rng(cfg.seed, REGION_STREAM_BASE - 1);
    let target_variables =
        region_variables(cfg, &shared, target_pop15, target_total, 0.0, &mut no_noise);
    let actual_table = shared.table_at(target_total);

    Ok(SyntheticEconomy {
        dataset,
        recipe: default_recipe(cfg.industries),
        shared,
        target_pop15,
        target_variables,
        target_total,
        actual_table,
    })
}

/// Writes the economy under `dir`: the region dataset, the clean target's
/// variables and true table, and the feature recipe.
pub fn write_economy(dir: &Path, econ: &SyntheticEconomy) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_region_dataset(&dir.join("dataset"), &econ.dataset)?;
    let rows = region_variable_rows("target", econ.target_pop15, &econ.target_variables);
    write_long_rows(&dir.join("target_variables.csv"), &rows)?;
    write_io_table(&dir.join("actual_table.csv"), &econ.actual_table)?;
    crate::features::write_recipe(&dir.join("recipe.csv"), &econ.recipe)?;
    Ok(())
}
