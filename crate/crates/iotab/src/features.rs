//! Feature construction and the fitted input pipeline.
//!
//! A recipe turns a region's variables into a flat numeric row: raw levels,
//! within-vector shares, and ratios between two entries. Rows are then
//! standardized and projected onto principal components. The standardizer
//! and the component basis are fitted once on the training samples and
//! frozen; prediction-time inputs only ever pass through the stored
//! statistics.
//!
//! Degenerate data is mapped, not rejected: a zero denominator or an absent
//! variable yields feature value 0 with a logged warning, and a constant
//! column standardizes to 0.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::csvio;
use crate::error::{Error, Result};
use crate::mat::compensated_sum;
use crate::rng::derive_seed;
use crate::table::{RegionRecord, VariableValue};

/// Lightweight view over anything that has variables and a population.
#[derive(Clone, Copy)]
pub struct RegionView<'a> {
    pub variables: &'a BTreeMap<String, VariableValue>,
    pub pop15: f64,
}

impl<'a> From<&'a RegionRecord> for RegionView<'a> {
    fn from(r: &'a RegionRecord) -> Self {
        RegionView { variables: &r.variables, pop15: r.pop15 }
    }
}

impl<'a> From<&'a crate::augment::VirtualRegion> for RegionView<'a> {
    fn from(r: &'a crate::augment::VirtualRegion) -> Self {
        RegionView { variables: &r.variables, pop15: r.pop15 }
    }
}

/// Name under which the population is addressable from recipes, e.g. for
/// labor-force participation ratios.
pub const POP15_PSEUDO_VARIABLE: &str = "Pop15";

/// One feature. Vector indices are 0-based here and 1-based in recipe files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureDef {
    /// The value itself: a scalar variable or one entry of a vector.
    Level { var: String, idx: Option<usize> },
    /// One entry divided by the sum of its vector.
    Share { var: String, idx: usize },
    /// Quotient of two levels.
    Ratio { num: String, num_idx: Option<usize>, den: String, den_idx: Option<usize> },
}

#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct FeatureRecipe {
    pub entries: Vec<FeatureDef>,
}

impl FeatureRecipe {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn lookup(view: RegionView<'_>, var: &str) -> Option<VariableValue> {
    if let Some(v) = view.variables.get(var) {
        return Some(v.clone());
    }
    (var == POP15_PSEUDO_VARIABLE).then(|| VariableValue::Scalar(view.pop15))
}

fn level(view: RegionView<'_>, var: &str, idx: Option<usize>) -> Result<f64> {
    let Some(value) = lookup(view, var) else {
        log::warn!("variable {var:?} is absent; feature value set to 0");
        return Ok(0.0);
    };
    match (value, idx) {
        (VariableValue::Scalar(v), None) => Ok(v),
        (VariableValue::Vector(vs), Some(i)) => vs.get(i).copied().ok_or_else(|| {
            Error::InvalidData(format!("index {} out of range for {var:?} (len {})", i + 1, vs.len()))
        }),
        (VariableValue::Scalar(_), Some(_)) => {
            Err(Error::InvalidData(format!("variable {var:?} is scalar but the recipe indexes it")))
        }
        (VariableValue::Vector(_), None) => {
            Err(Error::InvalidData(format!("variable {var:?} is a vector; the recipe must index it")))
        }
    }
}

/// Evaluates the recipe for one region.
pub fn build_features(view: RegionView<'_>, recipe: &FeatureRecipe) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(recipe.entries.len());
    for def in &recipe.entries {
        let v = match def {
            FeatureDef::Level { var, idx } => level(view, var, *idx)?,
            FeatureDef::Share { var, idx } => {
                let Some(value) = lookup(view, var) else {
                    log::warn!("variable {var:?} is absent; share set to 0");
                    out.push(0.0);
                    continue;
                };
                let VariableValue::Vector(vs) = value else {
                    return Err(Error::InvalidData(format!("share needs a vector, {var:?} is scalar")));
                };
                let x = *vs.get(*idx).ok_or_else(|| {
                    Error::InvalidData(format!("index {} out of range for {var:?}", idx + 1))
                })?;
                let total = compensated_sum(vs.iter().copied());
                if total == 0.0 {
                    log::warn!("zero total for share of {var:?}; feature value set to 0");
                    0.0
                } else {
                    x / total
                }
            }
            FeatureDef::Ratio { num, num_idx, den, den_idx } => {
                let numerator = level(view, num, *num_idx)?;
                let denominator = level(view, den, *den_idx)?;
                if denominator == 0.0 {
                    log::warn!("zero denominator {den:?} in ratio; feature value set to 0");
                    0.0
                } else {
                    numerator / denominator
                }
            }
        };
        if !v.is_finite() {
            return Err(Error::InvalidData(format!("feature {def:?} evaluated to {v}")));
        }
        out.push(v);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Standardizer
// ---------------------------------------------------------------------------

/// Column-wise standardization with population (biased) standard deviations.
/// Constant columns keep std 0 and transform to exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidData("standardizer needs at least two rows".into()));
        }
        let width = rows[0].len();
        if width == 0 || rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidData("feature rows must be non-empty and rectangular".into()));
        }
        let n = rows.len() as f64;
        let mut means = vec![0.0; width];
        for j in 0..width {
            means[j] = compensated_sum(rows.iter().map(|r| r[j])) / n;
        }
        let mut stds = vec![0.0; width];
        for j in 0..width {
            let var = compensated_sum(rows.iter().map(|r| {
                let d = r[j] - means[j];
                d * d
            })) / n;
            stds[j] = var.sqrt();
        }
        Ok(Standardizer { means, stds })
    }

    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        assert_eq!(row.len(), self.means.len(), "row width must match the fit");
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| if *s == 0.0 { 0.0 } else { (x - m) / s })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Principal components
// ---------------------------------------------------------------------------

/// Principal-component basis of standardized feature rows. `loadings` holds
/// one component per row; components are orthonormal eigenvectors of the
/// covariance matrix, ordered by decreasing explained variance, with each
/// component's largest-magnitude entry forced nonnegative so the basis is
/// reproducible.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    pub loadings: Vec<Vec<f64>>,
    pub explained_variance: Vec<f64>,
}

impl PcaModel {
    pub fn n_features(&self) -> usize {
        self.loadings.first().map_or(0, Vec::len)
    }

    pub fn n_components(&self) -> usize {
        self.loadings.len()
    }

    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InvalidData("principal components need at least two rows".into()));
        }
        let n = rows.len();
        let f = rows[0].len();
        if f == 0 || rows.iter().any(|r| r.len() != f) {
            return Err(Error::InvalidData("feature rows must be non-empty and rectangular".into()));
        }
        // Recenter defensively; inputs are standardized but rounding leaves
        // tiny means that would bias the covariance.
        let mut means = vec![0.0; f];
        for j in 0..f {
            means[j] = compensated_sum(rows.iter().map(|r| r[j])) / n as f64;
        }
        let x = DMatrix::from_fn(n, f, |i, j| rows[i][j] - means[j]);
        let cov = (x.transpose() * &x) / n as f64;
        let eig = cov.symmetric_eigen();

        let mut order: Vec<usize> = (0..f).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

        let mut loadings = Vec::with_capacity(f);
        let mut explained = Vec::with_capacity(f);
        for &c in &order {
            let mut v: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
            orient(&mut v);
            loadings.push(v);
            // Sample noise can push a zero eigenvalue barely negative.
            explained.push(eig.eigenvalues[c].max(0.0));
        }
        Ok(PcaModel { loadings, explained_variance: explained })
    }

    /// Projects a standardized row onto the first `n` components.
    pub fn project(&self, row: &[f64], n: usize) -> Vec<f64> {
        assert_eq!(row.len(), self.n_features(), "row width must match the fit");
        assert!(n <= self.n_components(), "asked for {n} of {} components", self.n_components());
        self.loadings[..n]
            .iter()
            .map(|l| l.iter().zip(row).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Flips a component so its largest-magnitude entry (first such entry on
/// ties) is nonnegative.
fn orient(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

// ---------------------------------------------------------------------------
// Fitted pipeline
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
pub struct FittedPipeline {
    pub recipe: FeatureRecipe,
    pub standardizer: Standardizer,
    pub pca: PcaModel,
    /// Components kept when projecting.
    pub n_components: usize,
}

impl FittedPipeline {
    /// Fits recipe evaluation, standardization and the component basis on
    /// training regions. `n_components` is clamped to what the data offers.
    pub fn fit<'a, I, V>(regions: I, recipe: &FeatureRecipe, n_components: usize) -> Result<Self>
    where
        I: IntoIterator<Item = V>,
        V: Into<RegionView<'a>>,
    {
        if recipe.is_empty() {
            return Err(Error::InvalidData("feature recipe is empty".into()));
        }
        if n_components == 0 {
            return Err(Error::InvalidData("need at least one component".into()));
        }
        let mut rows = Vec::new();
        for region in regions {
            rows.push(build_features(region.into(), recipe)?);
        }
        let standardizer = Standardizer::fit(&rows)?;
        let standardized: Vec<Vec<f64>> = rows.iter().map(|r| standardizer.transform(r)).collect();
        let pca = PcaModel::fit(&standardized)?;
        let available = pca.n_components();
        let kept = n_components.min(available);
        if kept < n_components {
            log::warn!("requested {n_components} components, data offers {available}; keeping {kept}");
        }
        Ok(FittedPipeline { recipe: recipe.clone(), standardizer, pca, n_components: kept })
    }

    /// Maps one region onto component scores using only frozen statistics.
    pub fn transform(&self, view: RegionView<'_>) -> Result<Vec<f64>> {
        let features = build_features(view, &self.recipe)?;
        let standardized = self.standardizer.transform(&features);
        Ok(self.pca.project(&standardized, self.n_components))
    }

    /// Stable identifier of the fitted state; trained models remember it so
    /// a model store is never mixed with a different pipeline.
    pub fn id(&self) -> String {
        let mut content = String::new();
        for def in &self.recipe.entries {
            content.push_str(&format!("{def:?};"));
        }
        for v in self.standardizer.means.iter().chain(&self.standardizer.stds) {
            content.push_str(&csvio::fmt_f64(*v));
            content.push(',');
        }
        for row in &self.pca.loadings {
            for v in row {
                content.push_str(&csvio::fmt_f64(*v));
                content.push(',');
            }
        }
        content.push_str(&self.n_components.to_string());
        format!("{:016x}", derive_seed(0x1070_ab00, &content))
    }
}

// ---------------------------------------------------------------------------
// Recipe and pipeline files
// ---------------------------------------------------------------------------

const RECIPE_HEADER: [&str; 5] = ["kind", "var_a", "idx_a", "var_b", "idx_b"];

/// Recipe file: `kind,var_a,idx_a,var_b,idx_b` with 1-based indices, where
/// `var_b`/`idx_b` are only used by ratios.
pub fn load_recipe(path: &Path) -> Result<FeatureRecipe> {
    let rows = csvio::read_rows(path)?;
    let Some(((header_line, header), body)) = rows.split_first() else {
        return Err(Error::parse(path, 0, "empty recipe"));
    };
    csvio::expect_fields(header, 5, path, *header_line)?;
    if header.iter().map(|s| s.trim()).ne(RECIPE_HEADER) {
        return Err(Error::parse(path, *header_line, format!("expected header {:?}", RECIPE_HEADER.join(","))));
    }
    let mut entries = Vec::with_capacity(body.len());
    for (line, fields) in body {
        csvio::expect_fields(fields, 5, path, *line)?;
        let idx = |pos: usize| -> Result<Option<usize>> {
            match csvio::parse_opt_usize(&fields[pos], path, *line)? {
                Some(0) => Err(Error::parse(path, *line, "recipe indices are 1-based")),
                other => Ok(other.map(|i| i - 1)),
            }
        };
        let var_a = fields[1].trim().to_string();
        let var_b = fields[3].trim().to_string();
        let entry = match fields[0].trim() {
            "level" => FeatureDef::Level { var: var_a, idx: idx(2)? },
            "share" => FeatureDef::Share {
                var: var_a,
                idx: idx(2)?.ok_or_else(|| Error::parse(path, *line, "share needs idx_a"))?,
            },
            "ratio" => {
                if var_b.is_empty() {
                    return Err(Error::parse(path, *line, "ratio needs var_b"));
                }
                FeatureDef::Ratio { num: var_a, num_idx: idx(2)?, den: var_b, den_idx: idx(4)? }
            }
            other => return Err(Error::parse(path, *line, format!("unknown feature kind {other:?}"))),
        };
        if let FeatureDef::Level { var, .. } | FeatureDef::Share { var, .. } = &entry {
            if var.is_empty() {
                return Err(Error::parse(path, *line, "feature needs var_a"));
            }
        }
        entries.push(entry);
    }
    if entries.is_empty() {
        return Err(Error::parse(path, 0, "recipe has no entries"));
    }
    Ok(FeatureRecipe { entries })
}

pub fn write_recipe(path: &Path, recipe: &FeatureRecipe) -> Result<()> {
    let fmt_idx = |i: &Option<usize>| i.map(|v| (v + 1).to_string()).unwrap_or_default();
    let mut rows: Vec<Vec<String>> = vec![RECIPE_HEADER.iter().map(|s| s.to_string()).collect()];
    for def in &recipe.entries {
        rows.push(match def {
            FeatureDef::Level { var, idx } => {
                vec!["level".into(), var.clone(), fmt_idx(idx), String::new(), String::new()]
            }
            FeatureDef::Share { var, idx } => {
                vec!["share".into(), var.clone(), (idx + 1).to_string(), String::new(), String::new()]
            }
            FeatureDef::Ratio { num, num_idx, den, den_idx } => {
                vec!["ratio".into(), num.clone(), fmt_idx(num_idx), den.clone(), fmt_idx(den_idx)]
            }
        });
    }
    csvio::write_rows(path, rows)
}

/// Writes the fitted pipeline under `<dir>/pipeline/`.
pub fn save_pipeline(dir: &Path, pipeline: &FittedPipeline) -> Result<()> {
    let p = dir.join("pipeline");
    std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    write_recipe(&p.join("recipe.csv"), &pipeline.recipe)?;

    let mut std_rows: Vec<Vec<String>> = vec![vec!["feature".into(), "mean".into(), "std".into()]];
    for (j, (m, s)) in pipeline.standardizer.means.iter().zip(&pipeline.standardizer.stds).enumerate() {
        std_rows.push(vec![j.to_string(), csvio::fmt_f64(*m), csvio::fmt_f64(*s)]);
    }
    csvio::write_rows(&p.join("standardizer.csv"), std_rows)?;

    let loadings = pipeline.pca.loadings.iter().map(|row| {
        row.iter().map(|v| csvio::fmt_f64(*v)).collect::<Vec<_>>()
    });
    csvio::write_rows(&p.join("pca_loadings.csv"), loadings)?;

    let mut meta_rows: Vec<Vec<String>> =
        vec![vec!["component".into(), "explained_variance".into(), "retained".into()]];
    for (c, ev) in pipeline.pca.explained_variance.iter().enumerate() {
        let retained = if c < pipeline.n_components { "true" } else { "false" };
        meta_rows.push(vec![c.to_string(), csvio::fmt_f64(*ev), retained.into()]);
    }
    csvio::write_rows(&p.join("pca_meta.csv"), meta_rows)?;

    csvio::write_rows(
        &p.join("meta.csv"),
        [
            vec!["key".to_string(), "value".to_string()],
            vec!["id".to_string(), pipeline.id()],
            vec!["n_features".to_string(), pipeline.pca.n_features().to_string()],
            vec!["n_components".to_string(), pipeline.n_components.to_string()],
        ],
    )
}

pub fn load_pipeline(dir: &Path) -> Result<FittedPipeline> {
    let p = dir.join("pipeline");
    let recipe = load_recipe(&p.join("recipe.csv"))?;

    let std_path = p.join("standardizer.csv");
    let rows = csvio::read_rows(&std_path)?;
    let mut means = Vec::new();
    let mut stds = Vec::new();
    for (line, fields) in rows.iter().skip(1) {
        csvio::expect_fields(fields, 3, &std_path, *line)?;
        means.push(csvio::parse_f64(&fields[1], &std_path, *line)?);
        stds.push(csvio::parse_f64(&fields[2], &std_path, *line)?);
    }
    let standardizer = Standardizer { means, stds };

    let load_path = p.join("pca_loadings.csv");
    let rows = csvio::read_rows(&load_path)?;
    let mut loadings = Vec::with_capacity(rows.len());
    for (line, fields) in &rows {
        let mut row = Vec::with_capacity(fields.len());
        for f in fields {
            row.push(csvio::parse_f64(f, &load_path, *line)?);
        }
        loadings.push(row);
    }

    let meta_path = p.join("pca_meta.csv");
    let rows = csvio::read_rows(&meta_path)?;
    let mut explained = Vec::new();
    let mut n_components = 0;
    for (line, fields) in rows.iter().skip(1) {
        csvio::expect_fields(fields, 3, &meta_path, *line)?;
        explained.push(csvio::parse_f64(&fields[1], &meta_path, *line)?);
        if fields[2].trim() == "true" {
            n_components += 1;
        }
    }
    if loadings.len() != explained.len() {
        return Err(Error::InvalidData(
            "pca_loadings.csv and pca_meta.csv disagree on the component count".into(),
        ));
    }
    if standardizer.means.len() != loadings.first().map_or(0, Vec::len) {
        return Err(Error::InvalidData("standardizer and loadings disagree on feature count".into()));
    }
    Ok(FittedPipeline {
        recipe,
        standardizer,
        pca: PcaModel { loadings, explained_variance: explained },
        n_components,
    })
}
