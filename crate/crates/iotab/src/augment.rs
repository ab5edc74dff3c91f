//! Mixture-based data augmentation.
//!
//! Real regional accounts are scarce, so training samples are synthesized as
//! random convex combinations of real regions on a per-capita basis: draw a
//! few member regions, Dirichlet(1,...,1) weights and a target population,
//! then set every output value to
//!
//! ```text
//! out = target_population * sum_m weight_m * (value_m / pop15_m)
//! ```
//!
//! for every variable and every table cell. A member set is redrawn whenever
//! it contains a region together with one of its ancestors, since the
//! contained region's activity would otherwise be counted twice.
//!
//! Each sample uses its own counter-derived random stream, so sample `i` is
//! identical no matter how generation is batched or parallelized.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::csvio;
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::table::{
    read_long_rows, reserved, write_long_rows, CellGrid, IODimensions, IOTable, LongRow,
    RegionDataset, VariableValue,
};

/// How the target population of each sample is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScaleMode {
    /// Every sample gets this population (national-scale training).
    Fixed(f64),
    /// Population drawn uniformly per sample (city-scale training).
    UniformRange(f64, f64),
}

impl ScaleMode {
    fn validate(&self) -> Result<()> {
        match *self {
            ScaleMode::Fixed(p) if p.is_finite() && p > 0.0 => Ok(()),
            ScaleMode::UniformRange(lo, hi) if lo.is_finite() && hi.is_finite() && 0.0 < lo && lo <= hi => Ok(()),
            _ => Err(Error::InvalidData("scale mode needs positive population bounds".into())),
        }
    }

    fn draw(&self, rng: &mut ChaCha12Rng) -> f64 {
        match *self {
            ScaleMode::Fixed(p) => p,
            ScaleMode::UniformRange(lo, hi) => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct AugmentationConfig {
    pub n_samples: usize,
    /// Fraction of samples assigned to the training split; the rest are the
    /// held-out test split.
    pub train_fraction: f64,
    pub members_min: usize,
    pub members_max: usize,
    pub scale: ScaleMode,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            n_samples: 50_000,
            train_fraction: 0.8,
            members_min: 2,
            members_max: 5,
            scale: ScaleMode::Fixed(1.0e8),
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidData("need at least one sample".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidData("train fraction must be in [0, 1]".into()));
        }
        if self.members_min == 0 || self.members_min > self.members_max {
            return Err(Error::InvalidData("member count bounds must satisfy 1 <= min <= max".into()));
        }
        self.scale.validate()
    }
}

/// Recipe for one virtual region: member region ids with their mixture
/// weights (summing to 1) and the population the result is scaled to.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureSpec {
    pub members: Vec<(String, f64)>,
    pub target_population: f64,
}

/// A synthesized training sample. The table is always present and dense
/// except for cells absent in every member.
#[derive(Clone, Debug)]
pub struct VirtualRegion {
    pub pop15: f64,
    pub variables: BTreeMap<String, VariableValue>,
    pub io_table: IOTable,
}

/// Draws one mixture: member count uniform in the configured bounds, members
/// uniform without replacement among regions that have a table, weights
/// Dirichlet(1,...,1). Member sets with containment overlaps are redrawn
/// wholesale.
pub fn sample_mixture(
    dataset: &RegionDataset,
    cfg: &AugmentationConfig,
    rng: &mut ChaCha12Rng,
) -> Result<MixtureSpec> {
    cfg.validate()?;
    let pool: Vec<&str> = dataset
        .regions
        .iter()
        .filter(|r| r.io_table.is_some())
        .map(|r| r.region_id.as_str())
        .collect();
    if pool.len() < cfg.members_max {
        return Err(Error::InvalidData(format!(
            "only {} regions have tables; mixtures need up to {}",
            pool.len(),
            cfg.members_max
        )));
    }
    let k = rng.gen_range(cfg.members_min..=cfg.members_max);

    const MAX_ATTEMPTS: usize = 1000;
    let mut members: Vec<&str> = Vec::with_capacity(k);
    for attempt in 0.. {
        if attempt == MAX_ATTEMPTS {
            return Err(Error::InvalidData(format!(
                "could not draw {k} regions without containment overlaps after {MAX_ATTEMPTS} attempts"
            )));
        }
        members.clear();
        members.extend(pool.choose_multiple(rng, k).copied());
        let overlap = members
            .iter()
            .enumerate()
            .any(|(a, ra)| members[a + 1..].iter().any(|rb| dataset.overlaps(ra, rb)));
        if !overlap {
            break;
        }
    }

    let weights = if k == 1 {
        vec![1.0]
    } else {
        // Dirichlet(1,...,1) as normalized unit-rate exponentials.
        let draws: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let sum: f64 = draws.iter().sum();
        if sum > 0.0 {
            draws.iter().map(|e| e / sum).collect()
        } else {
            vec![1.0 / k as f64; k]
        }
    };
    let target_population = cfg.scale.draw(rng);
    let members = members
        .iter()
        .zip(weights)
        .map(|(id, w)| (id.to_string(), w))
        .collect();
    Ok(MixtureSpec { members, target_population })
}

/// Applies the per-capita combination. Member variables or cells that are
/// absent contribute zero; a table cell is kept absent only when no member
/// published it. A single member with weight 1 and its own population
/// reproduces the region exactly, because its coefficient is exactly 1.
pub fn combine_regions(dataset: &RegionDataset, spec: &MixtureSpec) -> Result<VirtualRegion> {
    if spec.members.is_empty() {
        return Err(Error::InvalidData("mixture needs at least one member".into()));
    }
    if !(spec.target_population.is_finite() && spec.target_population > 0.0) {
        return Err(Error::InvalidData("target population must be positive".into()));
    }
    let weight_sum: f64 = spec.members.iter().map(|(_, w)| w).sum();
    if (weight_sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidData(format!("mixture weights sum to {weight_sum}, not 1")));
    }

    let mut members = Vec::with_capacity(spec.members.len());
    for (id, weight) in &spec.members {
        let region = dataset
            .region(id)
            .ok_or_else(|| Error::InvalidData(format!("mixture references unknown region {id:?}")))?;
        // Coefficient of this member for every output value. Computing it
        // once keeps the singleton case exact: pop/pop is exactly 1.
        let coefficient = spec.target_population * weight / region.pop15;
        members.push((region, coefficient));
    }

    let mut variables = BTreeMap::new();
    for schema in &dataset.schema {
        let value = match schema.len {
            None => {
                let mut acc = 0.0;
                for (region, c) in &members {
                    if let Some(VariableValue::Scalar(v)) = region.variables.get(&schema.name) {
                        acc += c * v;
                    }
                }
                VariableValue::Scalar(acc)
            }
            Some(len) => {
                let mut acc = vec![0.0; len];
                for (region, c) in &members {
                    if let Some(VariableValue::Vector(vs)) = region.variables.get(&schema.name) {
                        for (a, v) in acc.iter_mut().zip(vs) {
                            *a += c * v;
                        }
                    }
                }
                VariableValue::Vector(acc)
            }
        };
        variables.insert(schema.name.clone(), value);
    }

    let dims = dataset.dims;
    let combine_cell = |get: &dyn Fn(&IOTable) -> Option<f64>| -> Option<f64> {
        let mut acc = 0.0;
        let mut any = false;
        for (region, c) in &members {
            if let Some(v) = region.io_table.as_ref().and_then(get) {
                acc += c * v;
                any = true;
            }
        }
        any.then_some(acc)
    };
    let k = dims.industries;
    let intermediate = CellGrid::from_fn(k, k, |i, j| combine_cell(&|t| t.intermediate.get(i, j)));
    let final_demand =
        CellGrid::from_fn(k, dims.fd_cols, |i, g| combine_cell(&|t| t.final_demand.get(i, g)));
    let value_added =
        CellGrid::from_fn(dims.gva_rows, k, |h, j| combine_cell(&|t| t.value_added.get(h, j)));
    let gross_outputs = (0..k).map(|i| combine_cell(&|t| t.gross_outputs[i])).collect();
    let io_table = IOTable::new(dims, intermediate, final_demand, value_added, gross_outputs)?;

    Ok(VirtualRegion { pop15: spec.target_population, variables, io_table })
}

#[derive(Clone, Debug)]
pub struct AugmentedSample {
    pub id: String,
    pub spec: MixtureSpec,
    pub region: VirtualRegion,
    pub train: bool,
}

#[derive(Clone, Debug)]
pub struct AugmentedSet {
    pub samples: Vec<AugmentedSample>,
}

impl AugmentedSet {
    pub fn split(&self) -> (Vec<&VirtualRegion>, Vec<&VirtualRegion>) {
        let train = self.samples.iter().filter(|s| s.train).map(|s| &s.region).collect();
        let test = self.samples.iter().filter(|s| !s.train).map(|s| &s.region).collect();
        (train, test)
    }
}

/// Generates the full augmented sample set. Sample `i` draws from stream
/// `i + 1` of the seed; stream 0 shuffles the train/test assignment, which is
/// a shuffle-then-cut split with `round(n * train_fraction)` training rows.
pub fn generate_augmented_set(
    dataset: &RegionDataset,
    cfg: &AugmentationConfig,
) -> Result<AugmentedSet> {
    cfg.validate()?;
    let width = cfg.n_samples.to_string().len().max(5);
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        let mut rng = stream_rng(cfg.seed, i as u64 + 1);
        let spec = sample_mixture(dataset, cfg, &mut rng)?;
        let region = combine_regions(dataset, &spec)?;
        samples.push(AugmentedSample {
            id: format!("sample_{i:0width$}"),
            spec,
            region,
            train: false,
        });
    }
    let mut order: Vec<usize> = (0..cfg.n_samples).collect();
    order.shuffle(&mut stream_rng(cfg.seed, 0));
    let n_train = (cfg.n_samples as f64 * cfg.train_fraction).round() as usize;
    for &idx in order.iter().take(n_train) {
        samples[idx].train = true;
    }
    Ok(AugmentedSet { samples })
}

/// Convenience wrapper returning just the two splits.
pub fn generate_training_set(
    dataset: &RegionDataset,
    cfg: &AugmentationConfig,
) -> Result<(Vec<VirtualRegion>, Vec<VirtualRegion>)> {
    let set = generate_augmented_set(dataset, cfg)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for sample in set.samples {
        if sample.train {
            train.push(sample.region);
        } else {
            test.push(sample.region);
        }
    }
    Ok((train, test))
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------
//
// Layout under the output directory:
//   manifest.csv            id, split, target population, members, weights
//   train/<id>.csv          one long-format file per sample
//   test/<id>.csv
//
// Sample files reuse the variables format; table cells travel under reserved
// '@' names with idx1/idx2 as 1-based row/column.

fn sample_rows(id: &str, region: &VirtualRegion) -> Vec<LongRow> {
    let mut rows = Vec::new();
    let row = |variable: &str, idx1: Option<usize>, idx2: Option<usize>, value: f64| LongRow {
        line: 0,
        region: id.to_string(),
        variable: variable.to_string(),
        idx1,
        idx2,
        value,
    };
    rows.push(row(reserved::POP15, None, None, region.pop15));
    for (name, value) in &region.variables {
        match value {
            VariableValue::Scalar(v) => rows.push(row(name, None, None, *v)),
            VariableValue::Vector(vs) => {
                rows.extend(vs.iter().enumerate().map(|(i, v)| row(name, Some(i + 1), None, *v)))
            }
        }
    }
    let t = &region.io_table;
    for (i, j, v) in t.intermediate.iter() {
        if let Some(v) = v {
            rows.push(row(reserved::INTERMEDIATE, Some(i + 1), Some(j + 1), v));
        }
    }
    for (i, g, v) in t.final_demand.iter() {
        if let Some(v) = v {
            rows.push(row(reserved::FINAL_DEMAND, Some(i + 1), Some(g + 1), v));
        }
    }
    for (h, j, v) in t.value_added.iter() {
        if let Some(v) = v {
            rows.push(row(reserved::VALUE_ADDED, Some(h + 1), Some(j + 1), v));
        }
    }
    for (i, v) in t.gross_outputs.iter().enumerate() {
        if let Some(v) = v {
            rows.push(row(reserved::GROSS_OUTPUT, Some(i + 1), None, *v));
        }
    }
    rows
}

fn region_from_rows(rows: &[LongRow], dims: IODimensions, path: &Path) -> Result<VirtualRegion> {
    let mut pop15 = None;
    let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
    let mut vectors: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    let k = dims.industries;
    let mut intermediate = CellGrid::absent(k, k);
    let mut final_demand = CellGrid::absent(k, dims.fd_cols);
    let mut value_added = CellGrid::absent(dims.gva_rows, k);
    let mut gross_outputs = vec![None; k];

    let cell_index = |row: &LongRow, rows: usize, cols: usize| -> Result<(usize, usize)> {
        match (row.idx1, row.idx2) {
            (Some(i), Some(j)) if (1..=rows).contains(&i) && (1..=cols).contains(&j) => {
                Ok((i - 1, j - 1))
            }
            _ => Err(Error::parse(path, row.line, format!("bad cell index for {:?}", row.variable))),
        }
    };
    for row in rows {
        match row.variable.as_str() {
            reserved::POP15 => pop15 = Some(row.value),
            reserved::INTERMEDIATE => {
                let (i, j) = cell_index(row, k, k)?;
                intermediate.set(i, j, Some(row.value));
            }
            reserved::FINAL_DEMAND => {
                let (i, g) = cell_index(row, k, dims.fd_cols)?;
                final_demand.set(i, g, Some(row.value));
            }
            reserved::VALUE_ADDED => {
                let (h, j) = cell_index(row, dims.gva_rows, k)?;
                value_added.set(h, j, Some(row.value));
            }
            reserved::GROSS_OUTPUT => match row.idx1 {
                Some(i) if (1..=k).contains(&i) => gross_outputs[i - 1] = Some(row.value),
                _ => return Err(Error::parse(path, row.line, "bad gross-output index")),
            },
            name if name.starts_with('@') => {
                return Err(Error::parse(path, row.line, format!("unknown reserved variable {name:?}")))
            }
            _ => match row.idx1 {
                None => {
                    scalars.insert(row.variable.clone(), row.value);
                }
                Some(i) => {
                    vectors.entry(row.variable.clone()).or_default().insert(i, row.value);
                }
            },
        }
    }
    let mut variables: BTreeMap<String, VariableValue> =
        scalars.into_iter().map(|(n, v)| (n, VariableValue::Scalar(v))).collect();
    for (name, entries) in vectors {
        let len = *entries.keys().last().expect("non-empty");
        if entries.len() != len {
            return Err(Error::parse(path, 0, format!("variable {name:?} has index gaps")));
        }
        variables.insert(name, VariableValue::Vector(entries.into_values().collect()));
    }
    let pop15 = pop15.ok_or_else(|| Error::parse(path, 0, "sample file lacks @pop15"))?;
    let io_table = IOTable::new(dims, intermediate, final_demand, value_added, gross_outputs)?;
    Ok(VirtualRegion { pop15, variables, io_table })
}

pub fn write_augmented_set(dir: &Path, set: &AugmentedSet) -> Result<()> {
    for sub in ["train", "test"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
    }
    let mut manifest: Vec<Vec<String>> = vec![
        ["id", "split", "target_population", "members", "weights"].map(str::to_string).to_vec(),
    ];
    for sample in &set.samples {
        let split = if sample.train { "train" } else { "test" };
        manifest.push(vec![
            sample.id.clone(),
            split.to_string(),
            csvio::fmt_f64(sample.spec.target_population),
            sample.spec.members.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>().join(";"),
            sample
                .spec
                .members
                .iter()
                .map(|(_, w)| csvio::fmt_f64(*w))
                .collect::<Vec<_>>()
                .join(";"),
        ]);
        let path = dir.join(split).join(format!("{}.csv", sample.id));
        write_long_rows(&path, &sample_rows(&sample.id, &sample.region))?;
    }
    csvio::write_rows(&dir.join("manifest.csv"), manifest)
}

/// Loads one split ("train" or "test") back as virtual regions, in manifest
/// order.
pub fn load_augmented_split(dir: &Path, dims: IODimensions, split: &str) -> Result<Vec<VirtualRegion>> {
    let manifest_path = dir.join("manifest.csv");
    let rows = csvio::read_rows(&manifest_path)?;
    let Some((_, body)) = rows.split_first() else {
        return Err(Error::parse(&manifest_path, 0, "empty manifest"));
    };
    let mut out = Vec::new();
    for (line, fields) in body {
        csvio::expect_fields(fields, 5, &manifest_path, *line)?;
        if fields[1].trim() != split {
            continue;
        }
        let path = dir.join(split).join(format!("{}.csv", fields[0].trim()));
        let rows = read_long_rows(&path)?;
        out.push(region_from_rows(&rows, dims, &path)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::{RegionRecord, VariableSchema};
    use tempfile::tempdir;

    fn balanced_table(dims: IODimensions, scale: f64) -> IOTable {
        let y = [0.4, 0.6];
        let c = 0.5;
        let share = [0.3, 0.7];
        IOTable::new(
            dims,
            CellGrid::from_fn(2, 2, |i, j| Some(scale * c * y[i] * y[j])),
            CellGrid::from_fn(2, 2, |i, g| Some(scale * (1.0 - c) * y[i] * share[g])),
            CellGrid::from_fn(2, 2, |h, j| Some(scale * (1.0 - c) * y[j] * share[h])),
            y.iter().map(|s| Some(scale * s)).collect(),
        )
        .unwrap()
    }

    fn fixture() -> RegionDataset {
        let dims = IODimensions::new(2, 2, 2).with_phi(0, 0);
        let mk = |id: &str, parent: Option<&str>, pop: f64, scale: f64| RegionRecord {
            region_id: id.into(),
            name: id.to_uppercase(),
            parent_id: parent.map(str::to_string),
            pop15: pop,
            variables: BTreeMap::from([
                ("emp".to_string(), VariableValue::Vector(vec![pop * 0.3, pop * 0.2])),
                ("income".to_string(), VariableValue::Scalar(pop * 3.0)),
            ]),
            io_table: Some(balanced_table(dims, scale)),
        };
        let regions = vec![
            mk("p1", None, 1000.0, 5000.0),
            mk("p2", None, 2000.0, 11000.0),
            mk("p3", None, 1500.0, 7000.0),
            mk("p4", None, 800.0, 4000.0),
            mk("p5", None, 3000.0, 16000.0),
            mk("c1", Some("p1"), 300.0, 1500.0),
        ];
        let schema = vec![
            VariableSchema { name: "emp".into(), len: Some(2) },
            VariableSchema { name: "income".into(), len: None },
        ];
        let ds = RegionDataset { dims, regions, schema };
        ds.validate().unwrap();
        ds
    }

    #[test]
    fn singleton_mixture_reproduces_the_region_bit_for_bit() {
        let ds = fixture();
        let r = ds.region("p2").unwrap();
        let spec = MixtureSpec {
            members: vec![("p2".into(), 1.0)],
            target_population: r.pop15,
        };
        let out = combine_regions(&ds, &spec).unwrap();
        assert_eq!(out.pop15, r.pop15);
        assert_eq!(out.variables, r.variables);
        let t0 = r.io_table.as_ref().unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(
                    out.io_table.intermediate.get(i, j).unwrap().to_bits(),
                    t0.intermediate.get(i, j).unwrap().to_bits()
                );
            }
            assert_eq!(
                out.io_table.gross_outputs[i].unwrap().to_bits(),
                t0.gross_outputs[i].unwrap().to_bits()
            );
        }
    }

    #[test]
    fn mixtures_never_pair_a_region_with_its_ancestor() {
        let ds = fixture();
        let cfg = AugmentationConfig {
            n_samples: 200,
            members_min: 2,
            members_max: 4,
            scale: ScaleMode::Fixed(5000.0),
            ..Default::default()
        };
        for i in 0..200 {
            let mut rng = stream_rng(9, i + 1);
            let spec = sample_mixture(&ds, &cfg, &mut rng).unwrap();
            let ids: Vec<&str> = spec.members.iter().map(|(id, _)| id.as_str()).collect();
            for (a, ra) in ids.iter().enumerate() {
                for rb in &ids[a + 1..] {
                    assert!(!ds.overlaps(ra, rb), "overlapping pair {ra} {rb}");
                }
            }
            let wsum: f64 = spec.members.iter().map(|(_, w)| w).sum();
            assert!((wsum - 1.0).abs() < 1e-12);
            assert!(spec.members.len() >= 2 && spec.members.len() <= 4);
        }
    }

    #[test]
    fn combination_is_the_stated_affine_map() {
        let ds = fixture();
        let spec = MixtureSpec {
            members: vec![("p1".into(), 0.25), ("p2".into(), 0.75)],
            target_population: 4000.0,
        };
        let out = combine_regions(&ds, &spec).unwrap();
        // income: 4000 * (0.25 * 3000/1000 + 0.75 * 6000/2000) = 4000 * 3.0
        let VariableValue::Scalar(income) = out.variables["income"] else { panic!() };
        assert!((income - 12000.0).abs() < 1e-9);
        // per-capita convexity: every per-capita output lies within the
        // member per-capita range.
        for (i, y) in out.io_table.gross_outputs.iter().enumerate() {
            let pc = y.unwrap() / out.pop15;
            let bounds: Vec<f64> = ["p1", "p2"]
                .iter()
                .map(|id| {
                    let r = ds.region(id).unwrap();
                    r.io_table.as_ref().unwrap().gross_outputs[i].unwrap() / r.pop15
                })
                .collect();
            let (lo, hi) = (bounds[0].min(bounds[1]), bounds[0].max(bounds[1]));
            assert!(pc >= lo - 1e-12 && pc <= hi + 1e-12);
        }
    }

    #[test]
    fn absent_member_cells_contribute_zero() {
        let mut ds = fixture();
        let idx = ds.regions.iter().position(|r| r.region_id == "p1").unwrap();
        ds.regions[idx].io_table.as_mut().unwrap().intermediate.set(0, 0, None);
        let spec = MixtureSpec {
            members: vec![("p1".into(), 0.5), ("p2".into(), 0.5)],
            target_population: 1000.0,
        };
        let out = combine_regions(&ds, &spec).unwrap();
        let c2 = 1000.0 * 0.5 / 2000.0;
        let expect = c2 * ds.region("p2").unwrap().io_table.as_ref().unwrap().intermediate.get(0, 0).unwrap();
        assert!((out.io_table.intermediate.get(0, 0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn generation_is_deterministic_and_splits_by_rounding() {
        let ds = fixture();
        let cfg = AugmentationConfig {
            n_samples: 10,
            train_fraction: 0.8,
            members_min: 1,
            members_max: 3,
            scale: ScaleMode::UniformRange(500.0, 5000.0),
            seed: 42,
        };
        let a = generate_augmented_set(&ds, &cfg).unwrap();
        let b = generate_augmented_set(&ds, &cfg).unwrap();
        assert_eq!(a.samples.len(), 10);
        assert_eq!(a.samples.iter().filter(|s| s.train).count(), 8);
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.spec, y.spec);
            assert_eq!(x.train, y.train);
        }
        let differently_seeded = generate_augmented_set(&ds, &AugmentationConfig { seed: 43, ..cfg }).unwrap();
        assert!(
            a.samples.iter().zip(&differently_seeded.samples).any(|(x, y)| x.spec != y.spec),
            "different seeds should give different mixtures"
        );
    }

    #[test]
    fn persistence_roundtrip_is_exact() {
        let ds = fixture();
        let cfg = AugmentationConfig {
            n_samples: 6,
            train_fraction: 0.5,
            members_min: 1,
            members_max: 2,
            scale: ScaleMode::Fixed(2500.0),
            seed: 7,
        };
        let set = generate_augmented_set(&ds, &cfg).unwrap();
        let dir = tempdir().unwrap();
        write_augmented_set(dir.path(), &set).unwrap();
        let train = load_augmented_split(dir.path(), ds.dims, "train").unwrap();
        let test = load_augmented_split(dir.path(), ds.dims, "test").unwrap();
        assert_eq!(train.len() + test.len(), 6);
        let originals: Vec<&VirtualRegion> =
            set.samples.iter().filter(|s| s.train).map(|s| &s.region).collect();
        for (loaded, original) in train.iter().zip(originals) {
            assert_eq!(loaded.pop15.to_bits(), original.pop15.to_bits());
            assert_eq!(loaded.variables, original.variables);
            assert_eq!(loaded.io_table.total.to_bits(), original.io_table.total.to_bits());
            for i in 0..2 {
                for j in 0..2 {
                    assert_eq!(loaded.io_table.intermediate.get(i, j), original.io_table.intermediate.get(i, j));
                }
            }
        }
    }
}
