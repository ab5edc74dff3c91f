//! Per-item regression targets and the scalers that map them onto network
//! output ranges.
//!
//! Every table cell is its own regression item. Targets are ratios to the
//! table total (the sum of gross outputs), so regions of different size are
//! comparable. Items from the nonnegative blocks (gross outputs and the
//! intermediate block) are squeezed into (0,1) for a sigmoid output; items
//! that can be negative (final demand, value added) are standardized for a
//! linear output.

use crate::error::{Error, Result};
use crate::mat::compensated_sum;
use crate::table::{IODimensions, IOTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Section {
    GrossOutput,
    Intermediate,
    FinalDemand,
    ValueAdded,
}

impl Section {
    pub fn code(self) -> &'static str {
        match self {
            Section::GrossOutput => "y",
            Section::Intermediate => "a",
            Section::FinalDemand => "d",
            Section::ValueAdded => "v",
        }
    }

    fn from_code(code: &str) -> Option<Self> {
        match code {
            "y" => Some(Section::GrossOutput),
            "a" => Some(Section::Intermediate),
            "d" => Some(Section::FinalDemand),
            "v" => Some(Section::ValueAdded),
            _ => None,
        }
    }
}

/// Identifies one regression item: a table cell, or one entry of the
/// gross-output vector (where `col` is always 0).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemAddress {
    pub section: Section,
    pub row: usize,
    pub col: usize,
}

impl ItemAddress {
    pub fn gross_output(i: usize) -> Self {
        ItemAddress { section: Section::GrossOutput, row: i, col: 0 }
    }

    pub fn cell(section: Section, row: usize, col: usize) -> Self {
        ItemAddress { section, row, col }
    }

    pub fn parse(s: &str) -> Option<Self> {
        let mut parts = s.split('_');
        let section = Section::from_code(parts.next()?)?;
        let row = parts.next()?.parse().ok()?;
        let col = parts.next()?.parse().ok()?;
        if parts.next().is_some() {
            return None;
        }
        Some(ItemAddress { section, row, col })
    }
}

impl std::fmt::Display for ItemAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}_{}_{}", self.section.code(), self.row, self.col)
    }
}

/// Every item of a table shape, in a fixed order: gross outputs, then the
/// intermediate block, final demand and value added, each row-major.
pub fn all_items(dims: IODimensions) -> Vec<ItemAddress> {
    let (k, l, m) = (dims.industries, dims.gva_rows, dims.fd_cols);
    let mut items = Vec::with_capacity(k + k * k + k * m + l * k);
    items.extend((0..k).map(ItemAddress::gross_output));
    for i in 0..k {
        for j in 0..k {
            items.push(ItemAddress::cell(Section::Intermediate, i, j));
        }
    }
    for i in 0..k {
        for g in 0..m {
            items.push(ItemAddress::cell(Section::FinalDemand, i, g));
        }
    }
    for h in 0..l {
        for j in 0..k {
            items.push(ItemAddress::cell(Section::ValueAdded, h, j));
        }
    }
    items
}

/// Ratio of one item to the table total. Absent cells read as zero. Errors
/// when the table total is not strictly positive, since the ratios are then
/// undefined.
pub fn target_ratio(table: &IOTable, addr: ItemAddress) -> Result<f64> {
    if !(table.total.is_finite() && table.total > 0.0) {
        return Err(Error::InvalidData(format!(
            "table total must be positive to form ratios, got {}",
            table.total
        )));
    }
    let raw = match addr.section {
        Section::GrossOutput => table.gross_outputs[addr.row].unwrap_or(0.0),
        Section::Intermediate => table.intermediate.value_or_zero(addr.row, addr.col),
        Section::FinalDemand => table.final_demand.value_or_zero(addr.row, addr.col),
        Section::ValueAdded => table.value_added.value_or_zero(addr.row, addr.col),
    };
    Ok(raw / table.total)
}

/// Affine map of a bounded nonnegative item onto (0,1), with a 10% margin
/// beyond the observed range clipped to the unit interval:
/// lower = max(0, min - 0.1 (max-min)), upper = min(1, max + 0.1 (max-min)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundedScaler {
    pub lower: f64,
    pub upper: f64,
}

impl BoundedScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        let (min, max) = finite_range(values)?;
        if min == max {
            return Err(Error::InvalidData("cannot fit a range scaler to constant values".into()));
        }
        let margin = 0.1 * (max - min);
        let lower = (min - margin).max(0.0);
        let upper = (max + margin).min(1.0);
        if !(upper > lower) {
            return Err(Error::InvalidData(format!(
                "degenerate scaled range [{lower}, {upper}]; values must live in the unit interval"
            )));
        }
        Ok(BoundedScaler { lower, upper })
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.lower) / (self.upper - self.lower)
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.lower + s * (self.upper - self.lower)
    }
}

/// Plain standardization, with the population (biased) standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StandardScaler {
    pub mean: f64,
    pub std: f64,
}

impl StandardScaler {
    pub fn fit(values: &[f64]) -> Result<Self> {
        finite_range(values)?;
        let n = values.len() as f64;
        let mean = compensated_sum(values.iter().copied()) / n;
        let var = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
        let std = var.sqrt();
        if std == 0.0 {
            return Err(Error::InvalidData("cannot standardize constant values".into()));
        }
        Ok(StandardScaler { mean, std })
    }

    pub fn scale(&self, y: f64) -> f64 {
        (y - self.mean) / self.std
    }

    pub fn unscale(&self, s: f64) -> f64 {
        self.mean + s * self.std
    }
}

fn finite_range(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidData("cannot fit a scaler to no values".into()));
    }
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in values {
        if !v.is_finite() {
            return Err(Error::InvalidData(format!("non-finite target value {v}")));
        }
        min = min.min(v);
        max = max.max(v);
    }
    Ok((min, max))
}

/// Target transform attached to one trained item.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ItemScaler {
    Bounded(BoundedScaler),
    Standard(StandardScaler),
    /// Degenerate item: the target is this value in every training sample,
    /// so no network is trained and predictions return it directly. The
    /// all-zero case is the important one; balancing keeps exact zeros.
    Constant(f64),
}

impl ItemScaler {
    pub fn scale(&self, y: f64) -> f64 {
        match self {
            ItemScaler::Bounded(s) => s.scale(y),
            ItemScaler::Standard(s) => s.scale(y),
            ItemScaler::Constant(_) => 0.0,
        }
    }

    pub fn unscale(&self, s: f64) -> f64 {
        match self {
            ItemScaler::Bounded(b) => b.unscale(s),
            ItemScaler::Standard(b) => b.unscale(s),
            ItemScaler::Constant(c) => *c,
        }
    }

    pub fn to_fields(&self) -> [String; 3] {
        let f = crate::csvio::fmt_f64;
        match self {
            ItemScaler::Bounded(s) => ["bounded".into(), f(s.lower), f(s.upper)],
            ItemScaler::Standard(s) => ["standard".into(), f(s.mean), f(s.std)],
            ItemScaler::Constant(c) => ["constant".into(), f(*c), String::new()],
        }
    }

    pub fn from_fields(kind: &str, p1: &str, p2: &str) -> Result<Self> {
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::InvalidData(format!("bad scaler parameter {s:?}")))
        };
        match kind {
            "bounded" => Ok(ItemScaler::Bounded(BoundedScaler { lower: num(p1)?, upper: num(p2)? })),
            "standard" => Ok(ItemScaler::Standard(StandardScaler { mean: num(p1)?, std: num(p2)? })),
            "constant" => Ok(ItemScaler::Constant(num(p1)?)),
            other => Err(Error::InvalidData(format!("unknown scaler kind {other:?}"))),
        }
    }
}

/// Scales nonnegative raw predictions so they sum to `total` exactly. The
/// correction after the proportional rescale is at the rounding level and is
/// absorbed by the largest entry, so ratios are preserved to working
/// precision.
pub fn renormalize_gross_outputs(predictions: &[f64], total: f64) -> Result<Vec<f64>> {
    if predictions.is_empty() {
        return Err(Error::InvalidData("no gross-output predictions to renormalize".into()));
    }
    if !(total.is_finite() && total > 0.0) {
        return Err(Error::InvalidData(format!("target total must be positive, got {total}")));
    }
    if predictions.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidData("gross-output predictions must be finite and nonnegative".into()));
    }
    let sum = compensated_sum(predictions.iter().copied());
    if sum <= 0.0 {
        return Err(Error::InvalidData("gross-output predictions sum to zero".into()));
    }
    let factor = total / sum;
    let mut out: Vec<f64> = predictions.iter().map(|v| v * factor).collect();
    // Absorb rounding drift into the largest entry until the compensated sum
    // matches the requested total bit for bit (typically one pass).
    let argmax = out
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("non-empty");
    for _ in 0..4 {
        let drift = total - compensated_sum(out.iter().copied());
        if drift == 0.0 {
            break;
        }
        out[argmax] += drift;
    }
    Ok(out)
}
