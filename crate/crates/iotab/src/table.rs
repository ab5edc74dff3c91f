//! Input-output table model and the on-disk dataset formats.
//!
//! An input-output table for one region is stored as three dense blocks plus
//! a gross-output vector:
//!
//! ```text
//!              industry cols (K)   final-demand cols (M)   TOTAL
//! industry i   intermediate KxK    final_demand KxM        row sum
//! gva row  h   value_added  LxK    (structurally absent)   row sum
//! Y            gross_outputs K     (structurally absent)   table total
//! ```
//!
//! Cells are `Option<f64>`: `None` means the source never published a value,
//! which is different from an explicit zero. Accounting identities for a
//! balanced table: every industry row and column sums to its gross output,
//! and when a designated final-demand column / value-added row pair exists
//! (household-style consumption that appears on both sides), their totals
//! must agree.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use crate::csvio;
use crate::error::{Error, Result};
use crate::mat::compensated_sum;

/// Shape of every table in a dataset, plus the optional linked
/// final-demand-column / value-added-row pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct IODimensions {
    /// Number of industries (square intermediate block).
    pub industries: usize,
    /// Number of value-added rows below the intermediate block.
    pub gva_rows: usize,
    /// Number of final-demand columns right of the intermediate block.
    pub fd_cols: usize,
    /// Final-demand column whose total must equal the `phi_gva` row total.
    pub phi_fd: Option<usize>,
    /// Value-added row paired with `phi_fd`.
    pub phi_gva: Option<usize>,
}

impl IODimensions {
    pub fn new(industries: usize, gva_rows: usize, fd_cols: usize) -> Self {
        IODimensions { industries, gva_rows, fd_cols, phi_fd: None, phi_gva: None }
    }

    pub fn with_phi(mut self, fd_col: usize, gva_row: usize) -> Self {
        self.phi_fd = Some(fd_col);
        self.phi_gva = Some(gva_row);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.industries == 0 || self.gva_rows == 0 || self.fd_cols == 0 {
            return Err(Error::InvalidData("table dimensions must all be positive".into()));
        }
        match (self.phi_fd, self.phi_gva) {
            (None, None) => {}
            (Some(f), Some(g)) => {
                if f >= self.fd_cols || g >= self.gva_rows {
                    return Err(Error::InvalidData(format!(
                        "linked column/row ({f},{g}) outside {}x{} bounds",
                        self.fd_cols, self.gva_rows
                    )));
                }
            }
            _ => {
                return Err(Error::InvalidData(
                    "linked totals need both a final-demand column and a value-added row".into(),
                ))
            }
        }
        Ok(())
    }

    /// Rows of the combined frame: industries then value-added rows.
    pub fn frame_rows(&self) -> usize {
        self.industries + self.gva_rows
    }

    /// Columns of the combined frame: industries then final-demand columns.
    pub fn frame_cols(&self) -> usize {
        self.industries + self.fd_cols
    }

    pub fn row_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = (1..=self.industries).map(|i| format!("I{i}")).collect();
        labels.extend((1..=self.gva_rows).map(|h| format!("V{h}")));
        labels.push("Y".into());
        labels
    }

    pub fn col_labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = (1..=self.industries).map(|j| format!("I{j}")).collect();
        labels.extend((1..=self.fd_cols).map(|g| format!("D{g}")));
        labels.push("TOTAL".into());
        labels
    }
}

/// Dense grid of maybe-absent values.
#[derive(Clone, Debug, PartialEq)]
pub struct CellGrid {
    rows: usize,
    cols: usize,
    cells: Vec<Option<f64>>,
}

impl CellGrid {
    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        CellGrid { rows, cols, cells: vec![Some(value); rows * cols] }
    }

    pub fn absent(rows: usize, cols: usize) -> Self {
        CellGrid { rows, cols, cells: vec![None; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut cells = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                cells.push(f(i, j));
            }
        }
        CellGrid { rows, cols, cells }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.cells[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Option<f64>) {
        self.cells[i * self.cols + j] = v;
    }

    /// Absent reads as zero; used wherever accounting sums are taken.
    pub fn value_or_zero(&self, i: usize, j: usize) -> f64 {
        self.get(i, j).unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Option<f64>)> + '_ {
        let cols = self.cols;
        self.cells.iter().enumerate().map(move |(t, v)| (t / cols, t % cols, *v))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IOTable {
    pub dims: IODimensions,
    /// Industry-by-industry purchases, K x K.
    pub intermediate: CellGrid,
    /// Industry rows by final-demand columns, K x M.
    pub final_demand: CellGrid,
    /// Value-added rows by industry columns, L x K.
    pub value_added: CellGrid,
    /// Gross output per industry, length K.
    pub gross_outputs: Vec<Option<f64>>,
    /// Sum of the present gross outputs; recomputed on construction.
    pub total: f64,
}

impl IOTable {
    pub fn new(
        dims: IODimensions,
        intermediate: CellGrid,
        final_demand: CellGrid,
        value_added: CellGrid,
        gross_outputs: Vec<Option<f64>>,
    ) -> Result<Self> {
        dims.validate()?;
        let k = dims.industries;
        let shapes_ok = intermediate.rows() == k
            && intermediate.cols() == k
            && final_demand.rows() == k
            && final_demand.cols() == dims.fd_cols
            && value_added.rows() == dims.gva_rows
            && value_added.cols() == k
            && gross_outputs.len() == k;
        if !shapes_ok {
            return Err(Error::InvalidData("table block shapes do not match dimensions".into()));
        }
        let total = compensated_sum(gross_outputs.iter().flatten().copied());
        Ok(IOTable { dims, intermediate, final_demand, value_added, gross_outputs, total })
    }

    /// All-zero table of the given shape; every cell present.
    pub fn zeros(dims: IODimensions) -> Self {
        let k = dims.industries;
        IOTable::new(
            dims,
            CellGrid::filled(k, k, 0.0),
            CellGrid::filled(k, dims.fd_cols, 0.0),
            CellGrid::filled(dims.gva_rows, k, 0.0),
            vec![Some(0.0); k],
        )
        .expect("zero table shapes are consistent by construction")
    }

    /// Cell of the combined frame (see module docs). The value-added block
    /// never extends under the final-demand columns, so that corner is
    /// always `None`.
    pub fn frame_cell(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.dims.industries;
        match (i < k, j < k) {
            (true, true) => self.intermediate.get(i, j),
            (true, false) => self.final_demand.get(i, j - k),
            (false, true) => self.value_added.get(i - k, j),
            (false, false) => None,
        }
    }

    pub fn set_frame_cell(&mut self, i: usize, j: usize, v: Option<f64>) {
        let k = self.dims.industries;
        match (i < k, j < k) {
            (true, true) => self.intermediate.set(i, j, v),
            (true, false) => self.final_demand.set(i, j - k, v),
            (false, true) => self.value_added.set(i - k, j, v),
            (false, false) => panic!("the value-added/final-demand corner holds no cells"),
        }
    }

    /// Sum of present cells in frame row `i`.
    pub fn frame_row_sum(&self, i: usize) -> f64 {
        compensated_sum((0..self.dims.frame_cols()).filter_map(|j| self.frame_cell(i, j)))
    }

    /// Sum of present cells in frame column `j`.
    pub fn frame_col_sum(&self, j: usize) -> f64 {
        compensated_sum((0..self.dims.frame_rows()).filter_map(|i| self.frame_cell(i, j)))
    }

    pub fn is_balanced(&self, tol: f64) -> bool {
        validate_io_table(self, tol).is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    /// Industry row sum versus gross output; index is the industry.
    RowSum,
    /// Industry column sum versus gross output; index is the industry.
    ColumnSum,
    /// Linked final-demand-column / value-added-row totals; index unused.
    LinkedTotals,
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub kind: ConstraintKind,
    pub index: usize,
    /// Signed residual, actual minus required, in table units.
    pub residual: f64,
}

/// Checks the accounting identities and returns one entry per violated
/// constraint. `tol` is relative: a residual is a violation when it exceeds
/// `tol * max(1, |gross output|)`. Rows whose gross output is absent are
/// skipped, since there is nothing to compare against.
pub fn validate_io_table(table: &IOTable, tol: f64) -> Vec<Violation> {
    let dims = table.dims;
    let k = dims.industries;
    let mut violations = Vec::new();
    for i in 0..k {
        let Some(y) = table.gross_outputs[i] else { continue };
        let threshold = tol * y.abs().max(1.0);
        let row = table.frame_row_sum(i) - y;
        if row.abs() > threshold {
            violations.push(Violation { kind: ConstraintKind::RowSum, index: i, residual: row });
        }
        let col = table.frame_col_sum(i) - y;
        if col.abs() > threshold {
            violations.push(Violation { kind: ConstraintKind::ColumnSum, index: i, residual: col });
        }
    }
    if let (Some(fd), Some(gva)) = (dims.phi_fd, dims.phi_gva) {
        let col_total = compensated_sum((0..k).filter_map(|i| table.final_demand.get(i, fd)));
        let row_total = compensated_sum((0..k).filter_map(|j| table.value_added.get(gva, j)));
        let threshold = tol * col_total.abs().max(row_total.abs()).max(1.0);
        let residual = row_total - col_total;
        if residual.abs() > threshold {
            violations.push(Violation { kind: ConstraintKind::LinkedTotals, index: 0, residual });
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Table file format
// ---------------------------------------------------------------------------

/// Reads a labeled table grid. The file must match the dimensions exactly;
/// the TOTAL column is ignored on load and recomputed on write.
pub fn load_io_table(path: &Path, dims: IODimensions) -> Result<IOTable> {
    dims.validate()?;
    let rows = csvio::read_rows(path)?;
    let (k, l, m) = (dims.industries, dims.gva_rows, dims.fd_cols);
    if rows.len() != k + l + 2 {
        return Err(Error::parse(path, 0, format!("expected {} rows, got {}", k + l + 2, rows.len())));
    }

    let col_labels = dims.col_labels();
    let (header_line, header) = &rows[0];
    csvio::expect_fields(header, k + m + 2, path, *header_line)?;
    for (want, got) in col_labels.iter().zip(&header[1..]) {
        if want != got.trim() {
            return Err(Error::parse(path, *header_line, format!("expected column label {want:?}, got {got:?}")));
        }
    }

    let row_labels = dims.row_labels();
    let mut intermediate = CellGrid::absent(k, k);
    let mut final_demand = CellGrid::absent(k, m);
    let mut value_added = CellGrid::absent(l, k);
    let mut gross_outputs = vec![None; k];

    for (r, (line, fields)) in rows[1..].iter().enumerate() {
        csvio::expect_fields(fields, k + m + 2, path, *line)?;
        let want = &row_labels[r];
        if fields[0].trim() != want.as_str() {
            return Err(Error::parse(path, *line, format!("expected row label {want:?}, got {:?}", fields[0])));
        }
        // fields[1..=k] sit under industry columns, fields[k+1..=k+m] under
        // final-demand columns, the last field is TOTAL.
        for c in 0..k + m {
            let cell = csvio::parse_opt_f64(&fields[1 + c], path, *line)?;
            let in_fd_cols = c >= k;
            if r < k {
                if in_fd_cols {
                    final_demand.set(r, c - k, cell);
                } else {
                    intermediate.set(r, c, cell);
                }
            } else if r < k + l {
                if in_fd_cols {
                    if cell.is_some() {
                        return Err(Error::parse(path, *line, "value-added rows have no final-demand cells"));
                    }
                } else {
                    value_added.set(r - k, c, cell);
                }
            } else {
                // Gross-output row.
                if in_fd_cols {
                    if cell.is_some() {
                        return Err(Error::parse(path, *line, "the gross-output row has no final-demand cells"));
                    }
                } else {
                    gross_outputs[c] = cell;
                }
            }
        }
    }
    IOTable::new(dims, intermediate, final_demand, value_added, gross_outputs)
}

pub fn write_io_table(path: &Path, table: &IOTable) -> Result<()> {
    let dims = table.dims;
    let (k, l, m) = (dims.industries, dims.gva_rows, dims.fd_cols);
    let fmt = |v: Option<f64>| v.map(csvio::fmt_f64).unwrap_or_default();

    let mut rows: Vec<Vec<String>> = Vec::with_capacity(k + l + 2);
    let mut header = vec![String::new()];
    header.extend(dims.col_labels());
    rows.push(header);

    let row_labels = dims.row_labels();
    for i in 0..k + l {
        let mut row = vec![row_labels[i].clone()];
        for j in 0..k + m {
            row.push(fmt(table.frame_cell(i, j)));
        }
        row.push(csvio::fmt_f64(table.frame_row_sum(i)));
        rows.push(row);
    }
    let mut y_row = vec!["Y".to_string()];
    for j in 0..k {
        y_row.push(fmt(table.gross_outputs[j]));
    }
    y_row.extend(std::iter::repeat_with(String::new).take(m));
    y_row.push(csvio::fmt_f64(table.total));
    rows.push(y_row);

    csvio::write_rows(path, rows)
}

/// Recovers a table file's shape from its label row and column alone. The
/// linked row/column pair is not stored in the grid, so the result carries
/// no linked pair; callers that need one set it themselves.
pub fn infer_table_dims(path: &Path) -> Result<IODimensions> {
    let rows = csvio::read_rows(path)?;
    let Some(((line, header), body)) = rows.split_first() else {
        return Err(Error::parse(path, 0, "empty table file"));
    };
    let count = |labels: &mut dyn Iterator<Item = &String>, prefix: char| {
        labels
            .take_while(|l| {
                l.starts_with(prefix) && l[1..].chars().all(|c| c.is_ascii_digit()) && l.len() > 1
            })
            .count()
    };
    let k = count(&mut header.iter().skip(1), 'I');
    let m = count(&mut header.iter().skip(1 + k), 'D');
    let first_col: Vec<String> =
        body.iter().map(|(_, fields)| fields.first().cloned().unwrap_or_default()).collect();
    let l = count(&mut first_col.iter().skip(k), 'V');
    if k == 0 || m == 0 || l == 0 {
        return Err(Error::parse(path, *line, "could not read I/D/V labels from the table frame"));
    }
    let dims = IODimensions::new(k, l, m);
    if header[1..] != dims.col_labels()[..] || first_col.len() != k + l + 1 {
        return Err(Error::parse(path, *line, format!("labels do not form a {k}x{l}x{m} frame")));
    }
    for (want, got) in dims.row_labels().iter().zip(&first_col) {
        if want != got {
            return Err(Error::parse(path, *line, format!("row label {got} where {want} was expected")));
        }
    }
    Ok(dims)
}

// ---------------------------------------------------------------------------
// Region datasets
// ---------------------------------------------------------------------------

/// One economic variable of a region: a scalar or a vector indexed from 1 in
/// the files and from 0 here.
#[derive(Clone, Debug, PartialEq)]
pub enum VariableValue {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl VariableValue {
    pub fn len(&self) -> Option<usize> {
        match self {
            VariableValue::Scalar(_) => None,
            VariableValue::Vector(v) => Some(v.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariableSchema {
    pub name: String,
    /// `None` for scalars, vector length otherwise.
    pub len: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RegionRecord {
    pub region_id: String,
    pub name: String,
    /// Containing region, for nested units such as a city inside its
    /// prefecture. Mixtures must never combine a region with its ancestor.
    pub parent_id: Option<String>,
    /// Population aged 15 and over; the per-capita denominator.
    pub pop15: f64,
    pub variables: BTreeMap<String, VariableValue>,
    pub io_table: Option<IOTable>,
}

#[derive(Clone, Debug)]
pub struct RegionDataset {
    pub dims: IODimensions,
    pub regions: Vec<RegionRecord>,
    /// Union of variables across regions, sorted by name.
    pub schema: Vec<VariableSchema>,
}

impl RegionDataset {
    pub fn region(&self, id: &str) -> Option<&RegionRecord> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.regions.iter().position(|r| r.region_id == id)
    }

    /// True when `ancestor` appears on `id`'s parent chain (proper ancestor).
    pub fn is_ancestor(&self, ancestor: &str, id: &str) -> bool {
        let mut current = self.region(id).and_then(|r| r.parent_id.as_deref());
        let mut hops = 0;
        while let Some(p) = current {
            if p == ancestor {
                return true;
            }
            hops += 1;
            if hops > self.regions.len() {
                return false; // cycle; validation rejects these separately
            }
            current = self.region(p).and_then(|r| r.parent_id.as_deref());
        }
        false
    }

    /// True when the two regions are the same or one contains the other:
    /// such pairs must not appear together in a mixture, or the contained
    /// region's activity would be counted twice.
    pub fn overlaps(&self, a: &str, b: &str) -> bool {
        a == b || self.is_ancestor(a, b) || self.is_ancestor(b, a)
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        let mut seen = HashSet::new();
        for r in &self.regions {
            if r.region_id.is_empty()
                || !r.region_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(Error::InvalidData(format!(
                    "region id {:?} must be non-empty and use only letters, digits, '_' or '-'",
                    r.region_id
                )));
            }
            if !seen.insert(r.region_id.as_str()) {
                return Err(Error::InvalidData(format!("duplicate region id {:?}", r.region_id)));
            }
            if !(r.pop15.is_finite() && r.pop15 > 0.0) {
                return Err(Error::InvalidData(format!("region {:?} needs a positive population", r.region_id)));
            }
        }
        for r in &self.regions {
            if let Some(p) = &r.parent_id {
                if self.index_of(p).is_none() {
                    return Err(Error::InvalidData(format!(
                        "region {:?} references unknown parent {:?}",
                        r.region_id, p
                    )));
                }
            }
        }
        // Parent chains must terminate; walk each with a hop budget.
        for r in &self.regions {
            let mut hops = 0;
            let mut current = r.parent_id.as_deref();
            while let Some(p) = current {
                hops += 1;
                if hops > self.regions.len() {
                    return Err(Error::InvalidData(format!(
                        "containment cycle through region {:?}",
                        r.region_id
                    )));
                }
                current = self.region(p).and_then(|x| x.parent_id.as_deref());
            }
        }
        // Variable arity must agree with the schema everywhere.
        let schema: BTreeMap<&str, Option<usize>> =
            self.schema.iter().map(|s| (s.name.as_str(), s.len)).collect();
        for r in &self.regions {
            for (name, value) in &r.variables {
                if name.starts_with('@') {
                    return Err(Error::InvalidData(format!(
                        "variable name {name:?} uses the reserved '@' prefix"
                    )));
                }
                match schema.get(name.as_str()) {
                    Some(len) if *len == value.len() => {}
                    Some(len) => {
                        return Err(Error::InvalidData(format!(
                            "variable {name:?} has length {:?} in region {:?} but {len:?} in the schema",
                            value.len(),
                            r.region_id
                        )))
                    }
                    None => {
                        return Err(Error::InvalidData(format!(
                            "variable {name:?} in region {:?} is missing from the schema",
                            r.region_id
                        )))
                    }
                }
                match value {
                    VariableValue::Scalar(v) if !v.is_finite() => {
                        return Err(Error::InvalidData(format!("non-finite value for {name:?}")))
                    }
                    VariableValue::Vector(vs) if vs.iter().any(|v| !v.is_finite()) => {
                        return Err(Error::InvalidData(format!("non-finite value for {name:?}")))
                    }
                    _ => {}
                }
            }
            if let Some(t) = &r.io_table {
                if t.dims != self.dims {
                    return Err(Error::InvalidData(format!(
                        "table of region {:?} does not match the dataset dimensions",
                        r.region_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One row of the long variables format: `region_id,variable,idx1,idx2,value`.
/// Region datasets only use `idx1`; augmented-sample files additionally use
/// `idx2` for table cells.
#[derive(Clone, Debug)]
pub struct LongRow {
    pub line: usize,
    pub region: String,
    pub variable: String,
    pub idx1: Option<usize>,
    pub idx2: Option<usize>,
    pub value: f64,
}

pub const LONG_HEADER: [&str; 5] = ["region_id", "variable", "idx1", "idx2", "value"];

pub fn read_long_rows(path: &Path) -> Result<Vec<LongRow>> {
    let rows = csvio::read_rows(path)?;
    let Some(((header_line, header), body)) = rows.split_first() else {
        return Err(Error::parse(path, 0, "empty file"));
    };
    csvio::expect_fields(header, 5, path, *header_line)?;
    if header.iter().map(|s| s.trim()).ne(LONG_HEADER) {
        return Err(Error::parse(path, *header_line, format!("expected header {:?}", LONG_HEADER.join(","))));
    }
    let mut out = Vec::with_capacity(body.len());
    for (line, fields) in body {
        csvio::expect_fields(fields, 5, path, *line)?;
        out.push(LongRow {
            line: *line,
            region: fields[0].trim().to_string(),
            variable: fields[1].trim().to_string(),
            idx1: csvio::parse_opt_usize(&fields[2], path, *line)?,
            idx2: csvio::parse_opt_usize(&fields[3], path, *line)?,
            value: csvio::parse_f64(&fields[4], path, *line)?,
        });
    }
    Ok(out)
}

pub fn write_long_rows<'a>(path: &Path, rows: impl IntoIterator<Item = &'a LongRow>) -> Result<()> {
    let header = LONG_HEADER.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    let body = rows.into_iter().map(|r| {
        vec![
            r.region.clone(),
            r.variable.clone(),
            r.idx1.map(|i| i.to_string()).unwrap_or_default(),
            r.idx2.map(|i| i.to_string()).unwrap_or_default(),
            csvio::fmt_f64(r.value),
        ]
    });
    csvio::write_rows(path, std::iter::once(header).chain(body))
}

/// Groups long rows into per-region variable maps. Vector variables must use
/// indices 1..=len with no gaps or duplicates; `idx2` is rejected here.
fn assemble_variables(
    rows: &[LongRow],
    path: &Path,
) -> Result<HashMap<String, BTreeMap<String, VariableValue>>> {
    let mut scalars: HashMap<(String, String), f64> = HashMap::new();
    let mut vectors: HashMap<(String, String), BTreeMap<usize, f64>> = HashMap::new();
    for row in rows {
        if row.idx2.is_some() {
            return Err(Error::parse(path, row.line, "idx2 is reserved for sample files"));
        }
        let key = (row.region.clone(), row.variable.clone());
        match row.idx1 {
            None => {
                if scalars.insert(key, row.value).is_some() || vectors.contains_key(&(row.region.clone(), row.variable.clone())) {
                    return Err(Error::parse(path, row.line, format!("duplicate value for {:?}", row.variable)));
                }
            }
            Some(0) => return Err(Error::parse(path, row.line, "indices are 1-based")),
            Some(idx) => {
                if scalars.contains_key(&key) {
                    return Err(Error::parse(path, row.line, format!("{:?} is both scalar and indexed", row.variable)));
                }
                if vectors.entry(key).or_default().insert(idx, row.value).is_some() {
                    return Err(Error::parse(path, row.line, format!("duplicate value for {:?}", row.variable)));
                }
            }
        }
    }
    let mut out: HashMap<String, BTreeMap<String, VariableValue>> = HashMap::new();
    for ((region, name), v) in scalars {
        out.entry(region).or_default().insert(name, VariableValue::Scalar(v));
    }
    for ((region, name), entries) in vectors {
        let len = *entries.keys().last().expect("non-empty by construction");
        if entries.len() != len {
            return Err(Error::parse(
                path,
                0,
                format!("variable {name:?} of region {region:?} must cover indices 1..={len} without gaps"),
            ));
        }
        let vec = entries.into_values().collect();
        out.entry(region).or_default().insert(name, VariableValue::Vector(vec));
    }
    Ok(out)
}

/// Builds the schema as the union of variables across regions, verifying
/// that a name never switches between scalar and vector or changes length.
fn infer_schema(regions: &[RegionRecord]) -> Result<Vec<VariableSchema>> {
    let mut schema: BTreeMap<&str, Option<usize>> = BTreeMap::new();
    for r in regions {
        for (name, value) in &r.variables {
            match schema.entry(name.as_str()) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(value.len());
                }
                std::collections::btree_map::Entry::Occupied(e) => {
                    if *e.get() != value.len() {
                        return Err(Error::InvalidData(format!(
                            "variable {name:?} changes arity across regions"
                        )));
                    }
                }
            }
        }
    }
    Ok(schema.into_iter().map(|(name, len)| VariableSchema { name: name.into(), len }).collect())
}

const DIMS_HEADER: [&str; 5] = ["industries", "gva_rows", "fd_cols", "phi_fd", "phi_gva"];

pub fn load_dimensions(path: &Path) -> Result<IODimensions> {
    let rows = csvio::read_rows(path)?;
    if rows.len() != 2 {
        return Err(Error::parse(path, 0, "expected a header row and one value row"));
    }
    let (header_line, header) = &rows[0];
    csvio::expect_fields(header, 5, path, *header_line)?;
    if header.iter().map(|s| s.trim()).ne(DIMS_HEADER) {
        return Err(Error::parse(path, *header_line, format!("expected header {:?}", DIMS_HEADER.join(","))));
    }
    let (line, fields) = &rows[1];
    csvio::expect_fields(fields, 5, path, *line)?;
    let parse = |s: &String| -> Result<usize> {
        s.trim()
            .parse()
            .map_err(|_| Error::parse(path, *line, format!("expected a count, got {s:?}")))
    };
    // The linked pair is written 1-based like every other index in the files.
    let phi_fd = csvio::parse_opt_usize(&fields[3], path, *line)?;
    let phi_gva = csvio::parse_opt_usize(&fields[4], path, *line)?;
    let to_zero_based = |v: Option<usize>, what: &str| -> Result<Option<usize>> {
        match v {
            None => Ok(None),
            Some(0) => Err(Error::parse(path, *line, format!("{what} is 1-based"))),
            Some(n) => Ok(Some(n - 1)),
        }
    };
    let dims = IODimensions {
        industries: parse(&fields[0])?,
        gva_rows: parse(&fields[1])?,
        fd_cols: parse(&fields[2])?,
        phi_fd: to_zero_based(phi_fd, "phi_fd")?,
        phi_gva: to_zero_based(phi_gva, "phi_gva")?,
    };
    dims.validate()?;
    Ok(dims)
}

pub fn write_dimensions(path: &Path, dims: IODimensions) -> Result<()> {
    let header: Vec<String> = DIMS_HEADER.iter().map(|s| s.to_string()).collect();
    let row = vec![
        dims.industries.to_string(),
        dims.gva_rows.to_string(),
        dims.fd_cols.to_string(),
        dims.phi_fd.map(|v| (v + 1).to_string()).unwrap_or_default(),
        dims.phi_gva.map(|v| (v + 1).to_string()).unwrap_or_default(),
    ];
    csvio::write_rows(path, [header, row])
}

const REGIONS_HEADER: [&str; 4] = ["region_id", "name", "parent_id", "pop15"];

/// Loads `dims.csv`, `regions.csv`, `variables.csv` and any
/// `iotable_<region_id>.csv` files from a dataset directory.
pub fn load_region_dataset(dir: &Path) -> Result<RegionDataset> {
    let dims = load_dimensions(&dir.join("dims.csv"))?;

    let regions_path = dir.join("regions.csv");
    let rows = csvio::read_rows(&regions_path)?;
    let Some(((header_line, header), body)) = rows.split_first() else {
        return Err(Error::parse(&regions_path, 0, "empty file"));
    };
    csvio::expect_fields(header, 4, &regions_path, *header_line)?;
    if header.iter().map(|s| s.trim()).ne(REGIONS_HEADER) {
        return Err(Error::parse(
            &regions_path,
            *header_line,
            format!("expected header {:?}", REGIONS_HEADER.join(",")),
        ));
    }
    let mut regions = Vec::with_capacity(body.len());
    for (line, fields) in body {
        csvio::expect_fields(fields, 4, &regions_path, *line)?;
        let parent = fields[2].trim();
        regions.push(RegionRecord {
            region_id: fields[0].trim().to_string(),
            name: fields[1].trim().to_string(),
            parent_id: (!parent.is_empty()).then(|| parent.to_string()),
            pop15: csvio::parse_f64(&fields[3], &regions_path, *line)?,
            variables: BTreeMap::new(),
            io_table: None,
        });
    }

    let variables_path = dir.join("variables.csv");
    let long_rows = read_long_rows(&variables_path)?;
    let mut by_region = assemble_variables(&long_rows, &variables_path)?;
    for r in &mut regions {
        if let Some(vars) = by_region.remove(&r.region_id) {
            r.variables = vars;
        }
    }
    if let Some(unknown) = by_region.keys().next() {
        return Err(Error::InvalidData(format!(
            "variables.csv mentions region {unknown:?} which is not in regions.csv"
        )));
    }

    for r in &mut regions {
        let table_path = dir.join(format!("iotable_{}.csv", r.region_id));
        if table_path.exists() {
            r.io_table = Some(load_io_table(&table_path, dims)?);
        }
    }

    let schema = infer_schema(&regions)?;
    let dataset = RegionDataset { dims, regions, schema };
    dataset.validate()?;
    Ok(dataset)
}

pub fn write_region_dataset(dir: &Path, dataset: &RegionDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_dimensions(&dir.join("dims.csv"), dataset.dims)?;

    let mut region_rows: Vec<Vec<String>> = vec![REGIONS_HEADER.iter().map(|s| s.to_string()).collect()];
    for r in &dataset.regions {
        region_rows.push(vec![
            r.region_id.clone(),
            r.name.clone(),
            r.parent_id.clone().unwrap_or_default(),
            csvio::fmt_f64(r.pop15),
        ]);
    }
    csvio::write_rows(&dir.join("regions.csv"), region_rows)?;

    let mut long_rows: Vec<LongRow> = Vec::new();
    for r in &dataset.regions {
        for (name, value) in &r.variables {
            match value {
                VariableValue::Scalar(v) => long_rows.push(LongRow {
                    line: 0,
                    region: r.region_id.clone(),
                    variable: name.clone(),
                    idx1: None,
                    idx2: None,
                    value: *v,
                }),
                VariableValue::Vector(vs) => {
                    for (i, v) in vs.iter().enumerate() {
                        long_rows.push(LongRow {
                            line: 0,
                            region: r.region_id.clone(),
                            variable: name.clone(),
                            idx1: Some(i + 1),
                            idx2: None,
                            value: *v,
                        });
                    }
                }
            }
        }
    }
    write_long_rows(&dir.join("variables.csv"), &long_rows)?;

    for r in &dataset.regions {
        if let Some(t) = &r.io_table {
            write_io_table(&dir.join(format!("iotable_{}.csv", r.region_id)), t)?;
        }
    }
    Ok(())
}

/// Variable names reserved for augmented-sample files: table cells and the
/// population ride along in the long format under '@' names.
pub mod reserved {
    pub const POP15: &str = "@pop15";
    pub const INTERMEDIATE: &str = "@intermediate";
    pub const FINAL_DEMAND: &str = "@final_demand";
    pub const VALUE_ADDED: &str = "@value_added";
    pub const GROSS_OUTPUT: &str = "@gross_output";
}

/// Long-format rows for one region's population and variables, without table
/// cells: one population row under the reserved name, then one row per scalar
/// and per vector entry (1-based `idx1`).
pub fn region_variable_rows(
    region_id: &str,
    pop15: f64,
    variables: &BTreeMap<String, VariableValue>,
) -> Vec<LongRow> {
    let row = |variable: String, idx1: Option<usize>, value: f64| LongRow {
        line: 0,
        region: region_id.to_string(),
        variable,
        idx1,
        idx2: None,
        value,
    };
    let mut rows = vec![row(reserved::POP15.to_string(), None, pop15)];
    for (name, value) in variables {
        match value {
            VariableValue::Scalar(v) => rows.push(row(name.clone(), None, *v)),
            VariableValue::Vector(vs) => {
                rows.extend(vs.iter().enumerate().map(|(i, v)| row(name.clone(), Some(i + 1), *v)));
            }
        }
    }
    rows
}

/// Reads rows written by [`region_variable_rows`] back into a population and
/// variable map. Vector entries must be 1-based, dense and unique; `path` is
/// only used in error messages.
pub fn collect_region_variables(
    rows: &[LongRow],
    path: &Path,
) -> Result<(f64, BTreeMap<String, VariableValue>)> {
    let mut pop15 = None;
    let mut scalars: BTreeMap<String, f64> = BTreeMap::new();
    let mut vectors: BTreeMap<String, BTreeMap<usize, f64>> = BTreeMap::new();
    for row in rows {
        if row.idx2.is_some() {
            return Err(Error::parse(path, row.line, "idx2 is reserved for table cells"));
        }
        if row.variable == reserved::POP15 {
            if pop15.replace(row.value).is_some() {
                return Err(Error::parse(path, row.line, "duplicate population row"));
            }
            continue;
        }
        if row.variable.starts_with('@') {
            return Err(Error::parse(
                path,
                row.line,
                format!("unexpected reserved variable {}", row.variable),
            ));
        }
        match row.idx1 {
            None => {
                if scalars.insert(row.variable.clone(), row.value).is_some() {
                    return Err(Error::parse(path, row.line, format!("duplicate scalar {}", row.variable)));
                }
            }
            Some(0) => return Err(Error::parse(path, row.line, "vector indices are 1-based")),
            Some(i) => {
                if vectors.entry(row.variable.clone()).or_default().insert(i - 1, row.value).is_some() {
                    return Err(Error::parse(path, row.line, format!("duplicate entry {}[{i}]", row.variable)));
                }
            }
        }
    }
    let mut variables = BTreeMap::new();
    for (name, v) in scalars {
        if vectors.contains_key(&name) {
            return Err(Error::InvalidData(format!("variable {name} is both scalar and vector")));
        }
        variables.insert(name, VariableValue::Scalar(v));
    }
    for (name, entries) in vectors {
        let n = entries.len();
        let mut out = vec![0.0; n];
        for (i, v) in entries {
            if i >= n {
                return Err(Error::InvalidData(format!("variable {name} has index gaps")));
            }
            out[i] = v;
        }
        variables.insert(name, VariableValue::Vector(out));
    }
    let pop15 = pop15.ok_or_else(|| {
        Error::InvalidData(format!("{} lacks a {} row", path.display(), reserved::POP15))
    })?;
    if !(pop15.is_finite() && pop15 > 0.0) {
        return Err(Error::InvalidData(format!("population must be positive, got {pop15}")));
    }
    Ok((pop15, variables))
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    /// Balanced table built from a shared-ratio construction: row and column
    /// identities hold because the final-demand and value-added shares each
    /// sum to one and the output shares sum to one.
    pub(crate) fn balanced_fixture() -> IOTable {
        let dims = IODimensions::new(2, 2, 2).with_phi(0, 0);
        let y = [0.4, 0.6];
        let total = 250.0;
        let c = 0.5;
        let delta = [0.3, 0.7]; // final-demand shares, sum 1
        let nu = [0.3, 0.7]; // value-added shares, sum 1; nu[0]==delta[0] links the pair
        let a = CellGrid::from_fn(2, 2, |i, j| Some(total * c * y[i] * y[j]));
        let d = CellGrid::from_fn(2, 2, |i, g| Some(total * (1.0 - c) * y[i] * delta[g]));
        let v = CellGrid::from_fn(2, 2, |h, j| Some(total * (1.0 - c) * y[j] * nu[h]));
        let yv = y.iter().map(|s| Some(total * s)).collect();
        IOTable::new(dims, a, d, v, yv).unwrap()
    }

    #[test]
    fn balanced_fixture_validates_clean() {
        let t = balanced_fixture();
        assert!(validate_io_table(&t, 1e-6).is_empty());
        assert!(t.is_balanced(1e-9));
    }

    #[test]
    fn single_cell_perturbation_trips_exactly_two_constraints() {
        let mut t = balanced_fixture();
        let v = t.intermediate.get(0, 1).unwrap();
        t.intermediate.set(0, 1, Some(v + 1.0));
        let violations = validate_io_table(&t, 1e-6);
        assert_eq!(violations.len(), 2);
        assert_eq!(violations[0].kind, ConstraintKind::RowSum);
        assert_eq!(violations[0].index, 0);
        assert!((violations[0].residual - 1.0).abs() < 1e-9);
        assert_eq!(violations[1].kind, ConstraintKind::ColumnSum);
        assert_eq!(violations[1].index, 1);
        assert!((violations[1].residual - 1.0).abs() < 1e-9);
    }

    #[test]
    fn linked_totals_violation_is_reported() {
        let mut t = balanced_fixture();
        // Shift mass between the two value-added rows within one column:
        // rows and columns still balance, the linked pair no longer does.
        let col = 1;
        let top = t.value_added.get(0, col).unwrap();
        let bottom = t.value_added.get(1, col).unwrap();
        t.value_added.set(0, col, Some(top + 5.0));
        t.value_added.set(1, col, Some(bottom - 5.0));
        let violations = validate_io_table(&t, 1e-6);
        assert_eq!(violations.len(), 1);
        assert_eq!(violations[0].kind, ConstraintKind::LinkedTotals);
        assert!((violations[0].residual - 5.0).abs() < 1e-9);
    }

    #[test]
    fn table_file_roundtrip_is_bit_exact() {
        let dims = IODimensions::new(2, 1, 2);
        let a = CellGrid::from_fn(2, 2, |i, j| Some(0.1 * (i as f64 + 1.0) / (j as f64 + 3.0)));
        let mut d = CellGrid::from_fn(2, 2, |i, g| Some(-1.5 * (i + g) as f64 + 1.0 / 3.0));
        d.set(1, 0, None); // absent cell survives the round trip as absent
        let v = CellGrid::from_fn(1, 2, |_, j| Some(2.0_f64.powi(-(j as i32) - 20)));
        let y = vec![Some(123.456), None];
        let t = IOTable::new(dims, a, d, v, y).unwrap();

        let dir = tempdir().unwrap();
        let path = dir.path().join("iotable_x.csv");
        write_io_table(&path, &t).unwrap();
        let back = load_io_table(&path, dims).unwrap();
        assert_eq!(back.intermediate, t.intermediate);
        assert_eq!(back.final_demand, t.final_demand);
        assert_eq!(back.value_added, t.value_added);
        assert_eq!(back.gross_outputs, t.gross_outputs);
        assert_eq!(back.total.to_bits(), t.total.to_bits());
    }

    #[test]
    fn wrong_shape_is_a_parse_error() {
        let t = balanced_fixture();
        let dir = tempdir().unwrap();
        let path = dir.path().join("iotable_x.csv");
        write_io_table(&path, &t).unwrap();
        let err = load_io_table(&path, IODimensions::new(3, 2, 2)).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn dims_are_recoverable_from_the_label_frame() {
        let t = balanced_fixture();
        let dir = tempdir().unwrap();
        let path = dir.path().join("iotable_x.csv");
        write_io_table(&path, &t).unwrap();
        let dims = infer_table_dims(&path).unwrap();
        // The linked pair lives in the dataset metadata, not the grid.
        assert_eq!(dims, IODimensions::new(2, 2, 2));
        load_io_table(&path, dims).unwrap();

        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(infer_table_dims(&path).is_err());
    }

    fn tiny_dataset() -> RegionDataset {
        let dims = IODimensions::new(2, 2, 2).with_phi(0, 0);
        let mk = |id: &str, parent: Option<&str>, pop: f64, emp: [f64; 2]| RegionRecord {
            region_id: id.into(),
            name: format!("Region {id}"),
            parent_id: parent.map(str::to_string),
            pop15: pop,
            variables: BTreeMap::from([
                ("emp".to_string(), VariableValue::Vector(emp.to_vec())),
                ("income".to_string(), VariableValue::Scalar(pop * 3.5)),
            ]),
            io_table: Some(balanced_fixture()),
        };
        let regions = vec![
            mk("p1", None, 1000.0, [10.0, 20.0]),
            mk("p2", None, 2000.0, [15.0, 5.0]),
            mk("c1", Some("p1"), 300.0, [3.0, 6.0]),
        ];
        let schema = infer_schema(&regions).unwrap();
        RegionDataset { dims, regions, schema }
    }

    #[test]
    fn dataset_roundtrip_preserves_everything() {
        let ds = tiny_dataset();
        ds.validate().unwrap();
        let dir = tempdir().unwrap();
        write_region_dataset(dir.path(), &ds).unwrap();
        let back = load_region_dataset(dir.path()).unwrap();
        assert_eq!(back.dims, ds.dims);
        assert_eq!(back.schema, ds.schema);
        assert_eq!(back.regions.len(), 3);
        for (a, b) in back.regions.iter().zip(&ds.regions) {
            assert_eq!(a.region_id, b.region_id);
            assert_eq!(a.parent_id, b.parent_id);
            assert_eq!(a.pop15, b.pop15);
            assert_eq!(a.variables, b.variables);
            assert_eq!(a.io_table.as_ref().map(|t| t.total), b.io_table.as_ref().map(|t| t.total));
        }
    }

    #[test]
    fn ancestor_chains_and_overlap() {
        let mut ds = tiny_dataset();
        ds.regions.push(RegionRecord {
            region_id: "w1".into(),
            name: "Ward".into(),
            parent_id: Some("c1".into()),
            pop15: 50.0,
            variables: BTreeMap::new(),
            io_table: None,
        });
        assert!(ds.is_ancestor("p1", "c1"));
        assert!(ds.is_ancestor("p1", "w1"));
        assert!(!ds.is_ancestor("c1", "p1"));
        assert!(!ds.is_ancestor("p2", "c1"));
        assert!(ds.overlaps("w1", "p1"));
        assert!(ds.overlaps("p1", "p1"));
        assert!(!ds.overlaps("p1", "p2"));
    }

    #[test]
    fn duplicate_region_id_rejected() {
        let mut ds = tiny_dataset();
        ds.regions.push(ds.regions[0].clone());
        assert!(matches!(ds.validate(), Err(Error::InvalidData(_))));
    }

    #[test]
    fn containment_cycle_rejected() {
        let mut ds = tiny_dataset();
        ds.regions[0].parent_id = Some("c1".into()); // p1 -> c1 -> p1
        assert!(matches!(ds.validate(), Err(Error::InvalidData(_))));
    }

    #[test]
    fn reserved_variable_prefix_rejected() {
        let mut ds = tiny_dataset();
        ds.regions[0]
            .variables
            .insert("@pop15".into(), VariableValue::Scalar(1.0));
        ds.schema.push(VariableSchema { name: "@pop15".into(), len: None });
        assert!(matches!(ds.validate(), Err(Error::InvalidData(_))));
    }
}
