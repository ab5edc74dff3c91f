//! Estimation-error metrics, difference heatmaps and the error-rate
//! histogram.
//!
//! All comparisons run over cells where the actual table has a published
//! value; an absent estimate is read as zero (the estimator produced nothing
//! for a cell that exists). Five summary metrics are reported per scope:
//!
//! - STPE: sum of absolute errors over sum of absolute actuals
//! - MAD:  sum of absolute errors over N1
//! - U2:   root of sum of squared errors over root of sum of squared actuals
//! - RMSE: root of (sum of squared errors over N1)
//! - MAPE: mean of |error/actual| over N2
//!
//! where N1 counts cells whose actual and estimate are both nonzero, and N2
//! counts cells with nonzero actuals. A metric whose denominator is empty is
//! reported as absent, not as zero.

use std::path::Path;

use crate::csvio;
use crate::error::Result;
use crate::table::{CellGrid, IOTable};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MetricSet {
    pub stpe: Option<f64>,
    pub mad: Option<f64>,
    pub u2: Option<f64>,
    pub rmse: Option<f64>,
    pub mape: Option<f64>,
    /// Cells compared (actual present).
    pub n_cells: usize,
    /// Cells with both actual and estimate nonzero.
    pub n1: usize,
    /// Cells with nonzero actual.
    pub n2: usize,
    /// STPE numerator, kept so section numerators can be checked against the
    /// whole-table scope.
    pub sum_abs_err: f64,
    /// STPE denominator.
    pub sum_abs_actual: f64,
}

impl MetricSet {
    /// Computes the set from `(actual, estimate)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, f64)>) -> MetricSet {
        let mut n_cells = 0;
        let mut n1 = 0;
        let mut n2 = 0;
        let mut sum_abs_err = 0.0;
        let mut sum_sq_err = 0.0;
        let mut sum_abs_actual = 0.0;
        let mut sum_sq_actual = 0.0;
        let mut sum_abs_rate = 0.0;
        for (actual, estimate) in pairs {
            let err = estimate - actual;
            n_cells += 1;
            sum_abs_err += err.abs();
            sum_sq_err += err * err;
            sum_abs_actual += actual.abs();
            sum_sq_actual += actual * actual;
            if actual != 0.0 {
                n2 += 1;
                sum_abs_rate += (err / actual).abs();
                if estimate != 0.0 {
                    n1 += 1;
                }
            }
        }
        MetricSet {
            stpe: (sum_abs_actual > 0.0).then(|| sum_abs_err / sum_abs_actual),
            mad: (n1 > 0).then(|| sum_abs_err / n1 as f64),
            u2: (sum_sq_actual > 0.0).then(|| sum_sq_err.sqrt() / sum_sq_actual.sqrt()),
            rmse: (n1 > 0).then(|| (sum_sq_err / n1 as f64).sqrt()),
            mape: (n2 > 0).then(|| sum_abs_rate / n2 as f64),
            n_cells,
            n1,
            n2,
            sum_abs_err,
            sum_abs_actual,
        }
    }
}

/// Cell group over which one metric set is computed. The final-demand block
/// is additionally split around its last column, which holds net exports
/// (exports minus imports) and behaves very differently from consumption.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    All,
    Intermediate,
    FinalDemand,
    FinalDemandExNetExports,
    NetExports,
    GrossValueAdded,
    GrossOutput,
}

impl Scope {
    pub const ALL: [Scope; 7] = [
        Scope::All,
        Scope::Intermediate,
        Scope::FinalDemand,
        Scope::FinalDemandExNetExports,
        Scope::NetExports,
        Scope::GrossValueAdded,
        Scope::GrossOutput,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Scope::All => "all",
            Scope::Intermediate => "intermediate",
            Scope::FinalDemand => "final_demand",
            Scope::FinalDemandExNetExports => "final_demand_ex_net_exports",
            Scope::NetExports => "net_exports",
            Scope::GrossValueAdded => "gross_value_added",
            Scope::GrossOutput => "gross_output",
        }
    }
}

/// `(actual, estimate)` pairs for one scope: cells with a published actual
/// value, absent estimates read as zero.
fn scope_pairs(estimate: &IOTable, actual: &IOTable, scope: Scope) -> Vec<(f64, f64)> {
    assert_eq!(
        (estimate.dims.industries, estimate.dims.gva_rows, estimate.dims.fd_cols),
        (actual.dims.industries, actual.dims.gva_rows, actual.dims.fd_cols),
        "tables must share block shapes"
    );
    let dims = actual.dims;
    let (k, l, m) = (dims.industries, dims.gva_rows, dims.fd_cols);
    let mut pairs = Vec::new();
    let mut push = |act: Option<f64>, est: Option<f64>| {
        if let Some(a) = act {
            pairs.push((a, est.unwrap_or(0.0)));
        }
    };
    let fd_col_in_scope = |g: usize| match scope {
        Scope::FinalDemand => true,
        Scope::FinalDemandExNetExports => g + 1 != m,
        Scope::NetExports => g + 1 == m,
        _ => true,
    };
    if matches!(scope, Scope::All | Scope::Intermediate) {
        for i in 0..k {
            for j in 0..k {
                push(actual.intermediate.get(i, j), estimate.intermediate.get(i, j));
            }
        }
    }
    if matches!(
        scope,
        Scope::All | Scope::FinalDemand | Scope::FinalDemandExNetExports | Scope::NetExports
    ) {
        for i in 0..k {
            for g in 0..m {
                if fd_col_in_scope(g) {
                    push(actual.final_demand.get(i, g), estimate.final_demand.get(i, g));
                }
            }
        }
    }
    if matches!(scope, Scope::All | Scope::GrossValueAdded) {
        for h in 0..l {
            for j in 0..k {
                push(actual.value_added.get(h, j), estimate.value_added.get(h, j));
            }
        }
    }
    if matches!(scope, Scope::All | Scope::GrossOutput) {
        for i in 0..k {
            push(actual.gross_outputs[i], estimate.gross_outputs[i]);
        }
    }
    pairs
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub scopes: Vec<(Scope, MetricSet)>,
}

pub fn compute_metrics(estimate: &IOTable, actual: &IOTable) -> MetricsReport {
    let scopes = Scope::ALL
        .iter()
        .map(|&s| (s, MetricSet::from_pairs(scope_pairs(estimate, actual, s))))
        .collect();
    MetricsReport { scopes }
}

impl MetricsReport {
    pub fn get(&self, scope: Scope) -> &MetricSet {
        &self.scopes.iter().find(|(s, _)| *s == scope).expect("all scopes present").1
    }
}

pub fn write_metrics_csv(path: &Path, report: &MetricsReport) -> Result<()> {
    let fmt = |v: Option<f64>| v.map(csvio::fmt_f64).unwrap_or_default();
    let header = ["scope", "stpe", "mad", "u2", "rmse", "mape", "n_cells", "n1", "n2"]
        .map(str::to_string)
        .to_vec();
    let rows = report.scopes.iter().map(|(scope, m)| {
        vec![
            scope.label().to_string(),
            fmt(m.stpe),
            fmt(m.mad),
            fmt(m.u2),
            fmt(m.rmse),
            fmt(m.mape),
            m.n_cells.to_string(),
            m.n1.to_string(),
            m.n2.to_string(),
        ]
    });
    csvio::write_rows(path, std::iter::once(header).chain(rows))
}

// ---------------------------------------------------------------------------
// Heatmaps
// ---------------------------------------------------------------------------

/// Cell-wise difference grids shaped like the table frame plus a gross-output
/// row and a row-total column. `abs` holds |estimate - actual| (absent where
/// the actual is absent); `rate` holds the signed percentage error (absent
/// where the actual is absent or zero).
pub struct DiffHeatmaps {
    pub abs: CellGrid,
    pub rate: CellGrid,
}

pub fn diff_heatmaps(estimate: &IOTable, actual: &IOTable) -> DiffHeatmaps {
    assert_eq!(
        (estimate.dims.industries, estimate.dims.gva_rows, estimate.dims.fd_cols),
        (actual.dims.industries, actual.dims.gva_rows, actual.dims.fd_cols),
        "tables must share block shapes"
    );
    let dims = actual.dims;
    let (rows, cols) = (dims.frame_rows() + 1, dims.frame_cols() + 1);
    let mut abs = CellGrid::absent(rows, cols);
    let mut rate = CellGrid::absent(rows, cols);
    let mut put = |i: usize, j: usize, act: Option<f64>, est: Option<f64>| {
        let Some(a) = act else { return };
        let e = est.unwrap_or(0.0);
        abs.set(i, j, Some((e - a).abs()));
        if a != 0.0 {
            rate.set(i, j, Some((e - a) / a * 100.0));
        }
    };

    for i in 0..dims.frame_rows() {
        for j in 0..dims.frame_cols() {
            put(i, j, actual.frame_cell(i, j), estimate.frame_cell(i, j));
        }
        // Row-total column; absent when the actual row is entirely absent.
        let any_actual = (0..dims.frame_cols()).any(|j| actual.frame_cell(i, j).is_some());
        let act_total = any_actual.then(|| actual.frame_row_sum(i));
        put(i, dims.frame_cols(), act_total, Some(estimate.frame_row_sum(i)));
    }
    let y_row = dims.frame_rows();
    for j in 0..dims.industries {
        put(y_row, j, actual.gross_outputs[j], estimate.gross_outputs[j]);
    }
    put(y_row, dims.frame_cols(), Some(actual.total), Some(estimate.total));
    DiffHeatmaps { abs, rate }
}

pub fn write_heatmap_csv(path: &Path, dims: crate::table::IODimensions, grid: &CellGrid) -> Result<()> {
    let mut header = vec![String::new()];
    header.extend(dims.col_labels());
    let row_labels = dims.row_labels();
    let rows = (0..grid.rows()).map(|i| {
        let mut row = vec![row_labels[i].clone()];
        row.extend((0..grid.cols()).map(|j| grid.get(i, j).map(csvio::fmt_f64).unwrap_or_default()));
        row
    });
    csvio::write_rows(path, std::iter::once(header).chain(rows))
}

/// Renders a labeled color grid. Values are colored on a log scale when
/// `log_scale` is set (absolute differences span orders of magnitude) and
/// linearly otherwise; absent cells are hatched gray.
pub fn render_heatmap_svg(dims: crate::table::IODimensions, grid: &CellGrid, log_scale: bool) -> String {
    const CELL: f64 = 22.0;
    const MARGIN: f64 = 60.0;
    let (rows, cols) = (grid.rows(), grid.cols());
    let width = MARGIN + CELL * cols as f64 + 10.0;
    let height = MARGIN + CELL * rows as f64 + 10.0;

    let values: Vec<f64> = (0..rows)
        .flat_map(|i| (0..cols).filter_map(move |j| grid.get(i, j)))
        .collect();
    let transform = |v: f64| -> f64 {
        if log_scale {
            // Clamp tiny magnitudes so exact zeros stay at the cold end.
            (v.abs().max(1e-12)).log10()
        } else {
            v
        }
    };
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in &values {
        let t = transform(v);
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if !lo.is_finite() || lo == hi {
        lo = 0.0;
        hi = 1.0;
    }

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         font-family=\"monospace\" font-size=\"9\">\n"
    ));
    let row_labels = dims.row_labels();
    let col_labels = dims.col_labels();
    for (j, label) in col_labels.iter().enumerate().take(cols) {
        let x = MARGIN + CELL * (j as f64 + 0.5);
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            MARGIN - 6.0
        ));
    }
    for (i, label) in row_labels.iter().enumerate().take(rows) {
        let y = MARGIN + CELL * (i as f64 + 0.65);
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\">{label}</text>\n",
            MARGIN - 6.0
        ));
    }
    for i in 0..rows {
        for j in 0..cols {
            let x = MARGIN + CELL * j as f64;
            let y = MARGIN + CELL * i as f64;
            let style = match grid.get(i, j) {
                None => "fill:#d8d8d8".to_string(),
                Some(v) => {
                    let f = ((transform(v) - lo) / (hi - lo)).clamp(0.0, 1.0);
                    // White to deep blue ramp.
                    let r = (255.0 * (1.0 - f * 0.85)) as u8;
                    let g = (255.0 * (1.0 - f * 0.70)) as u8;
                    let b = (255.0 * (1.0 - f * 0.25)) as u8;
                    format!("fill:rgb({r},{g},{b})")
                }
            };
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{CELL}\" height=\"{CELL}\" \
                 style=\"{style};stroke:#888;stroke-width:0.5\"/>\n"
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

// ---------------------------------------------------------------------------
// Error-rate histogram
// ---------------------------------------------------------------------------

/// Histogram of signed percentage errors over all cells with nonzero actual
/// values. Interior bins are half-open `[lower, upper)` spanning (-100, 100);
/// everything at or below -100% falls into the left tail, everything at or
/// above +100% into the right tail.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub bin_width: f64,
    pub left_tail: usize,
    /// Counts for interior bins; bin `k` covers
    /// `[-100 + k*bin_width, -100 + (k+1)*bin_width)`.
    pub interior: Vec<usize>,
    pub right_tail: usize,
}

impl Histogram {
    pub fn total_count(&self) -> usize {
        self.left_tail + self.right_tail + self.interior.iter().sum::<usize>()
    }
}

pub fn error_rate_histogram(estimate: &IOTable, actual: &IOTable, bin_width: f64) -> Histogram {
    assert!(bin_width > 0.0 && bin_width.is_finite(), "bin width must be positive");
    let n_interior = (200.0 / bin_width).ceil() as usize;
    let mut hist =
        Histogram { bin_width, left_tail: 0, interior: vec![0; n_interior], right_tail: 0 };
    for (actual_v, estimate_v) in scope_pairs(estimate, actual, Scope::All) {
        if actual_v == 0.0 {
            continue;
        }
        let rate = (estimate_v - actual_v) / actual_v * 100.0;
        if rate <= -100.0 {
            hist.left_tail += 1;
        } else if rate >= 100.0 {
            hist.right_tail += 1;
        } else {
            let idx = (((rate + 100.0) / bin_width).floor() as usize).min(n_interior - 1);
            hist.interior[idx] += 1;
        }
    }
    hist
}

pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let header = vec!["lower".to_string(), "upper".to_string(), "count".to_string()];
    let mut rows = vec![vec![String::new(), "-100".to_string(), hist.left_tail.to_string()]];
    for (k, count) in hist.interior.iter().enumerate() {
        let lower = -100.0 + k as f64 * hist.bin_width;
        let upper = (lower + hist.bin_width).min(100.0);
        rows.push(vec![csvio::fmt_f64(lower), csvio::fmt_f64(upper), count.to_string()]);
    }
    rows.push(vec!["100".to_string(), String::new(), hist.right_tail.to_string()]);
    csvio::write_rows(path, std::iter::once(header).chain(rows))
}
