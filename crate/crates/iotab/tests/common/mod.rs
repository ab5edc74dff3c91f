//! Shared fixtures and independent oracles for the integration suites.
//!
//! The balancing oracles here deliberately avoid the library's solver
//! internals: the all-positive case is checked against plain iterative
//! proportional fitting, and the signed/linked case against a primal-dual
//! Newton method applied directly to the KKT system of the cross-entropy
//! program, using a hand-rolled dense Gaussian elimination.

#![allow(dead_code)]

use iotab::mat::Mat;
use iotab::net::{backward, forward_train, init_network, training_loss, NetworkConfig};
use iotab::rng::stream_rng;
use iotab::table::{CellGrid, IODimensions, IOTable};
use rand::Rng;

// ---------------------------------------------------------------------------
// Structured random balancing instances
// ---------------------------------------------------------------------------

pub struct Instance {
    pub truth: IOTable,
    pub prior: IOTable,
    /// Gross-output targets in table units; sums exactly to `total`.
    pub targets: Vec<f64>,
    pub total: f64,
}

pub struct InstanceShape {
    pub industries: usize,
    pub gva_rows: usize,
    pub fd_cols: usize,
    /// Link the first final-demand column to the first value-added row.
    pub use_phi: bool,
    /// Make the last final-demand column negative.
    pub negative_fd: bool,
    /// Make the second value-added row negative (needs a spare row beside
    /// the linked one).
    pub negative_gva: bool,
    pub total: f64,
}

/// Draws a balanced economy of the given shape plus a sign-preserving
/// multiplicative perturbation of it to use as the prior. Row, column and
/// link identities hold on the truth by construction, so the truth's gross
/// outputs are feasible targets for the perturbed prior.
pub fn structured_instance(shape: &InstanceShape, seed: u64) -> Instance {
    let k = shape.industries;
    let l = shape.gva_rows;
    let m = shape.fd_cols;
    assert!(k >= 2 && l >= 1 && m >= 1);
    if shape.negative_fd {
        assert!(m >= 2, "a negative column needs a positive one beside it");
    }
    if shape.negative_gva {
        assert!(l >= if shape.use_phi { 3 } else { 2 });
    }
    let mut rng = stream_rng(seed, 0);

    // Output shares and the intermediate intensity.
    let mut y: Vec<f64> = (0..k).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let ys: f64 = y.iter().sum();
    for v in &mut y {
        *v /= ys;
    }
    let c = 0.3 + 0.2 * rng.gen::<f64>();

    // Row-stochastic purchase pattern biased toward large suppliers. The
    // exp(+-0.3) jitter keeps every value-added column remainder positive
    // for c <= 0.5.
    let mut g = vec![vec![0.0; k]; k];
    for row in &mut g {
        for (j, v) in row.iter_mut().enumerate() {
            *v = y[j] * (0.6 * (rng.gen::<f64>() - 0.5)).exp();
        }
        let s: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= s;
        }
    }

    // Final-demand column shares; optionally a negative trade column last.
    let mut delta: Vec<f64> = (0..m).map(|_| 0.5 + rng.gen::<f64>()).collect();
    if shape.negative_fd {
        delta[m - 1] = -(0.1 + 0.1 * rng.gen::<f64>());
    }
    let pos_target = 1.0 - delta.iter().filter(|d| **d < 0.0).sum::<f64>();
    let pos_sum: f64 = delta.iter().filter(|d| **d > 0.0).sum();
    for d in &mut delta {
        if *d > 0.0 {
            *d *= pos_target / pos_sum;
        }
    }

    // Value-added row shares; the linked row mirrors the linked column's
    // share so both sides of the link carry the same total.
    let mut nu: Vec<f64> = (0..l).map(|_| 0.5 + rng.gen::<f64>()).collect();
    if shape.use_phi {
        nu[0] = delta[0];
    }
    if shape.negative_gva {
        nu[1] = -(0.05 + 0.05 * rng.gen::<f64>());
    }
    let fixed: f64 = nu
        .iter()
        .enumerate()
        .filter(|(h, v)| (shape.use_phi && *h == 0) || **v < 0.0)
        .map(|(_, v)| v)
        .sum();
    let free_target = 1.0 - fixed;
    let free_sum: f64 = nu
        .iter()
        .enumerate()
        .filter(|(h, v)| !(shape.use_phi && *h == 0) && **v > 0.0)
        .map(|(_, v)| v)
        .sum();
    for (h, v) in nu.iter_mut().enumerate() {
        if !(shape.use_phi && h == 0) && *v > 0.0 {
            *v *= free_target / free_sum;
        }
    }

    let total = shape.total;
    let a = |i: usize, j: usize| c * y[i] * g[i][j] * total;
    let fd_row = |i: usize| (1.0 - c) * y[i] * total;
    let va_col = |j: usize| y[j] * total - (0..k).map(|i| a(i, j)).sum::<f64>();

    let mut dims = IODimensions::new(k, l, m);
    if shape.use_phi {
        dims = dims.with_phi(0, 0);
    }
    let intermediate = CellGrid::from_fn(k, k, |i, j| Some(a(i, j)));
    let final_demand = CellGrid::from_fn(k, m, |i, col| Some(delta[col] * fd_row(i)));
    let value_added = CellGrid::from_fn(l, k, |h, j| Some(nu[h] * va_col(j)));
    let outputs: Vec<Option<f64>> = y.iter().map(|v| Some(v * total)).collect();
    let truth = IOTable::new(dims.clone(), intermediate, final_demand, value_added, outputs)
        .expect("structured truth shapes are consistent");

    // Sign-preserving perturbation: factors in [0.65, 1.35].
    let mut perturb = |v: Option<f64>| v.map(|x| x * (1.0 + 0.35 * (2.0 * rng.gen::<f64>() - 1.0)));
    let prior = IOTable::new(
        dims,
        CellGrid::from_fn(k, k, |i, j| perturb(truth.intermediate.get(i, j))),
        CellGrid::from_fn(k, m, |i, j| perturb(truth.final_demand.get(i, j))),
        CellGrid::from_fn(l, k, |h, j| perturb(truth.value_added.get(h, j))),
        truth.gross_outputs.iter().map(|v| perturb(*v)).collect(),
    )
    .expect("perturbed prior shapes are consistent");

    // Targets from the truth, with the rounding drift folded into the
    // largest entry so they sum to the total bit-exactly.
    let mut targets: Vec<f64> = truth.gross_outputs.iter().map(|v| v.unwrap()).collect();
    let drift = total - targets.iter().sum::<f64>();
    let argmax = (0..k).fold(0, |best, i| if targets[i] > targets[best] { i } else { best });
    targets[argmax] += drift;

    Instance { truth, prior, targets, total }
}

/// Dense frame of a table: `(K+L) x (K+M)` with absent cells and the
/// value-added/final-demand corner as zero, every entry divided by `total`.
/// The divisor is the target total, not the table's own sum: a perturbed
/// prior keeps its mass imbalance, exactly as the solver sees it.
pub fn normalized_frame(table: &IOTable, total: f64) -> Vec<Vec<f64>> {
    let k = table.dims.industries;
    let rows = k + table.dims.gva_rows;
    let cols = k + table.dims.fd_cols;
    (0..rows)
        .map(|i| (0..cols).map(|j| table.frame_cell(i, j).unwrap_or(0.0) / total).collect())
        .collect()
}

// ---------------------------------------------------------------------------
// Oracle 1: iterative proportional fitting (all-positive, no link)
// ---------------------------------------------------------------------------

/// Alternating row/column scaling on a nonnegative frame. Only the first
/// `k` rows and first `k` columns carry constraints; the others are never
/// rescaled, which is exactly the biproportional special case of the signed
/// problem when every cell is positive.
pub fn ipf_balance(frame: &[Vec<f64>], k: usize, y: &[f64], sweeps: usize) -> Vec<Vec<f64>> {
    let rows = frame.len();
    let cols = frame[0].len();
    assert!(frame.iter().flatten().all(|v| *v >= 0.0), "IPF needs a nonnegative frame");
    let mut p: Vec<Vec<f64>> = frame.to_vec();
    for _ in 0..sweeps {
        for i in 0..k {
            let rs: f64 = p[i].iter().sum();
            if rs > 0.0 {
                let f = y[i] / rs;
                for v in &mut p[i] {
                    *v *= f;
                }
            }
        }
        for j in 0..k {
            let cs: f64 = (0..rows).map(|i| p[i][j]).sum();
            if cs > 0.0 {
                let f = y[j] / cs;
                for row in p.iter_mut() {
                    row[j] *= f;
                }
            }
        }
    }
    let _ = cols;
    p
}

// ---------------------------------------------------------------------------
// Oracle 2: primal-dual Newton on the KKT system of the signed program
// ---------------------------------------------------------------------------

/// Dense Gaussian elimination with partial pivoting. Panics on a pivot
/// below 1e-12: the KKT matrices built here are nonsingular whenever the
/// constraint rows are independent, which holds for the fixtures used.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = a.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&r, &s| a[r][col].abs().total_cmp(&a[s][col].abs())).unwrap();
        assert!(a[pivot][col].abs() > 1e-12, "singular KKT matrix at column {col}");
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let mut s = b[r];
        for c in r + 1..n {
            s -= a[r][c] * x[c];
        }
        x[r] = s / a[r][r];
    }
    x
}

/// Minimizes `sum |p| ln(|p| / (e |p0|))` over the nonzero cells of the
/// normalized frame subject to the row, column and optional link equalities,
/// with every cell's sign pinned to the prior's. Returns the balanced frame.
///
/// Writing `p = s q` with `q > 0` makes the objective strictly convex and
/// the constraints linear, so the KKT system (stationarity plus primal
/// feasibility) has a unique root, found here by a damped Newton iteration
/// on the full primal-dual system.
pub fn kkt_balance(frame: &[Vec<f64>], k: usize, y: &[f64], phi: Option<(usize, usize)>) -> Vec<Vec<f64>> {
    let rows = frame.len();
    let cols = frame[0].len();
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if frame[i][j] != 0.0 {
                cells.push((i, j));
            }
        }
    }
    let n = cells.len();
    let sign: Vec<f64> = cells.iter().map(|&(i, j)| frame[i][j].signum()).collect();
    let q0: Vec<f64> = cells.iter().map(|&(i, j)| frame[i][j].abs()).collect();

    // Constraint rows in q-space: coefficients are the cell signs.
    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    for i in 0..k {
        let mut row = vec![0.0; n];
        for (idx, &(ci, _)) in cells.iter().enumerate() {
            if ci == i {
                row[idx] = sign[idx];
            }
        }
        a.push(row);
        b.push(y[i]);
    }
    for j in 0..k {
        let mut row = vec![0.0; n];
        for (idx, &(_, cj)) in cells.iter().enumerate() {
            if cj == j {
                row[idx] = sign[idx];
            }
        }
        a.push(row);
        b.push(y[j]);
    }
    if let Some((fd_col, gva_row)) = phi {
        let mut row = vec![0.0; n];
        for (idx, &(ci, cj)) in cells.iter().enumerate() {
            if cj == k + fd_col && ci < k {
                row[idx] += sign[idx];
            }
            if ci == k + gva_row && cj < k {
                row[idx] -= sign[idx];
            }
        }
        a.push(row);
        b.push(0.0);
    }
    let nc = a.len();

    let residual = |q: &[f64], lam: &[f64]| -> Vec<f64> {
        let mut r = vec![0.0; n + nc];
        for idx in 0..n {
            let mut grad = (q[idx] / q0[idx]).ln();
            for (cidx, lam_c) in lam.iter().enumerate() {
                grad += lam_c * a[cidx][idx];
            }
            r[idx] = grad;
        }
        for cidx in 0..nc {
            let mut s = -b[cidx];
            for idx in 0..n {
                s += a[cidx][idx] * q[idx];
            }
            r[n + cidx] = s;
        }
        r
    };
    let inf_norm = |r: &[f64]| r.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    let mut q = q0.clone();
    let mut lam = vec![0.0; nc];
    let mut norm = inf_norm(&residual(&q, &lam));
    for _ in 0..200 {
        if norm < 1e-12 {
            break;
        }
        let dim = n + nc;
        let mut kkt = vec![vec![0.0; dim]; dim];
        for idx in 0..n {
            kkt[idx][idx] = 1.0 / q[idx];
        }
        for cidx in 0..nc {
            for idx in 0..n {
                kkt[idx][n + cidx] = a[cidx][idx];
                kkt[n + cidx][idx] = a[cidx][idx];
            }
        }
        let rhs: Vec<f64> = residual(&q, &lam).iter().map(|v| -v).collect();
        let delta = solve_dense(kkt, rhs);

        // Keep q strictly positive, then backtrack to a residual decrease.
        let mut t = 1.0f64;
        for idx in 0..n {
            if delta[idx] < 0.0 {
                t = t.min(-0.9 * q[idx] / delta[idx]);
            }
        }
        t = t.min(1.0);
        let mut accepted = false;
        for _ in 0..60 {
            let q_new: Vec<f64> = (0..n).map(|i| q[i] + t * delta[i]).collect();
            let lam_new: Vec<f64> = (0..nc).map(|i| lam[i] + t * delta[n + i]).collect();
            if q_new.iter().all(|v| *v > 0.0) {
                let norm_new = inf_norm(&residual(&q_new, &lam_new));
                if norm_new < norm {
                    q = q_new;
                    lam = lam_new;
                    norm = norm_new;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        assert!(accepted, "KKT oracle line search stalled at residual {norm:.3e}");
    }
    assert!(norm < 1e-10, "KKT oracle did not converge: residual {norm:.3e}");

    let mut out = vec![vec![0.0; cols]; rows];
    for (idx, &(i, j)) in cells.iter().enumerate() {
        out[i][j] = sign[idx] * q[idx];
    }
    out
}

/// Max residual of the row, column and link identities of a balanced table
/// against the given targets, in units of the total (relative residual).
pub fn balance_residual(table: &IOTable, targets: &[f64], total: f64, use_phi: bool) -> f64 {
    let k = table.dims.industries;
    let frame = normalized_frame(table, total);
    let mut worst = 0.0f64;
    for i in 0..k {
        let rs: f64 = frame[i].iter().sum();
        worst = worst.max((rs - targets[i] / total).abs());
    }
    for j in 0..k {
        let cs: f64 = frame.iter().map(|r| r[j]).sum();
        worst = worst.max((cs - targets[j] / total).abs());
    }
    if use_phi {
        let (fd_col, gva_row) = (
            table.dims.phi_fd.expect("link column set"),
            table.dims.phi_gva.expect("link row set"),
        );
        let col_total: f64 = (0..k).map(|i| frame[i][k + fd_col]).sum();
        let row_total: f64 = (0..k).map(|j| frame[k + gva_row][j]).sum();
        worst = worst.max((col_total - row_total).abs());
    }
    worst
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

pub struct GradCheck {
    pub max_rel_err: f64,
    pub n_params: usize,
    pub seed_used: u64,
}

/// Compares backpropagated gradients of the training loss against central
/// finite differences over every trainable parameter. Fixtures whose ReLU
/// preactivations sit within 1e-3 of a gate boundary are redrawn (the loss
/// is not differentiable there, so differencing is meaningless).
pub fn gradient_check(cfg: &NetworkConfig, batch: usize, base_seed: u64) -> GradCheck {
    assert!(cfg.dropout_after.is_empty(), "gradient checks run without dropout");
    let mut seed = base_seed;
    loop {
        let mut rng = stream_rng(seed, 0);
        let params = init_network(cfg, &mut rng).expect("network init");
        let mut x = Mat::zeros(batch, cfg.input_dim);
        for v in x.as_mut_slice() {
            *v = 2.0 * rng.gen::<f64>() - 1.0;
        }
        let targets: Vec<f64> = (0..batch)
            .map(|_| match cfg.head {
                iotab::net::Head::Sigmoid => 0.2 + 0.6 * rng.gen::<f64>(),
                iotab::net::Head::Identity => 2.0 * rng.gen::<f64>() - 1.0,
            })
            .collect();
        let cache = forward_train(cfg, &params, &x, None).expect("forward");
        if cache.min_preactivation_magnitude() <= 1e-3 {
            seed += 1000;
            continue;
        }
        let (_, grads) = backward(cfg, &params, &cache, &targets);
        let analytic = grads.flatten();
        let theta = params.trainable();
        assert_eq!(analytic.len(), theta.len());

        let h = 1e-6;
        let mut max_rel = 0.0f64;
        for i in 0..theta.len() {
            let probe = |shift: f64| -> f64 {
                let mut t = theta.clone();
                t[i] += shift;
                let mut p = params.clone();
                p.set_trainable(&t);
                let c = forward_train(cfg, &p, &x, None).expect("forward");
                training_loss(cfg, &p, &c.predictions, &targets)
            };
            let fd = (probe(h) - probe(-h)) / (2.0 * h);
            let diff = (analytic[i] - fd).abs();
            let rel = if diff < 1e-8 { 0.0 } else { diff / analytic[i].abs().max(fd.abs()) };
            max_rel = max_rel.max(rel);
        }
        return GradCheck { max_rel_err: max_rel, n_params: theta.len(), seed_used: seed };
    }
}
