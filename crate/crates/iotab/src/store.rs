//! On-disk format for trained item models.
//!
//! Each item gets its own directory named after its address
//! (`models/a_2_5/` and so on) holding:
//!
//! * `meta.csv` — key/value rows: the address, model kind, the full network
//!   configuration echo and training summary;
//! * `scaler.csv` — the target transform (`kind,p1,p2`);
//! * `weights.bin` — every tensor as little-endian 64-bit floats, row-major,
//!   in a fixed order: input layer W then b; each block W, b, γ, β,
//!   running mean, running variance; head W then b (absent for constants);
//! * `history.csv` — per-epoch training and validation loss.
//!
//! All floats in the CSV files use the shortest round-trip formatting, so a
//! save/load cycle reproduces the model bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::csvio::{fmt_f64, read_rows, write_rows};
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::net::{Head, NetworkConfig, NetworkParams};
use crate::targets::{ItemAddress, ItemScaler};
use crate::train::{EpochStats, TrainedItemModel};

fn meta_path(dir: &Path) -> PathBuf {
    dir.join("meta.csv")
}

/// Serialization order of the parameter tensors, including running
/// statistics. Shared by the writer and the reader so the two cannot drift.
fn tensor_views(params: &NetworkParams) -> Vec<&[f64]> {
    let mut out: Vec<&[f64]> = vec![params.input.w.as_slice(), &params.input.b];
    for (lin, bn) in &params.blocks {
        out.push(lin.w.as_slice());
        out.push(&lin.b);
        out.push(&bn.gamma);
        out.push(&bn.beta);
        out.push(&bn.running_mean);
        out.push(&bn.running_var);
    }
    out.push(params.head.w.as_slice());
    out.push(&params.head.b);
    out
}

fn tensor_views_mut(params: &mut NetworkParams) -> Vec<&mut [f64]> {
    let mut out: Vec<&mut [f64]> = Vec::new();
    out.push(params.input.w.as_mut_slice());
    out.push(&mut params.input.b);
    for (lin, bn) in &mut params.blocks {
        out.push(lin.w.as_mut_slice());
        out.push(&mut lin.b);
        out.push(&mut bn.gamma);
        out.push(&mut bn.beta);
        out.push(&mut bn.running_mean);
        out.push(&mut bn.running_var);
    }
    out.push(params.head.w.as_mut_slice());
    out.push(&mut params.head.b);
    out
}

fn write_weights(path: &Path, params: &NetworkParams) -> Result<()> {
    let mut bytes = Vec::new();
    for view in tensor_views(params) {
        for v in view {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_weights(path: &Path, cfg: &NetworkConfig) -> Result<NetworkParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    // Build a zero-shaped parameter set and fill it in declaration order.
    let mut params = NetworkParams {
        input: zero_linear(cfg.width, cfg.input_dim),
        blocks: (0..cfg.n_blocks)
            .map(|_| (zero_linear(cfg.width, cfg.width), zero_bn(cfg.width)))
            .collect(),
        head: zero_linear(1, cfg.width),
    };
    let views = tensor_views_mut(&mut params);
    let expected: usize = views.iter().map(|v| v.len()).sum::<usize>() * 8;
    if bytes.len() != expected {
        return Err(Error::InvalidData(format!(
            "{} holds {} bytes but the configuration needs {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let mut pos = 0;
    for view in views {
        for v in view {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[pos..pos + 8]);
            *v = f64::from_le_bytes(b);
            pos += 8;
        }
    }
    Ok(params)
}

fn zero_linear(out_dim: usize, in_dim: usize) -> crate::net::Linear {
    crate::net::Linear { w: Mat::zeros(out_dim, in_dim), b: vec![0.0; out_dim] }
}

fn zero_bn(width: usize) -> crate::net::BatchNorm {
    crate::net::BatchNorm {
        gamma: vec![0.0; width],
        beta: vec![0.0; width],
        running_mean: vec![0.0; width],
        running_var: vec![0.0; width],
    }
}

fn join_usizes(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split_usizes(s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|p| p.parse().map_err(|_| Error::InvalidData(format!("bad index list entry {p:?}"))))
        .collect()
}

/// Persists one trained model under `models_dir/<address>/`, replacing any
/// previous copy, and returns the model directory.
pub fn save_item_model(models_dir: &Path, model: &TrainedItemModel) -> Result<PathBuf> {
    let dir = models_dir.join(model.address.to_string());
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut meta: Vec<Vec<String>> = vec![
        vec!["key".into(), "value".into()],
        vec!["address".into(), model.address.to_string()],
        vec!["kind".into(), if model.network.is_some() { "network" } else { "constant" }.into()],
        vec!["pipeline_ref".into(), model.pipeline_ref.clone()],
    ];
    if let Some((cfg, _)) = &model.network {
        let pairs: Vec<(&str, String)> = vec![
            ("head", cfg.head.name().into()),
            ("input_dim", cfg.input_dim.to_string()),
            ("width", cfg.width.to_string()),
            ("n_blocks", cfg.n_blocks.to_string()),
            ("dropout_after", join_usizes(&cfg.dropout_after)),
            ("dropout_prob", fmt_f64(cfg.dropout_prob)),
            ("batch_norm", cfg.batch_norm.to_string()),
            ("l1_lambda", fmt_f64(cfg.l1_lambda)),
            ("batch_size", cfg.batch_size.to_string()),
            ("momentum", fmt_f64(cfg.momentum)),
            ("lr_lo", fmt_f64(cfg.lr_lo)),
            ("lr_hi", fmt_f64(cfg.lr_hi)),
            ("lr_step", cfg.lr_step.to_string()),
            ("max_epochs", cfg.max_epochs.to_string()),
            ("patience", cfg.patience.to_string()),
            ("val_fraction", fmt_f64(cfg.val_fraction)),
            ("rng_seed", cfg.rng_seed.to_string()),
            ("epochs_run", model.history.len().to_string()),
        ];
        for (k, v) in pairs {
            meta.push(vec![k.into(), v]);
        }
        if let Some(b) = model.best_val_loss {
            meta.push(vec!["best_val_loss".into(), fmt_f64(b)]);
        }
    }
    write_rows(&meta_path(&dir), &meta)?;

    let [kind, p1, p2] = model.scaler.to_fields();
    write_rows(
        &dir.join("scaler.csv"),
        &[vec!["kind".into(), "p1".into(), "p2".into()], vec![kind, p1, p2]],
    )?;

    if let Some((_, params)) = &model.network {
        write_weights(&dir.join("weights.bin"), params)?;
    }

    let mut hist: Vec<Vec<String>> =
        vec![vec!["epoch".into(), "train_loss".into(), "val_loss".into()]];
    for h in &model.history {
        hist.push(vec![h.epoch.to_string(), fmt_f64(h.train_loss), fmt_f64(h.val_loss)]);
    }
    write_rows(&dir.join("history.csv"), &hist)?;

    Ok(dir)
}

fn meta_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let rows = read_rows(path)?;
    let mut map = BTreeMap::new();
    for (line, fields) in rows.iter().skip(1) {
        if fields.len() != 2 {
            return Err(Error::parse(path, *line, "expected key,value"));
        }
        map.insert(fields[0].clone(), fields[1].clone());
    }
    Ok(map)
}

fn meta_get<'a>(map: &'a BTreeMap<String, String>, key: &str, path: &Path) -> Result<&'a str> {
    map.get(key)
        .map(String::as_str)
        .ok_or_else(|| Error::InvalidData(format!("{} lacks key {key:?}", path.display())))
}

/// Loads the model stored for `address` under `models_dir`.
pub fn load_item_model(models_dir: &Path, address: ItemAddress) -> Result<TrainedItemModel> {
    let dir = models_dir.join(address.to_string());
    let mpath = meta_path(&dir);
    let meta = meta_map(&mpath)?;

    let stored = meta_get(&meta, "address", &mpath)?;
    if ItemAddress::parse(stored) != Some(address) {
        return Err(Error::InvalidData(format!(
            "model directory {} holds address {stored:?}",
            dir.display()
        )));
    }
    let pipeline_ref = meta_get(&meta, "pipeline_ref", &mpath)?.to_string();

    let scaler_path = dir.join("scaler.csv");
    let srows = read_rows(&scaler_path)?;
    let (line, fields) = srows
        .get(1)
        .ok_or_else(|| Error::parse(&scaler_path, 1, "missing scaler row"))?;
    if fields.len() != 3 {
        return Err(Error::parse(&scaler_path, *line, "expected kind,p1,p2"));
    }
    let scaler = ItemScaler::from_fields(&fields[0], &fields[1], &fields[2])?;

    let hist_path = dir.join("history.csv");
    let mut history = Vec::new();
    for (line, fields) in read_rows(&hist_path)?.iter().skip(1) {
        if fields.len() != 3 {
            return Err(Error::parse(&hist_path, *line, "expected epoch,train_loss,val_loss"));
        }
        let bad = |what: &str| Error::parse(&hist_path, *line, format!("bad {what}"));
        history.push(EpochStats {
            epoch: fields[0].parse().map_err(|_| bad("epoch"))?,
            train_loss: fields[1].parse().map_err(|_| bad("train_loss"))?,
            val_loss: fields[2].parse().map_err(|_| bad("val_loss"))?,
        });
    }

    let network = match meta_get(&meta, "kind", &mpath)? {
        "constant" => None,
        "network" => {
            let get = |k: &str| meta_get(&meta, k, &mpath);
            let int = |k: &str| -> Result<usize> {
                get(k)?.parse().map_err(|_| Error::InvalidData(format!("bad integer for {k}")))
            };
            let num = |k: &str| -> Result<f64> {
                get(k)?.parse().map_err(|_| Error::InvalidData(format!("bad number for {k}")))
            };
            let cfg = NetworkConfig {
                input_dim: int("input_dim")?,
                width: int("width")?,
                n_blocks: int("n_blocks")?,
                dropout_after: split_usizes(get("dropout_after")?)?,
                dropout_prob: num("dropout_prob")?,
                batch_norm: get("batch_norm")? == "true",
                head: Head::parse(get("head")?)?,
                l1_lambda: num("l1_lambda")?,
                batch_size: int("batch_size")?,
                momentum: num("momentum")?,
                lr_lo: num("lr_lo")?,
                lr_hi: num("lr_hi")?,
                lr_step: int("lr_step")?,
                max_epochs: int("max_epochs")?,
                patience: int("patience")?,
                val_fraction: num("val_fraction")?,
                rng_seed: get("rng_seed")?
                    .parse()
                    .map_err(|_| Error::InvalidData("bad rng_seed".into()))?,
            };
            let params = read_weights(&dir.join("weights.bin"), &cfg)?;
            if !params.all_finite() {
                return Err(Error::InvalidData(format!(
                    "weights for {address} contain non-finite values"
                )));
            }
            Some((cfg, params))
        }
        other => {
            return Err(Error::InvalidData(format!("unknown model kind {other:?}")));
        }
    };

    let best_val_loss = match meta.get("best_val_loss") {
        Some(v) => Some(
            v.parse::<f64>()
                .map_err(|_| Error::InvalidData("bad best_val_loss".into()))?,
        ),
        None => None,
    };

    Ok(TrainedItemModel { address, scaler, network, history, best_val_loss, pipeline_ref })
}

/// True when a saved model exists for the address.
pub fn model_exists(models_dir: &Path, address: ItemAddress) -> bool {
    meta_path(&models_dir.join(address.to_string())).is_file()
}
