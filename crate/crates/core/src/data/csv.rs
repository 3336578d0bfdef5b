//! Dataset CSV files with a JSON sidecar.
//!
//! One header row `t,u1..,y1..[,w1..]` followed by one row per sample. Values
//! are written in scientific notation with 17 significant digits. The sidecar
//! lives next to the CSV with a `.json` extension.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, NormalizationRecord};
use crate::error::{Error, Result};
use crate::series::Series;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub ts: f64,
    pub samples: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    /// `None` when no noise was injected.
    #[serde(default)]
    pub snr_db: Option<f64>,
    /// Per-channel noise variance used when generating the data.
    #[serde(default)]
    pub sigma_e_realized: Option<Vec<f64>>,
    /// Standardization statistics of this dataset.
    #[serde(default)]
    pub stats: Option<NormalizationRecord>,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("writing to a String cannot fail");
}

pub fn dataset_to_csv(d: &Dataset) -> String {
    let mut out = String::from("t");
    for i in 1..=d.n_u() {
        write!(out, ",u{i}").unwrap();
    }
    for i in 1..=d.n_y() {
        write!(out, ",y{i}").unwrap();
    }
    if d.w.is_some() {
        for i in 1..=d.n_y() {
            write!(out, ",w{i}").unwrap();
        }
    }
    out.push('\n');
    for k in 0..d.len() {
        fmt_f64(&mut out, k as f64 * d.ts);
        let w = d.w.as_ref().map(|w| w.row(k)).unwrap_or(&[]);
        for v in d.u.row(k).iter().chain(d.y.row(k)).chain(w) {
            out.push(',');
            fmt_f64(&mut out, *v);
        }
        out.push('\n');
    }
    out
}

/// Writes `d` (in physical units) and its sidecar.
pub fn write_dataset(d: &Dataset, path: &Path, meta: &DatasetMeta) -> Result<()> {
    if d.normalization.is_some() {
        return Err(Error::InvalidArgument("datasets are stored in physical units; denormalize first".into()));
    }
    fs::write(path, dataset_to_csv(d))?;
    fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

/// Reads a dataset and, if present, its sidecar.
pub fn read_dataset(path: &Path) -> Result<(Dataset, Option<DatasetMeta>)> {
    let text = fs::read_to_string(path)?;
    let side = sidecar_path(path);
    let meta: Option<DatasetMeta> = if side.exists() {
        Some(serde_json::from_str(&fs::read_to_string(side)?)?)
    } else {
        None
    };
    let d = parse_csv(&text, meta.as_ref().map(|m| m.ts))?;
    Ok((d, meta))
}

fn channel_columns(header: &[&str], prefix: char) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = Vec::new();
    for (col, name) in header.iter().enumerate() {
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Ok(i) = rest.parse::<usize>() {
                found.push((i, col));
            }
        }
    }
    found.sort_unstable();
    for (expected, (i, _)) in (1..).zip(&found) {
        if *i != expected {
            return Err(Error::MissingColumn(format!("{prefix}{expected}")));
        }
    }
    Ok(found.into_iter().map(|(_, c)| c).collect())
}

pub fn parse_csv(text: &str, ts_hint: Option<f64>) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "empty file".into(),
    })?;
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    let t_col = header
        .iter()
        .position(|h| *h == "t")
        .ok_or_else(|| Error::MissingColumn("t".into()))?;
    let u_cols = channel_columns(&header, 'u')?;
    let y_cols = channel_columns(&header, 'y')?;
    let w_cols = channel_columns(&header, 'w')?;
    if u_cols.is_empty() {
        return Err(Error::MissingColumn("u1".into()));
    }
    if y_cols.is_empty() {
        return Err(Error::MissingColumn("y1".into()));
    }
    if !w_cols.is_empty() && w_cols.len() != y_cols.len() {
        return Err(Error::MissingColumn(format!("w{}", w_cols.len() + 1)));
    }
    let (mut t, mut u, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (idx, line) in lines {
        let line_no = idx + 1;
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {} cells, found {}", header.len(), cells.len()),
            });
        }
        let num = |c: usize| -> Result<f64> {
            cells[c].trim().parse::<f64>().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("non-numeric cell `{}` in column `{}`", cells[c], header[c]),
            })
        };
        t.push(num(t_col)?);
        for &c in &u_cols {
            u.push(num(c)?);
        }
        for &c in &y_cols {
            y.push(num(c)?);
        }
        for &c in &w_cols {
            w.push(num(c)?);
        }
    }
    let ts = match ts_hint {
        Some(ts) => ts,
        None if t.len() >= 2 => t[1] - t[0],
        None => {
            return Err(Error::InvalidArgument(
                "cannot infer sampling time from fewer than two rows without a sidecar".into(),
            ))
        }
    };
    let mut d = Dataset::new(ts, Series::new(u_cols.len(), u)?, Series::new(y_cols.len(), y)?)?;
    if !w_cols.is_empty() {
        d = d.with_truth(Series::new(w_cols.len(), w)?)?;
    }
    Ok(d)
}
