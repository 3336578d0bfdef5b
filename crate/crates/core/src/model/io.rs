//! JSON model documents.
//!
//! Matrices are stored as row-major nested arrays. Floats are written in the
//! shortest representation that parses back to the identical value.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::lpv::{Dims, LpvSsModel};
use super::net::{Activation, Layer, SchedulingNet};
use crate::data::NormalizationRecord;
use crate::error::{check_dim, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetDocument {
    pub activation: Activation,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub dims: Dims,
    pub d_zero: bool,
    pub matrices: Vec<Vec<Vec<f64>>>,
    pub net: NetDocument,
    #[serde(default)]
    pub ts: Option<f64>,
    #[serde(default)]
    pub x_hat_0: Option<Vec<f64>>,
    #[serde(default)]
    pub normalization: Option<NormalizationRecord>,
}

/// A model together with the metadata needed to use it on raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub model: LpvSsModel,
    pub ts: Option<f64>,
    /// Initial state estimated on the training record.
    pub x_hat_0: Option<Vec<f64>>,
    pub normalization: Option<NormalizationRecord>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| (0..m.ncols()).map(|c| m[(r, c)]).collect())
        .collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], expect_cols: usize) -> Result<DMatrix<f64>> {
    let mut flat = Vec::with_capacity(rows.len() * expect_cols);
    for row in rows {
        check_dim("matrix row length", expect_cols, row.len())?;
        flat.extend_from_slice(row);
    }
    Ok(DMatrix::from_row_slice(rows.len(), expect_cols, &flat))
}

impl ModelFile {
    pub fn new(model: LpvSsModel) -> Self {
        Self {
            model,
            ts: None,
            x_hat_0: None,
            normalization: None,
        }
    }

    pub fn to_document(&self) -> ModelDocument {
        let m = &self.model;
        let net = m.net();
        ModelDocument {
            dims: m.dims(),
            d_zero: m.d_zero(),
            matrices: m.matrices().iter().map(rows_of).collect(),
            net: NetDocument {
                activation: net.activation(),
                layers: net
                    .layers()
                    .iter()
                    .map(|l| LayerDocument {
                        weights: rows_of(&l.weights()),
                        bias: l.bias().to_vec(),
                    })
                    .collect(),
            },
            ts: self.ts,
            x_hat_0: self.x_hat_0.clone(),
            normalization: self.normalization.clone(),
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let dims = doc.dims;
        let matrices = doc
            .matrices
            .iter()
            .map(|rows| {
                check_dim("matrix block rows", dims.block_rows(), rows.len())?;
                matrix_from_rows(rows, dims.block_cols())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut layers = Vec::with_capacity(doc.net.layers.len());
        let mut prev = dims.n_x + dims.n_u;
        for l in &doc.net.layers {
            let w = matrix_from_rows(&l.weights, prev)?;
            prev = w.nrows();
            layers.push(Layer::new(&w, &l.bias)?);
        }
        let net = SchedulingNet::new(dims.n_x + dims.n_u, doc.net.activation, layers)?;
        let model = LpvSsModel::new(dims, doc.d_zero, &matrices, net)?;
        if let Some(x0) = &doc.x_hat_0 {
            check_dim("x_hat_0", dims.n_x, x0.len())?;
        }
        Ok(Self {
            model,
            ts: doc.ts,
            x_hat_0: doc.x_hat_0.clone(),
            normalization: doc.normalization.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_document())? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_document(&serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
