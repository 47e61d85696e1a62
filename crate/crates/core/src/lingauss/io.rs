//! Dataset CSV and model JSON formats.
//!
//! Datasets are CSV files with the header `x_0..x_{d-1}, u_0..u_{m-1},
//! v_0..v_{n-1}`; values are written in shortest round-trip form so a file
//! reproduces its matrices bit for bit. The model sidecar is JSON holding the
//! dimensions, noise scale, seed and the three loading matrices as row-major
//! arrays.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{LabeledDataset, LinGaussModel, ModelDims};
use crate::error::{Error, Result};
use crate::io::{csv_writer, write_atomic, DenseArray};

pub const MODEL_FORMAT: &str = "hcv-lingauss-model/1";

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    format: String,
    dims: ModelDims,
    noise_scale: f64,
    seed: u64,
    a: DenseArray,
    b: DenseArray,
    c: DenseArray,
}

pub fn model_to_json(model: &LinGaussModel) -> Result<String> {
    let file = ModelFile {
        format: MODEL_FORMAT.to_string(),
        dims: model.dims,
        noise_scale: model.noise_scale,
        seed: model.seed,
        a: DenseArray::from_matrix(&model.a),
        b: DenseArray::from_matrix(&model.b),
        c: DenseArray::from_matrix(&model.c),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn model_from_json(text: &str) -> Result<LinGaussModel> {
    let file: ModelFile = serde_json::from_str(text)?;
    if file.format != MODEL_FORMAT {
        return Err(Error::Format(format!(
            "unsupported model format {:?}, expected {MODEL_FORMAT:?}",
            file.format
        )));
    }
    let model = LinGaussModel {
        dims: file.dims,
        a: file.a.to_matrix()?,
        b: file.b.to_matrix()?,
        c: file.c.to_matrix()?,
        noise_scale: file.noise_scale,
        seed: file.seed,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_model(path: &Path, model: &LinGaussModel) -> Result<()> {
    write_atomic(path, model_to_json(model)?.as_bytes())
}

pub fn read_model(path: &Path) -> Result<LinGaussModel> {
    model_from_json(&std::fs::read_to_string(path)?)
}

pub fn dataset_header(dims: ModelDims) -> Vec<String> {
    let mut header = Vec::with_capacity(dims.obs + dims.u + dims.v);
    header.extend((0..dims.obs).map(|i| format!("x_{i}")));
    header.extend((0..dims.u).map(|i| format!("u_{i}")));
    header.extend((0..dims.v).map(|i| format!("v_{i}")));
    header
}

pub fn dataset_to_csv(data: &LabeledDataset) -> Result<Vec<u8>> {
    let dims = ModelDims {
        v: data.v.ncols(),
        u: data.u.ncols(),
        noise_rank: 1,
        obs: data.x.ncols(),
    };
    let mut w = csv_writer(Vec::new());
    w.write_record(dataset_header(dims))?;
    for i in 0..data.len() {
        let row = data
            .x
            .row(i)
            .iter()
            .chain(data.u.row(i).iter())
            .chain(data.v.row(i).iter())
            .map(|v| v.to_string())
            .collect::<Vec<_>>();
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

pub fn write_dataset(path: &Path, data: &LabeledDataset) -> Result<()> {
    write_atomic(path, &dataset_to_csv(data)?)
}

fn prefixed_columns(header: &csv::StringRecord, prefix: &str) -> Result<Vec<usize>> {
    let mut found: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(pos, name)| {
            name.strip_prefix(prefix)
                .and_then(|rest| rest.parse::<usize>().ok())
                .map(|idx| (idx, pos))
        })
        .collect();
    found.sort_unstable();
    for (expected, (idx, _)) in found.iter().enumerate() {
        if *idx != expected {
            return Err(Error::Format(format!("column {prefix}{expected} is missing")));
        }
    }
    Ok(found.into_iter().map(|(_, pos)| pos).collect())
}

/// Parses a dataset CSV; `seed` is recorded on the result as given.
pub fn dataset_from_csv(bytes: &[u8], seed: u64) -> Result<LabeledDataset> {
    let mut r = csv::ReaderBuilder::new().from_reader(bytes);
    let header = r.headers()?.clone();
    let xs = prefixed_columns(&header, "x_")?;
    let us = prefixed_columns(&header, "u_")?;
    let vs = prefixed_columns(&header, "v_")?;
    if xs.is_empty() {
        return Err(Error::Format("dataset has no x_ columns".into()));
    }
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record?;
        let parse = |pos: usize| -> Result<f64> {
            let field = record.get(pos).unwrap_or("");
            field.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "line {}, column {} ({}): cannot parse {field:?} as a number",
                    line + 2,
                    pos + 1,
                    &header[pos]
                ))
            })
        };
        let row = xs
            .iter()
            .chain(&us)
            .chain(&vs)
            .map(|&p| parse(p))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let take = |offset: usize, width: usize| {
        DMatrix::from_fn(n, width, |i, j| rows[i][offset + j])
    };
    Ok(LabeledDataset {
        x: take(0, xs.len()),
        u: take(xs.len(), us.len()),
        v: take(xs.len() + us.len(), vs.len()),
        seed,
    })
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    dataset_from_csv(&std::fs::read(path)?, 0)
}
