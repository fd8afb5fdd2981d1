//! Loading inputs and emitting reports.

use std::path::{Path, PathBuf};

use conceptlab::activations::ActivationSet;
use conceptlab::intervention::ReadoutModel;
use conceptlab::io::{read_tensor, sidecar_path, write_json_atomic, write_tensor, Report, Tensor};
use conceptlab::linalg::orthonormality_error;
use conceptlab::subspace::Projector;
use conceptlab::Error;
use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{CliResult, Inputs};

pub fn activations(path: &Path, inputs: &mut Inputs) -> CliResult<ActivationSet> {
    let set = ActivationSet::load(path)?;
    inputs.add(path)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        inputs.add(&sidecar)?;
    }
    log::info!("{}: {} rows × {}", path.display(), set.len(), set.dim());
    Ok(set)
}

pub fn matrix(path: &Path, inputs: &mut Inputs) -> CliResult<DMatrix<f64>> {
    let (t, _) = read_tensor(path)?;
    inputs.add(path)?;
    Ok(t.to_matrix()?)
}

/// A `d × r` basis file; columns must be orthonormal.
pub fn projector(path: &Path, inputs: &mut Inputs) -> CliResult<Projector> {
    let basis = matrix(path, inputs)?;
    let err = orthonormality_error(&basis);
    if err > 1e-8 {
        return Err(Error::DegenerateInput(format!(
            "{}: basis columns are not orthonormal (‖UᵀU − I‖ = {err:.2e})",
            path.display()
        ))
        .into());
    }
    Ok(Projector::new(basis))
}

/// A `k × d` readout; class names come from the activations' class tokens
/// when their count matches.
pub fn readout(path: &Path, class_tokens: Option<&Vec<String>>, inputs: &mut Inputs) -> CliResult<ReadoutModel> {
    let w = matrix(path, inputs)?;
    let labels = class_tokens.filter(|t| t.len() == w.nrows()).cloned();
    Ok(ReadoutModel::new(w, labels)?)
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> CliResult<()> {
    write_tensor(path, &Tensor::from_matrix(m), None)?;
    Ok(())
}

pub fn json_file<T: serde::de::DeserializeOwned>(path: &Path, inputs: &mut Inputs) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(Error::from)?;
    let value = serde_json::from_str(&text).map_err(Error::from)?;
    inputs.add(path)?;
    Ok(value)
}

pub fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("report values serialize")
}

/// Writes the report to `out`, or pretty-prints it to stdout.
pub fn emit(report: &Report, out: Option<&PathBuf>) -> CliResult<()> {
    match out {
        Some(path) => {
            write_json_atomic(path, report)?;
            log::info!("report written to {}", path.display());
        }
        None => println!("{}", serde_json::to_string_pretty(report).map_err(Error::from)?),
    }
    Ok(())
}
