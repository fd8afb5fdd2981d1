//! Labeled activation matrices.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::io::{read_tensor, write_tensor, FormatError, SidecarMeta, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Corrupted,
    #[serde(alias = "zero-shot")]
    ZeroShot,
}

/// Labels carried by one activation row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowLabel {
    pub query_id: String,
    /// Task or relation identifier.
    pub task_id: String,
    pub condition: Condition,
    #[serde(default)]
    pub format_id: String,
    /// Number of in-context demonstrations `K`.
    #[serde(default)]
    pub shots: u32,
    #[serde(default)]
    pub context_id: String,
    /// Entity the query is about; defaults to the query id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    /// Index of the correct answer class for this prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<usize>,
}

impl RowLabel {
    pub fn new(query_id: impl Into<String>, task_id: impl Into<String>, condition: Condition) -> Self {
        RowLabel {
            query_id: query_id.into(),
            task_id: task_id.into(),
            condition,
            format_id: String::new(),
            shots: 0,
            context_id: String::new(),
            subject: None,
            target: None,
        }
    }

    pub fn subject(&self) -> &str {
        self.subject.as_deref().unwrap_or(&self.query_id)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ActivationMeta {
    pub model_id: Option<String>,
    pub layer: Option<i64>,
    pub position: Option<i64>,
    pub class_tokens: Option<Vec<String>>,
}

/// `n × d` activations `H`, row-aligned supervision `Y` (`n × k`) and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    pub h: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub rows: Vec<RowLabel>,
    pub meta: ActivationMeta,
}

impl ActivationSet {
    pub fn new(h: DMatrix<f64>, y: DMatrix<f64>, rows: Vec<RowLabel>) -> Result<Self> {
        check_dims("supervision rows", h.nrows(), y.nrows())?;
        check_dims("row labels", h.nrows(), rows.len())?;
        Ok(ActivationSet { h, y, rows, meta: ActivationMeta::default() })
    }

    /// Activations with one-hot supervision built from the row targets.
    pub fn with_one_hot(h: DMatrix<f64>, rows: Vec<RowLabel>, classes: usize) -> Result<Self> {
        let y = one_hot(&rows, classes)?;
        Self::new(h, y, rows)
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.h.ncols()
    }

    pub fn row(&self, i: usize) -> DVector<f64> {
        self.h.row(i).transpose()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ActivationSet {
        let h = DMatrix::from_fn(indices.len(), self.h.ncols(), |i, j| self.h[(indices[i], j)]);
        let y = DMatrix::from_fn(indices.len(), self.y.ncols(), |i, j| self.y[(indices[i], j)]);
        ActivationSet { h, y, rows: indices.iter().map(|&i| self.rows[i].clone()).collect(), meta: self.meta.clone() }
    }

    pub fn filter(&self, mut keep: impl FnMut(&RowLabel) -> bool) -> ActivationSet {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(&self.rows[i])).collect();
        self.select(&idx)
    }

    /// Same rows with `H` replaced.
    pub fn with_activations(&self, h: DMatrix<f64>) -> Result<ActivationSet> {
        check_dims("replacement rows", self.len(), h.nrows())?;
        Ok(ActivationSet { h, y: self.y.clone(), rows: self.rows.clone(), meta: self.meta.clone() })
    }

    /// Maps query id to row index; duplicate ids are a data error.
    pub fn query_index(&self) -> Result<HashMap<&str, usize>> {
        let mut map = HashMap::with_capacity(self.len());
        for (i, row) in self.rows.iter().enumerate() {
            if map.insert(row.query_id.as_str(), i).is_some() {
                return Err(Error::DegenerateInput(format!("duplicate query id {:?}", row.query_id)));
            }
        }
        Ok(map)
    }

    /// Reads `H` and its sidecar; `Y` comes from the sidecar's supervision
    /// tensor, or is one-hot over row targets, or is empty.
    pub fn load(path: &Path) -> Result<ActivationSet> {
        let (tensor, meta) = read_tensor(path)?;
        let meta = meta.ok_or_else(|| FormatError::Sidecar(format!("{}: missing sidecar", path.display())))?;
        let h = tensor.to_matrix()?;
        let y = match &meta.supervision {
            Some(rel) => {
                let y_path = resolve_relative(path, rel);
                let (yt, _) = read_tensor(&y_path)?;
                let y = yt.to_matrix()?;
                check_dims("supervision rows", h.nrows(), y.nrows())?;
                y
            }
            None if meta.rows.iter().all(|r| r.target.is_some()) && !meta.rows.is_empty() => {
                let classes = meta
                    .class_tokens
                    .as_ref()
                    .map(|c| c.len())
                    .unwrap_or_else(|| meta.rows.iter().filter_map(|r| r.target).max().unwrap_or(0) + 1);
                one_hot(&meta.rows, classes)?
            }
            None => DMatrix::zeros(h.nrows(), 0),
        };
        Ok(ActivationSet {
            h,
            y,
            rows: meta.rows,
            meta: ActivationMeta {
                model_id: meta.model_id,
                layer: meta.layer,
                position: meta.position,
                class_tokens: meta.class_tokens,
            },
        })
    }

    /// Writes `H` to `path`, labels to its sidecar, and `Y` (when
    /// non-empty) to `<path stem>.y.csa1`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = SidecarMeta::new(self.rows.clone());
        meta.model_id = self.meta.model_id.clone();
        meta.layer = self.meta.layer;
        meta.position = self.meta.position;
        meta.class_tokens = self.meta.class_tokens.clone();
        if self.y.ncols() > 0 {
            let y_path = supervision_path(path);
            write_tensor(&y_path, &Tensor::from_matrix(&self.y), None)?;
            meta.supervision = y_path.file_name().map(|f| f.to_string_lossy().into_owned());
        }
        write_tensor(path, &Tensor::from_matrix(&self.h), Some(&meta))
    }
}

fn supervision_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "activations".into());
    path.with_file_name(format!("{stem}.y.csa1"))
}

fn resolve_relative(base: &Path, rel: &str) -> PathBuf {
    let rel = Path::new(rel);
    if rel.is_absolute() {
        return rel.to_path_buf();
    }
    base.parent().map(|p| p.join(rel)).unwrap_or_else(|| rel.to_path_buf())
}

pub fn one_hot(rows: &[RowLabel], classes: usize) -> Result<DMatrix<f64>> {
    let mut y = DMatrix::zeros(rows.len(), classes);
    for (i, row) in rows.iter().enumerate() {
        let t = row
            .target
            .ok_or_else(|| Error::DegenerateInput(format!("row {i} ({}) has no target class", row.query_id)))?;
        if t >= classes {
            return Err(Error::DimensionMismatch(format!("row {i} target {t} outside {classes} classes")));
        }
        y[(i, t)] = 1.0;
    }
    Ok(y)
}

/// Pairs rows of `a` and `b` by query id, in `a`'s row order. Every id in
/// either set must appear in the other.
pub fn align_by_query(a: &ActivationSet, b: &ActivationSet) -> Result<Vec<(usize, usize)>> {
    let ia = a.query_index()?;
    let ib = b.query_index()?;
    let mut missing: Vec<String> = ia
        .keys()
        .filter(|k| !ib.contains_key(*k))
        .map(|k| format!("{k} (second set)"))
        .chain(ib.keys().filter(|k| !ia.contains_key(*k)).map(|k| format!("{k} (first set)")))
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(Error::MissingKeys(missing));
    }
    Ok(a.rows.iter().enumerate().map(|(i, row)| (i, ib[row.query_id.as_str()])).collect())
}

/// Groups row indices by a key, with groups in key order.
pub fn group_rows<K: Ord>(set: &ActivationSet, key: impl Fn(&RowLabel) -> K) -> BTreeMap<K, Vec<usize>> {
    let mut groups: BTreeMap<K, Vec<usize>> = BTreeMap::new();
    for (i, row) in set.rows.iter().enumerate() {
        groups.entry(key(row)).or_default().push(i);
    }
    groups
}
