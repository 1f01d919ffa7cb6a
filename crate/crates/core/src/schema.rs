//! Variable declarations, the observed-to-latent layout and dataset validation.
//!
//! Variables are stored in canonical order: continuous first, then ordinal,
//! then nominal. Each variable remembers its position in the caller's input
//! order so that reports can be emitted the way the data was declared.

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalising transformation applied to a continuous variable before it
/// enters the latent vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub enum Transform {
    #[default]
    Identity,
    /// `log(y + shift)` where `shift` is the empirical quantile of order
    /// `quantile` of the column.
    LogShift { quantile: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum VariableKind {
    Continuous { transform: Transform },
    /// Ordered levels. Binary variables are ordinal with two levels.
    Ordinal { levels: Vec<String> },
    Nominal { categories: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Continuous {
                transform: Transform::Identity,
            },
        }
    }

    pub fn log_shift(name: impl Into<String>, quantile: f64) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Continuous {
                transform: Transform::LogShift { quantile },
            },
        }
    }

    /// Ordinal variable with `k` levels labelled `0..k`.
    pub fn ordinal(name: impl Into<String>, k: usize) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Ordinal {
                levels: (0..k).map(|l| l.to_string()).collect(),
            },
        }
    }

    pub fn binary(name: impl Into<String>) -> Self {
        Self::ordinal(name, 2)
    }

    /// Nominal variable with `l` categories labelled `0..l`.
    pub fn nominal(name: impl Into<String>, l: usize) -> Self {
        VariableSpec {
            name: name.into(),
            kind: VariableKind::Nominal {
                categories: (0..l).map(|c| c.to_string()).collect(),
            },
        }
    }

    /// Number of observed levels, `None` for continuous variables.
    pub fn levels(&self) -> Option<usize> {
        match &self.kind {
            VariableKind::Continuous { .. } => None,
            VariableKind::Ordinal { levels } => Some(levels.len()),
            VariableKind::Nominal { categories } => Some(categories.len()),
        }
    }

    fn rank(&self) -> u8 {
        match self.kind {
            VariableKind::Continuous { .. } => 0,
            VariableKind::Ordinal { .. } => 1,
            VariableKind::Nominal { .. } => 2,
        }
    }

    fn latent_width(&self) -> usize {
        match &self.kind {
            VariableKind::Continuous { .. } | VariableKind::Ordinal { .. } => 1,
            VariableKind::Nominal { categories } => categories.len() - 1,
        }
    }
}

/// One variable placed in the latent layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub spec: VariableSpec,
    /// Position of the variable in the list handed to [`build_schema`].
    pub input_index: usize,
    /// Latent coordinates owned by the variable.
    pub latent: Range<usize>,
    /// Cut-offs `γ_0 < … < γ_K` for ordinal variables.
    pub cutoffs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    variables: Vec<VariableLayout>,
    q: usize,
    free_variance: Vec<bool>,
    n_continuous: usize,
    n_ordinal: usize,
    n_nominal: usize,
}

impl Schema {
    /// Variables in canonical order.
    pub fn variables(&self) -> &[VariableLayout] {
        &self.variables
    }

    pub fn p(&self) -> usize {
        self.variables.len()
    }

    /// Latent dimension.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn n_continuous(&self) -> usize {
        self.n_continuous
    }

    pub fn n_ordinal(&self) -> usize {
        self.n_ordinal
    }

    pub fn n_nominal(&self) -> usize {
        self.n_nominal
    }

    /// `true` for latent coordinates whose variance is estimated.
    pub fn free_variance(&self) -> &[bool] {
        &self.free_variance
    }

    pub fn free_variance_indices(&self) -> Vec<usize> {
        (0..self.q).filter(|&j| self.free_variance[j]).collect()
    }

    /// Canonical indices listed in input order.
    pub fn input_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.variables.len()).collect();
        order.sort_by_key(|&v| self.variables[v].input_index);
        order
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v.spec.name == name)
    }
}

/// Cut-offs `(−∞, 0, 4, …, 4(K−2), +∞)` for an ordinal variable with `k` levels.
pub fn default_cutoffs(k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Schema(format!(
            "an ordinal variable needs at least 2 levels, got {k}"
        )));
    }
    let mut cuts = Vec::with_capacity(k + 1);
    cuts.push(f64::NEG_INFINITY);
    cuts.extend((0..k - 1).map(|j| 4.0 * j as f64));
    cuts.push(f64::INFINITY);
    Ok(cuts)
}

pub fn build_schema(specs: &[VariableSpec]) -> Result<Schema> {
    if specs.is_empty() {
        return Err(Error::Schema("no variables declared".into()));
    }
    for spec in specs {
        match &spec.kind {
            VariableKind::Continuous { transform } => {
                if let Transform::LogShift { quantile } = transform {
                    if !(*quantile > 0.0 && *quantile < 1.0) {
                        return Err(Error::Schema(format!(
                            "variable {}: shift quantile must lie in (0, 1)",
                            spec.name
                        )));
                    }
                }
            }
            VariableKind::Ordinal { levels: labels } | VariableKind::Nominal { categories: labels } => {
                if labels.len() < 2 {
                    return Err(Error::Schema(format!(
                        "variable {} needs at least 2 levels, got {}",
                        spec.name,
                        labels.len()
                    )));
                }
                for (i, a) in labels.iter().enumerate() {
                    if labels[..i].contains(a) {
                        return Err(Error::Schema(format!(
                            "variable {}: duplicate level label {a:?}",
                            spec.name
                        )));
                    }
                }
            }
        }
    }
    for (i, s) in specs.iter().enumerate() {
        if specs[..i].iter().any(|t| t.name == s.name) {
            return Err(Error::Schema(format!("duplicate variable name {:?}", s.name)));
        }
    }

    let mut order: Vec<usize> = (0..specs.len()).collect();
    // stable: preserves input order within each kind
    order.sort_by_key(|&i| specs[i].rank());

    let mut variables = Vec::with_capacity(specs.len());
    let mut free_variance = Vec::new();
    let mut offset = 0;
    for &i in &order {
        let spec = specs[i].clone();
        let width = spec.latent_width();
        let cutoffs = match &spec.kind {
            VariableKind::Ordinal { levels } => Some(default_cutoffs(levels.len())?),
            _ => None,
        };
        let free = matches!(spec.kind, VariableKind::Continuous { .. });
        free_variance.extend(std::iter::repeat_n(free, width));
        variables.push(VariableLayout {
            spec,
            input_index: i,
            latent: offset..offset + width,
            cutoffs,
        });
        offset += width;
    }

    let count = |r: u8| specs.iter().filter(|s| s.rank() == r).count();
    Ok(Schema {
        variables,
        q: offset,
        free_variance,
        n_continuous: count(0),
        n_ordinal: count(1),
        n_nominal: count(2),
    })
}

/// Observed values of one variable across all records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Column {
    Continuous(Vec<f64>),
    /// 0-based level or category indices.
    Categorical(Vec<usize>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Continuous(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn value(&self, i: usize) -> f64 {
        match self {
            Column::Continuous(v) => v[i],
            Column::Categorical(v) => v[i] as f64,
        }
    }
}

/// Observed records plus their design weights. Columns follow the schema's
/// canonical order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    columns: Vec<Column>,
    weights: Vec<f64>,
    sampling_probs: Vec<f64>,
}

impl Dataset {
    /// `columns` must be in canonical schema order. Missing weights mean every
    /// record represents itself (`w_i = 1`).
    pub fn new(columns: Vec<Column>, weights: Option<Vec<f64>>) -> Result<Self> {
        let n = columns.first().map(Column::len).unwrap_or(0);
        if n == 0 {
            return Err(Error::Dimension("dataset has no records".into()));
        }
        if let Some(bad) = columns.iter().position(|c| c.len() != n) {
            return Err(Error::Dimension(format!(
                "column {bad} has {} records, expected {n}",
                columns[bad].len()
            )));
        }
        let weights = weights.unwrap_or_else(|| vec![1.0; n]);
        if weights.len() != n {
            return Err(Error::Dimension(format!(
                "{} weights for {n} records",
                weights.len()
            )));
        }
        let sampling_probs = weights.iter().map(|w| 1.0 / w).collect();
        Ok(Dataset {
            columns,
            weights,
            sampling_probs,
        })
    }

    /// Like [`Dataset::new`] but with `columns` in the order the variables
    /// were declared to [`build_schema`].
    pub fn from_input_order(schema: &Schema, mut columns: Vec<Column>, weights: Option<Vec<f64>>) -> Result<Self> {
        if columns.len() != schema.p() {
            return Err(Error::Dimension(format!(
                "{} columns for {} declared variables",
                columns.len(),
                schema.p()
            )));
        }
        let canonical = schema
            .variables()
            .iter()
            .map(|v| std::mem::replace(&mut columns[v.input_index], Column::Categorical(Vec::new())))
            .collect();
        Self::new(canonical, weights)
    }

    /// Columns rearranged into declaration order.
    pub fn input_columns(&self, schema: &Schema) -> Vec<&Column> {
        schema.input_order().into_iter().map(|v| &self.columns[v]).collect()
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, v: usize) -> &Column {
        &self.columns[v]
    }

    /// Design weights `w_i = 1/π_i`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sampling probabilities `π_i`.
    pub fn sampling_probs(&self) -> &[f64] {
        &self.sampling_probs
    }

    pub fn mean_weight(&self) -> f64 {
        self.weights.iter().sum::<f64>() / self.n() as f64
    }

    pub fn categorical(&self, v: usize, i: usize) -> usize {
        match &self.columns[v] {
            Column::Categorical(c) => c[i],
            Column::Continuous(_) => panic!("column {v} is continuous"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub record: Option<usize>,
    pub variable: Option<String>,
    pub reason: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.record, &self.variable) {
            (Some(r), Some(v)) => write!(f, "record {r}, variable {v}: {}", self.reason),
            (Some(r), None) => write!(f, "record {r}: {}", self.reason),
            (None, Some(v)) => write!(f, "variable {v}: {}", self.reason),
            (None, None) => f.write_str(&self.reason),
        }
    }
}

/// Lists every range, type and weight problem. An empty list means the
/// dataset is usable with `schema`.
pub fn validate_dataset(ds: &Dataset, schema: &Schema) -> Vec<ValidationIssue> {
    let mut issues = Vec::new();
    if ds.columns.len() != schema.p() {
        issues.push(ValidationIssue {
            record: None,
            variable: None,
            reason: format!(
                "dataset has {} columns, schema declares {}",
                ds.columns.len(),
                schema.p()
            ),
        });
        return issues;
    }
    for (layout, column) in schema.variables().iter().zip(&ds.columns) {
        let name = &layout.spec.name;
        let issue = |record, reason: String| ValidationIssue {
            record: Some(record),
            variable: Some(name.clone()),
            reason,
        };
        match (&layout.spec.kind, column) {
            (VariableKind::Continuous { .. }, Column::Continuous(values)) => {
                for (i, y) in values.iter().enumerate() {
                    if !y.is_finite() {
                        issues.push(issue(i, format!("non-finite value {y}")));
                    }
                }
            }
            (VariableKind::Ordinal { .. } | VariableKind::Nominal { .. }, Column::Categorical(values)) => {
                let k = layout.spec.levels().unwrap_or(0);
                for (i, &y) in values.iter().enumerate() {
                    if y >= k {
                        issues.push(issue(i, format!("level {y} outside 0..{k}")));
                    }
                }
            }
            _ => issues.push(ValidationIssue {
                record: None,
                variable: Some(name.clone()),
                reason: "column type does not match the declared kind".into(),
            }),
        }
    }
    for (i, (&w, &p)) in ds.weights.iter().zip(&ds.sampling_probs).enumerate() {
        if !(w > 0.0) || !w.is_finite() {
            issues.push(ValidationIssue {
                record: Some(i),
                variable: None,
                reason: format!("nonpositive weight {w}"),
            });
        } else if (w * p - 1.0).abs() > 1e-12 {
            issues.push(ValidationIssue {
                record: Some(i),
                variable: None,
                reason: "weight and sampling probability are not reciprocal".into(),
            });
        }
    }
    issues
}
