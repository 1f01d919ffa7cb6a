//! Schema files and CSV data.
//!
//! A schema file is TOML with one `[[variables]]` table per column:
//!
//! ```toml
//! [[variables]]
//! name = "income"
//! kind = "continuous"
//! log_shift = 0.05      # optional: log(y + q_0.05)
//!
//! [[variables]]
//! name = "owner"
//! kind = "binary"        # levels "0" and "1"
//!
//! [[variables]]
//! name = "region"
//! kind = "nominal"
//! levels = ["north", "centre", "south"]   # or a count, giving "0", "1", ...
//! ```
//!
//! Categorical cells hold a level label. A cell that matches no label but
//! reads as an integer below the level count is taken as a 0-based index.

use std::fs;
use std::io::Write;
use std::path::Path;

use pdmix::schema::{Transform, VariableKind};
use pdmix::{build_schema, Column, Dataset, Schema, VariableSpec};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Kind {
    Continuous,
    Ordinal,
    Binary,
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Levels {
    Count(usize),
    Labels(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariableEntry {
    name: String,
    kind: Kind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    levels: Option<Levels>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_shift: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaFile {
    variables: Vec<VariableEntry>,
}

fn labels(entry: &VariableEntry, default: Option<usize>) -> CliResult<Vec<String>> {
    let count = match &entry.levels {
        Some(Levels::Labels(l)) => return Ok(l.clone()),
        Some(Levels::Count(k)) => Some(*k),
        None => default,
    };
    match count {
        Some(k) => Ok((0..k).map(|l| l.to_string()).collect()),
        None => Err(CliError::Data(format!("variable {:?} needs `levels`", entry.name))),
    }
}

fn to_spec(entry: &VariableEntry) -> CliResult<VariableSpec> {
    if entry.log_shift.is_some() && entry.kind != Kind::Continuous {
        return Err(CliError::Data(format!("variable {:?}: log_shift applies to continuous variables", entry.name)));
    }
    let kind = match entry.kind {
        Kind::Continuous => {
            if entry.levels.is_some() {
                return Err(CliError::Data(format!("continuous variable {:?} has levels", entry.name)));
            }
            VariableKind::Continuous {
                transform: entry
                    .log_shift
                    .map_or(Transform::Identity, |quantile| Transform::LogShift { quantile }),
            }
        }
        Kind::Ordinal => VariableKind::Ordinal {
            levels: labels(entry, None)?,
        },
        Kind::Binary => {
            let levels = labels(entry, Some(2))?;
            if levels.len() != 2 {
                return Err(CliError::Data(format!("binary variable {:?} needs two levels", entry.name)));
            }
            VariableKind::Ordinal { levels }
        }
        Kind::Nominal => VariableKind::Nominal {
            categories: labels(entry, None)?,
        },
    };
    Ok(VariableSpec {
        name: entry.name.clone(),
        kind,
    })
}

fn to_entry(spec: &VariableSpec) -> VariableEntry {
    let (kind, levels, log_shift) = match &spec.kind {
        VariableKind::Continuous { transform } => (
            Kind::Continuous,
            None,
            match transform {
                Transform::Identity => None,
                Transform::LogShift { quantile } => Some(*quantile),
            },
        ),
        VariableKind::Ordinal { levels } => (Kind::Ordinal, Some(Levels::Labels(levels.clone())), None),
        VariableKind::Nominal { categories } => (Kind::Nominal, Some(Levels::Labels(categories.clone())), None),
    };
    VariableEntry {
        name: spec.name.clone(),
        kind,
        levels,
        log_shift,
    }
}

/// Variable declarations of a schema file, in file order.
pub fn read_specs(path: &Path) -> CliResult<Vec<VariableSpec>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let file: SchemaFile = toml::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    file.variables.iter().map(to_spec).collect()
}

pub fn read_schema(path: &Path) -> CliResult<Schema> {
    Ok(build_schema(&read_specs(path)?)?)
}

pub fn write_schema(path: &Path, specs: &[VariableSpec]) -> CliResult<()> {
    let file = SchemaFile {
        variables: specs.iter().map(to_entry).collect(),
    };
    let text = toml::to_string(&file).map_err(|e| CliError::Runtime(e.to_string()))?;
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn parse_level(cell: &str, levels: &[String]) -> Option<usize> {
    levels
        .iter()
        .position(|l| l == cell)
        .or_else(|| cell.parse::<usize>().ok().filter(|&k| k < levels.len()))
}

/// Read a CSV with a header row. Columns are matched to the schema by name;
/// extra columns are ignored. `weight_column` supplies design weights.
pub fn read_dataset(path: &Path, schema: &Schema, weight_column: Option<&str>) -> CliResult<Dataset> {
    let bad = |msg: String| CliError::Data(format!("{}: {msg}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| bad(e.to_string()))?;
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| bad(format!("no column named {name:?}")))
    };
    let order = schema.input_order();
    let positions = order
        .iter()
        .map(|&v| find(&schema.variables()[v].spec.name))
        .collect::<CliResult<Vec<_>>>()?;
    let weight_pos = weight_column.map(find).transpose()?;

    let mut columns: Vec<Column> = order
        .iter()
        .map(|&v| match schema.variables()[v].spec.kind {
            VariableKind::Continuous { .. } => Column::Continuous(Vec::new()),
            _ => Column::Categorical(Vec::new()),
        })
        .collect();
    let mut weights = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let line = row + 2;
        for ((&v, &pos), column) in order.iter().zip(&positions).zip(&mut columns) {
            let spec = &schema.variables()[v].spec;
            let cell = record.get(pos).unwrap_or("");
            match (column, &spec.kind) {
                (Column::Continuous(xs), _) => xs.push(
                    cell.parse()
                        .map_err(|_| bad(format!("line {line}, {}: {cell:?} is not a number", spec.name)))?,
                ),
                (
                    Column::Categorical(ys),
                    VariableKind::Ordinal { levels: l } | VariableKind::Nominal { categories: l },
                ) => ys.push(
                    parse_level(cell, l).ok_or_else(|| bad(format!("line {line}, {}: unknown level {cell:?}", spec.name)))?,
                ),
                _ => unreachable!("column kinds follow the schema"),
            }
        }
        if let Some(pos) = weight_pos {
            let cell = record.get(pos).unwrap_or("");
            weights.push(
                cell.parse::<f64>()
                    .map_err(|_| bad(format!("line {line}: weight {cell:?} is not a number")))?,
            );
        }
    }
    let weights = weight_pos.map(|_| weights);
    Dataset::from_input_order(schema, columns, weights).map_err(|e| bad(e.to_string()))
}

/// Write `dataset` in declaration order with level labels and a `weight`
/// column. Floats use the shortest representation that reads back exactly.
pub fn write_dataset(path: &Path, dataset: &Dataset, schema: &Schema) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    let order = schema.input_order();
    let mut header: Vec<&str> = order.iter().map(|&v| schema.variables()[v].spec.name.as_str()).collect();
    header.push("weight");
    w.write_record(&header).map_err(|e| CliError::Runtime(e.to_string()))?;
    let columns = dataset.input_columns(schema);
    for i in 0..dataset.n() {
        let mut row: Vec<String> = order
            .iter()
            .zip(&columns)
            .map(|(&v, column)| match (column, &schema.variables()[v].spec.kind) {
                (Column::Continuous(xs), _) => xs[i].to_string(),
                (
                    Column::Categorical(ys),
                    VariableKind::Ordinal { levels: l } | VariableKind::Nominal { categories: l },
                ) => l[ys[i]].clone(),
                _ => unreachable!("column kinds follow the schema"),
            })
            .collect();
        row.push(dataset.weights()[i].to_string());
        w.write_record(&row).map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Write `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}
