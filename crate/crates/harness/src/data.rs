//! Schema files and CSV input/output.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use fxam::data_model::{CategoricalColumn, Dataset, NumericalColumn, TemporalColumn};
use fxam::synthgen::{GroundTruth, SEASON_PERIOD};
use fxam::trainer::TemporalSpec;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    Temporal,
    Response,
    Ignore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<usize>,
}

/// Column roles of a CSV file, stored as `{"columns": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub columns: Vec<ColumnSpec>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let schema: SchemaFile = serde_json::from_str(&text).map_err(|source| HarnessError::Json {
            path: path.display().to_string(),
            source,
        })?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("schema serializes");
        std::fs::write(path, text + "\n").map_err(|e| HarnessError::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Data(format!("schema: {m}")));
        let responses = self.columns.iter().filter(|c| c.kind == ColumnKind::Response).count();
        if responses != 1 {
            return bad(format!("expected exactly one response column, found {responses}"));
        }
        let features = self
            .columns
            .iter()
            .filter(|c| !matches!(c.kind, ColumnKind::Response | ColumnKind::Ignore))
            .count();
        if features == 0 {
            return bad("no feature columns".into());
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return bad(format!("duplicate column `{}`", c.name));
            }
            if c.kind == ColumnKind::Temporal {
                match c.period {
                    Some(d) if d > 1 => {}
                    _ => return bad(format!("temporal column `{}` needs a period greater than 1", c.name)),
                }
                if c.tau.is_some_and(|t| t <= 0) {
                    return bad(format!("temporal column `{}` needs a positive tau", c.name));
                }
            } else if c.tau.is_some() || c.period.is_some() {
                return bad(format!("`{}` is not temporal but carries tau or period", c.name));
            }
        }
        Ok(())
    }

    /// Decomposition settings of the temporal columns.
    pub fn temporal_specs(&self) -> Vec<TemporalSpec> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Temporal)
            .map(|c| TemporalSpec {
                name: c.name.clone(),
                tau: c.tau.unwrap_or(1),
                period: c.period.unwrap_or(0),
            })
            .collect()
    }

    /// Schema describing a dataset as written by [`write_dataset_csv`]. Temporal
    /// columns get `tau = 1` and the generator's season length.
    pub fn for_dataset(ds: &Dataset) -> Self {
        let mut columns = Vec::new();
        let col = |name: &str, kind| ColumnSpec {
            name: name.into(),
            kind,
            tau: None,
            period: None,
        };
        for c in ds.numerical() {
            columns.push(col(&c.name, ColumnKind::Numerical));
        }
        for c in ds.categorical() {
            columns.push(col(&c.name, ColumnKind::Categorical));
        }
        for c in ds.temporal() {
            columns.push(ColumnSpec {
                tau: Some(1),
                period: Some(SEASON_PERIOD),
                ..col(&c.name, ColumnKind::Temporal)
            });
        }
        columns.push(col(ds.response_name(), ColumnKind::Response));
        SchemaFile { columns }
    }
}

enum Slot {
    Num(Vec<f64>),
    Cat(Vec<String>),
    Time(Vec<i64>, i64),
    Response(Vec<f64>),
    Skip,
}

/// Reads a comma-separated file with a header row into a typed dataset.
/// Every header column must appear in the schema and vice versa.
pub fn ingest_csv(path: &Path, schema: &SchemaFile) -> Result<Dataset> {
    ingest(path, schema, false)
}

/// Like [`ingest_csv`] but the response column may be absent, in which case
/// the response is filled with zeros. Used for prediction inputs.
pub fn ingest_csv_unlabeled(path: &Path, schema: &SchemaFile) -> Result<Dataset> {
    ingest(path, schema, true)
}

fn ingest(path: &Path, schema: &SchemaFile, response_optional: bool) -> Result<Dataset> {
    schema.validate()?;
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers()?.clone();
    if header.is_empty() {
        return Err(HarnessError::Data(format!("{}: empty file", path.display())));
    }
    let position: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h, i)).collect();
    for h in header.iter() {
        if !schema.columns.iter().any(|c| c.name == h) {
            return Err(HarnessError::Data(format!("column `{h}` is not in the schema")));
        }
    }
    let mut slots = Vec::with_capacity(schema.columns.len());
    let mut unlabeled = None;
    for c in &schema.columns {
        if response_optional && c.kind == ColumnKind::Response && !position.contains_key(c.name.as_str()) {
            unlabeled = Some(c.name.clone());
            continue;
        }
        let Some(&pos) = position.get(c.name.as_str()) else {
            return Err(fxam::FxamError::MissingColumn(c.name.clone()).into());
        };
        let slot = match c.kind {
            ColumnKind::Numerical => Slot::Num(Vec::new()),
            ColumnKind::Categorical => Slot::Cat(Vec::new()),
            ColumnKind::Temporal => Slot::Time(Vec::new(), c.tau.unwrap_or(1)),
            ColumnKind::Response => Slot::Response(Vec::new()),
            ColumnKind::Ignore => Slot::Skip,
        };
        slots.push((pos, c.name.as_str(), slot));
    }

    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (pos, name, slot) in &mut slots {
            let field = record.get(*pos).unwrap_or("");
            let parse_err = |message: String| HarnessError::Parse {
                line,
                column: name.to_string(),
                message,
            };
            match slot {
                Slot::Num(v) | Slot::Response(v) => {
                    let x: f64 = field
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("`{field}` is not a number")))?;
                    if !x.is_finite() {
                        return Err(parse_err(format!("`{field}` is not finite")));
                    }
                    v.push(x);
                }
                Slot::Cat(v) => v.push(field.to_string()),
                Slot::Time(v, tau) => {
                    let t: i64 = field
                        .trim()
                        .parse()
                        .map_err(|_| parse_err(format!("`{field}` is not an integer time")))?;
                    if t.rem_euclid(*tau) != 0 {
                        return Err(parse_err(format!("{t} is not a multiple of tau = {tau}")));
                    }
                    v.push(t);
                }
                Slot::Skip => {}
            }
        }
    }

    let rows = reader_rows(&slots);
    let mut response = unlabeled.map(|name| (name, vec![0.0; rows]));
    let (mut num, mut cat, mut temp) = (Vec::new(), Vec::new(), Vec::new());
    for (_, name, slot) in slots {
        let name = name.to_string();
        match slot {
            Slot::Num(values) => num.push(NumericalColumn { name, values }),
            Slot::Cat(values) => cat.push(CategoricalColumn { name, values }),
            Slot::Time(values, _) => temp.push(TemporalColumn { name, values }),
            Slot::Response(values) => response = Some((name, values)),
            Slot::Skip => {}
        }
    }
    let (name, y) = response.expect("validated schema has a response");
    if y.is_empty() {
        return Err(HarnessError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(Dataset::new(name, y, num, cat, temp)?)
}

fn reader_rows(slots: &[(usize, &str, Slot)]) -> usize {
    slots
        .iter()
        .find_map(|(_, _, s)| match s {
            Slot::Num(v) | Slot::Response(v) => Some(v.len()),
            Slot::Cat(v) => Some(v.len()),
            Slot::Time(v, _) => Some(v.len()),
            Slot::Skip => None,
        })
        .unwrap_or(0)
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes features then the response, in the column order of
/// [`SchemaFile::for_dataset`].
pub fn write_dataset_csv(path: &Path, ds: &Dataset) -> Result<()> {
    let mut w = create(path)?;
    let mut header: Vec<&str> = Vec::new();
    header.extend(ds.numerical().iter().map(|c| c.name.as_str()));
    header.extend(ds.categorical().iter().map(|c| c.name.as_str()));
    header.extend(ds.temporal().iter().map(|c| c.name.as_str()));
    header.push(ds.response_name());
    w.write_record(&header)?;
    let mut row = Vec::with_capacity(header.len());
    for l in 0..ds.len() {
        row.clear();
        row.extend(ds.numerical().iter().map(|c| c.values[l].to_string()));
        row.extend(ds.categorical().iter().map(|c| c.values[l].clone()));
        row.extend(ds.temporal().iter().map(|c| c.values[l].to_string()));
        row.push(ds.response()[l].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// One column per ground-truth component, one row per record.
pub fn write_truth_csv(path: &Path, truth: &GroundTruth) -> Result<()> {
    let cols: Vec<(String, Vec<f64>)> = truth.columns().into_iter().map(|(n, v)| (n, v.to_vec())).collect();
    write_columns(path, &cols)
}

/// Writes named numeric columns of equal length.
pub fn write_columns(path: &Path, cols: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(cols.iter().map(|(name, _)| name.as_str()))?;
    let n = cols.first().map_or(0, |(_, v)| v.len());
    for l in 0..n {
        w.write_record(cols.iter().map(|(_, v)| v[l].to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Writes serializable rows with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn schema(json: &str) -> SchemaFile {
        serde_json::from_str(json).unwrap()
    }

    fn file_with(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn three_rows() {
        let s = schema(r#"{"columns":[{"name":"x","kind":"numerical"},{"name":"y","kind":"response"}]}"#);
        let f = file_with("x,y\n1,2\n2,4\n3,6\n");
        let ds = ingest_csv(f.path(), &s).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.numerical().len(), 1);
        assert_eq!(ds.response(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn bad_token_names_row_and_column() {
        let s = schema(r#"{"columns":[{"name":"x","kind":"numerical"},{"name":"y","kind":"response"}]}"#);
        let f = file_with("x,y\n1,2\nabc,4\n");
        let err = ingest_csv(f.path(), &s).unwrap_err();
        match &err {
            HarnessError::Parse { line, column, .. } => {
                assert_eq!(*line, 3);
                assert_eq!(column, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn temporal_values_respect_tau() {
        let s = schema(
            r#"{"columns":[{"name":"t","kind":"temporal","tau":5,"period":4},{"name":"y","kind":"response"}]}"#,
        );
        let ok = file_with("t,y\n0,1\n5,2\n");
        assert_eq!(ingest_csv(ok.path(), &s).unwrap().temporal()[0].values, vec![0, 5]);
        let bad = file_with("t,y\n0,1\n7,2\n");
        assert!(matches!(ingest_csv(bad.path(), &s), Err(HarnessError::Parse { line: 3, .. })));
    }

    #[test]
    fn missing_and_extra_columns() {
        let s = schema(r#"{"columns":[{"name":"x","kind":"numerical"},{"name":"y","kind":"response"}]}"#);
        let missing = file_with("y\n1\n");
        assert!(matches!(
            ingest_csv(missing.path(), &s),
            Err(HarnessError::Core(fxam::FxamError::MissingColumn(_)))
        ));
        let extra = file_with("x,y,w\n1,2,3\n");
        assert!(ingest_csv(extra.path(), &s).is_err());
        let header_only = file_with("x,y\n");
        assert!(ingest_csv(header_only.path(), &s).is_err());
        let empty = file_with("");
        assert!(ingest_csv(empty.path(), &s).is_err());
    }

    #[test]
    fn prediction_input_without_response() {
        let s = schema(r#"{"columns":[{"name":"x","kind":"numerical"},{"name":"y","kind":"response"}]}"#);
        let f = file_with("x\n1\n2\n");
        let ds = ingest_csv_unlabeled(f.path(), &s).unwrap();
        assert_eq!(ds.response(), &[0.0, 0.0]);
        assert!(ingest_csv(f.path(), &s).is_err());
    }

    #[test]
    fn schema_rules() {
        assert!(schema(r#"{"columns":[{"name":"x","kind":"numerical"}]}"#).validate().is_err());
        assert!(schema(r#"{"columns":[{"name":"y","kind":"response"}]}"#).validate().is_err());
        assert!(schema(
            r#"{"columns":[{"name":"t","kind":"temporal","period":1},{"name":"y","kind":"response"}]}"#
        )
        .validate()
        .is_err());
        let s = schema(
            r#"{"columns":[{"name":"t","kind":"temporal","period":7},{"name":"z","kind":"ignore"},{"name":"y","kind":"response"}]}"#,
        );
        s.validate().unwrap();
        assert_eq!(s.temporal_specs()[0].tau, 1);
    }

    #[test]
    fn dataset_round_trip() {
        let ds = Dataset::builder("y", vec![1.5, -2.25, 3.0])
            .numerical("x", vec![0.1, 0.2, 0.30000000000000004])
            .categorical("z", vec!["a", "b", "a"])
            .temporal("t", vec![3, 1, 2])
            .build()
            .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_dataset_csv(f.path(), &ds).unwrap();
        let back = ingest_csv(f.path(), &SchemaFile::for_dataset(&ds)).unwrap();
        assert_eq!(back.response(), ds.response());
        assert_eq!(back.numerical()[0].values, ds.numerical()[0].values);
        assert_eq!(back.categorical()[0].values, ds.categorical()[0].values);
        assert_eq!(back.temporal()[0].values, ds.temporal()[0].values);
    }
}
