//! Data dictionary, validated record ingestion, filter pipelines and
//! stratified cross-tabulation.
//!
//! Every record carries exactly one category per dictionary variable. Values
//! are stored as category indices into the dictionary, so the rest of the
//! crate never compares strings on the hot path.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Category literal that ingestion falls back to for missing or coerced values.
pub const UNKNOWN: &str = "unknown";

pub const DEFAULT_ID_COLUMN: &str = "crash_number";

/// Lowercases, trims and replaces runs of whitespace with a single underscore.
pub fn normalize_name(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
        .to_lowercase()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleHint {
    Feature,
    Response,
    Stratum,
    #[default]
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSchema {
    pub name: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub role_hint: RoleHint,
}

impl VariableSchema {
    pub fn category_index(&self, category: &str) -> Option<u16> {
        self.categories
            .iter()
            .position(|c| c == category)
            .map(|i| i as u16)
    }

    pub fn unknown_index(&self) -> Option<u16> {
        self.category_index(UNKNOWN)
    }
}

#[derive(Debug, Deserialize)]
struct DictionaryDocument {
    #[serde(default)]
    version: String,
    variables: Vec<VariableSchema>,
}

/// The variable universe. Immutable once validated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DataDictionary {
    version: String,
    variables: Vec<VariableSchema>,
    #[serde(skip)]
    by_name: HashMap<String, usize>,
}

impl DataDictionary {
    /// Validates and normalizes a list of variables.
    pub fn new(version: impl Into<String>, variables: Vec<VariableSchema>) -> Result<Self> {
        let mut by_name = HashMap::with_capacity(variables.len());
        let mut normalized = Vec::with_capacity(variables.len());
        for var in variables {
            let name = normalize_name(&var.name);
            if name.is_empty() {
                return Err(Error::Dictionary("variable with empty name".into()));
            }
            if by_name.contains_key(&name) {
                return Err(Error::Dictionary(format!("duplicate variable `{name}`")));
            }
            let categories: Vec<String> = var
                .categories
                .iter()
                .map(|c| c.trim().to_string())
                .collect();
            if categories.len() < 2 {
                return Err(Error::Dictionary(format!(
                    "variable `{name}` has {} categories, at least 2 are required",
                    categories.len()
                )));
            }
            if categories.len() > 64 {
                return Err(Error::Dictionary(format!(
                    "variable `{name}` has {} categories, at most 64 are supported",
                    categories.len()
                )));
            }
            let mut seen = HashSet::new();
            for c in &categories {
                if c.is_empty() {
                    return Err(Error::Dictionary(format!(
                        "variable `{name}` has an empty category"
                    )));
                }
                if !seen.insert(c.as_str()) {
                    return Err(Error::Dictionary(format!(
                        "duplicate category `{c}` in variable `{name}`"
                    )));
                }
            }
            by_name.insert(name.clone(), normalized.len());
            normalized.push(VariableSchema {
                name,
                categories,
                role_hint: var.role_hint,
            });
        }
        if normalized.is_empty() {
            return Err(Error::Dictionary("no variables declared".into()));
        }
        Ok(DataDictionary {
            version: version.into(),
            variables: normalized,
            by_name,
        })
    }

    pub fn from_json_str(doc: &str) -> Result<Self> {
        let parsed: DictionaryDocument =
            serde_json::from_str(doc).map_err(|e| Error::Parse(format!("dictionary: {e}")))?;
        Self::new(parsed.version, parsed.variables)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn variables(&self) -> &[VariableSchema] {
        &self.variables
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }

    /// Looks up a variable by name; the name is normalized first.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(&normalize_name(name)).copied()
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn variable(&self, index: usize) -> &VariableSchema {
        &self.variables[index]
    }

    pub fn require_category(&self, var: usize, category: &str) -> Result<u16> {
        let schema = &self.variables[var];
        schema
            .category_index(category.trim())
            .ok_or_else(|| Error::UnknownCategory {
                variable: schema.name.clone(),
                category: category.to_string(),
            })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownPolicy {
    /// Abort on the first out-of-dictionary value.
    #[default]
    Reject,
    /// Map out-of-dictionary values to `unknown` when the variable has it.
    Coerce,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOptions {
    pub id_column: String,
    pub policy: UnknownPolicy,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            id_column: DEFAULT_ID_COLUMN.to_string(),
            policy: UnknownPolicy::Reject,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub id: String,
    /// Category index per dictionary variable, in dictionary order.
    pub values: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterLogEntry {
    pub description: String,
    pub records_before: usize,
    pub records_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterStep {
    pub variable: String,
    pub keep: Vec<String>,
}

impl FilterStep {
    pub fn new<S: Into<String>>(variable: &str, keep: impl IntoIterator<Item = S>) -> Self {
        FilterStep {
            variable: variable.to_string(),
            keep: keep.into_iter().map(Into::into).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordSet {
    dictionary: Arc<DataDictionary>,
    records: Vec<Record>,
    filter_log: Vec<FilterLogEntry>,
}

impl RecordSet {
    /// Builds a record set from rows whose values follow dictionary variable
    /// order. Every value must be a dictionary category.
    pub fn from_rows<I, S>(dictionary: Arc<DataDictionary>, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<S>)>,
        S: AsRef<str>,
    {
        let mut records = Vec::new();
        let mut ids = HashSet::new();
        for (row, (id, values)) in rows.into_iter().enumerate() {
            let row = row as u64 + 1;
            if values.len() != dictionary.len() {
                return Err(Error::InvalidArgument(format!(
                    "row {row}: expected {} values, got {}",
                    dictionary.len(),
                    values.len()
                )));
            }
            if !ids.insert(id.clone()) {
                return Err(Error::DuplicateRecord { row, id });
            }
            let mut codes = Vec::with_capacity(values.len());
            for (var, value) in values.iter().enumerate() {
                let schema = dictionary.variable(var);
                let code =
                    schema
                        .category_index(value.as_ref())
                        .ok_or_else(|| Error::InvalidValue {
                            row,
                            variable: schema.name.clone(),
                            value: value.as_ref().to_string(),
                        })?;
                codes.push(code);
            }
            records.push(Record { id, values: codes });
        }
        Ok(RecordSet {
            dictionary,
            records,
            filter_log: Vec::new(),
        })
    }

    pub fn dictionary(&self) -> &Arc<DataDictionary> {
        &self.dictionary
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn filter_log(&self) -> &[FilterLogEntry] {
        &self.filter_log
    }

    pub fn category(&self, record: usize, var: usize) -> &str {
        let code = self.records[record].values[var] as usize;
        &self.dictionary.variable(var).categories[code]
    }

    /// Writes the records back out as CSV with the id column first.
    pub fn write_csv<W: Write>(&self, writer: W, id_column: &str) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec![id_column.to_string()];
        header.extend(self.dictionary.variables().iter().map(|v| v.name.clone()));
        out.write_record(&header)?;
        for (i, record) in self.records.iter().enumerate() {
            let mut row = vec![record.id.as_str()];
            row.extend((0..self.dictionary.len()).map(|v| self.category(i, v)));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<csv stream>", e))?;
        Ok(())
    }
}

/// Reads a comma-delimited stream with a header row and validates every row
/// against the dictionary.
pub fn ingest<R: Read>(
    source: R,
    dictionary: Arc<DataDictionary>,
    options: &IngestOptions,
) -> Result<RecordSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(source);
    let header: Vec<String> = reader.headers()?.iter().map(normalize_name).collect();
    if header.iter().all(String::is_empty) {
        return Err(Error::EmptyInput("no header row".into()));
    }
    let column = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = column(&normalize_name(&options.id_column))?;
    let var_cols = dictionary
        .variables()
        .iter()
        .map(|v| column(&v.name))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (row, result) in reader.records().enumerate() {
        let row = row as u64 + 1;
        let raw = result?;
        let id = raw.get(id_col).unwrap_or("").trim().to_string();
        if id.is_empty() {
            return Err(Error::InvalidValue {
                row,
                variable: options.id_column.clone(),
                value: String::new(),
            });
        }
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateRecord { row, id });
        }
        let mut values = Vec::with_capacity(var_cols.len());
        for (var, &col) in var_cols.iter().enumerate() {
            let schema = dictionary.variable(var);
            let value = raw.get(col).unwrap_or("").trim();
            let code = if value.is_empty() {
                schema.unknown_index().ok_or_else(|| Error::MissingValue {
                    row,
                    variable: schema.name.clone(),
                })?
            } else {
                match (schema.category_index(value), options.policy) {
                    (Some(code), _) => code,
                    (None, UnknownPolicy::Coerce) if schema.unknown_index().is_some() => {
                        schema.unknown_index().unwrap()
                    }
                    (None, _) => {
                        return Err(Error::InvalidValue {
                            row,
                            variable: schema.name.clone(),
                            value: value.to_string(),
                        })
                    }
                }
            };
            values.push(code);
        }
        records.push(Record { id, values });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput("no data rows".into()));
    }
    Ok(RecordSet {
        dictionary,
        records,
        filter_log: Vec::new(),
    })
}

pub fn ingest_path(
    path: impl AsRef<Path>,
    dictionary: Arc<DataDictionary>,
    options: &IngestOptions,
) -> Result<RecordSet> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ingest(std::io::BufReader::new(file), dictionary, options)
}

/// Keeps records that satisfy every step, logging one entry per step.
pub fn filter_records(rs: &RecordSet, steps: &[FilterStep]) -> Result<RecordSet> {
    let dict = &rs.dictionary;
    let resolved = steps
        .iter()
        .map(|step| {
            let var = dict.require(&step.variable)?;
            let mut allowed = 0u64;
            for cat in &step.keep {
                allowed |= 1 << dict.require_category(var, cat)?;
            }
            Ok((var, allowed))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = rs.records.clone();
    let mut filter_log = rs.filter_log.clone();
    for (step, (var, allowed)) in steps.iter().zip(resolved) {
        let before = records.len();
        records.retain(|r| allowed & (1 << r.values[var]) != 0);
        filter_log.push(FilterLogEntry {
            description: format!(
                "{} in {{{}}}",
                dict.variable(var).name,
                step.keep.join(", ")
            ),
            records_before: before,
            records_after: records.len(),
        });
    }
    Ok(RecordSet {
        dictionary: Arc::clone(&rs.dictionary),
        records,
        filter_log,
    })
}

/// Counts of one variable against another. Percentages are derived on
/// demand, column-wise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrossTab {
    pub row_variable: String,
    pub col_variable: String,
    pub row_categories: Vec<String>,
    pub col_categories: Vec<String>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<u64>>,
    pub column_totals: Vec<u64>,
}

impl CrossTab {
    pub fn cell(&self, row: &str, col: &str) -> Option<u64> {
        let r = self.row_categories.iter().position(|c| c == row)?;
        let c = self.col_categories.iter().position(|c| c == col)?;
        Some(self.cells[r][c])
    }

    /// Share of the column total, in percent. `None` for an empty column.
    pub fn column_percent(&self, row: usize, col: usize) -> Option<f64> {
        let total = self.column_totals[col];
        (total > 0).then(|| 100.0 * self.cells[row][col] as f64 / total as f64)
    }

    pub fn total(&self) -> u64 {
        self.column_totals.iter().sum()
    }
}

pub fn cross_tabulate(rs: &RecordSet, row_var: &str, col_var: &str) -> Result<CrossTab> {
    let dict = &rs.dictionary;
    let r = dict.require(row_var)?;
    let c = dict.require(col_var)?;
    let row_schema = dict.variable(r);
    let col_schema = dict.variable(c);
    let mut cells = vec![vec![0u64; col_schema.categories.len()]; row_schema.categories.len()];
    for record in &rs.records {
        cells[record.values[r] as usize][record.values[c] as usize] += 1;
    }
    let column_totals = (0..col_schema.categories.len())
        .map(|j| cells.iter().map(|row| row[j]).sum())
        .collect();
    Ok(CrossTab {
        row_variable: row_schema.name.clone(),
        col_variable: col_schema.name.clone(),
        row_categories: row_schema.categories.clone(),
        col_categories: col_schema.categories.clone(),
        cells,
        column_totals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict() -> Arc<DataDictionary> {
        Arc::new(
            DataDictionary::from_json_str(
                r#"{"version": "t1", "variables": [
                    {"name": "Injury Severity", "categories": ["fatal", "severe", "moderate"]},
                    {"name": "lighting_condition",
                     "categories": ["daylight", "dark_with_streetlight", "dark_no_streetlight"],
                     "role_hint": "response"},
                    {"name": "driver_age", "categories": ["15-24", ">64", "unknown"]}
                ]}"#,
            )
            .unwrap(),
        )
    }

    #[test]
    fn minimal_dictionary() {
        let d = DataDictionary::from_json_str(
            r#"{"version": "v", "variables": [{"name": "injury_severity", "categories": ["fatal", "severe", "moderate"]}]}"#,
        )
        .unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.variable(0).categories.len(), 3);
        assert_eq!(d.variable(0).role_hint, RoleHint::None);
    }

    #[test]
    fn lighting_order_preserved_and_names_normalized() {
        let d = dict();
        assert_eq!(d.variable(0).name, "injury_severity");
        assert_eq!(
            d.variable(1).categories,
            ["daylight", "dark_with_streetlight", "dark_no_streetlight"]
        );
        assert_eq!(normalize_name("Driver Age"), "driver_age");
        assert_eq!(d.index_of("Driver  Age"), Some(2));
    }

    #[test]
    fn dictionary_validation_names_offender() {
        let dup = DataDictionary::from_json_str(
            r#"{"variables": [{"name": "a", "categories": ["x", "y"]}, {"name": "A", "categories": ["x", "y"]}]}"#,
        )
        .unwrap_err();
        assert!(dup.to_string().contains("`a`"), "{dup}");
        let single = DataDictionary::from_json_str(
            r#"{"variables": [{"name": "solo", "categories": ["x"]}]}"#,
        )
        .unwrap_err();
        assert!(single.to_string().contains("solo"));
        let dup_cat = DataDictionary::from_json_str(
            r#"{"variables": [{"name": "b", "categories": ["x", "x"]}]}"#,
        )
        .unwrap_err();
        assert!(dup_cat.to_string().contains("`x`"));
        assert!(matches!(
            DataDictionary::from_json_str("{not json"),
            Err(Error::Parse(_))
        ));
    }

    const CSV: &str = "crash_number,injury_severity,lighting_condition,driver_age\n\
                       1,fatal,daylight,>64\n\
                       2,severe,dark_no_streetlight,15-24\n\
                       3,moderate,daylight,unknown\n";

    #[test]
    fn ingest_valid_rows() {
        let rs = ingest(CSV.as_bytes(), dict(), &IngestOptions::default()).unwrap();
        assert_eq!(rs.len(), 3);
        assert!(rs.filter_log().is_empty());
        assert_eq!(rs.category(0, 2), ">64");
    }

    #[test]
    fn ingest_rejects_out_of_dictionary_value() {
        let csv = "crash_number,injury_severity,lighting_condition,driver_age\n\
                   1,fatal,daylight,>64\n\
                   2,fatal,dusk,>64\n";
        let err = ingest(csv.as_bytes(), dict(), &IngestOptions::default()).unwrap_err();
        match err {
            Error::InvalidValue { row, value, .. } => {
                assert_eq!(row, 2);
                assert_eq!(value, "dusk");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coerce_maps_to_unknown_only_when_available() {
        let opts = IngestOptions {
            policy: UnknownPolicy::Coerce,
            ..Default::default()
        };
        let csv =
            "crash_number,injury_severity,lighting_condition,driver_age\n1,fatal,daylight,99+\n";
        let rs = ingest(csv.as_bytes(), dict(), &opts).unwrap();
        assert_eq!(rs.category(0, 2), "unknown");

        let csv = "crash_number,injury_severity,lighting_condition,driver_age\n1,fatal,dusk,>64\n";
        assert!(matches!(
            ingest(csv.as_bytes(), dict(), &opts),
            Err(Error::InvalidValue { .. })
        ));
    }

    #[test]
    fn missing_values() {
        let csv = "crash_number,injury_severity,lighting_condition,driver_age\n1,fatal,daylight,\n";
        let rs = ingest(csv.as_bytes(), dict(), &IngestOptions::default()).unwrap();
        assert_eq!(rs.category(0, 2), "unknown");
        let csv = "crash_number,injury_severity,lighting_condition,driver_age\n1,,daylight,>64\n";
        assert!(matches!(
            ingest(csv.as_bytes(), dict(), &IngestOptions::default()),
            Err(Error::MissingValue { .. })
        ));
    }

    #[test]
    fn ingest_errors() {
        let opts = IngestOptions::default();
        let missing = "crash_number,injury_severity,lighting_condition\n1,fatal,daylight\n";
        assert!(matches!(
            ingest(missing.as_bytes(), dict(), &opts),
            Err(Error::MissingColumn(c)) if c == "driver_age"
        ));
        let dup = "crash_number,injury_severity,lighting_condition,driver_age\n\
                   7,fatal,daylight,>64\n7,fatal,daylight,>64\n";
        assert!(matches!(
            ingest(dup.as_bytes(), dict(), &opts),
            Err(Error::DuplicateRecord { row: 2, .. })
        ));
        assert!(matches!(
            ingest("".as_bytes(), dict(), &opts),
            Err(Error::EmptyInput(_))
        ));
        let header_only = "crash_number,injury_severity,lighting_condition,driver_age\n";
        assert!(matches!(
            ingest(header_only.as_bytes(), dict(), &opts),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn custom_id_column_and_extra_columns() {
        let csv =
            "ID,extra,injury_severity,lighting_condition,driver_age\nA,zz,fatal,daylight,>64\n";
        let opts = IngestOptions {
            id_column: "id".into(),
            ..Default::default()
        };
        let rs = ingest(csv.as_bytes(), dict(), &opts).unwrap();
        assert_eq!(rs.records()[0].id, "A");
    }

    #[test]
    fn empty_filter_is_identity() {
        let rs = ingest(CSV.as_bytes(), dict(), &IngestOptions::default()).unwrap();
        let out = filter_records(&rs, &[]).unwrap();
        assert_eq!(out, rs);
    }

    #[test]
    fn filter_unknown_references() {
        let rs = ingest(CSV.as_bytes(), dict(), &IngestOptions::default()).unwrap();
        assert!(matches!(
            filter_records(&rs, &[FilterStep::new("nope", ["x"])]),
            Err(Error::UnknownVariable(_))
        ));
        assert!(matches!(
            filter_records(&rs, &[FilterStep::new("injury_severity", ["minor"])]),
            Err(Error::UnknownCategory { .. })
        ));
    }

    #[test]
    fn cross_tab_single_record() {
        let csv =
            "crash_number,injury_severity,lighting_condition,driver_age\n1,fatal,daylight,>64\n";
        let rs = ingest(csv.as_bytes(), dict(), &IngestOptions::default()).unwrap();
        let ct = cross_tabulate(&rs, "injury_severity", "lighting_condition").unwrap();
        let total: u64 = ct.cells.iter().flatten().sum();
        assert_eq!(total, 1);
        assert_eq!(ct.cell("fatal", "daylight"), Some(1));
        assert_eq!(ct.column_percent(0, 1), None);
        assert!(matches!(
            cross_tabulate(&rs, "injury_severity", "weather"),
            Err(Error::UnknownVariable(_))
        ));
    }
}
