//! Run configuration and the `describe`, `select-vars`, `mine` and
//! `pipeline` commands.
//!
//! All commands share one ingest: dictionary, records, then the configured
//! filter steps. Output goes under the configured output directory:
//!
//! ```text
//! <out>/describe/summary.json, crosstab_<var>.{csv,txt}
//! <out>/select_vars/importance.{svg,csv,json}, selected_variables.json
//! <out>/mine/item_freq.{svg,csv}
//! <out>/mine/<case>/rules.csv, rule_table.{csv,txt}, rule_scatter.{svg,csv}, metadata.json
//! <out>/manifest.json
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{mda_importance, select_top_k, train, ForestConfig};
use crate::report::{self, Artifact, ArtifactKind, ReportBundle};
use crate::rules::{run_case, MiningCase};
use crate::schema::{
    cross_tabulate, filter_records, ingest_path, DataDictionary, FilterLogEntry, FilterStep,
    IngestOptions, RecordSet, UnknownPolicy, DEFAULT_ID_COLUMN,
};
use crate::transactions::{encode, EncodeOptions};

fn default_id_column() -> String {
    DEFAULT_ID_COLUMN.to_string()
}

fn default_top_k_variables() -> usize {
    10
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// One mining case plus the record filters that define its subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseConfig {
    #[serde(flatten)]
    pub case: MiningCase,
    #[serde(default)]
    pub filters: Vec<FilterStep>,
    #[serde(default)]
    pub full_universe: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dictionary: PathBuf,
    pub data: PathBuf,
    #[serde(default = "default_id_column")]
    pub id_column: String,
    #[serde(default)]
    pub unknown_policy: UnknownPolicy,
    #[serde(default)]
    pub filters: Vec<FilterStep>,
    /// Column variable of the descriptive cross-tabulations.
    #[serde(default)]
    pub stratum: Option<String>,
    #[serde(default)]
    pub response: Option<String>,
    /// Forest features; every non-response variable when absent.
    #[serde(default)]
    pub features: Option<Vec<String>>,
    #[serde(default = "default_top_k_variables")]
    pub top_k_variables: usize,
    /// Forest settings; its `seed` is replaced by the run seed.
    #[serde(default)]
    pub forest: ForestConfig,
    /// Variables to mine; the `select-vars` output when absent.
    #[serde(default)]
    pub mining_variables: Option<Vec<String>>,
    #[serde(default)]
    pub cases: Vec<CaseConfig>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    /// Parses a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut config.dictionary,
            &mut config.data,
            &mut config.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        for (what, p) in [("dictionary", &self.dictionary), ("data", &self.data)] {
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "{what} file not found: {}",
                    p.display()
                )));
            }
        }
        for c in &self.cases {
            c.case.validate()?;
        }
        Ok(())
    }

    /// Hash of everything that affects artifact contents.
    pub fn content_hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.output_dir = PathBuf::new();
        let json = serde_json::to_string(&normalized).expect("config serializes");
        report::sha256_hex(json.as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Describe,
    SelectVars,
    Mine,
    Pipeline,
}

#[derive(Debug)]
pub struct CliError {
    pub stage: &'static str,
    pub error: Error,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for CliError {}

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError>;
}

impl<T> Stage<T> for Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, CliError> {
        self.map_err(|error| CliError { stage, error })
    }
}

#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Ingested and filtered data shared by every stage of a run.
struct Session {
    config: RunConfig,
    raw_len: usize,
    records: RecordSet,
    out: PathBuf,
    bundle: ReportBundle,
}

impl Session {
    fn open(config: RunConfig) -> std::result::Result<Self, CliError> {
        config.validate().stage("config")?;
        let dictionary = Arc::new(DataDictionary::load(&config.dictionary).stage("dictionary")?);
        let options = IngestOptions {
            id_column: config.id_column.clone(),
            policy: config.unknown_policy,
        };
        let raw = ingest_path(&config.data, dictionary, &options).stage("ingest")?;
        let records = filter_records(&raw, &config.filters).stage("filter")?;
        log::info!(
            "{} records ingested, {} after filtering",
            raw.len(),
            records.len()
        );
        let data_bytes = fs::read(&config.data)
            .map_err(|e| Error::io(&config.data, e))
            .stage("ingest")?;
        let bundle = ReportBundle::new(config.content_hash(), report::sha256_hex(&data_bytes));
        let out = config.output_dir.clone();
        fs::create_dir_all(&out)
            .map_err(|e| Error::io(&out, e))
            .stage("output")?;
        Ok(Session {
            config,
            raw_len: raw.len(),
            records,
            out,
            bundle,
        })
    }

    fn record(&mut self, artifacts: Vec<Artifact>) -> Result<()> {
        self.bundle.add(&self.out, artifacts)
    }

    fn finish(self) -> std::result::Result<PathBuf, CliError> {
        self.bundle.write(&self.out).stage("manifest")
    }
}

#[derive(Serialize)]
struct CategoryCount<'a> {
    category: &'a str,
    count: u64,
}

#[derive(Serialize)]
struct VariableSummary<'a> {
    name: &'a str,
    counts: Vec<CategoryCount<'a>>,
}

#[derive(Serialize)]
struct DatasetSummary<'a> {
    n_records: usize,
    n_ingested: usize,
    filter_log: &'a [FilterLogEntry],
    variables: Vec<VariableSummary<'a>>,
}

fn describe(s: &mut Session) -> Result<()> {
    let dict = Arc::clone(s.records.dictionary());
    let variables = dict
        .variables()
        .iter()
        .enumerate()
        .map(|(v, schema)| {
            let mut counts = vec![0u64; schema.categories.len()];
            for r in s.records.records() {
                counts[r.values[v] as usize] += 1;
            }
            VariableSummary {
                name: &schema.name,
                counts: schema
                    .categories
                    .iter()
                    .zip(counts)
                    .map(|(category, count)| CategoryCount { category, count })
                    .collect(),
            }
        })
        .collect();
    let summary = DatasetSummary {
        n_records: s.records.len(),
        n_ingested: s.raw_len,
        filter_log: s.records.filter_log(),
        variables,
    };
    let dir = s.out.join("describe");
    let mut artifacts = vec![report::write_json(
        ArtifactKind::Summary,
        &dir.join("summary.json"),
        &summary,
    )?];
    if let Some(stratum) = &s.config.stratum {
        let col = dict.require(stratum)?;
        for (v, schema) in dict.variables().iter().enumerate() {
            if v == col {
                continue;
            }
            let ct = cross_tabulate(&s.records, &schema.name, stratum)?;
            artifacts.extend(report::emit_crosstab(
                &ct,
                &dir.join(format!("crosstab_{}", schema.name)),
            )?);
        }
    }
    s.record(artifacts)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Selection {
    pub response: String,
    pub k: usize,
    pub variables: Vec<String>,
}

fn select_vars(s: &mut Session) -> Result<Vec<String>> {
    let dict = Arc::clone(s.records.dictionary());
    let response = s
        .config
        .response
        .clone()
        .ok_or_else(|| Error::Config("select-vars needs `response`".into()))?;
    let response_var = dict.require(&response)?;
    let features: Vec<String> = match &s.config.features {
        Some(f) => f.clone(),
        None => dict
            .variables()
            .iter()
            .enumerate()
            .filter(|&(v, _)| v != response_var)
            .map(|(_, schema)| schema.name.clone())
            .collect(),
    };
    let forest_config = ForestConfig {
        seed: s.config.seed,
        ..s.config.forest.clone()
    };
    let forest = train(&s.records, &response, &features, &forest_config)?;
    let importance = mda_importance(&forest, &s.records, s.config.seed.wrapping_add(1))?;
    log::info!("forest OOB accuracy {:.4}", importance.oob_accuracy);

    let mut k = s.config.top_k_variables;
    if k > features.len() {
        log::warn!(
            "top_k_variables {k} exceeds {} features; keeping all",
            features.len()
        );
        k = features.len();
    }
    let selected = select_top_k(&importance, k)?;
    let dir = s.out.join("select_vars");
    let mut artifacts = report::emit_importance_chart(&importance, &dir.join("importance"))?;
    artifacts.push(report::write_json(
        ArtifactKind::Selection,
        &dir.join("selected_variables.json"),
        &Selection {
            response: importance.response.clone(),
            k,
            variables: selected.clone(),
        },
    )?);
    s.record(artifacts)?;
    Ok(selected)
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() {
        "case".into()
    } else {
        s
    }
}

fn mining_variables(s: &Session, selected: Option<Vec<String>>) -> Result<Vec<String>> {
    if let Some(v) = &s.config.mining_variables {
        return Ok(v.clone());
    }
    if let Some(v) = selected {
        return Ok(v);
    }
    let path = s.out.join("select_vars").join("selected_variables.json");
    let text = fs::read_to_string(&path).map_err(|_| {
        Error::Config(format!(
            "no `mining_variables` in config and no selection at {}; run select-vars first",
            path.display()
        ))
    })?;
    let selection: Selection = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(selection.variables)
}

fn mine(s: &mut Session, selected: Option<Vec<String>>) -> Result<()> {
    if s.config.cases.is_empty() {
        return Err(Error::Config("no mining cases configured".into()));
    }
    let variables = mining_variables(s, selected)?;
    let dir = s.out.join("mine");

    let overall = encode(&s.records, &variables, EncodeOptions::default())?;
    log::info!(
        "{} transactions over {} items",
        overall.len(),
        overall.universe().len()
    );
    let mut artifacts =
        report::emit_item_freq_chart(&overall.item_frequencies(), &dir.join("item_freq"))?;

    let mut slugs = Vec::new();
    for cfg in s.config.cases.clone() {
        let case = &cfg.case;
        let name = slug(&case.name);
        if slugs.contains(&name) {
            return Err(Error::Config(format!(
                "duplicate case name `{}`",
                case.name
            )));
        }
        slugs.push(name.clone());

        let subset = filter_records(&s.records, &cfg.filters)?;
        let mut vars = variables.clone();
        if let Some(c) = &case.consequent {
            vars.push(c.variable.clone());
        }
        let ts = encode(
            &subset,
            &vars,
            EncodeOptions {
                full_universe: cfg.full_universe,
            },
        )?;
        let result = run_case(&ts, case)?;
        let meta = result.metadata();
        log::info!(
            "case `{}`: {} transactions, minimum support count {}, {} rules generated, {} kept",
            meta.case,
            meta.n_transactions,
            meta.resolved_min_support_count,
            meta.rules_generated,
            meta.rules_after_pruning
        );
        if result.rules.is_empty() {
            log::warn!("case `{}` produced no rules", case.name);
        }
        let case_dir = dir.join(&name);
        artifacts.push(report::emit_rule_list(
            &result,
            &case_dir.join("rules.csv"),
        )?);
        artifacts.extend(report::emit_rule_table(
            &result,
            &case_dir.join("rule_table"),
            true,
        )?);
        if !result.rules.is_empty() {
            artifacts.extend(report::emit_rule_scatter(
                &result.rules,
                &case_dir.join("rule_scatter"),
            )?);
        }
        artifacts.push(report::write_json(
            ArtifactKind::Metadata,
            &case_dir.join("metadata.json"),
            &meta,
        )?);
    }
    s.record(artifacts)
}

/// Runs one command; returns the manifest path.
pub fn run(
    command: Command,
    config_path: &Path,
    overrides: &Overrides,
) -> std::result::Result<PathBuf, CliError> {
    let mut config = RunConfig::load(config_path).stage("config")?;
    if let Some(out) = &overrides.output_dir {
        config.output_dir = out.clone();
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    let mut s = Session::open(config)?;
    match command {
        Command::Describe => describe(&mut s).stage("describe")?,
        Command::SelectVars => {
            select_vars(&mut s).stage("select-vars")?;
        }
        Command::Mine => mine(&mut s, None).stage("mine")?,
        Command::Pipeline => {
            describe(&mut s).stage("describe")?;
            let selected = if s.config.response.is_some() {
                Some(select_vars(&mut s).stage("select-vars")?)
            } else {
                None
            };
            mine(&mut s, selected).stage("mine")?;
        }
    }
    s.finish()
}
