//! Dataset manifests and the delimited text sample format.
//!
//! A manifest names the sample file, its columns and the categorical fields.
//! The sample file starts with a header row; multi-valued fields separate
//! their IDs with `|`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use resflow_core::data::{Bucketizer, Dataset, ListMembership, Sample};
use resflow_core::embedding::{Arity, FieldSchema, FieldValue, Schema, TowerSide, VocabularyPolicy};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::movielens;

pub const DEFAULT_BUCKETS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    #[default]
    Delimited,
    #[serde(rename = "movielens-1m")]
    Movielens1m,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    #[default]
    Categorical,
    /// Real values, bucketized into categorical IDs at load time.
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ArityName {
    #[default]
    Single,
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SideName {
    #[default]
    Query,
    Item,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PolicyName {
    #[default]
    Counted,
    Enumerated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldEntry {
    pub name: String,
    #[serde(default)]
    pub arity: ArityName,
    #[serde(default)]
    pub side: SideName,
    #[serde(default)]
    pub kind: FieldKind,
    #[serde(default)]
    pub policy: PolicyName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub buckets: Option<usize>,
}

impl FieldEntry {
    pub fn schema(&self) -> FieldSchema {
        let f = match self.arity {
            ArityName::Single => FieldSchema::single(self.name.clone()),
            ArityName::Multi => FieldSchema::multi(self.name.clone()),
        };
        f.on_side(match self.side {
            SideName::Query => TowerSide::Query,
            SideName::Item => TowerSide::Item,
        })
        .with_policy(match self.policy {
            PolicyName::Counted => VocabularyPolicy::Counted,
            PolicyName::Enumerated => VocabularyPolicy::Enumerated,
        })
    }

    pub fn from_schema(f: &FieldSchema) -> Self {
        Self {
            name: f.name.clone(),
            arity: match f.arity {
                Arity::Single => ArityName::Single,
                Arity::Multi => ArityName::Multi,
            },
            side: match f.side {
                TowerSide::Query => SideName::Query,
                TowerSide::Item => SideName::Item,
            },
            kind: FieldKind::Categorical,
            policy: match f.policy {
                VocabularyPolicy::Counted => PolicyName::Counted,
                VocabularyPolicy::Enumerated => PolicyName::Enumerated,
            },
            buckets: None,
        }
    }
}

fn default_delimiter() -> String {
    "\t".to_string()
}

fn default_timestamp() -> String {
    "timestamp".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    #[serde(default)]
    pub format: DataFormat,
    /// Sample file (delimited) or directory (MovieLens), relative to the manifest.
    pub path: PathBuf,
    #[serde(default = "default_delimiter")]
    pub delimiter: String,
    #[serde(default = "default_timestamp")]
    pub timestamp: String,
    #[serde(default)]
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_id: Option<String>,
    /// Order-count column of list items.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<String>,
    #[serde(default, rename = "field")]
    pub fields: Vec<FieldEntry>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| CliError::Usage(e.to_string()))?;
        fs::write(path, text).map_err(|e| CliError::io(path, e))
    }

    pub fn schema(&self) -> CliResult<Schema> {
        Ok(Schema::new(self.fields.iter().map(FieldEntry::schema).collect())?)
    }
}

/// Bucket boundaries of numeric fields, keyed by field name.
pub type Bucketizers = BTreeMap<String, Bucketizer>;

/// Loads the dataset a manifest describes. Numeric fields use `bucketizers`
/// when given (e.g. from a checkpoint) and are fitted on the file otherwise.
pub fn load(manifest_path: &Path, bucketizers: Option<&Bucketizers>) -> CliResult<(Dataset, Bucketizers)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let path = base.join(&manifest.path);
    match manifest.format {
        DataFormat::Movielens1m => Ok((movielens::load(&path)?, Bucketizers::new())),
        DataFormat::Delimited => read_delimited(&path, &manifest, bucketizers),
    }
}

struct Columns {
    fields: Vec<usize>,
    labels: Vec<usize>,
    timestamp: usize,
    target: Option<usize>,
    list_id: Option<usize>,
    item_id: Option<usize>,
    weight: Option<usize>,
}

fn column_index(path: &Path, header: &[&str], name: &str) -> CliResult<usize> {
    header
        .iter()
        .position(|h| *h == name)
        .ok_or_else(|| CliError::Data(format!("{}: header has no column `{name}`", path.display())))
}

fn parse_ids(token: &str, arity: ArityName) -> Option<FieldValue> {
    match arity {
        ArityName::Single => token.trim().parse().ok().map(FieldValue::Single),
        ArityName::Multi => {
            let t = token.trim();
            if t.is_empty() {
                return Some(FieldValue::Multi(Vec::new()));
            }
            t.split('|').map(|p| p.trim().parse().ok()).collect::<Option<Vec<u64>>>().map(FieldValue::Multi)
        }
    }
}

fn parse_label(token: &str) -> Option<f64> {
    let t = token.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Some(f64::NAN);
    }
    t.parse().ok()
}

enum RawValue {
    Ids(FieldValue),
    Numeric(f64),
}

pub fn read_delimited(
    path: &Path,
    manifest: &DatasetManifest,
    given: Option<&Bucketizers>,
) -> CliResult<(Dataset, Bucketizers)> {
    let file = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let delim = manifest.delimiter.as_str();
    if delim.is_empty() {
        return Err(CliError::Data("manifest delimiter is empty".into()));
    }
    let header_line = match lines.next() {
        Some(l) => l.map_err(|e| CliError::io(path, e))?,
        None => return Err(CliError::Data(format!("{}: empty file", path.display()))),
    };
    let header: Vec<&str> = header_line.split(delim).map(str::trim).collect();
    let opt = |name: &Option<String>| name.as_deref().map(|n| column_index(path, &header, n)).transpose();
    let cols = Columns {
        fields: manifest.fields.iter().map(|f| column_index(path, &header, &f.name)).collect::<CliResult<_>>()?,
        labels: manifest.labels.iter().map(|l| column_index(path, &header, l)).collect::<CliResult<_>>()?,
        timestamp: column_index(path, &header, &manifest.timestamp)?,
        target: opt(&manifest.target)?,
        list_id: opt(&manifest.list_id)?,
        item_id: opt(&manifest.item_id)?,
        weight: opt(&manifest.weight)?,
    };
    let bad = |line: usize, what: &str, token: &str| {
        CliError::Data(format!("{}:{line}: cannot parse {what} from `{token}`", path.display()))
    };
    let mut raw_rows: Vec<(Vec<RawValue>, Sample)> = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(delim).collect();
        if tokens.len() != header.len() {
            return Err(CliError::Data(format!(
                "{}:{line_no}: {} columns, header has {}",
                path.display(),
                tokens.len(),
                header.len()
            )));
        }
        let mut values = Vec::with_capacity(cols.fields.len());
        for (f, &c) in manifest.fields.iter().zip(&cols.fields) {
            let v = match f.kind {
                FieldKind::Categorical => {
                    RawValue::Ids(parse_ids(tokens[c], f.arity).ok_or_else(|| bad(line_no, &f.name, tokens[c]))?)
                }
                FieldKind::Numeric => {
                    let x: f64 = tokens[c].trim().parse().map_err(|_| bad(line_no, &f.name, tokens[c]))?;
                    if !x.is_finite() {
                        return Err(bad(line_no, &f.name, tokens[c]));
                    }
                    RawValue::Numeric(x)
                }
            };
            values.push(v);
        }
        let labels = cols
            .labels
            .iter()
            .zip(&manifest.labels)
            .map(|(&c, name)| parse_label(tokens[c]).ok_or_else(|| bad(line_no, name, tokens[c])))
            .collect::<CliResult<Vec<f64>>>()?;
        let timestamp: i64 =
            tokens[cols.timestamp].trim().parse().map_err(|_| bad(line_no, "timestamp", tokens[cols.timestamp]))?;
        let target = cols
            .target
            .map(|c| tokens[c].trim().parse::<f64>().map_err(|_| bad(line_no, "target", tokens[c])))
            .transpose()?;
        let list = match cols.list_id {
            Some(c) => {
                let list_id = tokens[c].trim().parse().map_err(|_| bad(line_no, "list id", tokens[c]))?;
                let item_id = match cols.item_id {
                    Some(c) => tokens[c].trim().parse().map_err(|_| bad(line_no, "item id", tokens[c]))?,
                    None => 0,
                };
                let weight = match cols.weight {
                    Some(c) => tokens[c].trim().parse().map_err(|_| bad(line_no, "weight", tokens[c]))?,
                    None => 0.0,
                };
                Some(ListMembership { list_id, item_id, weight })
            }
            None => None,
        };
        raw_rows.push((values, Sample { features: Vec::new(), labels, target, timestamp, list }));
    }

    let mut bucketizers = Bucketizers::new();
    for (k, f) in manifest.fields.iter().enumerate() {
        if f.kind != FieldKind::Numeric {
            continue;
        }
        if f.arity == ArityName::Multi {
            return Err(CliError::Data(format!("numeric field `{}` cannot be multi-valued", f.name)));
        }
        let b = match given.and_then(|g| g.get(&f.name)) {
            Some(b) => b.clone(),
            None => {
                let values: Vec<f64> = raw_rows
                    .iter()
                    .map(|(v, _)| match v[k] {
                        RawValue::Numeric(x) => x,
                        RawValue::Ids(_) => unreachable!("numeric field holds numbers"),
                    })
                    .collect();
                Bucketizer::fit(&values, f.buckets.unwrap_or(DEFAULT_BUCKETS))?
            }
        };
        bucketizers.insert(f.name.clone(), b);
    }
    let samples = raw_rows
        .into_iter()
        .map(|(values, mut s)| {
            s.features = values
                .into_iter()
                .zip(&manifest.fields)
                .map(|(v, f)| match v {
                    RawValue::Ids(ids) => ids,
                    RawValue::Numeric(x) => FieldValue::Single(bucketizers[&f.name].bucket(x)),
                })
                .collect();
            s
        })
        .collect();
    let dataset = Dataset { schema: manifest.schema()?, label_names: manifest.labels.clone(), samples };
    Ok((dataset, bucketizers))
}

fn format_ids(v: &FieldValue) -> String {
    match v {
        FieldValue::Single(id) => id.to_string(),
        FieldValue::Multi(ids) => ids.iter().map(u64::to_string).collect::<Vec<_>>().join("|"),
    }
}

fn format_number(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        x.to_string()
    }
}

/// Writes `dataset` as a tab-separated file plus a manifest describing it.
pub fn write_delimited(dataset: &Dataset, dir: &Path, file_name: &str) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(file_name);
    let file = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    let has_target = dataset.samples.iter().any(|s| s.target.is_some());
    let has_lists = dataset.has_lists();
    let mut header: Vec<String> = dataset.schema.fields().iter().map(|f| f.name.clone()).collect();
    header.extend(dataset.label_names.iter().cloned());
    header.push("timestamp".into());
    if has_target {
        header.push("target".into());
    }
    if has_lists {
        header.extend(["list_id".to_string(), "list_item".to_string(), "W".to_string()]);
    }
    let io = |e| CliError::io(&path, e);
    writeln!(w, "{}", header.join("\t")).map_err(io)?;
    for s in &dataset.samples {
        let mut row: Vec<String> = s.features.iter().map(format_ids).collect();
        row.extend(s.labels.iter().map(|&l| format_number(l)));
        row.push(s.timestamp.to_string());
        if has_target {
            row.push(s.target.map_or(String::new(), format_number));
        }
        if let (true, Some(m)) = (has_lists, s.list) {
            row.extend([m.list_id.to_string(), m.item_id.to_string(), format_number(m.weight)]);
        }
        writeln!(w, "{}", row.join("\t")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let manifest = DatasetManifest {
        format: DataFormat::Delimited,
        path: PathBuf::from(file_name),
        delimiter: "\t".into(),
        timestamp: "timestamp".into(),
        labels: dataset.label_names.clone(),
        target: has_target.then(|| "target".into()),
        list_id: has_lists.then(|| "list_id".into()),
        item_id: has_lists.then(|| "list_item".into()),
        weight: has_lists.then(|| "W".into()),
        fields: dataset.schema.fields().iter().map(FieldEntry::from_schema).collect(),
    };
    let manifest_path = dir.join("manifest.toml");
    manifest.write(&manifest_path)?;
    Ok(manifest_path)
}
