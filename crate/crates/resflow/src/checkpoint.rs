//! Binary checkpoint files.
//!
//! Layout (little endian):
//!
//! ```text
//! magic "RFLWCKPT" | u32 version | u64 manifest length | manifest (TOML)
//! tower parameters: f32 values in manifest order
//! embeddings: per field u32 entry count, default row, then (u64 id, row)*
//! u32 CRC-32 of everything above
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use resflow_core::data::{Bucketizer, SplitSpec};
use resflow_core::embedding::{FieldEmbeddings, Schema};
use resflow_core::model::{
    Edge, ModelConfig, ModelMode, MultiTaskModel, Regularizer, TaskKind, TaskSpec, TowerLayout, TowerSpec,
};
use resflow_core::progressive::ThresholdLadder;
use resflow_core::tensor::Matrix;
use serde::{Deserialize, Serialize};

use crate::config::{EvalSettings, HeadKind, RegressionHead};
use crate::dataset::{Bucketizers, FieldEntry};
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"RFLWCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskEntry {
    pub name: String,
    pub label: String,
    pub regression: bool,
    pub loss_weight: f64,
    pub pos_weight: f64,
    pub neg_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub src: String,
    pub dst: String,
    pub depths: Vec<usize>,
    pub logit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub mode: String,
    pub twin: bool,
    pub widths: Vec<usize>,
    pub dropout: Vec<f64>,
    pub embedding_dim: usize,
    pub min_count: u64,
    pub regularizer: String,
    pub lambda: f64,
    pub tasks: Vec<TaskEntry>,
    pub edges: Vec<EdgeEntry>,
}

impl ModelEntry {
    pub fn from_config(c: &ModelConfig) -> Self {
        let (regularizer, lambda) = match c.regularizer {
            Regularizer::None => ("none", 0.0),
            Regularizer::ProbabilityPenalty(l) => ("m1", l),
            Regularizer::LogitPenalty(l) => ("m2", l),
            Regularizer::NonPositiveResidual => ("m3", 0.0),
        };
        Self {
            mode: c.mode.to_string(),
            twin: c.tower.layout == TowerLayout::Twin,
            widths: c.tower.widths.clone(),
            dropout: c.tower.dropout.clone(),
            embedding_dim: c.embedding_dim,
            min_count: c.min_count,
            regularizer: regularizer.into(),
            lambda,
            tasks: c
                .tasks
                .iter()
                .map(|t| TaskEntry {
                    name: t.name.clone(),
                    label: t.label.clone(),
                    regression: t.kind == TaskKind::Regression,
                    loss_weight: t.loss_weight,
                    pos_weight: t.pos_weight,
                    neg_weight: t.neg_weight,
                })
                .collect(),
            edges: c
                .edges
                .iter()
                .map(|e| EdgeEntry { src: e.src.clone(), dst: e.dst.clone(), depths: e.depths.clone(), logit: e.logit })
                .collect(),
        }
    }

    pub fn to_config(&self) -> Result<ModelConfig, String> {
        let mode: ModelMode = self.mode.parse().map_err(|e: resflow_core::Error| e.to_string())?;
        let regularizer = match self.regularizer.as_str() {
            "none" => Regularizer::None,
            "m1" => Regularizer::ProbabilityPenalty(self.lambda),
            "m2" => Regularizer::LogitPenalty(self.lambda),
            "m3" => Regularizer::NonPositiveResidual,
            other => return Err(format!("unknown regularizer `{other}`")),
        };
        Ok(ModelConfig {
            mode,
            tasks: self
                .tasks
                .iter()
                .map(|t| TaskSpec {
                    name: t.name.clone(),
                    label: t.label.clone(),
                    kind: if t.regression { TaskKind::Regression } else { TaskKind::Binary },
                    loss_weight: t.loss_weight,
                    pos_weight: t.pos_weight,
                    neg_weight: t.neg_weight,
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge { src: e.src.clone(), dst: e.dst.clone(), depths: e.depths.clone(), logit: e.logit })
                .collect(),
            tower: TowerSpec {
                widths: self.widths.clone(),
                dropout: self.dropout.clone(),
                layout: if self.twin { TowerLayout::Twin } else { TowerLayout::Single },
            },
            embedding_dim: self.embedding_dim,
            min_count: self.min_count,
            regularizer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadEntry {
    pub kind: HeadKind,
    pub ladder: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_test_day: Option<i64>,
}

impl SplitEntry {
    pub fn from_spec(s: SplitSpec) -> Self {
        match s {
            SplitSpec::Fraction(f) => Self { fraction: Some(f), first_test_day: None },
            SplitSpec::DayBoundary { first_test_day } => Self { fraction: None, first_test_day: Some(first_test_day) },
        }
    }

    pub fn to_spec(&self) -> Result<SplitSpec, String> {
        match (self.fraction, self.first_test_day) {
            (Some(f), None) => Ok(SplitSpec::Fraction(f)),
            (None, Some(d)) => Ok(SplitSpec::DayBoundary { first_test_day: d }),
            _ => Err("split needs exactly one of fraction and first_test_day".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Everything besides raw numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    /// Dataset manifest the model was trained on, as given at train time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_manifest: Option<PathBuf>,
    pub split: SplitEntry,
    pub model: ModelEntry,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head: Option<HeadEntry>,
    pub eval: EvalSettings,
    #[serde(default)]
    pub bucketizers: BTreeMap<String, Vec<f64>>,
    #[serde(rename = "field")]
    pub fields: Vec<FieldEntry>,
    #[serde(rename = "param")]
    pub params: Vec<ParamEntry>,
}

/// A model plus the context needed to evaluate it on new data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MultiTaskModel,
    pub seed: u64,
    pub data_manifest: Option<PathBuf>,
    pub split: SplitSpec,
    pub head: Option<RegressionHead>,
    pub eval: EvalSettings,
    pub bucketizers: Bucketizers,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn put_row(buf: &mut Vec<u8>, row: &[f64]) {
    for &x in row {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let params = self.model.tower_parameters();
        let manifest = Manifest {
            seed: self.seed,
            data_manifest: self.data_manifest.clone(),
            split: SplitEntry::from_spec(self.split),
            model: ModelEntry::from_config(self.model.config()),
            head: self.head.as_ref().map(|h| HeadEntry { kind: h.kind, ladder: h.ladder.values().to_vec() }),
            eval: self.eval.clone(),
            bucketizers: self.bucketizers.iter().map(|(k, b)| (k.clone(), b.boundaries().to_vec())).collect(),
            fields: self.model.schema().fields().iter().map(FieldEntry::from_schema).collect(),
            params: params
                .iter()
                .map(|(name, m)| ParamEntry { name: name.clone(), rows: m.rows(), cols: m.cols() })
                .collect(),
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| CliError::Usage(format!("cannot encode checkpoint manifest: {e}")))?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION);
        buf.extend_from_slice(&(text.len() as u64).to_le_bytes());
        buf.extend_from_slice(text.as_bytes());
        for (_, m) in &params {
            put_row(&mut buf, m.data());
        }
        for field in self.model.export_embeddings() {
            put_u32(&mut buf, field.entries.len() as u32);
            put_row(&mut buf, &field.default);
            for (id, row) in &field.entries {
                buf.extend_from_slice(&id.to_le_bytes());
                put_row(&mut buf, row);
            }
        }
        let crc = crc32fast::hash(&buf);
        put_u32(&mut buf, crc);
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let fail = |message: String| CliError::Checkpoint { path: path.to_path_buf(), message };
        if bytes.len() < MAGIC.len() + 4 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(fail("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(fail(format!("unsupported checkpoint version {version} (this build reads version {VERSION})")));
        }
        if bytes.len() < 24 {
            return Err(fail("file is truncated".into()));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch (file is corrupted or truncated)".into()));
        }
        let mut r = Reader { bytes: body, pos: 12 };
        let manifest_len = r.u64().ok_or_else(|| fail("file is truncated".into()))? as usize;
        let text = r
            .take(manifest_len)
            .and_then(|b| std::str::from_utf8(b).ok())
            .ok_or_else(|| fail("manifest is not valid UTF-8".into()))?;
        let manifest: Manifest = toml::from_str(text).map_err(|e| fail(format!("invalid manifest: {e}")))?;
        let config = manifest.model.to_config().map_err(fail)?;
        let schema =
            Schema::new(manifest.fields.iter().map(FieldEntry::schema).collect()).map_err(|e| fail(e.to_string()))?;
        let truncated = || fail("file is truncated".into());
        let mut params = Vec::with_capacity(manifest.params.len());
        for p in &manifest.params {
            let values = r.row(p.rows * p.cols).ok_or_else(truncated)?;
            let m = Matrix::from_vec(p.rows, p.cols, values).map_err(|e| fail(e.to_string()))?;
            params.push((p.name.clone(), m));
        }
        let d = config.embedding_dim;
        let mut embeddings = Vec::with_capacity(schema.len());
        for f in schema.fields() {
            let n = r.u32().ok_or_else(truncated)? as usize;
            let default = r.row(d).ok_or_else(truncated)?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let id = r.u64().ok_or_else(truncated)?;
                entries.push((id, r.row(d).ok_or_else(truncated)?));
            }
            embeddings.push(FieldEmbeddings { name: f.name.clone(), default, entries });
        }
        if r.pos != body.len() {
            return Err(fail(format!("{} unexpected trailing bytes", body.len() - r.pos)));
        }
        let model =
            MultiTaskModel::from_parts(config, &schema, &params, &embeddings).map_err(|e| fail(e.to_string()))?;
        let head = manifest
            .head
            .map(|h| ThresholdLadder::new(h.ladder).map(|ladder| RegressionHead { kind: h.kind, ladder }))
            .transpose()
            .map_err(|e| fail(e.to_string()))?;
        let bucketizers = manifest
            .bucketizers
            .into_iter()
            .map(|(k, b)| Bucketizer::from_boundaries(b).map(|b| (k, b)))
            .collect::<Result<Bucketizers, _>>()
            .map_err(|e| fail(e.to_string()))?;
        Ok(Self {
            model,
            seed: manifest.seed,
            data_manifest: manifest.data_manifest,
            split: manifest.split.to_spec().map_err(fail)?,
            head,
            eval: manifest.eval,
            bucketizers,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.bytes.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn row(&mut self, n: usize) -> Option<Vec<f64>> {
        let b = self.take(n.checked_mul(4)?)?;
        Some(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use resflow_core::data::{generate_funnel, FunnelConfig};
    use resflow_core::model::{LinkPreset, TrainConfig};

    fn trained(layout: TowerLayout) -> (MultiTaskModel, resflow_core::data::Dataset) {
        let data = generate_funnel(&FunnelConfig::new(8, 60, 50, 0.2, 0.3).with_samples(2_000)).unwrap();
        let tower = match layout {
            TowerLayout::Single => TowerSpec::single(&[8, 4, 1]),
            TowerLayout::Twin => TowerSpec::twin(&[8, 4]),
        };
        let mut config = ModelConfig::chain(&["ctr", "ctcvr"], tower, LinkPreset::LogitOnly)
            .with_regularizer(Regularizer::NonPositiveResidual);
        config.tasks[0].label = "click".into();
        config.tasks[1].label = "order".into();
        config.tasks[1].pos_weight = 3.0;
        let mut model = MultiTaskModel::new(config, &data.schema, &data.samples, 4).unwrap();
        model.train(&data, &TrainConfig { batch_size: 64, ..TrainConfig::default() }).unwrap();
        (model, data)
    }

    fn checkpoint(model: MultiTaskModel) -> Checkpoint {
        Checkpoint {
            model,
            seed: 4,
            data_manifest: Some(PathBuf::from("data/manifest.toml")),
            split: SplitSpec::DayBoundary { first_test_day: 19_008 },
            head: None,
            eval: EvalSettings::default(),
            bucketizers: [("price".to_string(), Bucketizer::from_boundaries(vec![0.5, 2.0]).unwrap())].into(),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        for layout in [TowerLayout::Single, TowerLayout::Twin] {
            let (model, data) = trained(layout);
            let before = model.predict(&data.samples).unwrap();
            let ckpt = checkpoint(model);
            let bytes = ckpt.to_bytes().unwrap();
            let back = Checkpoint::from_bytes(&bytes, Path::new("m.ckpt")).unwrap();
            assert_eq!(back.model.config(), ckpt.model.config());
            assert_eq!((back.seed, &back.data_manifest, back.split), (ckpt.seed, &ckpt.data_manifest, ckpt.split));
            assert_eq!((&back.eval, &back.bucketizers), (&ckpt.eval, &ckpt.bucketizers));
            assert_eq!(back.model.predict(&data.samples).unwrap(), before);
            assert_eq!(back.to_bytes().unwrap(), bytes);
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let (model, _) = trained(TowerLayout::Single);
        let bytes = checkpoint(model).to_bytes().unwrap();
        for cut in (0..bytes.len()).step_by(97) {
            assert!(Checkpoint::from_bytes(&bytes[..cut], Path::new("m.ckpt")).is_err(), "cut at {cut}");
        }
    }
}
