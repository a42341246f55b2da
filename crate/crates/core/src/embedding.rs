//! Per-field categorical embeddings shared by every task tower.
//!
//! Each field owns one parameter matrix: row 0 is the learnable default
//! vector used for unknown or filtered IDs, the other rows belong to IDs that
//! passed the occurrence filter. IDs are mapped exactly, without hashing.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{day_of, Sample};
use crate::error::config_err;
use crate::tensor::{AdamState, GradientTape, Matrix, ParamId, ParamStore, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Single,
    /// Several IDs per sample, merged by sum pooling.
    Multi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabularyPolicy {
    /// Every observed ID gets an entry.
    Enumerated,
    /// Only IDs seen more than `min_count` times get an entry.
    Counted,
}

/// Which half of a twin-tower model consumes the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TowerSide {
    #[default]
    Query,
    Item,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldSchema {
    pub name: String,
    pub arity: Arity,
    pub policy: VocabularyPolicy,
    pub side: TowerSide,
}

impl FieldSchema {
    pub fn single(name: impl Into<String>) -> Self {
        Self { name: name.into(), arity: Arity::Single, policy: VocabularyPolicy::Counted, side: TowerSide::Query }
    }

    pub fn multi(name: impl Into<String>) -> Self {
        Self { arity: Arity::Multi, ..Self::single(name) }
    }

    pub fn on_side(mut self, side: TowerSide) -> Self {
        self.side = side;
        self
    }

    pub fn with_policy(mut self, policy: VocabularyPolicy) -> Self {
        self.policy = policy;
        self
    }
}

/// Ordered categorical fields of a dataset. Names are unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schema {
    fields: Vec<FieldSchema>,
}

impl Schema {
    pub fn new(fields: Vec<FieldSchema>) -> Result<Self> {
        for (i, f) in fields.iter().enumerate() {
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::Schema(format!("duplicate field name `{}`", f.name)));
            }
        }
        Ok(Self { fields })
    }

    pub fn fields(&self) -> &[FieldSchema] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.fields.iter().position(|f| f.name == name).ok_or_else(|| Error::Schema(format!("unknown field `{name}`")))
    }

    /// Field indices feeding one half of a twin tower, in schema order.
    pub fn side_indices(&self, side: TowerSide) -> Vec<usize> {
        (0..self.fields.len()).filter(|&i| self.fields[i].side == side).collect()
    }

    pub fn check(&self, sample: &Sample) -> Result<()> {
        if sample.features.len() != self.fields.len() {
            return Err(Error::Schema(format!(
                "sample has {} feature values, schema has {} fields",
                sample.features.len(),
                self.fields.len()
            )));
        }
        for (f, v) in self.fields.iter().zip(&sample.features) {
            if f.arity == Arity::Single && matches!(v, FieldValue::Multi(_)) {
                return Err(Error::Schema(format!("field `{}` is single-valued", f.name)));
            }
        }
        Ok(())
    }
}

/// Categorical value of one field in one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FieldValue {
    Single(u64),
    Multi(Vec<u64>),
}

impl FieldValue {
    pub fn ids(&self) -> &[u64] {
        match self {
            FieldValue::Single(id) => core::slice::from_ref(id),
            FieldValue::Multi(ids) => ids,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct IdStats {
    count: u64,
    last_seen_day: i64,
    row: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
struct FieldTable {
    name: String,
    policy: VocabularyPolicy,
    param: ParamId,
    ids: BTreeMap<u64, IdStats>,
    free_rows: Vec<usize>,
}

/// Exported contents of one field, as written to checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldEmbeddings {
    pub name: String,
    pub default: Vec<f64>,
    /// `(id, vector)` sorted by id.
    pub entries: Vec<(u64, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    min_count: u64,
    fields: Vec<FieldTable>,
    rng: ChaCha8Rng,
}

impl EmbeddingTable {
    /// Empty tables (default rows only) registered in `store`.
    pub fn new(schema: &Schema, dim: usize, min_count: u64, store: &mut ParamStore, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(config_err!("embedding dimension must be positive"));
        }
        if min_count < 1 {
            return Err(config_err!("min_count must be at least 1"));
        }
        let mut table = Self { dim, min_count, fields: Vec::new(), rng: ChaCha8Rng::seed_from_u64(seed) };
        for f in schema.fields() {
            let default = table.random_vector();
            let param = store.add(format!("embedding.{}", f.name), Matrix::row_vector(&default));
            table.fields.push(FieldTable {
                name: f.name.clone(),
                policy: f.policy,
                param,
                ids: BTreeMap::new(),
                free_rows: Vec::new(),
            });
        }
        Ok(table)
    }

    /// Counts IDs in `samples` and creates entries for IDs seen more than
    /// `min_count` times (every ID for enumerated fields).
    pub fn build_vocab(
        schema: &Schema,
        samples: &[Sample],
        min_count: u64,
        dim: usize,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self> {
        let mut table = Self::new(schema, dim, min_count, store, seed)?;
        table.observe(store, samples)?;
        Ok(table)
    }

    fn random_vector(&mut self) -> Vec<f64> {
        let limit = 1.0 / libm::sqrt(self.dim as f64);
        (0..self.dim).map(|_| self.rng.random_range(-limit..limit)).collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    pub fn param(&self, field: usize) -> ParamId {
        self.fields[field].param
    }

    /// Tallies occurrences and last-seen days, allocating rows for IDs that
    /// cross the threshold.
    pub fn observe(&mut self, store: &mut ParamStore, samples: &[Sample]) -> Result<()> {
        for s in samples {
            if s.features.len() != self.fields.len() {
                return Err(Error::Schema(format!(
                    "sample has {} feature values, table has {} fields",
                    s.features.len(),
                    self.fields.len()
                )));
            }
            let day = day_of(s.timestamp);
            for (f, value) in s.features.iter().enumerate() {
                for &id in value.ids() {
                    let stats =
                        self.fields[f].ids.entry(id).or_insert(IdStats { count: 0, last_seen_day: day, row: None });
                    stats.count += 1;
                    stats.last_seen_day = stats.last_seen_day.max(day);
                }
            }
        }
        for f in 0..self.fields.len() {
            let threshold = match self.fields[f].policy {
                VocabularyPolicy::Enumerated => 0,
                VocabularyPolicy::Counted => self.min_count,
            };
            let pending: Vec<u64> = self.fields[f]
                .ids
                .iter()
                .filter(|(_, st)| st.row.is_none() && st.count > threshold)
                .map(|(&id, _)| id)
                .collect();
            for id in pending {
                let v = self.random_vector();
                let field = &mut self.fields[f];
                let m = store.get_mut(field.param);
                let row = match field.free_rows.pop() {
                    Some(r) => {
                        m.row_mut(r).copy_from_slice(&v);
                        r
                    }
                    None => m.push_row(&v),
                };
                if let Some(st) = field.ids.get_mut(&id) {
                    st.row = Some(row);
                }
            }
        }
        Ok(())
    }

    /// Drops IDs not seen within the last `window_days` days. Their rows are
    /// zeroed and recycled, their counts forgotten. Returns the number of
    /// evicted entries.
    pub fn evict(
        &mut self,
        store: &mut ParamStore,
        mut adam: Option<&mut AdamState>,
        current_day: i64,
        window_days: i64,
    ) -> usize {
        let mut evicted = 0;
        for field in &mut self.fields {
            let stale: Vec<u64> = field
                .ids
                .iter()
                .filter(|(_, st)| current_day - st.last_seen_day > window_days)
                .map(|(&id, _)| id)
                .collect();
            for id in stale {
                if let Some(IdStats { row: Some(row), .. }) = field.ids.remove(&id) {
                    store.get_mut(field.param).row_mut(row).fill(0.0);
                    if let Some(a) = adam.as_deref_mut() {
                        a.reset_row(field.param, row);
                    }
                    field.free_rows.push(row);
                    evicted += 1;
                }
            }
        }
        evicted
    }

    /// Row holding `id` in field `field`, or 0 (the default vector).
    pub fn row(&self, field: usize, id: u64) -> usize {
        self.fields[field].ids.get(&id).and_then(|st| st.row).unwrap_or(0)
    }

    pub fn contains(&self, field: usize, id: u64) -> bool {
        self.row(field, id) != 0
    }

    /// IDs with an entry in `field`, ascending.
    pub fn vocabulary(&self, field: usize) -> Vec<u64> {
        self.fields[field].ids.iter().filter(|(_, st)| st.row.is_some()).map(|(&id, _)| id).collect()
    }

    pub fn last_seen_day(&self, field: usize, id: u64) -> Option<i64> {
        self.fields[field].ids.get(&id).map(|st| st.last_seen_day)
    }

    fn rows_for(&self, field: usize, value: &FieldValue, rows: &mut Vec<usize>) {
        let ids = value.ids();
        if ids.is_empty() {
            rows.push(0);
        } else {
            rows.extend(ids.iter().map(|&id| self.row(field, id)));
        }
    }

    /// Batched lookup: per field, the (sum-pooled) vectors of every sample,
    /// concatenated in the order of `fields`. Output is batch × (fields·dim).
    pub fn lookup(
        &self,
        tape: &mut GradientTape,
        store: &ParamStore,
        samples: &[&Sample],
        fields: &[usize],
    ) -> Result<Var> {
        let mut parts = Vec::with_capacity(fields.len());
        for &f in fields {
            if f >= self.fields.len() {
                return Err(Error::Schema(format!("field index {f} out of range")));
            }
            let mut offsets = Vec::with_capacity(samples.len() + 1);
            let mut rows = Vec::with_capacity(samples.len());
            offsets.push(0);
            for s in samples {
                let value = s
                    .features
                    .get(f)
                    .ok_or_else(|| Error::Schema(format!("sample lacks field `{}`", self.fields[f].name)))?;
                self.rows_for(f, value, &mut rows);
                offsets.push(rows.len());
            }
            parts.push(tape.gather_sum(store, self.fields[f].param, offsets, rows)?);
        }
        tape.concat(&parts)
    }

    /// Input vector of one sample across all fields, in schema order.
    pub fn lookup_concat(&self, store: &ParamStore, sample: &Sample) -> Result<Vec<f64>> {
        if sample.features.len() != self.fields.len() {
            return Err(Error::Schema(format!(
                "sample has {} feature values, table has {} fields",
                sample.features.len(),
                self.fields.len()
            )));
        }
        let mut out = Vec::with_capacity(self.fields.len() * self.dim);
        let mut rows = Vec::new();
        for (f, value) in sample.features.iter().enumerate() {
            rows.clear();
            self.rows_for(f, value, &mut rows);
            let m = store.get(self.fields[f].param);
            let mut acc = vec![0.0; self.dim];
            for &r in &rows {
                for (a, x) in acc.iter_mut().zip(m.row(r)) {
                    *a += x;
                }
            }
            out.extend(acc);
        }
        Ok(out)
    }

    pub fn export(&self, store: &ParamStore) -> Vec<FieldEmbeddings> {
        self.fields
            .iter()
            .map(|field| {
                let m = store.get(field.param);
                FieldEmbeddings {
                    name: field.name.clone(),
                    default: m.row(0).to_vec(),
                    entries: field.ids.iter().filter_map(|(&id, st)| st.row.map(|r| (id, m.row(r).to_vec()))).collect(),
                }
            })
            .collect()
    }

    /// Rebuilds tables from exported contents. Rows are assigned in ID
    /// order; occurrence counts start at the threshold so entries persist.
    pub fn import(
        schema: &Schema,
        dim: usize,
        min_count: u64,
        store: &mut ParamStore,
        exported: &[FieldEmbeddings],
        seed: u64,
    ) -> Result<Self> {
        let mut table = Self::new(schema, dim, min_count, store, seed)?;
        if exported.len() != table.fields.len() {
            return Err(Error::Schema(format!(
                "embedding section has {} fields, schema has {}",
                exported.len(),
                table.fields.len()
            )));
        }
        for (field, ex) in table.fields.iter_mut().zip(exported) {
            if field.name != ex.name {
                return Err(Error::Schema(format!("embedding field `{}` where `{}` expected", ex.name, field.name)));
            }
            if ex.default.len() != dim || ex.entries.iter().any(|(_, v)| v.len() != dim) {
                return Err(Error::Schema(format!("embedding field `{}` has wrong dimension", ex.name)));
            }
            let m = store.get_mut(field.param);
            m.row_mut(0).copy_from_slice(&ex.default);
            for (id, v) in &ex.entries {
                let row = m.push_row(v);
                field.ids.insert(*id, IdStats { count: min_count + 1, last_seen_day: i64::MIN, row: Some(row) });
            }
        }
        Ok(table)
    }
}
