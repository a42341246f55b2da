use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, ListMembership, Sample, SECONDS_PER_DAY};
use crate::embedding::{FieldSchema, FieldValue, Schema, TowerSide};
use crate::error::config_err;
use crate::tensor::sigmoid;
use crate::Result;

/// Parameters of the synthetic click → order funnel.
///
/// Each request shows `list_len` distinct items to one user. Click and order
/// logits come from a logistic affinity model over latent user and item
/// factors; the order logit reuses `cvr_coupling` times the click affinity.
/// Intercepts are calibrated on the drawn pairs so that the realized click
/// rate and the click-conditional order rate match the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct FunnelConfig {
    pub seed: u64,
    pub n_users: usize,
    pub n_items: usize,
    pub n_samples: usize,
    pub list_len: usize,
    pub base_ctr: f64,
    pub base_cvr: f64,
    pub latent_dim: usize,
    pub n_segments: usize,
    pub n_categories: usize,
    pub n_tags: usize,
    pub days: i64,
    pub start_day: i64,
    /// Multiplier on the latent click affinity.
    pub ctr_scale: f64,
    /// Multiplier on the order-only latent affinity.
    pub cvr_scale: f64,
    /// Weight of the click affinity inside the order logit.
    pub cvr_coupling: f64,
    /// Standard deviation of per-user and per-item biases.
    pub bias_std: f64,
}

impl FunnelConfig {
    pub fn new(seed: u64, n_users: usize, n_items: usize, base_ctr: f64, base_cvr: f64) -> Self {
        Self {
            seed,
            n_users,
            n_items,
            n_samples: 100_000,
            list_len: 20,
            base_ctr,
            base_cvr,
            latent_dim: 8,
            n_segments: 10,
            n_categories: 20,
            n_tags: 50,
            days: 10,
            start_day: 19_000,
            ctr_scale: 1.5,
            cvr_scale: 1.0,
            cvr_coupling: 1.0,
            bias_std: 0.5,
        }
    }

    pub fn with_samples(mut self, n_samples: usize) -> Self {
        self.n_samples = n_samples;
        self
    }

    pub fn with_list_len(mut self, list_len: usize) -> Self {
        self.list_len = list_len;
        self
    }

    fn validate(&self) -> Result<()> {
        for (name, rate) in [("base_ctr", self.base_ctr), ("base_cvr", self.base_cvr)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(config_err!("{name} must be in [0, 1), got {rate}"));
            }
        }
        for (name, n) in [
            ("n_users", self.n_users),
            ("n_items", self.n_items),
            ("n_samples", self.n_samples),
            ("list_len", self.list_len),
            ("latent_dim", self.latent_dim),
            ("n_segments", self.n_segments),
            ("n_categories", self.n_categories),
            ("n_tags", self.n_tags),
        ] {
            if n == 0 {
                return Err(config_err!("{name} must be positive"));
            }
        }
        if self.days <= 0 {
            return Err(config_err!("days must be positive"));
        }
        Ok(())
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn latent(rng: &mut ChaCha8Rng, centroid: &[f64], spread: f64) -> Vec<f64> {
    centroid.iter().map(|c| c + spread * normal(rng)).collect()
}

fn centroids(rng: &mut ChaCha8Rng, n: usize, dim: usize, std: f64) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| std * normal(rng)).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Intercept `c` with mean σ(c + score) = target over `scores`.
fn calibrate(scores: &[f64], target: f64) -> f64 {
    let mean_at = |c: f64| scores.iter().map(|s| sigmoid(c + s)).sum::<f64>() / scores.len() as f64;
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_at(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

struct Entity {
    segment: u64,
    ctr_vec: Vec<f64>,
    cvr_vec: Vec<f64>,
    ctr_bias: f64,
    cvr_bias: f64,
    tags: Vec<u64>,
}

/// Fields: user_id, user_segment (query side); item_id, item_category,
/// item_tags (item side, multi-valued). Labels: click, order.
pub fn funnel_schema() -> Schema {
    Schema::new(vec![
        FieldSchema::single("user_id"),
        FieldSchema::single("user_segment"),
        FieldSchema::single("item_id").on_side(TowerSide::Item),
        FieldSchema::single("item_category").on_side(TowerSide::Item),
        FieldSchema::multi("item_tags").on_side(TowerSide::Item),
    ])
    .expect("funnel field names are unique")
}

pub fn generate_funnel(config: &FunnelConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.latent_dim;
    // Unit-variance affinities: component variance 1/sqrt(dim) on both sides.
    let comp_std = libm::sqrt(1.0 / libm::sqrt(dim as f64));
    let centroid_std = comp_std * libm::sqrt(0.7);
    let spread = comp_std * libm::sqrt(0.3);

    let seg_ctr = centroids(&mut rng, config.n_segments, dim, centroid_std);
    let seg_cvr = centroids(&mut rng, config.n_segments, dim, centroid_std);
    let cat_ctr = centroids(&mut rng, config.n_categories, dim, centroid_std);
    let cat_cvr = centroids(&mut rng, config.n_categories, dim, centroid_std);
    let tag_ctr: Vec<f64> = (0..config.n_tags).map(|_| 0.3 * normal(&mut rng)).collect();
    let tag_cvr: Vec<f64> = (0..config.n_tags).map(|_| 0.3 * normal(&mut rng)).collect();

    let users: Vec<Entity> = (0..config.n_users)
        .map(|_| {
            let s = rng.random_range(0..config.n_segments);
            Entity {
                segment: s as u64,
                ctr_vec: latent(&mut rng, &seg_ctr[s], spread),
                cvr_vec: latent(&mut rng, &seg_cvr[s], spread),
                ctr_bias: config.bias_std * normal(&mut rng),
                cvr_bias: config.bias_std * normal(&mut rng),
                tags: Vec::new(),
            }
        })
        .collect();
    let items: Vec<Entity> = (0..config.n_items)
        .map(|_| {
            let c = rng.random_range(0..config.n_categories);
            let n_tags = rng.random_range(1..=3usize.min(config.n_tags));
            let mut tags: Vec<u64> = Vec::with_capacity(n_tags);
            while tags.len() < n_tags {
                let t = rng.random_range(0..config.n_tags) as u64;
                if !tags.contains(&t) {
                    tags.push(t);
                }
            }
            tags.sort_unstable();
            Entity {
                segment: c as u64,
                ctr_vec: latent(&mut rng, &cat_ctr[c], spread),
                cvr_vec: latent(&mut rng, &cat_cvr[c], spread),
                ctr_bias: config.bias_std * normal(&mut rng),
                cvr_bias: config.bias_std * normal(&mut rng),
                tags,
            }
        })
        .collect();

    let n = config.n_samples;
    let n_requests = n.div_ceil(config.list_len);
    let mut pairs: Vec<(u32, u32, u32)> = Vec::with_capacity(n);
    let mut shown: Vec<u32> = Vec::with_capacity(config.list_len);
    for r in 0..n_requests {
        let u = rng.random_range(0..config.n_users) as u32;
        let len = config.list_len.min(n - pairs.len());
        shown.clear();
        while shown.len() < len {
            let i = rng.random_range(0..config.n_items) as u32;
            if shown.len() >= config.n_items || !shown.contains(&i) {
                shown.push(i);
            }
        }
        pairs.extend(shown.iter().map(|&i| (r as u32, u, i)));
    }

    let ctr_score: Vec<f64> = pairs
        .iter()
        .map(|&(_, u, i)| {
            let (u, i) = (&users[u as usize], &items[i as usize]);
            let tags: f64 = i.tags.iter().map(|&t| tag_ctr[t as usize]).sum();
            config.ctr_scale * dot(&u.ctr_vec, &i.ctr_vec) + u.ctr_bias + i.ctr_bias + tags
        })
        .collect();
    let mut clicks = vec![false; n];
    if config.base_ctr > 0.0 {
        let c = calibrate(&ctr_score, config.base_ctr);
        for (k, s) in ctr_score.iter().enumerate() {
            clicks[k] = rng.random::<f64>() < sigmoid(c + s);
        }
    }

    let clicked: Vec<usize> = (0..n).filter(|&k| clicks[k]).collect();
    let cvr_score: Vec<f64> = clicked
        .iter()
        .map(|&k| {
            let (_, u, i) = pairs[k];
            let (u, i) = (&users[u as usize], &items[i as usize]);
            let tags: f64 = i.tags.iter().map(|&t| tag_cvr[t as usize]).sum();
            config.cvr_coupling * ctr_score[k]
                + config.cvr_scale * dot(&u.cvr_vec, &i.cvr_vec)
                + u.cvr_bias
                + i.cvr_bias
                + tags
        })
        .collect();
    let mut orders = vec![false; n];
    if config.base_cvr > 0.0 && !clicked.is_empty() {
        let c = calibrate(&cvr_score, config.base_cvr);
        for (&k, s) in clicked.iter().zip(&cvr_score) {
            orders[k] = rng.random::<f64>() < sigmoid(c + s);
        }
    }

    let span = config.days * SECONDS_PER_DAY;
    let start = config.start_day * SECONDS_PER_DAY;
    let samples = pairs
        .iter()
        .enumerate()
        .map(|(k, &(r, u, i))| {
            let (user, item) = (&users[u as usize], &items[i as usize]);
            let order = if orders[k] { 1.0 } else { 0.0 };
            Sample {
                features: vec![
                    FieldValue::Single(u as u64 + 1),
                    FieldValue::Single(user.segment),
                    FieldValue::Single(i as u64 + 1),
                    FieldValue::Single(item.segment),
                    FieldValue::Multi(item.tags.clone()),
                ],
                labels: vec![if clicks[k] { 1.0 } else { 0.0 }, order],
                target: None,
                timestamp: start + (r as i64 * span) / n_requests as i64,
                list: Some(ListMembership { list_id: r as u64, item_id: i as u64 + 1, weight: order }),
            }
        })
        .collect();
    Ok(Dataset { schema: funnel_schema(), label_names: vec!["click".to_string(), "order".to_string()], samples })
}
