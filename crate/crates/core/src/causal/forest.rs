//! Honest causal forest.
//!
//! Each tree draws a subsample without replacement and splits it in two.
//! The first half chooses the splits, greedily maximizing
//! sum n_child * (tau_child - tau_parent)^2. The second half supplies the
//! leaf effects. A split is admissible only if every child keeps at least
//! `min_leaf` treated and `min_leaf` control samples from both halves.

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::ContextVector;
use super::dataset::TreatmentDataset;
use super::CausalError;
use crate::rng::{stream_id, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestConfig {
    pub n_trees: usize,
    /// Minimum treated and minimum control samples per child.
    pub min_leaf: usize,
    /// Fraction of samples drawn for each tree.
    pub subsample: f64,
    /// Fraction of the subsample used to choose splits.
    pub honest_fraction: f64,
    /// Candidate features per split; defaults to ceil(d / 3) over the
    /// non-constant features.
    pub mtry: Option<usize>,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig { n_trees: 200, min_leaf: 10, subsample: 0.5, honest_fraction: 0.5, mtry: None }
    }
}

impl ForestConfig {
    pub fn with_trees(self, n_trees: usize) -> Self {
        ForestConfig { n_trees, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { effect: f64, n_treated: u32, n_control: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Sample indices that chose the splits.
    pub split_ids: Vec<u32>,
    /// Sample indices that estimated the leaf effects.
    pub estimation_ids: Vec<u32>,
}

impl Tree {
    pub fn leaf(effect: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { effect, n_treated: 0, n_control: 0 }],
            split_ids: vec![],
            estimation_ids: vec![],
        }
    }

    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Leaf { effect, .. } => return *effect,
                Node::Split { feature, threshold, left, right } => {
                    i = if features[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub config: ForestConfig,
    pub feature_names: Vec<String>,
    pub trees: Vec<Tree>,
}

impl CateModel {
    /// Model built from given trees over the standard context features.
    pub fn from_trees(trees: Vec<Tree>) -> CateModel {
        CateModel { config: ForestConfig::default(), feature_names: ContextVector::forest_feature_names(), trees }
    }

    pub fn predict(&self, x: &ContextVector) -> f64 {
        self.predict_unchecked(&x.forest_features())
    }

    pub fn predict_features(&self, features: &[f64]) -> Result<f64, CausalError> {
        if features.len() != self.feature_names.len() {
            return Err(CausalError::FeatureMismatch);
        }
        Ok(self.predict_unchecked(features))
    }

    fn predict_unchecked(&self, features: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(features)).sum::<f64>() / self.trees.len() as f64
    }
}

/// Ensemble-mean effect at `x`.
pub fn predict_cate(model: &CateModel, x: &ContextVector) -> Result<f64, CausalError> {
    if model.feature_names != ContextVector::forest_feature_names() {
        return Err(CausalError::FeatureMismatch);
    }
    Ok(model.predict(x))
}

struct Data {
    /// Column-major features.
    cols: Vec<Vec<f64>>,
    w: Vec<u8>,
    y: Vec<f64>,
}

#[derive(Default, Clone, Copy)]
struct ArmSums {
    n: [usize; 2],
    sum: [f64; 2],
}

impl ArmSums {
    fn add(&mut self, w: u8, y: f64) {
        self.n[w as usize] += 1;
        self.sum[w as usize] += y;
    }

    fn sub(self, other: ArmSums) -> ArmSums {
        ArmSums {
            n: [self.n[0] - other.n[0], self.n[1] - other.n[1]],
            sum: [self.sum[0] - other.sum[0], self.sum[1] - other.sum[1]],
        }
    }

    fn tau(&self) -> Option<f64> {
        (self.n[0] > 0 && self.n[1] > 0).then(|| self.sum[1] / self.n[1] as f64 - self.sum[0] / self.n[0] as f64)
    }

    fn total(&self) -> usize {
        self.n[0] + self.n[1]
    }

    fn min_arm(&self) -> usize {
        self.n[0].min(self.n[1])
    }
}

fn sums(data: &Data, ids: &[u32]) -> ArmSums {
    let mut s = ArmSums::default();
    for &i in ids {
        s.add(data.w[i as usize], data.y[i as usize]);
    }
    s
}

struct Grower<'a> {
    data: &'a Data,
    active: &'a [usize],
    mtry: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn best_split<R: Rng>(&self, train: &[u32], est: &[u32], rng: &mut R) -> Option<(usize, f64)> {
        let parent = sums(self.data, train);
        let tau_p = parent.tau()?;
        let mut best: Option<(f64, usize, f64)> = None;
        for k in index::sample(rng, self.active.len(), self.mtry).into_iter() {
            let f = self.active[k];
            let col = &self.data.cols[f];
            let mut tr: Vec<u32> = train.to_vec();
            tr.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let mut es: Vec<u32> = est.to_vec();
            es.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
            let est_total = sums(self.data, est);
            let mut left = ArmSums::default();
            let mut est_left = ArmSums::default();
            let mut e = 0usize;
            for j in 1..tr.len() {
                let prev = tr[j - 1] as usize;
                left.add(self.data.w[prev], self.data.y[prev]);
                let (lo, hi) = (col[prev], col[tr[j] as usize]);
                if lo == hi {
                    continue;
                }
                let right = parent.sub(left);
                if left.min_arm() < self.min_leaf.max(2) || right.min_arm() < self.min_leaf.max(2) {
                    continue;
                }
                let threshold = 0.5 * (lo + hi);
                while e < es.len() && col[es[e] as usize] <= threshold {
                    let i = es[e] as usize;
                    est_left.add(self.data.w[i], self.data.y[i]);
                    e += 1;
                }
                if est_left.min_arm() < self.min_leaf || est_total.sub(est_left).min_arm() < self.min_leaf {
                    continue;
                }
                let (tl, tr_) = (left.tau().unwrap(), right.tau().unwrap());
                let gain = left.total() as f64 * (tl - tau_p).powi(2) + right.total() as f64 * (tr_ - tau_p).powi(2);
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }

    fn grow<R: Rng>(&mut self, train: Vec<u32>, est: Vec<u32>, rng: &mut R) -> u32 {
        let id = self.nodes.len() as u32;
        match self.best_split(&train, &est, rng) {
            Some((feature, threshold)) => {
                self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
                let col = &self.data.cols[feature];
                let (tl, trr): (Vec<u32>, Vec<u32>) = train.into_iter().partition(|&i| col[i as usize] <= threshold);
                let (el, er): (Vec<u32>, Vec<u32>) = est.into_iter().partition(|&i| col[i as usize] <= threshold);
                let l = self.grow(tl, el, rng);
                let r = self.grow(trr, er, rng);
                self.nodes[id as usize] = Node::Split { feature, threshold, left: l, right: r };
            }
            None => {
                let s = sums(self.data, &est);
                let effect = s.tau().or_else(|| {
                    let mut all = s;
                    let t = sums(self.data, &train);
                    all.n = [all.n[0] + t.n[0], all.n[1] + t.n[1]];
                    all.sum = [all.sum[0] + t.sum[0], all.sum[1] + t.sum[1]];
                    all.tau()
                });
                self.nodes.push(Node::Leaf {
                    effect: effect.unwrap_or(0.0),
                    n_treated: s.n[1] as u32,
                    n_control: s.n[0] as u32,
                });
            }
        }
        id
    }
}

pub fn fit_cate_forest(td: &TreatmentDataset, config: ForestConfig, seed: u64) -> Result<CateModel, CausalError> {
    let n = td.samples.len();
    if n < 4 * config.min_leaf.max(1) || config.n_trees == 0 {
        return Err(CausalError::InsufficientData { n, needed: 4 * config.min_leaf.max(1) });
    }
    let rows: Vec<Vec<f64>> = td.samples.iter().map(|s| s.x.forest_features()).collect();
    let d_all = rows[0].len();
    let data = Data {
        cols: (0..d_all).map(|f| rows.iter().map(|r| r[f]).collect()).collect(),
        w: td.samples.iter().map(|s| s.w).collect(),
        y: td.samples.iter().map(|s| s.y).collect(),
    };
    let active: Vec<usize> = (0..d_all).filter(|&f| data.cols[f].iter().any(|&v| v != data.cols[f][0])).collect();
    let mtry = config.mtry.unwrap_or(active.len().div_ceil(3)).clamp(1, active.len().max(1));
    let s = ((config.subsample * n as f64).round() as usize).clamp(2, n);
    let n_split = ((config.honest_fraction * s as f64).round() as usize).clamp(1, s - 1);

    let trees: Vec<Tree> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream_rng(seed, stream_id(&[t as u64]));
            let mut sub: Vec<u32> = index::sample(&mut rng, n, s).into_iter().map(|i| i as u32).collect();
            sub.sort_unstable();
            sub.shuffle(&mut rng);
            let est = sub.split_off(n_split);
            let split = sub;
            let mut g = Grower { data: &data, active: &active, mtry, min_leaf: config.min_leaf, nodes: Vec::new() };
            if active.is_empty() {
                let s = sums(&data, &est);
                g.nodes.push(Node::Leaf {
                    effect: s.tau().unwrap_or(0.0),
                    n_treated: s.n[1] as u32,
                    n_control: s.n[0] as u32,
                });
            } else {
                g.grow(split.clone(), est.clone(), &mut rng);
            }
            let mut split_ids = split;
            let mut estimation_ids = est;
            split_ids.sort_unstable();
            estimation_ids.sort_unstable();
            Tree { nodes: g.nodes, split_ids, estimation_ids }
        })
        .collect();
    Ok(CateModel { config, feature_names: ContextVector::forest_feature_names(), trees })
}

/// Random search over the forest grid. Each candidate is fit on 70% of
/// the data and scored on the rest by the transformed-outcome loss
/// mean((y (w - e) / (e (1 - e)) - tau_hat)^2), with e the treated share.
pub fn tune_forest(td: &TreatmentDataset, n_configs: usize, seed: u64) -> Result<ForestConfig, CausalError> {
    let mut grid = Vec::new();
    for n_trees in [100, 200, 400] {
        for min_leaf in [5, 10, 25, 50] {
            for subsample in [0.35, 0.5] {
                grid.push(ForestConfig { n_trees, min_leaf, subsample, ..ForestConfig::default() });
            }
        }
    }
    let mut rng = stream_rng(seed, stream_id(&[u64::MAX]));
    grid.shuffle(&mut rng);
    grid.truncate(n_configs.max(1));
    let mut order: Vec<usize> = (0..td.samples.len()).collect();
    order.shuffle(&mut rng);
    let cut = td.samples.len() * 7 / 10;
    let train = td.with_samples(order[..cut].iter().map(|&i| td.samples[i]).collect());
    let valid: Vec<_> = order[cut..].iter().map(|&i| td.samples[i]).collect();
    let e = td.arm_sizes().0 as f64 / td.samples.len() as f64;
    let mut best: Option<(f64, ForestConfig)> = None;
    for cfg in grid {
        let Ok(model) = fit_cate_forest(&train, cfg, seed) else { continue };
        let loss = valid
            .iter()
            .map(|s| {
                let target = s.y * (s.w as f64 - e) / (e * (1.0 - e));
                (target - model.predict(&s.x)).powi(2)
            })
            .sum::<f64>()
            / valid.len().max(1) as f64;
        if best.is_none_or(|b| loss < b.0) {
            best = Some((loss, cfg));
        }
    }
    best.map(|b| b.1).ok_or(CausalError::InsufficientData { n: td.samples.len(), needed: 20 })
}
