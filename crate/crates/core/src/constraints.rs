//! Quadruple constraint pipeline: query-similarity clustering,
//! cluster-balanced batching, and the intra-/inter-sample losses.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConstraintConfig {
    /// Margin of the event-query intra-sample constraint.
    pub alpha: f64,
    /// Margin of the event-background intra-sample constraint.
    pub beta: f64,
    /// Temperature of the inter-sample contrastive losses.
    pub tau: f64,
    /// Weight of the inter-sample losses in the combined constraint loss.
    pub lambda: f64,
    /// Weight of the unmatched intra-sample term; 0 ablates it (raml-only).
    pub raun_weight: f64,
    /// Cosine-similarity threshold for query clustering.
    pub theta: f64,
    /// Weight of the grounding loss in the partial-branch loss.
    pub gamma: f64,
    /// Average the inter-sample sums over the batch instead of summing.
    pub mean_reduction: bool,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            alpha: 0.25,
            beta: 0.32,
            tau: 0.13,
            lambda: 0.5,
            raun_weight: 1.0,
            theta: 0.8,
            gamma: 3.0,
            mean_reduction: false,
        }
    }
}

/// Sample-to-cluster assignment over a fixed corpus ordering.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterTable {
    pub ids: Vec<String>,
    /// Cluster id per corpus index, numbered by first appearance.
    pub assignment: Vec<usize>,
    pub k: usize,
}

impl ClusterTable {
    pub fn cluster_of(&self, index: usize) -> usize {
        self.assignment[index]
    }

    /// Member corpus indices per cluster.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &c) in self.assignment.iter().enumerate() {
            out[c].push(i);
        }
        out
    }

    pub fn save(&self, theta: f64, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct ClusterFile<'a> {
            theta: f64,
            assignments: BTreeMap<&'a str, usize>,
        }
        let file = ClusterFile {
            theta,
            assignments: self
                .ids
                .iter()
                .map(|s| s.as_str())
                .zip(self.assignment.iter().copied())
                .collect(),
        };
        let f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(f), &file)?;
        Ok(())
    }
}

struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.rank[ra] < self.rank[rb] {
            self.parent[ra] = rb;
        } else if self.rank[ra] > self.rank[rb] {
            self.parent[rb] = ra;
        } else {
            self.parent[rb] = ra;
            self.rank[ra] += 1;
        }
    }
}

/// Cluster query embeddings: L2-normalize, connect pairs with cosine
/// similarity >= theta, and take connected components.
pub fn build_clusters(
    ids: &[String],
    embeddings: &[Vec<f64>],
    theta: f64,
) -> Result<ClusterTable> {
    assert_eq!(ids.len(), embeddings.len());
    let n = embeddings.len();
    let mut unit = Vec::with_capacity(n);
    for (i, e) in embeddings.iter().enumerate() {
        let norm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::ZeroEmbedding(ids[i].clone()));
        }
        unit.push(e.iter().map(|x| x / norm).collect::<Vec<f64>>());
    }
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            let sim: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            if sim >= theta {
                uf.union(i, j);
            }
        }
    }
    let mut label = BTreeMap::new();
    let mut assignment = Vec::with_capacity(n);
    for i in 0..n {
        let root = uf.find(i);
        let next = label.len();
        let c = *label.entry(root).or_insert(next);
        assignment.push(c);
    }
    Ok(ClusterTable {
        ids: ids.to_vec(),
        assignment,
        k: label.len(),
    })
}

/// Draw one cluster-balanced batch: up to `clusters_per_batch` distinct
/// clusters, up to `samples_per_cluster` samples each. Clusters smaller than
/// the per-cluster quota are sampled with replacement.
pub fn sample_batch(
    members: &[Vec<usize>],
    clusters_per_batch: usize,
    samples_per_cluster: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    let nonempty: Vec<usize> = (0..members.len())
        .filter(|&c| !members[c].is_empty())
        .collect();
    if nonempty.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    // partial Fisher-Yates over the cluster list
    let mut pool = nonempty;
    let take = clusters_per_batch.min(pool.len());
    for i in 0..take {
        let j = rng.gen_range(i..pool.len());
        pool.swap(i, j);
    }
    let mut batch = Vec::with_capacity(take * samples_per_cluster);
    for &c in &pool[..take] {
        let m = &members[c];
        if m.len() >= samples_per_cluster {
            let mut idx: Vec<usize> = (0..m.len()).collect();
            for i in 0..samples_per_cluster {
                let j = rng.gen_range(i..idx.len());
                idx.swap(i, j);
            }
            batch.extend(idx[..samples_per_cluster].iter().map(|&i| m[i]));
        } else {
            for _ in 0..samples_per_cluster {
                batch.push(m[rng.gen_range(0..m.len())]);
            }
        }
    }
    Ok(batch)
}

/// In-batch positive/negative index sets derived from cluster membership.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchSets {
    /// Positive indices per batch slot (includes the slot itself).
    pub pos: Vec<Vec<usize>>,
    /// Negative indices per batch slot.
    pub neg: Vec<Vec<usize>>,
}

impl BatchSets {
    /// Build the sets from the cluster id of each batch slot. The same sets
    /// serve the event-query and event-event losses.
    pub fn from_clusters(batch_clusters: &[usize]) -> Self {
        let n = batch_clusters.len();
        let mut pos = vec![Vec::new(); n];
        let mut neg = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if batch_clusters[j] == batch_clusters[i] {
                    pos[i].push(j);
                } else {
                    neg[i].push(j);
                }
            }
        }
        BatchSets { pos, neg }
    }
}

/// Intra-sample multi-modal margin: max(S(v_vd, q) - S(v_fg, q) + alpha, 0).
pub fn loss_raml(tape: &mut Tape, v_fg: Var, v_vd: Var, q: Var, alpha: f64) -> Var {
    let s_vd = tape.cosine(v_vd, q);
    let s_fg = tape.cosine(v_fg, q);
    let diff = tape.sub(s_vd, s_fg);
    let marged = tape.add_scalar(diff, alpha);
    tape.relu(marged)
}

/// Intra-sample uni-modal margin: max(S(v_fg, v_bg) - S(v_fg, v_vd) + beta, 0).
pub fn loss_raun(tape: &mut Tape, v_fg: Var, v_bg: Var, v_vd: Var, beta: f64) -> Var {
    let s_bg = tape.cosine(v_fg, v_bg);
    let s_vd = tape.cosine(v_fg, v_vd);
    let diff = tape.sub(s_bg, s_vd);
    let marged = tape.add_scalar(diff, beta);
    tape.relu(marged)
}

fn contrast_term(tape: &mut Tape, pos: &[Var], all: &[Var]) -> Var {
    let pos_row = tape.concat_cols(pos);
    let all_row = tape.concat_cols(all);
    let lse_pos = tape.logsumexp(pos_row);
    let lse_all = tape.logsumexp(all_row);
    tape.sub(lse_all, lse_pos)
}

/// Inter-sample event-query contrast. Vectors are L2-normalized before the
/// temperature-scaled dot products. Slots with no negatives contribute zero;
/// slots with an empty positive set are skipped.
pub fn loss_erml(
    tape: &mut Tape,
    v_fgs: &[Var],
    qs: &[Var],
    sets: &BatchSets,
    tau: f64,
    mean_reduction: bool,
) -> Var {
    assert_eq!(v_fgs.len(), qs.len());
    let n = v_fgs.len();
    let ev: Vec<Var> = v_fgs.iter().map(|&v| tape.l2_normalize(v)).collect();
    let qn: Vec<Var> = qs.iter().map(|&q| tape.l2_normalize(q)).collect();
    let mut terms = Vec::new();
    for i in 0..n {
        if sets.pos[i].is_empty() {
            continue;
        }
        let logit = |tape: &mut Tape, j: usize| {
            let d = tape.dot(ev[i], qn[j]);
            tape.scale(d, 1.0 / tau)
        };
        let pos: Vec<Var> = sets.pos[i].iter().map(|&j| logit(tape, j)).collect();
        let mut all = pos.clone();
        for &j in &sets.neg[i] {
            all.push(logit(tape, j));
        }
        terms.push(contrast_term(tape, &pos, &all));
    }
    reduce_terms(tape, terms, n, mean_reduction)
}

/// Inter-sample event-event contrast; the self term is excluded from both the
/// numerator and the denominator.
pub fn loss_erun(
    tape: &mut Tape,
    v_fgs: &[Var],
    sets: &BatchSets,
    tau: f64,
    mean_reduction: bool,
) -> Var {
    let n = v_fgs.len();
    let ev: Vec<Var> = v_fgs.iter().map(|&v| tape.l2_normalize(v)).collect();
    let mut terms = Vec::new();
    for i in 0..n {
        let pos_idx: Vec<usize> = sets.pos[i].iter().copied().filter(|&j| j != i).collect();
        if pos_idx.is_empty() {
            continue;
        }
        let logit = |tape: &mut Tape, j: usize| {
            let d = tape.dot(ev[i], ev[j]);
            tape.scale(d, 1.0 / tau)
        };
        let pos: Vec<Var> = pos_idx.iter().map(|&j| logit(tape, j)).collect();
        let mut all = pos.clone();
        for &j in sets.neg[i].iter().filter(|&&j| j != i) {
            all.push(logit(tape, j));
        }
        terms.push(contrast_term(tape, &pos, &all));
    }
    reduce_terms(tape, terms, n, mean_reduction)
}

fn reduce_terms(tape: &mut Tape, terms: Vec<Var>, n: usize, mean_reduction: bool) -> Var {
    if terms.is_empty() {
        return tape.scalar(0.0);
    }
    let row = tape.concat_cols(&terms);
    let total = tape.sum_all(row);
    if mean_reduction {
        tape.scale(total, 1.0 / n as f64)
    } else {
        total
    }
}

/// Named components of the partial-branch loss, for logging.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct LossParts {
    pub raml: f64,
    pub raun: f64,
    pub erml: f64,
    pub erun: f64,
    pub grnd: f64,
    pub total: f64,
}

/// Combined loss: (raml + raun) + lambda (erml + erun) + gamma grnd.
pub fn loss_combined(
    tape: &mut Tape,
    raml: Var,
    raun: Var,
    erml: Var,
    erun: Var,
    grnd: Var,
    cfg: &ConstraintConfig,
) -> Result<(Var, LossParts)> {
    let raun_w = tape.scale(raun, cfg.raun_weight);
    let intra = tape.add(raml, raun_w);
    let inter = tape.add(erml, erun);
    let inter_w = tape.scale(inter, cfg.lambda);
    let grnd_w = tape.scale(grnd, cfg.gamma);
    let partial = tape.add(intra, inter_w);
    let total = tape.add(partial, grnd_w);
    let parts = LossParts {
        raml: tape.value(raml).item(),
        raun: tape.value(raun).item(),
        erml: tape.value(erml).item(),
        erun: tape.value(erun).item(),
        grnd: tape.value(grnd).item(),
        total: tape.value(total).item(),
    };
    for (name, v) in [
        ("raml", parts.raml),
        ("raun", parts.raun),
        ("erml", parts.erml),
        ("erun", parts.erun),
        ("grnd", parts.grnd),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: 0,
                detail: format!("component {name} = {v}"),
            });
        }
    }
    Ok((total, parts))
}

/// Value-level helper used by tests and the embedding dump.
pub fn loss_raml_value(v_fg: &[f64], v_vd: &[f64], q: &[f64], alpha: f64) -> f64 {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::row(v_fg.to_vec()));
    let b = tape.constant(Tensor::row(v_vd.to_vec()));
    let c = tape.constant(Tensor::row(q.to_vec()));
    let l = loss_raml(&mut tape, a, b, c, alpha);
    tape.value(l).item()
}
