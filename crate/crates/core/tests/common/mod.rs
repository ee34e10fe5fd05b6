//! Shared generators and brute-force oracles for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use kgcep::kg::{parse_triples, split_dataset, DictionaryMode, KnowledgeGraph, Side, Split, Triple};
use kgcep::lp::{CandidateScope, FilterMode, LpConfig, Sides};
use kgcep::model::{EmbeddingModel, Matrix, ModelKind};

/// A random typed graph over at most `max_entities` entities, already split.
/// Returns `None` when the draw cannot populate an evaluation split.
pub fn random_kg(rng: &mut ChaCha8Rng, max_entities: usize) -> Option<KnowledgeGraph> {
    let types = rng.gen_range(1..=3);
    let n = rng.gen_range(2..=max_entities);
    let entity_type: Vec<usize> = (0..n).map(|_| rng.gen_range(0..types)).collect();
    let members = |t: usize| (0..n).filter(|&e| entity_type[e] == t).collect::<Vec<_>>();
    let relations = rng.gen_range(1..=3);
    let mut text = String::new();
    let mut seen = HashSet::new();
    for r in 0..relations {
        let (dom, ran) = (members(rng.gen_range(0..types)), members(rng.gen_range(0..types)));
        if dom.is_empty() || ran.is_empty() {
            continue;
        }
        for _ in 0..rng.gen_range(2..12) {
            let (h, t) = (*dom.choose(rng).unwrap(), *ran.choose(rng).unwrap());
            if seen.insert((h, r, t)) {
                text.push_str(&format!(
                    "e{h}:T{}\tr{r}\te{t}:T{}\n",
                    entity_type[h], entity_type[t]
                ));
            }
        }
    }
    let (dict, triples) = parse_triples(&text, DictionaryMode::Build).ok()?;
    let seed = rng.gen();
    let kg = split_dataset(dict, &triples, [0.55, 0.15, 0.15, 0.15], seed).ok()?;
    (!kg.split(Split::Tst).is_empty()).then_some(kg)
}

/// A model whose entries lie on the grid {-1, -0.5, 0, 0.5, 1}. Every score
/// is then an exact dyadic rational, so ties are common and reproducible by
/// any evaluation order.
pub fn grid_model(kg: &KnowledgeGraph, kind: ModelKind, dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingModel {
    let mut draw = |rows: usize| {
        Matrix::from_vec(
            rows,
            dim,
            (0..rows * dim).map(|_| rng.gen_range(-2i32..=2) as f64 / 2.0).collect(),
        )
    };
    let d = kg.dictionary();
    let entities = draw(d.num_entities());
    let relations = draw(d.num_relations());
    let normals = (kind == ModelKind::TransH).then(|| draw(d.num_relations()));
    EmbeddingModel {
        kind,
        typed: false,
        dim,
        entities,
        relations,
        normals,
    }
}

pub fn random_lp_config(rng: &mut ChaCha8Rng) -> LpConfig {
    LpConfig {
        scope: *[CandidateScope::Global, CandidateScope::Typed].choose(rng).unwrap(),
        filter: *[FilterMode::Raw, FilterMode::Filtered].choose(rng).unwrap(),
        sides: *[Sides::Head, Sides::Tail, Sides::Both].choose(rng).unwrap(),
        hits_at: vec![1, 3, 10],
    }
}

/// Score written out from the definitions, independent of the library.
pub fn oracle_score(m: &EmbeddingModel, h: usize, r: usize, t: usize) -> f64 {
    let (hv, rv, tv) = (m.entities.row(h), m.relations.row(r), m.entities.row(t));
    let project = |x: &[f64]| -> Vec<f64> {
        match &m.normals {
            Some(w) => {
                let w = w.row(r);
                let s: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum();
                x.iter().zip(w).map(|(xi, wi)| xi - s * wi).collect()
            }
            None => x.to_vec(),
        }
    };
    let (hp, tp) = (project(hv), project(tv));
    (0..m.dim).map(|i| (hp[i] + rv[i] - tp[i]).powi(2)).sum()
}

pub struct OracleReport {
    pub ranks: Vec<usize>,
    pub mrank: f64,
    pub mrr: f64,
    pub hits: BTreeMap<usize, f64>,
    pub per_relation: BTreeMap<String, (f64, f64)>,
}

/// Exhaustive ranking: every entity of the dictionary is tried as a
/// replacement and the candidates are counted one by one.
pub fn oracle_lp(m: &EmbeddingModel, kg: &KnowledgeGraph, split: Split, config: &LpConfig) -> OracleReport {
    let d = kg.dictionary();
    let known: HashSet<(u32, u32, u32)> = kg
        .all_triples()
        .map(|t| (t.head.0, t.relation.0, t.tail.0))
        .collect();
    let sides: &[Side] = match config.sides {
        Sides::Head => &[Side::Head],
        Sides::Tail => &[Side::Tail],
        Sides::Both => &[Side::Head, Side::Tail],
    };
    let mut ranks = Vec::new();
    let mut by_rel: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for t in kg.split(split) {
        let (h, r, tl) = (t.head.0 as usize, t.relation.0 as usize, t.tail.0 as usize);
        let true_score = oracle_score(m, h, r, tl);
        for &side in sides {
            let truth = if side == Side::Head { h } else { tl };
            let mut rank = 1;
            for e in 0..d.num_entities() {
                if e == truth {
                    continue;
                }
                let same_type = d.entity_type(kgcep::kg::EntityId(e as u32)) == d.entity_type(kgcep::kg::EntityId(truth as u32));
                if config.scope == CandidateScope::Typed && !same_type {
                    continue;
                }
                let (ch, ct) = if side == Side::Head { (e, tl) } else { (h, e) };
                if config.filter == FilterMode::Filtered && known.contains(&(ch as u32, r as u32, ct as u32)) {
                    continue;
                }
                if oracle_score(m, ch, r, ct) <= true_score {
                    rank += 1;
                }
            }
            ranks.push(rank);
            by_rel.entry(d.relation(t.relation).name.clone()).or_default().push(rank);
        }
    }
    let mean = |v: &[usize], f: &dyn Fn(usize) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
    let hits = config
        .hits_at
        .iter()
        .map(|&k| (k, mean(&ranks, &|r| (r <= k) as u8 as f64)))
        .collect();
    OracleReport {
        mrank: mean(&ranks, &|r| r as f64),
        mrr: mean(&ranks, &|r| 1.0 / r as f64),
        hits,
        per_relation: by_rel
            .iter()
            .map(|(k, v)| (k.clone(), (mean(v, &|r| r as f64), mean(v, &|r| 1.0 / r as f64))))
            .collect(),
        ranks,
    }
}

/// Largest relative error between the analytic hinge gradient and central
/// differences over every touched parameter row. Returns `None` when the
/// point sits too close to the hinge kink for differencing to be valid.
pub fn hinge_gradient_error(model: &EmbeddingModel, pos: &Triple, neg: &Triple, gamma: f64, step: f64) -> Option<f64> {
    use kgcep::model::{hinge_gradient, hinge_loss};
    let (loss, grads) = hinge_gradient(model, pos, neg, gamma);
    if loss < 1e-3 {
        return None;
    }
    let mut worst: f64 = 0.0;
    for (param, analytic) in grads {
        let mut numeric = vec![0.0; model.dim];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let mut plus = model.clone();
            plus.param_mut(param)[i] += step;
            let mut minus = model.clone();
            minus.param_mut(param)[i] -= step;
            let (lp, lm) = (hinge_loss(&plus, pos, neg, gamma), hinge_loss(&minus, pos, neg, gamma));
            if lp <= 0.0 || lm <= 0.0 {
                return None;
            }
            *slot = (lp - lm) / (2.0 * step);
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        worst = worst.max(if scale > 1e-8 { diff / scale } else { diff });
    }
    Some(worst)
}

/// `blobs` Gaussian clusters of `per` points in `dim` dimensions, centres on
/// a grid `separation` standard deviations apart. Returns points and the
/// generating blob of each.
pub fn gaussian_blobs(rng: &mut ChaCha8Rng, blobs: usize, per: usize, dim: usize, separation: f64) -> (Matrix, Vec<usize>) {
    use rand_distr::{Distribution, Normal};
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut data = Vec::with_capacity(blobs * per * dim);
    let mut truth = Vec::with_capacity(blobs * per);
    for b in 0..blobs {
        for _ in 0..per {
            for j in 0..dim {
                let centre = if j == 0 { b as f64 * separation } else { ((b * 7 + j) % 3) as f64 * separation };
                data.push(centre + normal.sample(rng));
            }
            truth.push(b);
        }
    }
    (Matrix::from_vec(blobs * per, dim, data), truth)
}

/// Do two labelings induce the same partition?
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab = BTreeMap::new();
    let mut ba = BTreeMap::new();
    a.iter().zip(b).all(|(x, y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

/// Pearson from the definition: covariance over the product of standard
/// deviations, with population moments computed directly.
pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n;
    let sx = (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n).sqrt();
    let sy = (y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sx * sy)
}

/// Average ranks by counting, O(n²): rank = #smaller + (#equal + 1) / 2.
pub fn brute_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let less = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}
