//! Synthetic knowledge graphs in two shapes: an ontology-like hierarchy of
//! nested many-to-one relations with some many-to-many restrictions, and an
//! EHR-like graph dominated by a many-to-many patient-code relation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{
    parse_triples, split_dataset, write_dataset, DictionaryMode, KgError, KnowledgeGraph, SplitManifest,
    SplitRatios, DEFAULT_SPLIT_RATIOS,
};

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid shape spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    #[serde(rename = "ontology")]
    OntologyLike,
    #[serde(rename = "ehr")]
    EhrLike,
}

impl std::str::FromStr for Shape {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "ontology" | "ontology-like" => Ok(Shape::OntologyLike),
            "ehr" | "ehr-like" => Ok(Shape::EhrLike),
            other => Err(format!("unknown shape `{other}` (expected ontology or ehr)")),
        }
    }
}

/// One many-to-one relation from subjects to a class type.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub relation: String,
    pub class_type: String,
    pub classes: usize,
}

impl LevelSpec {
    pub fn new(relation: &str, class_type: &str, classes: usize) -> Self {
        Self {
            relation: relation.into(),
            class_type: class_type.into(),
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeSpec {
    pub shape: Shape,
    pub seed: u64,
    /// Probability that a many-to-one triple points at a wrong class, and
    /// that a many-to-many partner is drawn outside the label's pool.
    pub noise_rate: f64,
    pub subjects: usize,
    pub subject_type: String,
    /// Ontology: nested levels, coarsest first. EHR: independent attributes.
    /// The first level drives the many-to-many partner bias.
    pub levels: Vec<LevelSpec>,
    pub partner_relation: String,
    pub partner_type: String,
    pub partners: usize,
    /// Partners preferred by each class of the first level.
    pub partner_pool: usize,
    /// Mean many-to-many triples per subject.
    pub density: f64,
    pub split_ratios: SplitRatios,
}

impl ShapeSpec {
    /// Procedures in a three-level group hierarchy with restrictions.
    pub fn ontology() -> Self {
        Self {
            shape: Shape::OntologyLike,
            seed: 0,
            noise_rate: 0.1,
            subjects: 500,
            subject_type: "Procedure".into(),
            levels: vec![
                LevelSpec::new("inPGroup", "PGroup", 8),
                LevelSpec::new("inPSubgroup", "PSubgroup", 59),
                LevelSpec::new("inPOrgForm", "POrgForm", 120),
            ],
            partner_relation: "isRestrictedBy".into(),
            partner_type: "Restriction".into(),
            partners: 80,
            partner_pool: 10,
            density: 3.0,
            split_ratios: DEFAULT_SPLIT_RATIOS,
        }
    }

    /// Patients with a few demographic attributes and many diagnoses.
    pub fn ehr() -> Self {
        Self {
            shape: Shape::EhrLike,
            seed: 0,
            noise_rate: 0.1,
            subjects: 300,
            subject_type: "Patient".into(),
            levels: vec![
                LevelSpec::new("hadAbortion", "AbortionFlag", 2),
                LevelSpec::new("ageWeeksPregnancyInterrupted", "WeeksRange", 15),
                LevelSpec::new("ageStage", "AgeStage", 6),
            ],
            partner_relation: "hasDiagnosis".into(),
            partner_type: "Diagnosis".into(),
            partners: 100,
            partner_pool: 15,
            density: 6.0,
            split_ratios: DEFAULT_SPLIT_RATIOS,
        }
    }

    pub fn for_shape(shape: Shape) -> Self {
        match shape {
            Shape::OntologyLike => Self::ontology(),
            Shape::EhrLike => Self::ehr(),
        }
    }

    pub fn validate(&self) -> Result<(), DatagenError> {
        let bad = |m: String| Err(DatagenError::InvalidSpec(m));
        if self.subjects == 0 {
            return bad("at least one subject is required".into());
        }
        if self.levels.is_empty() {
            return bad("at least one many-to-one level is required".into());
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!("noise rate must be in [0, 1), got {}", self.noise_rate));
        }
        if !(self.density >= 0.0 && self.density.is_finite()) {
            return bad(format!("density must be finite and >= 0, got {}", self.density));
        }
        for (i, level) in self.levels.iter().enumerate() {
            if level.classes == 0 {
                return bad(format!("level {} has no classes", level.relation));
            }
            if level.classes > self.subjects {
                return bad(format!(
                    "{} has {} classes but only {} subjects",
                    level.relation, level.classes, self.subjects
                ));
            }
            if self.shape == Shape::OntologyLike && i > 0 && level.classes < self.levels[i - 1].classes {
                return bad(format!(
                    "{} has fewer classes than its parent level {}",
                    level.relation,
                    self.levels[i - 1].relation
                ));
            }
        }
        let mut names: Vec<&str> = self.levels.iter().map(|l| l.relation.as_str()).collect();
        names.push(&self.partner_relation);
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return bad("relation names must be distinct".into());
        }
        if self.density > 0.0 {
            if self.partners == 0 {
                return bad("positive density needs partners".into());
            }
            if self.partner_pool == 0 || self.partner_pool > self.partners {
                return bad(format!(
                    "partner pool must be in 1..={}, got {}",
                    self.partners, self.partner_pool
                ));
            }
        }
        Ok(())
    }
}

/// Relation name linking a level's classes to their parents.
pub fn parent_relation(level: &LevelSpec) -> String {
    format!("{}Parent", level.class_type)
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub kg: KnowledgeGraph,
    /// Noise-free class of every subject, per level relation.
    pub ground_truth: BTreeMap<String, BTreeMap<String, String>>,
    pub spec: ShapeSpec,
}

fn name(prefix: &str, i: usize, width: usize) -> String {
    format!("{prefix}{i:0width$}")
}

fn width(n: usize) -> usize {
    n.saturating_sub(1).to_string().len()
}

/// `count` items over `classes`, every class used at least once.
fn cover(rng: &mut ChaCha8Rng, count: usize, classes: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..count)
        .map(|i| if i < classes { i } else { rng.gen_range(0..classes) })
        .collect();
    // Shuffle so coverage does not correlate with subject index.
    rand::seq::SliceRandom::shuffle(out.as_mut_slice(), rng);
    out
}

/// Replace `class` by a different one with probability `noise`.
fn perturb(rng: &mut ChaCha8Rng, class: usize, classes: usize, noise: f64) -> usize {
    if classes > 1 && rng.gen::<f64>() < noise {
        let j = rng.gen_range(0..classes - 1);
        if j >= class {
            j + 1
        } else {
            j
        }
    } else {
        class
    }
}

/// Generate a dataset from `spec`; output is deterministic per seed.
pub fn generate(spec: &ShapeSpec) -> Result<GeneratedDataset, DatagenError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sw = width(spec.subjects);
    let subject = |i: usize| format!("{}:{}", name("s", i, sw), spec.subject_type);
    let class_token = |level: &LevelSpec, c: usize| {
        format!("{}:{}", name(&level.class_type, c, width(level.classes)), level.class_type)
    };

    let mut lines = String::new();
    // truth[level][subject] = clean class.
    let mut truth: Vec<Vec<usize>> = Vec::with_capacity(spec.levels.len());
    match spec.shape {
        Shape::OntologyLike => {
            // parent[i][c]: class of level i-1 above class c of level i.
            let mut parents: Vec<Vec<usize>> = vec![Vec::new()];
            for i in 1..spec.levels.len() {
                parents.push(cover(&mut rng, spec.levels[i].classes, spec.levels[i - 1].classes));
            }
            let deepest = spec.levels.len() - 1;
            let leaf = cover(&mut rng, spec.subjects, spec.levels[deepest].classes);
            truth = vec![Vec::new(); spec.levels.len()];
            truth[deepest] = leaf;
            for i in (0..deepest).rev() {
                truth[i] = truth[i + 1].iter().map(|&c| parents[i + 1][c]).collect();
            }
            for i in 1..spec.levels.len() {
                let (level, up) = (&spec.levels[i], &spec.levels[i - 1]);
                let rel = parent_relation(level);
                for (c, &p) in parents[i].iter().enumerate() {
                    let _ = writeln!(lines, "{}\t{rel}\t{}", class_token(level, c), class_token(up, p));
                }
            }
        }
        Shape::EhrLike => {
            for level in &spec.levels {
                truth.push(cover(&mut rng, spec.subjects, level.classes));
            }
        }
    }
    for (level, classes) in spec.levels.iter().zip(&truth) {
        for (s, &c) in classes.iter().enumerate() {
            let noisy = perturb(&mut rng, c, level.classes, spec.noise_rate);
            let _ = writeln!(lines, "{}\t{}\t{}", subject(s), level.relation, class_token(level, noisy));
        }
    }

    if spec.density > 0.0 {
        let pw = width(spec.partners);
        let pools: Vec<Vec<usize>> = (0..spec.levels[0].classes)
            .map(|_| {
                let mut p = sample(&mut rng, spec.partners, spec.partner_pool).into_vec();
                p.sort_unstable();
                p
            })
            .collect();
        let whole = spec.density.floor() as usize;
        let frac = spec.density - whole as f64;
        for s in 0..spec.subjects {
            let extra = usize::from(frac > 0.0 && rng.gen::<f64>() < frac);
            let m = (whole + extra).min(spec.partners);
            let pool = &pools[truth[0][s]];
            let mut chosen = BTreeSet::new();
            let mut order = Vec::with_capacity(m);
            while order.len() < m {
                let pool_left = pool.iter().any(|p| !chosen.contains(p));
                let p = if pool_left && rng.gen::<f64>() >= spec.noise_rate {
                    pool[rng.gen_range(0..pool.len())]
                } else {
                    rng.gen_range(0..spec.partners)
                };
                if chosen.insert(p) {
                    order.push(p);
                }
            }
            for p in order {
                let _ = writeln!(
                    lines,
                    "{}\t{}\t{}:{}",
                    subject(s),
                    spec.partner_relation,
                    name("p", p, pw),
                    spec.partner_type
                );
            }
        }
    }

    let (dict, triples) = parse_triples(&lines, DictionaryMode::Build)?;
    let split_seed = spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1);
    let kg = split_dataset(dict, &triples, spec.split_ratios, split_seed)?.canonicalize()?;

    let mut ground_truth = BTreeMap::new();
    for (level, classes) in spec.levels.iter().zip(&truth) {
        let cw = width(level.classes);
        let map = classes
            .iter()
            .enumerate()
            .map(|(s, &c)| (name("s", s, sw), name(&level.class_type, c, cw)))
            .collect();
        ground_truth.insert(level.relation.clone(), map);
    }
    Ok(GeneratedDataset {
        kg,
        ground_truth,
        spec: spec.clone(),
    })
}

impl GeneratedDataset {
    pub fn split_seed(&self) -> u64 {
        self.spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
    }

    /// `entity<TAB>label` lines, sorted by entity name.
    pub fn labels_tsv(&self, relation: &str) -> Option<String> {
        self.ground_truth.get(relation).map(|m| {
            m.iter().fold(String::new(), |mut s, (e, l)| {
                let _ = writeln!(s, "{e}\t{l}");
                s
            })
        })
    }

    /// Split files, `labels_<relation>.tsv` per level and `spec.json`.
    pub fn write(&self, dir: &Path) -> Result<(), DatagenError> {
        let manifest = SplitManifest::for_graph(&self.kg, self.split_seed(), self.spec.split_ratios);
        write_dataset(dir, &self.kg, &manifest)?;
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| DatagenError::Io { path, source }
        };
        for rel in self.ground_truth.keys() {
            let path = dir.join(format!("labels_{rel}.tsv"));
            std::fs::write(&path, self.labels_tsv(rel).unwrap_or_default()).map_err(io(&path))?;
        }
        let path = dir.join("spec.json");
        let json = serde_json::to_string_pretty(&self.spec).expect("spec serialises");
        std::fs::write(&path, json + "\n").map_err(io(&path))
    }
}
