//! Translational embedding models (TransE, TransH).
//!
//! Scores are dissimilarities: squared L2 distance between the translated
//! head and the tail, so 0 is a perfect fit and larger is worse.

mod io;
mod score;

pub use io::{read_model, write_model, ModelIoError, MODEL_MAGIC, MODEL_VERSION};
pub use score::{
    hinge_gradient, hinge_loss, transe_distance, transh_distance, HingeWorkspace, Param,
    ScoreGradient,
};

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kg::{EntityId, RelationId, Triple, TypedDictionary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "transe")]
    TransE,
    #[serde(rename = "transh")]
    TransH,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::TransH => "transh",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "transh" => Ok(ModelKind::TransH),
            other => Err(format!("unknown model kind `{other}` (expected transe or transh)")),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics; a zero-width matrix has no meaningful rows.
        self.data.chunks_exact(self.cols.max(1))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(row: &mut [f64]) {
    let n = norm(row);
    if n > 0.0 {
        row.iter_mut().for_each(|x| *x /= n);
    }
}

/// Entity and relation vectors in a shared `dim`-dimensional space.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub kind: ModelKind,
    pub typed: bool,
    pub dim: usize,
    pub entities: Matrix,
    pub relations: Matrix,
    /// Hyperplane normals `w_r`, TransH only.
    pub normals: Option<Matrix>,
}

impl EmbeddingModel {
    /// Random initialisation for one replica.
    ///
    /// Every entry is drawn from `U[-6/√k, 6/√k]`; entity rows, relation rows
    /// and hyperplane normals are then scaled to unit length.
    pub fn init(
        dictionary: &TypedDictionary,
        kind: ModelKind,
        dim: usize,
        typed: bool,
        replica_seed: u64,
    ) -> Self {
        let mut model = Self::init_raw(dictionary, kind, dim, typed, replica_seed);
        for m in [&mut model.entities, &mut model.relations]
            .into_iter()
            .chain(model.normals.as_mut())
        {
            for i in 0..m.rows() {
                normalize(m.row_mut(i));
            }
        }
        model
    }

    /// The uniform draw before any normalisation.
    pub(crate) fn init_raw(
        dictionary: &TypedDictionary,
        kind: ModelKind,
        dim: usize,
        typed: bool,
        replica_seed: u64,
    ) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        let bound = 6.0 / (dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut rng = ChaCha8Rng::seed_from_u64(replica_seed);
        let mut draw = |rows: usize| {
            Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| dist.sample(&mut rng)).collect())
        };
        let entities = draw(dictionary.num_entities());
        let relations = draw(dictionary.num_relations());
        let normals = (kind == ModelKind::TransH).then(|| draw(dictionary.num_relations()));
        Self {
            kind,
            typed,
            dim,
            entities,
            relations,
            normals,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.entities.rows()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.rows()
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        self.entities.row(e.index())
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        self.relations.row(r.index())
    }

    pub fn normal(&self, r: RelationId) -> Option<&[f64]> {
        self.normals.as_ref().map(|m| m.row(r.index()))
    }

    /// Dissimilarity of `triple` under this model's score function.
    pub fn score(&self, triple: &Triple) -> f64 {
        let h = self.entity(triple.head);
        let r = self.relation(triple.relation);
        let t = self.entity(triple.tail);
        match self.kind {
            ModelKind::TransE => transe_distance(h, r, t),
            ModelKind::TransH => transh_distance(
                h,
                r,
                self.normal(triple.relation).expect("TransH model without normals"),
                t,
            ),
        }
    }

    /// Scale every entity vector longer than 1 back onto the unit sphere.
    pub fn project_entities(&mut self) {
        for i in 0..self.entities.rows() {
            let row = self.entities.row_mut(i);
            let n = norm(row);
            if n > 1.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
    }

    pub(crate) fn normalize_normal(&mut self, r: RelationId) {
        if let Some(m) = self.normals.as_mut() {
            normalize(m.row_mut(r.index()));
        }
    }

    pub fn max_entity_norm(&self) -> f64 {
        self.entities.iter_rows().map(norm).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .as_slice()
            .iter()
            .chain(self.relations.as_slice())
            .chain(self.normals.iter().flat_map(|m| m.as_slice()))
            .all(|x| x.is_finite())
    }

    pub fn param_mut(&mut self, p: Param) -> &mut [f64] {
        match p {
            Param::Entity(e) => self.entities.row_mut(e.index()),
            Param::Relation(r) => self.relations.row_mut(r.index()),
            Param::Normal(r) => self
                .normals
                .as_mut()
                .expect("TransH model without normals")
                .row_mut(r.index()),
        }
    }

    pub fn param(&self, p: Param) -> &[f64] {
        match p {
            Param::Entity(e) => self.entity(e),
            Param::Relation(r) => self.relation(r),
            Param::Normal(r) => self.normal(r).expect("TransH model without normals"),
        }
    }
}
