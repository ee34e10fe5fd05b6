use super::{dot, EmbeddingModel, ModelKind};
use crate::kg::{EntityId, RelationId, Triple};

/// `‖h + r − t‖²`.
#[inline]
pub fn transe_distance(h: &[f64], r: &[f64], t: &[f64]) -> f64 {
    h.iter()
        .zip(r)
        .zip(t)
        .map(|((h, r), t)| {
            let d = h + r - t;
            d * d
        })
        .sum()
}

/// `‖h⊥ + r − t⊥‖²` with `x⊥ = x − (w·x) w`.
#[inline]
pub fn transh_distance(h: &[f64], r: &[f64], w: &[f64], t: &[f64]) -> f64 {
    let wh = dot(w, h);
    let wt = dot(w, t);
    h.iter()
        .zip(r)
        .zip(w)
        .zip(t)
        .map(|(((h, r), w), t)| {
            let d = (h - wh * w) + r - (t - wt * w);
            d * d
        })
        .sum()
}

/// A trainable row of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Param {
    Entity(EntityId),
    Relation(RelationId),
    Normal(RelationId),
}

/// Gradient of one triple's score with respect to the rows it touches.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradient {
    pub head: Vec<f64>,
    pub relation: Vec<f64>,
    pub tail: Vec<f64>,
    /// TransH only.
    pub normal: Vec<f64>,
}

impl ScoreGradient {
    pub fn zeros(dim: usize) -> Self {
        Self {
            head: vec![0.0; dim],
            relation: vec![0.0; dim],
            tail: vec![0.0; dim],
            normal: vec![0.0; dim],
        }
    }

    /// Overwrite with the gradient of `model.score(triple)`; returns the score.
    pub fn compute(&mut self, model: &EmbeddingModel, triple: &Triple) -> f64 {
        let h = model.entity(triple.head);
        let r = model.relation(triple.relation);
        let t = model.entity(triple.tail);
        match model.kind {
            ModelKind::TransE => {
                let mut f = 0.0;
                for i in 0..h.len() {
                    let d = h[i] + r[i] - t[i];
                    f += d * d;
                    self.head[i] = 2.0 * d;
                    self.relation[i] = 2.0 * d;
                    self.tail[i] = -2.0 * d;
                }
                f
            }
            ModelKind::TransH => {
                let w = model.normal(triple.relation).expect("TransH model without normals");
                let wh = dot(w, h);
                let wt = dot(w, t);
                // d = P(h − t) + r with P = I − w wᵀ; relation slot holds d for now.
                let mut f = 0.0;
                for i in 0..h.len() {
                    let d = (h[i] - wh * w[i]) + r[i] - (t[i] - wt * w[i]);
                    f += d * d;
                    self.relation[i] = d;
                }
                let wd = dot(w, &self.relation);
                let we = wh - wt;
                for i in 0..h.len() {
                    let d = self.relation[i];
                    let gh = 2.0 * (d - wd * w[i]);
                    self.head[i] = gh;
                    self.tail[i] = -gh;
                    self.normal[i] = -2.0 * (wd * (h[i] - t[i]) + we * d);
                    self.relation[i] = 2.0 * d;
                }
                f
            }
        }
    }
}

/// `max(0, γ + f(pos) − f(neg))`.
pub fn hinge_loss(model: &EmbeddingModel, pos: &Triple, neg: &Triple, gamma: f64) -> f64 {
    hinge(gamma + model.score(pos) - model.score(neg))
}

/// Like `max(0, margin)` but NaN propagates, so divergence is never masked.
#[inline]
fn hinge(margin: f64) -> f64 {
    if margin > 0.0 || margin.is_nan() {
        margin
    } else {
        0.0
    }
}

/// Reusable gradient buffers for the SGD inner loop.
#[derive(Debug, Clone)]
pub struct HingeWorkspace {
    pos: ScoreGradient,
    neg: ScoreGradient,
}

impl HingeWorkspace {
    pub fn new(dim: usize) -> Self {
        Self {
            pos: ScoreGradient::zeros(dim),
            neg: ScoreGradient::zeros(dim),
        }
    }

    /// Fill both gradients; returns the hinge loss. Gradients are only
    /// meaningful when the loss is positive.
    fn evaluate(&mut self, model: &EmbeddingModel, pos: &Triple, neg: &Triple, gamma: f64) -> f64 {
        let fp = self.pos.compute(model, pos);
        let fn_ = self.neg.compute(model, neg);
        hinge(gamma + fp - fn_)
    }

    /// Contributions of the current buffers as `(row, sign, gradient)`; the
    /// loss gradient is `∇f(pos) − ∇f(neg)`.
    fn contributions<'a>(
        &'a self,
        kind: ModelKind,
        pos: &Triple,
        neg: &Triple,
    ) -> impl Iterator<Item = (Param, f64, &'a [f64])> + 'a {
        let with_normal = kind == ModelKind::TransH;
        let sides = [(*pos, 1.0, &self.pos), (*neg, -1.0, &self.neg)];
        sides.into_iter().flat_map(move |(t, sign, g)| {
            let base = [
                (Param::Entity(t.head), sign, g.head.as_slice()),
                (Param::Relation(t.relation), sign, g.relation.as_slice()),
                (Param::Entity(t.tail), sign, g.tail.as_slice()),
            ];
            base.into_iter().chain(
                with_normal.then_some((Param::Normal(t.relation), sign, g.normal.as_slice())),
            )
        })
    }

    /// One SGD step on a (positive, corrupted) pair. Returns the loss before
    /// the update; nothing moves when the hinge is inactive.
    pub fn step(
        &mut self,
        model: &mut EmbeddingModel,
        pos: &Triple,
        neg: &Triple,
        gamma: f64,
        learning_rate: f64,
    ) -> f64 {
        let loss = self.evaluate(model, pos, neg, gamma);
        if loss > 0.0 {
            let kind = model.kind;
            for (param, sign, grad) in self.contributions(kind, pos, neg) {
                let row = model.param_mut(param);
                for (x, g) in row.iter_mut().zip(grad) {
                    *x -= learning_rate * sign * g;
                }
            }
            if kind == ModelKind::TransH {
                model.normalize_normal(pos.relation);
            }
        }
        loss
    }
}

/// Hinge loss and its gradient, merged per parameter row (first-touch order).
/// Inactive hinges return an empty gradient.
pub fn hinge_gradient(
    model: &EmbeddingModel,
    pos: &Triple,
    neg: &Triple,
    gamma: f64,
) -> (f64, Vec<(Param, Vec<f64>)>) {
    let mut ws = HingeWorkspace::new(model.dim);
    let loss = ws.evaluate(model, pos, neg, gamma);
    let mut merged: Vec<(Param, Vec<f64>)> = Vec::new();
    if loss > 0.0 {
        for (param, sign, grad) in ws.contributions(model.kind, pos, neg) {
            let slot = match merged.iter().position(|(p, _)| *p == param) {
                Some(i) => i,
                None => {
                    merged.push((param, vec![0.0; model.dim]));
                    merged.len() - 1
                }
            };
            for (acc, g) in merged[slot].1.iter_mut().zip(grad) {
                *acc += sign * g;
            }
        }
    }
    (loss, merged)
}
