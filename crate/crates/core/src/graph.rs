//! Bipartite scene graphs: object vertices, relation vertices, and the
//! structural rules that connect them.
//!
//! Edges are stored implicitly: every relation vertex names its subject and
//! object vertex indices, so "a relation has exactly one incoming and one
//! outgoing edge" holds by construction and validation only has to check
//! index bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::Vocab;
use crate::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("relation {relation}: {role} index {index} out of bounds for {objects} objects")]
    BadEndpoint { relation: usize, role: &'static str, index: usize, objects: usize },
    #[error("relation {relation}: self-loop on object {index} (self-loops are disabled)")]
    SelfLoop { relation: usize, index: usize },
    #[error("{kind} vertex {index}: feature length {got} does not match feature dim {expect}")]
    FeatureDim { kind: &'static str, index: usize, got: usize, expect: usize },
    #[error("{kind} vertex {index}: label {label} out of bounds for vocabulary of {vocab}")]
    LabelOutOfBounds { kind: &'static str, index: usize, label: usize, vocab: usize },
    #[error("relation {relation}: score {score} outside [0, 1]")]
    BadScore { relation: usize, score: f64 },
    #[error("unknown vertex {0:?}")]
    UnknownVertex(VertexRef),
    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectVertex {
    pub label: usize,
    pub feature: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationVertex {
    pub predicate: usize,
    /// Object-vertex index the incoming edge comes from.
    pub subject: usize,
    /// Object-vertex index the outgoing edge points to.
    pub object: usize,
    /// Confidence used for triplet ranking. Gold graphs carry 1.0.
    pub score: f64,
    pub feature: Vec<f64>,
}

/// Reference to a vertex of either kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VertexRef {
    Object(usize),
    Relation(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VertexKind {
    Object,
    Relation,
}

/// A subject-predicate-object label phrase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Triplet {
    pub subject: usize,
    pub predicate: usize,
    pub object: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    objects: Vec<ObjectVertex>,
    relations: Vec<RelationVertex>,
    feature_dim: usize,
}

/// Construction-time limits a graph is validated against.
#[derive(Clone, Copy, Debug)]
pub struct GraphBounds {
    pub object_vocab: usize,
    pub predicate_vocab: usize,
    pub allow_self_loops: bool,
}

impl SceneGraph {
    /// Validate structure and build. Checks endpoint bounds, feature
    /// lengths, label bounds, score range, and the self-loop rule.
    pub fn new(
        objects: Vec<ObjectVertex>,
        relations: Vec<RelationVertex>,
        feature_dim: usize,
        bounds: &GraphBounds,
    ) -> Result<Self, GraphError> {
        for (i, o) in objects.iter().enumerate() {
            if o.feature.len() != feature_dim {
                return Err(GraphError::FeatureDim {
                    kind: "object",
                    index: i,
                    got: o.feature.len(),
                    expect: feature_dim,
                });
            }
            if o.label >= bounds.object_vocab {
                return Err(GraphError::LabelOutOfBounds {
                    kind: "object",
                    index: i,
                    label: o.label,
                    vocab: bounds.object_vocab,
                });
            }
        }
        for (j, r) in relations.iter().enumerate() {
            if r.subject >= objects.len() {
                return Err(GraphError::BadEndpoint {
                    relation: j,
                    role: "subject",
                    index: r.subject,
                    objects: objects.len(),
                });
            }
            if r.object >= objects.len() {
                return Err(GraphError::BadEndpoint {
                    relation: j,
                    role: "object",
                    index: r.object,
                    objects: objects.len(),
                });
            }
            if r.subject == r.object && !bounds.allow_self_loops {
                return Err(GraphError::SelfLoop { relation: j, index: r.subject });
            }
            if r.feature.len() != feature_dim {
                return Err(GraphError::FeatureDim {
                    kind: "relation",
                    index: j,
                    got: r.feature.len(),
                    expect: feature_dim,
                });
            }
            if r.predicate >= bounds.predicate_vocab {
                return Err(GraphError::LabelOutOfBounds {
                    kind: "relation",
                    index: j,
                    label: r.predicate,
                    vocab: bounds.predicate_vocab,
                });
            }
            if !(0.0..=1.0).contains(&r.score) || !r.score.is_finite() {
                return Err(GraphError::BadScore { relation: j, score: r.score });
            }
        }
        Ok(Self { objects, relations, feature_dim })
    }

    pub fn objects(&self) -> &[ObjectVertex] {
        &self.objects
    }

    pub fn relations(&self) -> &[RelationVertex] {
        &self.relations
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.objects.len() + self.relations.len()
    }

    fn check_vertex(&self, v: VertexRef) -> Result<(), GraphError> {
        let ok = match v {
            VertexRef::Object(i) => i < self.objects.len(),
            VertexRef::Relation(j) => j < self.relations.len(),
        };
        if ok {
            Ok(())
        } else {
            Err(GraphError::UnknownVertex(v))
        }
    }

    /// Vertices connected to `vertex` through incoming edges: for an object,
    /// the relations that point at it; for a relation, its subject object.
    pub fn incoming_neighbors(&self, vertex: VertexRef) -> Result<Vec<VertexRef>, GraphError> {
        self.check_vertex(vertex)?;
        Ok(match vertex {
            VertexRef::Object(i) => self
                .relations
                .iter()
                .enumerate()
                .filter(|(_, r)| r.object == i)
                .map(|(j, _)| VertexRef::Relation(j))
                .collect(),
            VertexRef::Relation(j) => vec![VertexRef::Object(self.relations[j].subject)],
        })
    }

    /// Objects reachable through one incoming relation: the subjects of the
    /// relations whose object is `object_index`. Deduplicated, ascending.
    pub fn object_neighbors(&self, object_index: usize) -> Result<Vec<usize>, GraphError> {
        self.check_vertex(VertexRef::Object(object_index))?;
        let mut out: Vec<usize> = self
            .relations
            .iter()
            .filter(|r| r.object == object_index)
            .map(|r| r.subject)
            .collect();
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }

    /// One scored triplet per relation vertex, sorted by score descending;
    /// ties keep relation-index order.
    pub fn extract_triplets(&self) -> Vec<(Triplet, f64)> {
        let mut out: Vec<(usize, Triplet, f64)> = self
            .relations
            .iter()
            .enumerate()
            .map(|(j, r)| {
                (
                    j,
                    Triplet {
                        subject: self.objects[r.subject].label,
                        predicate: r.predicate,
                        object: self.objects[r.object].label,
                    },
                    r.score,
                )
            })
            .collect();
        out.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap().then(a.0.cmp(&b.0)));
        out.into_iter().map(|(_, t, s)| (t, s)).collect()
    }

    /// Stack features into an (o + r) x k matrix: object rows first, both in
    /// index order. Also reports the kind of each row.
    pub fn feature_matrix(&self) -> (Tensor, Vec<VertexKind>) {
        let k = self.feature_dim;
        let mut data = Vec::with_capacity(self.num_vertices() * k);
        let mut kinds = Vec::with_capacity(self.num_vertices());
        for o in &self.objects {
            data.extend_from_slice(&o.feature);
            kinds.push(VertexKind::Object);
        }
        for r in &self.relations {
            data.extend_from_slice(&r.feature);
            kinds.push(VertexKind::Relation);
        }
        let t = Tensor::from_vec(vec![self.num_vertices(), k], data)
            .expect("feature lengths validated at construction");
        (t, kinds)
    }

    /// Row index of a vertex in [`feature_matrix`](Self::feature_matrix).
    pub fn row_of(&self, v: VertexRef) -> usize {
        match v {
            VertexRef::Object(i) => i,
            VertexRef::Relation(j) => self.objects.len() + j,
        }
    }
}

// JSON interchange. Labels are strings resolved against vocabulary files.

#[derive(Serialize, Deserialize)]
struct ObjectJson {
    label: String,
    feature: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RelationJson {
    predicate: String,
    subject: usize,
    object: usize,
    score: f64,
    feature: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct SceneGraphJson {
    objects: Vec<ObjectJson>,
    relations: Vec<RelationJson>,
}

impl SceneGraphJson {
    pub fn from_graph(graph: &SceneGraph, objects: &Vocab, predicates: &Vocab) -> Self {
        Self {
            objects: graph
                .objects()
                .iter()
                .map(|o| ObjectJson {
                    label: objects.word(o.label).to_string(),
                    feature: o.feature.clone(),
                })
                .collect(),
            relations: graph
                .relations()
                .iter()
                .map(|r| RelationJson {
                    predicate: predicates.word(r.predicate).to_string(),
                    subject: r.subject,
                    object: r.object,
                    score: r.score,
                    feature: r.feature.clone(),
                })
                .collect(),
        }
    }

    pub fn into_graph(
        self,
        objects: &Vocab,
        predicates: &Vocab,
        feature_dim: usize,
        allow_self_loops: bool,
    ) -> Result<SceneGraph, GraphError> {
        let object_vertices = self
            .objects
            .into_iter()
            .map(|o| {
                let label = objects.id(&o.label).ok_or(GraphError::UnknownLabel {
                    kind: "object",
                    label: o.label.clone(),
                })?;
                Ok(ObjectVertex { label, feature: o.feature })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        let relation_vertices = self
            .relations
            .into_iter()
            .map(|r| {
                let predicate = predicates.id(&r.predicate).ok_or(GraphError::UnknownLabel {
                    kind: "predicate",
                    label: r.predicate.clone(),
                })?;
                Ok(RelationVertex {
                    predicate,
                    subject: r.subject,
                    object: r.object,
                    score: r.score,
                    feature: r.feature,
                })
            })
            .collect::<Result<Vec<_>, GraphError>>()?;
        SceneGraph::new(
            object_vertices,
            relation_vertices,
            feature_dim,
            &GraphBounds {
                object_vocab: objects.len(),
                predicate_vocab: predicates.len(),
                allow_self_loops,
            },
        )
    }
}
