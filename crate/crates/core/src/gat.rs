//! Graph attention over scene-graph feature matrices.
//!
//! [`cgat_layer`] conditions every vertex update on an external query vector
//! (here: the decoder's first-layer state); [`gat_layer`] is the standard
//! layer where each vertex queries with its own current feature row. Both
//! update objects and relations with separate parameter sets, read all
//! neighborhoods from the pre-update feature matrix (synchronous update),
//! and always include the vertex itself in its neighborhood.
//!
//! Object neighborhoods also pull in the objects one hop away: the subjects
//! of the relations pointing at the vertex, so a vertex sees both its
//! incoming relations and the objects behind them.

use rand::Rng;

use crate::attention::{attend, AttentionSpec, AttentionVars};
use crate::autodiff::{ParameterStore, Tape, TapeError, TensorBase, Var};
use crate::graph::{SceneGraph, VertexRef};
use crate::scalar::Scalar;

/// Shapes of one graph-attention layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GraphAttentionSpec {
    /// Vertex feature width k.
    pub feature_dim: usize,
    /// Width of the external query (k itself for a self-query layer).
    pub query_dim: usize,
    /// Attention scorer width.
    pub hidden: usize,
}

impl GraphAttentionSpec {
    fn head(&self) -> AttentionSpec {
        AttentionSpec {
            feature_dim: self.feature_dim,
            query_dim: self.query_dim,
            hidden: self.hidden,
        }
    }

    pub fn init<T: Scalar, R: Rng>(
        &self,
        prefix: &str,
        store: &mut ParameterStore<T>,
        rng: &mut R,
    ) {
        let k = self.feature_dim;
        self.head().init(&format!("{prefix}.object_att"), store, rng);
        self.head().init(&format!("{prefix}.relation_att"), store, rng);
        store.insert(
            &format!("{prefix}.object_out"),
            TensorBase::uniform(&[2 * k, k], -0.1, 0.1, rng),
        );
        store.insert(
            &format!("{prefix}.relation_out"),
            TensorBase::uniform(&[2 * k, k], -0.1, 0.1, rng),
        );
    }

    pub fn bind<T: Scalar>(
        &self,
        prefix: &str,
        store: &ParameterStore<T>,
        tape: &mut Tape<T>,
    ) -> Result<GraphAttentionVars, TapeError> {
        Ok(GraphAttentionVars {
            object_att: self.head().bind(&format!("{prefix}.object_att"), store, tape)?,
            relation_att: self.head().bind(&format!("{prefix}.relation_att"), store, tape)?,
            object_out: store.bind(tape, &format!("{prefix}.object_out"))?,
            relation_out: store.bind(tape, &format!("{prefix}.relation_out"))?,
        })
    }
}

/// Tape handles of one bound graph-attention layer.
#[derive(Clone, Copy, Debug)]
pub struct GraphAttentionVars {
    pub object_att: AttentionVars,
    pub relation_att: AttentionVars,
    pub object_out: Var,
    pub relation_out: Var,
}

/// Feature-matrix rows of an object vertex's neighborhood: itself, the
/// relations pointing at it, and the subject objects behind those relations.
fn object_neighborhood(graph: &SceneGraph, index: usize) -> Vec<usize> {
    let mut rows = vec![graph.row_of(VertexRef::Object(index))];
    for v in graph
        .incoming_neighbors(VertexRef::Object(index))
        .expect("index validated by caller")
    {
        rows.push(graph.row_of(v));
    }
    for subject in graph.object_neighbors(index).expect("index validated by caller") {
        rows.push(graph.row_of(VertexRef::Object(subject)));
    }
    rows.dedup();
    rows
}

/// Rows of a relation vertex's neighborhood: itself and its two endpoints.
fn relation_neighborhood(graph: &SceneGraph, index: usize) -> Vec<usize> {
    let rel = &graph.relations()[index];
    let mut rows = vec![
        graph.row_of(VertexRef::Relation(index)),
        graph.row_of(VertexRef::Object(rel.subject)),
        graph.row_of(VertexRef::Object(rel.object)),
    ];
    rows.dedup();
    rows
}

fn check_feature_rows<T: Scalar>(
    tape: &Tape<T>,
    graph: &SceneGraph,
    features: Var,
) -> Result<(), TapeError> {
    let shape = tape.value(features).shape();
    if shape.len() != 2 || shape[0] != graph.num_vertices() || shape[1] != graph.feature_dim() {
        return Err(TapeError::ShapeMismatch {
            op: "graph-attention",
            left: shape.to_vec(),
            right: vec![graph.num_vertices(), graph.feature_dim()],
        });
    }
    Ok(())
}

fn vertex_update<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    neighborhood: &[usize],
    query: Var,
    att: &AttentionVars,
    out_proj: Var,
    self_row: usize,
) -> Result<Var, TapeError> {
    let gathered = tape.gather(features, neighborhood)?;
    let context = attend(tape, gathered, query, None, att)?.context;
    let own = tape.row(features, self_row)?;
    let joined = tape.concat(&[own, context])?;
    let projected = tape.matmul(joined, out_proj)?;
    tape.tanh(projected)
}

fn stack_rows<T: Scalar>(
    tape: &mut Tape<T>,
    rows: &[Var],
    k: usize,
) -> Result<Var, TapeError> {
    let flat = tape.concat(rows)?;
    tape.reshape(flat, &[rows.len(), k])
}

/// Conditional graph attention: every vertex update attends over its
/// neighborhood with the externally supplied query vector.
pub fn cgat_layer<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &SceneGraph,
    features: Var,
    query: Var,
    params: &GraphAttentionVars,
) -> Result<Var, TapeError> {
    check_feature_rows(tape, graph, features)?;
    if graph.num_vertices() == 0 {
        return Ok(features);
    }
    let mut updated = Vec::with_capacity(graph.num_vertices());
    for i in 0..graph.num_objects() {
        updated.push(vertex_update(
            tape,
            features,
            &object_neighborhood(graph, i),
            query,
            &params.object_att,
            params.object_out,
            i,
        )?);
    }
    for j in 0..graph.num_relations() {
        updated.push(vertex_update(
            tape,
            features,
            &relation_neighborhood(graph, j),
            query,
            &params.relation_att,
            params.relation_out,
            graph.num_objects() + j,
        )?);
    }
    stack_rows(tape, &updated, graph.feature_dim())
}

/// Standard graph attention: each vertex queries with its own pre-update
/// feature row. Parameter shapes must use `query_dim == feature_dim`.
pub fn gat_layer<T: Scalar>(
    tape: &mut Tape<T>,
    graph: &SceneGraph,
    features: Var,
    params: &GraphAttentionVars,
) -> Result<Var, TapeError> {
    check_feature_rows(tape, graph, features)?;
    if graph.num_vertices() == 0 {
        return Ok(features);
    }
    let mut updated = Vec::with_capacity(graph.num_vertices());
    for i in 0..graph.num_objects() {
        let query = tape.row(features, i)?;
        updated.push(vertex_update(
            tape,
            features,
            &object_neighborhood(graph, i),
            query,
            &params.object_att,
            params.object_out,
            i,
        )?);
    }
    for j in 0..graph.num_relations() {
        let row = graph.num_objects() + j;
        let query = tape.row(features, row)?;
        updated.push(vertex_update(
            tape,
            features,
            &relation_neighborhood(graph, j),
            query,
            &params.relation_att,
            params.relation_out,
            row,
        )?);
    }
    stack_rows(tape, &updated, graph.feature_dim())
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    use crate::autodiff::grad_check;
    use crate::graph::{GraphBounds, ObjectVertex, RelationVertex};

    use super::*;

    type T64 = TensorBase<f64>;

    const K: usize = 3;

    fn bounds() -> GraphBounds {
        GraphBounds { object_vocab: 32, predicate_vocab: 16, allow_self_loops: false }
    }

    fn random_graph(rng: &mut ChaCha12Rng) -> SceneGraph {
        let n_obj = rng.gen_range(1..5usize);
        let objects: Vec<ObjectVertex> = (0..n_obj)
            .map(|_| ObjectVertex {
                label: rng.gen_range(0..32),
                feature: (0..K).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            })
            .collect();
        let n_rel = if n_obj > 1 { rng.gen_range(0..4usize) } else { 0 };
        let relations: Vec<RelationVertex> = (0..n_rel)
            .map(|_| {
                let subject = rng.gen_range(0..n_obj);
                let mut object = rng.gen_range(0..n_obj);
                while object == subject {
                    object = rng.gen_range(0..n_obj);
                }
                RelationVertex {
                    predicate: rng.gen_range(0..16),
                    subject,
                    object,
                    score: rng.gen_range(0.0..1.0),
                    feature: (0..K).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                }
            })
            .collect();
        SceneGraph::new(objects, relations, K, &bounds()).unwrap()
    }

    fn spec(query_dim: usize) -> GraphAttentionSpec {
        GraphAttentionSpec { feature_dim: K, query_dim, hidden: 4 }
    }

    fn man_wears_hat() -> SceneGraph {
        SceneGraph::new(
            vec![
                ObjectVertex { label: 0, feature: vec![1.0, 0.0, 0.0] },
                ObjectVertex { label: 1, feature: vec![0.0, 1.0, 0.0] },
            ],
            vec![RelationVertex {
                predicate: 0,
                subject: 0,
                object: 1,
                score: 1.0,
                feature: vec![0.0, 0.0, 1.0],
            }],
            K,
            &bounds(),
        )
        .unwrap()
    }

    fn zeroed(store: &mut ParameterStore<f64>, names: &[&str]) {
        for name in names {
            let shape = store.get(name).unwrap().shape().to_vec();
            *store.get_mut(name).unwrap() = T64::zeros(&shape);
        }
    }

    #[test]
    fn hat_update_attends_over_hat_wears_man() {
        // With zero attention parameters the context is the plain mean of
        // the neighborhood rows, which pins down the neighborhood set.
        let g = man_wears_hat();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        spec(2).init("g", &mut store, &mut rng);
        zeroed(
            &mut store,
            &[
                "g.object_att.feature_proj",
                "g.object_att.query_proj",
                "g.object_att.score",
                "g.relation_att.feature_proj",
                "g.relation_att.query_proj",
                "g.relation_att.score",
            ],
        );
        // identity-ish output projection: [own ; ctx] -> ctx
        let mut proj = T64::zeros(&[2 * K, K]);
        for i in 0..K {
            proj.data_mut()[(K + i) * K + i] = 1.0;
        }
        *store.get_mut("g.object_out").unwrap() = proj.clone();
        *store.get_mut("g.relation_out").unwrap() = proj;

        let mut tape: Tape<f64> = Tape::new();
        let (features, _) = g.feature_matrix();
        let f = tape.leaf(features);
        let q = tape.leaf(T64::vector(vec![0.0, 0.0]));
        let vars = spec(2).bind("g", &store, &mut tape).unwrap();
        let out = cgat_layer(&mut tape, &g, f, q, &vars).unwrap();
        // hat (object 1): neighborhood {hat, wears, man} with one-hot rows,
        // so the mean context is 1/3 per component
        for v in tape.value(out).row(1) {
            assert!((v - (1.0f64 / 3.0).tanh()).abs() <= 1e-12, "got {v}");
        }
    }

    #[test]
    fn zero_scores_ignore_the_query() {
        let g = man_wears_hat();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        spec(2).init("g", &mut store, &mut rng);
        // zero query projections only: scaling q must not change anything
        zeroed(&mut store, &["g.object_att.query_proj", "g.relation_att.query_proj"]);

        let run = |q: Vec<f64>| {
            let mut tape: Tape<f64> = Tape::new();
            let (features, _) = g.feature_matrix();
            let f = tape.leaf(features);
            let qv = tape.leaf(T64::vector(q));
            let vars = spec(2).bind("g", &store, &mut tape).unwrap();
            let out = cgat_layer(&mut tape, &g, f, qv, &vars).unwrap();
            tape.value(out).data().to_vec()
        };
        let a = run(vec![0.3, -0.8]);
        let b = run(vec![30.0, -80.0]);
        assert_eq!(a, b, "query leaked through a zero projection");
    }

    #[test]
    fn shape_is_preserved_and_row_count_checked() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let g = random_graph(&mut rng);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        spec(K).init("g", &mut store, &mut rng);
        let mut tape: Tape<f64> = Tape::new();
        let (features, _) = g.feature_matrix();
        let f = tape.leaf(features);
        let vars = spec(K).bind("g", &store, &mut tape).unwrap();
        let out = gat_layer(&mut tape, &g, f, &vars).unwrap();
        assert_eq!(tape.value(out).shape(), &[g.num_vertices(), K]);

        let bad = tape.leaf(T64::zeros(&[g.num_vertices() + 1, K]));
        assert!(matches!(
            gat_layer(&mut tape, &g, bad, &vars),
            Err(TapeError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn gat_equals_cgat_under_self_queries() {
        // Assemble the per-vertex self-query result from plain cgat calls
        // (row v of the call whose query is v's own feature row) and compare
        // against the dedicated gat path, with tied parameters.
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..100 {
            let g = random_graph(&mut rng);
            if g.num_vertices() == 0 {
                continue;
            }
            let mut store: ParameterStore<f64> = ParameterStore::new();
            spec(K).init("g", &mut store, &mut rng);
            let (features, _) = g.feature_matrix();

            let gat_out = {
                let mut tape: Tape<f64> = Tape::new();
                let f = tape.leaf(features.clone());
                let vars = spec(K).bind("g", &store, &mut tape).unwrap();
                let out = gat_layer(&mut tape, &g, f, &vars).unwrap();
                tape.value(out).clone()
            };

            for v in 0..g.num_vertices() {
                let mut tape: Tape<f64> = Tape::new();
                let f = tape.leaf(features.clone());
                let q = tape.leaf(T64::vector(features.row(v).to_vec()));
                let vars = spec(K).bind("g", &store, &mut tape).unwrap();
                let out = cgat_layer(&mut tape, &g, f, q, &vars).unwrap();
                let got = tape.value(out).row(v);
                for (a, b) in got.iter().zip(gat_out.row(v)) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn isolated_object_update_uses_only_its_own_row() {
        // two isolated objects; perturbing the second must not move the first
        let g = SceneGraph::new(
            vec![
                ObjectVertex { label: 0, feature: vec![0.5, -0.5, 0.25] },
                ObjectVertex { label: 1, feature: vec![0.1, 0.2, 0.3] },
            ],
            vec![],
            K,
            &bounds(),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        spec(K).init("g", &mut store, &mut rng);

        let run = |features: T64| {
            let mut tape: Tape<f64> = Tape::new();
            let f = tape.leaf(features);
            let vars = spec(K).bind("g", &store, &mut tape).unwrap();
            let out = gat_layer(&mut tape, &g, f, &vars).unwrap();
            tape.value(out).clone()
        };
        let (base, _) = g.feature_matrix();
        let mut poked = base.clone();
        poked.data_mut()[K] += 10.0; // vertex 1's first feature
        let a = run(base);
        let b = run(poked);
        assert_eq!(a.row(0), b.row(0), "outside-neighborhood change leaked in");
        assert_ne!(a.row(1), b.row(1));
    }

    #[test]
    fn locality_outside_the_neighborhood_is_bit_exact() {
        // man -> hat, plus an isolated object; hat's neighborhood is
        // {hat, wears, man}, so the isolated object must not affect it.
        let g = SceneGraph::new(
            vec![
                ObjectVertex { label: 0, feature: vec![1.0, 0.0, 0.0] },
                ObjectVertex { label: 1, feature: vec![0.0, 1.0, 0.0] },
                ObjectVertex { label: 2, feature: vec![0.0, 0.0, 1.0] },
            ],
            vec![RelationVertex {
                predicate: 0,
                subject: 0,
                object: 1,
                score: 1.0,
                feature: vec![0.5, 0.5, 0.5],
            }],
            K,
            &bounds(),
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mut store: ParameterStore<f64> = ParameterStore::new();
        spec(2).init("g", &mut store, &mut rng);
        let run = |features: T64| {
            let mut tape: Tape<f64> = Tape::new();
            let f = tape.leaf(features);
            let q = tape.leaf(T64::vector(vec![0.4, -0.4]));
            let vars = spec(2).bind("g", &store, &mut tape).unwrap();
            let out = cgat_layer(&mut tape, &g, f, q, &vars).unwrap();
            tape.value(out).clone()
        };
        let (base, _) = g.feature_matrix();
        let mut poked = base.clone();
        poked.data_mut()[2 * K + 1] = 42.0; // isolated object's feature
        let a = run(base);
        let b = run(poked);
        assert_eq!(a.row(1), b.row(1)); // hat
        assert_eq!(a.row(0), b.row(0)); // man (neighborhood: self only)
        assert_eq!(a.row(3), b.row(3)); // wears
    }

    #[test]
    fn row_permutation_equivariance() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..50 {
            let g = random_graph(&mut rng);
            if g.num_objects() < 2 {
                continue;
            }
            let mut store: ParameterStore<f64> = ParameterStore::new();
            spec(2).init("g", &mut store, &mut rng);
            let q = vec![0.3, 0.7];

            // rotate object indices by one; keep relation order
            let n = g.num_objects();
            let remap: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
            let mut inverse = vec![0; n];
            for (old, &new) in remap.iter().enumerate() {
                inverse[new] = old;
            }
            let objects: Vec<ObjectVertex> =
                inverse.iter().map(|&old| g.objects()[old].clone()).collect();
            let relations: Vec<RelationVertex> = g
                .relations()
                .iter()
                .map(|r| RelationVertex {
                    predicate: r.predicate,
                    subject: remap[r.subject],
                    object: remap[r.object],
                    score: r.score,
                    feature: r.feature.clone(),
                })
                .collect();
            let permuted = SceneGraph::new(objects, relations, K, &bounds()).unwrap();

            let run = |graph: &SceneGraph| {
                let mut tape: Tape<f64> = Tape::new();
                let (features, _) = graph.feature_matrix();
                let f = tape.leaf(features);
                let qv = tape.leaf(T64::vector(q.clone()));
                let vars = spec(2).bind("g", &store, &mut tape).unwrap();
                let out = cgat_layer(&mut tape, graph, f, qv, &vars).unwrap();
                tape.value(out).clone()
            };
            let base = run(&g);
            let perm = run(&permuted);
            for old in 0..n {
                for (a, b) in base.row(old).iter().zip(perm.row(remap[old])) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
            for j in 0..g.num_relations() {
                for (a, b) in base.row(n + j).iter().zip(perm.row(n + j)) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences_including_query() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let g = man_wears_hat();
        let mut store: ParameterStore<f64> = ParameterStore::new();
        spec(2).init("g", &mut store, &mut rng);
        store.insert("features", {
            let (f, _) = g.feature_matrix();
            f
        });
        store.insert("q", T64::uniform(&[2], -1.0, 1.0, &mut rng));
        let report = grad_check(
            &store,
            &|tape, vars| {
                let head = |p: &str| AttentionVars {
                    feature_proj: vars[&format!("{p}.feature_proj")],
                    query_proj: vars[&format!("{p}.query_proj")],
                    score: vars[&format!("{p}.score")],
                };
                let params = GraphAttentionVars {
                    object_att: head("g.object_att"),
                    relation_att: head("g.relation_att"),
                    object_out: vars["g.object_out"],
                    relation_out: vars["g.relation_out"],
                };
                let out = cgat_layer(tape, &g, vars["features"], vars["q"], &params)?;
                let m = tape.mean_rows(out)?;
                tape.mean_rows(m)
            },
            1e-4,
            1e-5,
        )
        .unwrap();
        assert!(report.pass(), "worst error {}", report.worst());
    }
}
