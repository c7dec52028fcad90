use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use super::layers::{self, GatVars, GruVars, MhcaVars};
use crate::ddi::{to_edge_index, Adjacency, EdgeIndex};
use crate::ehr::PatientRecord;
use crate::error::{shape_err, Error, Result};
use crate::numcore::{uniform_fan_in, uniform_symmetric, Axis, Scalar, Tape, Tensor, Var};

/// Vocabulary sizes the network is built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_diagnoses: usize,
    pub n_procedures: usize,
    pub n_medications: usize,
}

/// Named parameter tensors in a fixed order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { names: Vec::new(), tensors: Vec::new() }
    }

    pub fn push(&mut self, name: &str, t: Tensor<T>) -> usize {
        self.names.push(name.to_string());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore { names: self.names.clone(), tensors: self.tensors.iter().map(Tensor::cast).collect() }
    }

    pub fn n_values(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug)]
struct GruIds {
    w_x: usize,
    w_h: usize,
    b_x: usize,
    b_h: usize,
}

#[derive(Clone, Debug)]
enum DdiEncoderIds {
    Gcn(usize),
    Gat(Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
struct Layout {
    dx_emb: usize,
    px_emb: Option<usize>,
    gru_dx: GruIds,
    gru_px: Option<GruIds>,
    drug_emb: usize,
    gcn_ehr: usize,
    ddi_encoder: DdiEncoderIds,
    beta: usize,
    query_proj: usize,
    mhca: Option<[usize; 4]>,
    out_w: usize,
    out_b: usize,
}

/// Expected parameter names and shapes for a configuration, in store order.
fn param_specs(config: &ModelConfig, variant: Variant, dims: &ModelDims) -> Vec<(String, Vec<usize>)> {
    let (d, h) = (config.emb_dim, config.gru_hidden);
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let mut add = |name: &str, shape: &[usize]| specs.push((name.to_string(), shape.to_vec()));
    add("dx_embedding", &[dims.n_diagnoses, d]);
    if config.use_procedures {
        add("px_embedding", &[dims.n_procedures, d]);
    }
    let streams: &[&str] = if config.use_procedures { &["gru_dx", "gru_px"] } else { &["gru_dx"] };
    for s in streams {
        add(&format!("{s}.w_x"), &[d, 3 * h]);
        add(&format!("{s}.w_h"), &[h, 3 * h]);
        add(&format!("{s}.b_x"), &[1, 3 * h]);
        add(&format!("{s}.b_h"), &[1, 3 * h]);
    }
    add("drug_embedding", &[dims.n_medications, d]);
    add("gcn_ehr.w", &[d, d]);
    if variant.uses_gat() {
        let dh = d / config.gat_heads;
        for k in 0..config.gat_heads {
            add(&format!("gat.head{k}.w"), &[d, dh]);
            add(&format!("gat.head{k}.att"), &[1, 2 * dh]);
        }
    } else {
        add("gcn_ddi.w", &[d, d]);
    }
    add("memory.beta", &[1]);
    add("query_proj", &[config.query_dim(), d]);
    if variant.uses_mhca() {
        for w in ["w_q", "w_k", "w_v", "w_o"] {
            add(&format!("mhca.{w}"), &[d, d]);
        }
    }
    add("output.w", &[3 * d, dims.n_medications]);
    add("output.b", &[1, dims.n_medications]);
    specs
}

fn layout_of(config: &ModelConfig, variant: Variant, store: &ParamStore<impl Scalar>) -> Layout {
    let id = |n: &str| store.index_of(n).expect("parameter present");
    let gru = |s: &str| GruIds {
        w_x: id(&format!("{s}.w_x")),
        w_h: id(&format!("{s}.w_h")),
        b_x: id(&format!("{s}.b_x")),
        b_h: id(&format!("{s}.b_h")),
    };
    Layout {
        dx_emb: id("dx_embedding"),
        px_emb: config.use_procedures.then(|| id("px_embedding")),
        gru_dx: gru("gru_dx"),
        gru_px: config.use_procedures.then(|| gru("gru_px")),
        drug_emb: id("drug_embedding"),
        gcn_ehr: id("gcn_ehr.w"),
        ddi_encoder: if variant.uses_gat() {
            DdiEncoderIds::Gat(
                (0..config.gat_heads)
                    .map(|k| (id(&format!("gat.head{k}.w")), id(&format!("gat.head{k}.att"))))
                    .collect(),
            )
        } else {
            DdiEncoderIds::Gcn(id("gcn_ddi.w"))
        },
        beta: id("memory.beta"),
        query_proj: id("query_proj"),
        mhca: variant
            .uses_mhca()
            .then(|| [id("mhca.w_q"), id("mhca.w_k"), id("mhca.w_v"), id("mhca.w_o")]),
        out_w: id("output.w"),
        out_b: id("output.b"),
    }
}

/// Graph-derived constants the forward pass needs.
#[derive(Clone, Debug)]
struct GraphConsts<T> {
    ehr_norm: Tensor<T>,
    ddi_norm: Tensor<T>,
    ddi_edges: EdgeIndex,
    ddi_dense: Tensor<T>,
}

/// Parameters bound onto one tape. Trainable bindings put every tensor on
/// the tape up front; inference bindings are lazy and read embedding rows
/// straight from the store.
pub struct Bound {
    vars: Vec<Option<Var>>,
    trainable: bool,
}

impl Bound {
    /// `(param index, var)` for every parameter bound so far.
    pub fn bound_vars(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars.iter().enumerate().filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

/// Memory keys plus the GAT attention used to build them.
pub struct MemoryKeys {
    pub keys: Var,
    pub gat_attention: Vec<Var>,
}

pub struct VisitOutput {
    /// 1-based visit index predicted.
    pub t: usize,
    pub logits: Var,
    pub scores: Var,
    pub memory_attention: Var,
    pub history_attention: Option<Var>,
    pub mhca_attention: Vec<Var>,
}

/// The medication recommendation network.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub variant: Variant,
    pub dims: ModelDims,
    pub params: ParamStore<T>,
    ehr_graph: Adjacency,
    ddi_graph: Adjacency,
    layout: Layout,
    consts: GraphConsts<T>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized model. Projections are uniform in `±1/√fan_in`,
    /// biases zero, embedding tables uniform in `±4` (a mean over ~10 codes then
    /// feeds the GRUs at roughly unit scale), `β = 0.1`.
    pub fn new(
        config: ModelConfig,
        variant: Variant,
        dims: ModelDims,
        ehr_graph: &Adjacency,
        ddi_graph: &Adjacency,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape) in param_specs(&config, variant, &dims) {
            let t = if name.ends_with("embedding") {
                uniform_symmetric(&mut rng, shape, 4.0)
            } else if name.contains(".b") && !name.contains("beta") {
                Tensor::zeros(shape)
            } else if name == "memory.beta" {
                Tensor::scalar(T::of(0.1))
            } else if name.ends_with(".att") {
                let fan = shape[1];
                uniform_symmetric(&mut rng, shape, 1.0 / Float::sqrt(fan as f64))
            } else {
                uniform_fan_in(&mut rng, shape[0], shape[1])
            };
            params.push(&name, t);
        }
        Self::from_params(config, variant, dims, ehr_graph, ddi_graph, params)
    }

    /// Wraps existing parameters, checking every name and shape.
    pub fn from_params(
        config: ModelConfig,
        variant: Variant,
        dims: ModelDims,
        ehr_graph: &Adjacency,
        ddi_graph: &Adjacency,
        params: ParamStore<T>,
    ) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config, variant, &dims);
        if specs.len() != params.len() {
            return Err(shape_err("model", format!("expected {} parameters, got {}", specs.len(), params.len())));
        }
        for ((name, shape), (pn, pt)) in specs.iter().zip(params.iter()) {
            if name != pn || shape.as_slice() != pt.shape() {
                return Err(shape_err("model", format!("parameter {pn} {:?}, expected {name} {:?}", pt.shape(), shape)));
            }
        }
        for (g, what) in [(ehr_graph, "EHR"), (ddi_graph, "DDI")] {
            if g.n() != dims.n_medications {
                return Err(Error::VocabMismatch(format!(
                    "{what} graph has {} nodes, medication vocabulary {}",
                    g.n(),
                    dims.n_medications
                )));
            }
        }
        let n = dims.n_medications;
        let ddi_dense = Tensor::new(vec![n, n], ddi_graph.to_dense().into_iter().map(T::of).collect())?;
        let consts = GraphConsts {
            ehr_norm: layers::normalized_adjacency(ehr_graph),
            ddi_norm: layers::normalized_adjacency(ddi_graph),
            ddi_edges: to_edge_index(ddi_graph),
            ddi_dense,
        };
        let layout = layout_of(&config, variant, &params);
        Ok(Model {
            config,
            variant,
            dims,
            params,
            ehr_graph: ehr_graph.clone(),
            ddi_graph: ddi_graph.clone(),
            layout,
            consts,
        })
    }

    pub fn ehr_graph(&self) -> &Adjacency {
        &self.ehr_graph
    }

    pub fn ddi_graph(&self) -> &Adjacency {
        &self.ddi_graph
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model::from_params(
            self.config.clone(),
            self.variant,
            self.dims,
            &self.ehr_graph,
            &self.ddi_graph,
            self.params.cast(),
        )
        .expect("layout unchanged by cast")
    }

    pub fn bind_trainable(&self, tape: &mut Tape<T>) -> Bound {
        let vars = self.params.tensors().iter().map(|t| Some(tape.param(t.clone()))).collect();
        Bound { vars, trainable: true }
    }

    pub fn bind_frozen(&self) -> Bound {
        Bound { vars: vec![None; self.params.len()], trainable: false }
    }

    fn var(&self, tape: &mut Tape<T>, b: &mut Bound, id: usize) -> Var {
        *b.vars[id].get_or_insert_with(|| tape.constant(self.params.tensors()[id].clone()))
    }

    fn gru(&self, tape: &mut Tape<T>, b: &mut Bound, ids: &GruIds) -> GruVars {
        GruVars {
            w_x: self.var(tape, b, ids.w_x),
            w_h: self.var(tape, b, ids.w_h),
            b_x: self.var(tape, b, ids.b_x),
            b_h: self.var(tape, b, ids.b_h),
        }
    }

    /// Mean of the embedding rows for `codes`, as `[1, d]`.
    fn pooled(&self, tape: &mut Tape<T>, b: &mut Bound, table: usize, codes: &[usize]) -> Result<Var> {
        if codes.is_empty() {
            let d = self.config.emb_dim;
            return Ok(tape.constant(Tensor::zeros(vec![1, d])));
        }
        if b.trainable {
            let t = self.var(tape, b, table);
            let rows = tape.gather(t, codes)?;
            return tape.mean(rows, Axis::Rows);
        }
        let t = &self.params.tensors()[table];
        let d = t.cols();
        let mut acc = vec![T::zero(); d];
        for &c in codes {
            if c >= t.rows() {
                return Err(Error::IndexOutOfRange { index: c, size: t.rows() });
            }
            for (a, &v) in acc.iter_mut().zip(t.row_slice(c)) {
                *a = *a + v;
            }
        }
        let k = T::of(codes.len() as f64);
        Ok(tape.constant(Tensor::row(acc.into_iter().map(|v| v / k).collect())))
    }

    /// Memory keys `M = GCN(A_ehr) - β · DDI-encoder(A_ddi)` over the drug embeddings.
    pub fn memory_keys(&self, tape: &mut Tape<T>, b: &mut Bound) -> Result<MemoryKeys> {
        let l = &self.layout;
        let x = self.var(tape, b, l.drug_emb);
        let ehr_norm = tape.constant(self.consts.ehr_norm.clone());
        let w_ehr = self.var(tape, b, l.gcn_ehr);
        let z_ehr = layers::gcn_forward(tape, x, ehr_norm, w_ehr)?;
        let (z_ddi, gat_attention) = match &l.ddi_encoder {
            DdiEncoderIds::Gcn(w) => {
                let a = tape.constant(self.consts.ddi_norm.clone());
                let w = self.var(tape, b, *w);
                (layers::gcn_forward(tape, x, a, w)?, Vec::new())
            }
            DdiEncoderIds::Gat(heads) => {
                let heads = heads.iter().map(|&(w, a)| (self.var(tape, b, w), self.var(tape, b, a))).collect();
                let out = layers::gat_forward(
                    tape,
                    x,
                    &self.consts.ddi_edges,
                    &GatVars { heads },
                    self.config.leaky_relu_slope,
                    self.config.dropout,
                )?;
                (out.z, out.attention)
            }
        };
        let beta = self.var(tape, b, l.beta);
        let keys = layers::memory_keys(tape, z_ehr, z_ddi, beta)?;
        Ok(MemoryKeys { keys, gat_attention })
    }

    /// Patient queries `q_1 .. q_upto` from the dual GRU encoder.
    pub fn encode_patient(&self, tape: &mut Tape<T>, b: &mut Bound, patient: &PatientRecord, upto: usize) -> Result<Vec<Var>> {
        if upto == 0 || upto > patient.visits.len() {
            return Err(Error::IndexOutOfRange { index: upto, size: patient.visits.len() });
        }
        let l = self.layout.clone();
        let h0 = Tensor::zeros(vec![1, self.config.gru_hidden]);
        let mut h_dx = tape.constant(h0.clone());
        let mut h_px = tape.constant(h0);
        let gru_dx = self.gru(tape, b, &l.gru_dx);
        let gru_px = l.gru_px.as_ref().map(|ids| self.gru(tape, b, ids));
        let mut queries = Vec::with_capacity(upto);
        for visit in &patient.visits[..upto] {
            if visit.diagnoses.is_empty() {
                return Err(Error::InvalidRecord("visit has no diagnoses".into()));
            }
            let x = self.pooled(tape, b, l.dx_emb, &visit.diagnoses)?;
            let x = tape.dropout(x, self.config.dropout)?;
            h_dx = layers::gru_step(tape, x, h_dx, &gru_dx)?;
            let q = match (&gru_px, l.px_emb) {
                (Some(g), Some(table)) => {
                    let x = self.pooled(tape, b, table, &visit.procedures)?;
                    let x = tape.dropout(x, self.config.dropout)?;
                    h_px = layers::gru_step(tape, x, h_px, g)?;
                    tape.concat(&[h_dx, h_px], Axis::Cols)?
                }
                _ => h_dx,
            };
            queries.push(q);
        }
        Ok(queries)
    }

    /// Forward for visits `from ..= upto` (1-based) of one patient.
    pub fn patient_forward(
        &self,
        tape: &mut Tape<T>,
        b: &mut Bound,
        keys: Var,
        patient: &PatientRecord,
        from: usize,
        upto: usize,
    ) -> Result<Vec<VisitOutput>> {
        if from == 0 || from > upto {
            return Err(Error::IndexOutOfRange { index: from, size: upto });
        }
        let queries = self.encode_patient(tape, b, patient, upto)?;
        let l = self.layout.clone();
        let proj = self.var(tape, b, l.query_proj);
        let w_out = self.var(tape, b, l.out_w);
        let b_out = self.var(tape, b, l.out_b);
        let mhca = l.mhca.map(|[q, k, v, o]| MhcaVars {
            w_q: self.var(tape, b, q),
            w_k: self.var(tape, b, k),
            w_v: self.var(tape, b, v),
            w_o: self.var(tape, b, o),
        });
        let n_rx = self.dims.n_medications;
        let mut outputs = Vec::with_capacity(upto + 1 - from);
        for t in from..=upto {
            let q = queries[t - 1];
            let q_tilde = tape.matmul(q, proj)?;
            let (fact1, memory_attention) = layers::memory_read(tape, q_tilde, keys)?;
            let history = if t > 1 {
                let q_hist = tape.concat(&queries[..t - 1], Axis::Rows)?;
                let mut y = Vec::with_capacity((t - 1) * n_rx);
                for v in &patient.visits[..t - 1] {
                    y.extend(v.multi_hot(n_rx).into_iter().map(T::of));
                }
                let y_hist = tape.constant(Tensor::new(vec![t - 1, n_rx], y)?);
                Some((q_hist, y_hist))
            } else {
                None
            };
            let (fact2, history_attention) = layers::dynamic_read(tape, q, history, keys)?;
            let (fused, mhca_attention) = match &mhca {
                Some(p) => layers::mhca_fuse(tape, q_tilde, fact1, fact2, p, self.config.mhca_heads)?,
                None => (tape.concat(&[q_tilde, fact1, fact2], Axis::Cols)?, Vec::new()),
            };
            let (logits, scores) = layers::predict(tape, fused, w_out, b_out)?;
            outputs.push(VisitOutput { t, logits, scores, memory_attention, history_attention, mhca_attention });
        }
        Ok(outputs)
    }

    /// Constant dense DDI adjacency for the loss.
    pub fn ddi_matrix(&self, tape: &mut Tape<T>) -> Var {
        tape.constant(self.consts.ddi_dense.clone())
    }

    /// Loss for one predicted visit (`t ≥ 1`, targets are that visit's medications).
    pub fn visit_loss(&self, tape: &mut Tape<T>, out: &VisitOutput, patient: &PatientRecord, a_ddi: Var, gamma: f64) -> Result<layers::LossParts> {
        let targets: Vec<T> =
            patient.visits[out.t - 1].multi_hot(self.dims.n_medications).into_iter().map(T::of).collect();
        layers::visit_loss(tape, out.logits, out.scores, &targets, a_ddi, gamma)
    }

    /// Recommended set from scores: every drug at or above the decision
    /// threshold, or the single best drug when none qualify.
    pub fn recommend(&self, scores: &[f64]) -> Vec<usize> {
        threshold_set(scores, self.config.decision_threshold)
    }
}

/// `{i : s_i ≥ τ}`, falling back to the top-1 index (lowest index on ties).
pub fn threshold_set(scores: &[f64], tau: f64) -> Vec<usize> {
    let set: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= tau).collect();
    if !set.is_empty() || scores.is_empty() {
        return set;
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    vec![best]
}

/// Eval-mode scoring with memory keys computed once.
pub struct InferenceSession<'m, T> {
    model: &'m Model<T>,
    keys: Tensor<T>,
}

impl<'m, T: Scalar> InferenceSession<'m, T> {
    pub fn new(model: &'m Model<T>) -> Result<Self> {
        let mut tape = Tape::eval();
        let mut b = model.bind_frozen();
        let keys = model.memory_keys(&mut tape, &mut b)?.keys;
        Ok(InferenceSession { model, keys: tape.value(keys).clone() })
    }

    pub fn keys(&self) -> &Tensor<T> {
        &self.keys
    }

    /// Scores for visits `from ..= upto` (1-based).
    pub fn scores(&self, patient: &PatientRecord, from: usize, upto: usize) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::eval();
        let mut b = self.model.bind_frozen();
        let keys = tape.constant(self.keys.clone());
        let outs = self.model.patient_forward(&mut tape, &mut b, keys, patient, from, upto)?;
        Ok(outs.iter().map(|o| tape.value(o.scores).data().iter().map(|v| v.as_f64()).collect()).collect())
    }
}
