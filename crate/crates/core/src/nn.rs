//! Layers used by the policy.
//!
//! Parameters live in a flat [`ParamStore`]; layers keep [`ParamId`]s into it.
//! A [`Session`] binds every stored tensor to a [`Tape`] once, so one forward
//! pass (an encoder plus all decoder steps of an episode) shares a single set
//! of leaves and their gradients can be read back per parameter.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::numcore::{Gradients, Tape, TapeError, Tensor, Var};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named tensors in registration order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, t: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Replaces all tensors; shapes and count must match.
    pub fn load(&mut self, tensors: Vec<Tensor>) -> Result<(), TapeError> {
        if tensors.len() != self.tensors.len() {
            return Err(TapeError::Index { op: "ParamStore::load" });
        }
        for (a, b) in self.tensors.iter().zip(&tensors) {
            if a.shape() != b.shape() {
                return Err(TapeError::Shape {
                    op: "ParamStore::load",
                    left: a.shape(),
                    right: b.shape(),
                });
            }
        }
        self.tensors = tensors;
        Ok(())
    }
}

/// A tape with every parameter of a store bound as a leaf.
pub struct Session<'s> {
    pub tape: Tape,
    store: &'s ParamStore,
    vars: Vec<Var>,
}

impl<'s> Session<'s> {
    /// `trainable = false` binds parameters as constants (no gradient bookkeeping).
    pub fn new(store: &'s ParamStore, trainable: bool) -> Self {
        let tape = Tape::new();
        let vars = store
            .tensors()
            .iter()
            .map(|t| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) })
            .collect();
        Self { tape, store, vars }
    }

    #[inline]
    pub fn p(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    /// Per-parameter gradients of `loss`, zero where unreachable.
    pub fn gradients(&self, loss: Var) -> Result<Vec<Tensor>, TapeError> {
        let grads: Gradients = self.tape.backward(loss)?;
        Ok(self
            .vars
            .iter()
            .zip(self.store.tensors())
            .map(|(&v, t)| grads.get_or_zero(v, t.shape()))
            .collect())
    }
}

fn init<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(rows, cols, 1.0 / util::sqrt(fan_in.max(1) as f64), rng)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.add(alloc::format!("{name}.w"), init(d_in, d_out, d_in, rng));
        let b = bias.then(|| store.add(alloc::format!("{name}.b"), init(1, d_out, d_in, rng)));
        Self { w, b, d_in, d_out }
    }

    pub fn forward(&self, s: &Session<'_>, x: Var) -> Result<Var, TapeError> {
        let y = s.tape.matmul(x, s.p(self.w))?;
        match self.b {
            Some(b) => s.tape.add_row(y, s.p(b)),
            None => Ok(y),
        }
    }
}

/// Two linear layers with a ReLU between them (and optionally after).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedForward {
    pub l1: Linear,
    pub l2: Linear,
    pub final_relu: bool,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        d_out: usize,
        final_relu: bool,
        rng: &mut R,
    ) -> Self {
        Self {
            l1: Linear::new(store, &alloc::format!("{name}.0"), d_in, d_hidden, true, rng),
            l2: Linear::new(store, &alloc::format!("{name}.1"), d_hidden, d_out, true, rng),
            final_relu,
        }
    }

    pub fn forward(&self, s: &Session<'_>, x: Var) -> Result<Var, TapeError> {
        let h = s.tape.relu(self.l1.forward(s, x)?);
        let y = self.l2.forward(s, h)?;
        Ok(if self.final_relu { s.tape.relu(y) } else { y })
    }
}

/// Batch normalisation over the rows of one instance (nodes or edges).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize, eps: f64) -> Self {
        Self {
            gamma: store.add(alloc::format!("{name}.gamma"), Tensor::filled(1, d, 1.0)),
            beta: store.add(alloc::format!("{name}.beta"), Tensor::zeros(1, d)),
            eps,
        }
    }

    pub fn forward(&self, s: &Session<'_>, x: Var) -> Result<Var, TapeError> {
        s.tape.batch_norm(x, s.p(self.gamma), s.p(self.beta), self.eps)
    }
}

/// `[n, 1]` column `a` and `[n, 1]` column `b` -> `[n, n]` with entry `a_i + b_j`.
fn pairwise_sum(s: &Session<'_>, a: Var, b: Var, n: usize) -> Result<Var, TapeError> {
    let ones_row = s.tape.constant(Tensor::filled(1, n, 1.0));
    let ones_col = s.tape.constant(Tensor::filled(n, 1, 1.0));
    let left = s.tape.matmul(a, ones_row)?;
    let bt = s.tape.transpose(b);
    let right = s.tape.matmul(ones_col, bt)?;
    s.tape.add(left, right)
}

/// Graph attention restricted to time-window neighbours.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GatLayer {
    pub w: Linear,
    /// `1 x 2*d_out`: source half then neighbour half.
    pub a: ParamId,
    pub d_out: usize,
}

impl GatLayer {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let w = Linear::new(store, &alloc::format!("{name}.W"), d_in, d_out, false, rng);
        let a = store.add(alloc::format!("{name}.a"), init(1, 2 * d_out, d_out, rng));
        Self { w, a, d_out }
    }

    /// Attention coefficients `[n, n]` (rows sum to one over neighbours) and
    /// the projected features `W h`.
    pub fn coefficients(&self, s: &Session<'_>, h: Var, neighbours: &[bool]) -> Result<(Var, Var), TapeError> {
        let n = s.tape.shape(h)[0];
        let z = self.w.forward(s, h)?;
        let a = s.p(self.a);
        let a_src = s.tape.transpose(s.tape.slice_cols(a, 0, self.d_out)?);
        let a_dst = s.tape.transpose(s.tape.slice_cols(a, self.d_out, 2 * self.d_out)?);
        let src = s.tape.matmul(z, a_src)?;
        let dst = s.tape.matmul(z, a_dst)?;
        let e = s.tape.relu(pairwise_sum(s, src, dst, n)?);
        Ok((s.tape.softmax_masked(e, neighbours)?, z))
    }

    /// `h'_i = ReLU(sum_j alpha_ij W h_j)`; `neighbours` is the `n*n` adjacency.
    pub fn forward(&self, s: &Session<'_>, h: Var, neighbours: &[bool]) -> Result<Var, TapeError> {
        let (alpha, z) = self.coefficients(s, h, neighbours)?;
        Ok(s.tape.relu(s.tape.matmul(alpha, z)?))
    }
}

/// Scoring used by the edge-enhanced attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeScoring {
    /// `ReLU(w_k . [h_i || h_j || e_ij])`.
    Additive,
    /// `(W_Q h_i) . (W_K h_j) / sqrt(d_k) + w_k . e_ij`.
    DotProduct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scorer {
    Additive { src: ParamId, dst: ParamId },
    Dot { wq: ParamId, wk: ParamId },
}

/// Multi-head self-attention whose scores see per-pair edge embeddings,
/// followed by a feed-forward sublayer; both sublayers use skip + batch norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeAttnLayer {
    scorer: Scorer,
    /// `d_e x K`, absent when edges are not used.
    edge: Option<ParamId>,
    /// Per-head value matrices side by side, `d x d`.
    values: ParamId,
    bn1: BatchNorm,
    ff: FeedForward,
    bn2: BatchNorm,
    heads: usize,
    d: usize,
}

impl EdgeAttnLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d: usize,
        d_edge: Option<usize>,
        heads: usize,
        d_ff: usize,
        scoring: EdgeScoring,
        bn_eps: f64,
        rng: &mut R,
    ) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "hidden dim must split evenly over heads");
        let scorer = match scoring {
            EdgeScoring::Additive => {
                let fan = 2 * d + d_edge.unwrap_or(0);
                Scorer::Additive {
                    src: store.add(alloc::format!("{name}.score_src"), init(d, heads, fan, rng)),
                    dst: store.add(alloc::format!("{name}.score_dst"), init(d, heads, fan, rng)),
                }
            }
            EdgeScoring::DotProduct => Scorer::Dot {
                wq: store.add(alloc::format!("{name}.wq"), init(d, d, d, rng)),
                wk: store.add(alloc::format!("{name}.wk"), init(d, d, d, rng)),
            },
        };
        let edge = d_edge.map(|de| store.add(alloc::format!("{name}.score_edge"), init(de, heads, 2 * d + de, rng)));
        Self {
            scorer,
            edge,
            values: store.add(alloc::format!("{name}.values"), init(d, d, d, rng)),
            bn1: BatchNorm::new(store, &alloc::format!("{name}.bn1"), d, bn_eps),
            ff: FeedForward::new(store, &alloc::format!("{name}.ff"), d, d_ff, d, false, rng),
            bn2: BatchNorm::new(store, &alloc::format!("{name}.bn2"), d, bn_eps),
            heads,
            d,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Per-head coefficient matrices `[n, n]`.
    /// `edges` is `[n*n, d_e]` (row `i*n + j` for pair `(i, j)`), `neighbours` the `n*n` keep mask.
    pub fn coefficients(&self, s: &Session<'_>, h: Var, edges: Option<Var>, neighbours: &[bool]) -> Result<Vec<Var>, TapeError> {
        let [n, d] = s.tape.shape(h);
        if d != self.d {
            return Err(TapeError::Shape {
                op: "edge_attn",
                left: [n, d],
                right: [n, self.d],
            });
        }
        let edge_scores = match (self.edge, edges) {
            (Some(w), Some(e)) => {
                let es = s.tape.shape(e);
                if es[0] != n * n {
                    return Err(TapeError::Shape {
                        op: "edge_attn",
                        left: [n, d],
                        right: es,
                    });
                }
                Some(s.tape.matmul(e, s.p(w))?)
            }
            (None, _) => None,
            (Some(_), None) => {
                return Err(TapeError::Shape {
                    op: "edge_attn (missing edge features)",
                    left: [n, d],
                    right: [0, 0],
                })
            }
        };
        let dk = d / self.heads;
        let mut out = Vec::with_capacity(self.heads);
        match self.scorer {
            Scorer::Additive { src, dst } => {
                let a = s.tape.matmul(h, s.p(src))?;
                let b = s.tape.matmul(h, s.p(dst))?;
                for k in 0..self.heads {
                    let mut score = pairwise_sum(s, s.tape.slice_cols(a, k, k + 1)?, s.tape.slice_cols(b, k, k + 1)?, n)?;
                    if let Some(es) = edge_scores {
                        let ek = s.tape.reshape(s.tape.slice_cols(es, k, k + 1)?, n, n)?;
                        score = s.tape.add(score, ek)?;
                    }
                    out.push(s.tape.softmax_masked(s.tape.relu(score), neighbours)?);
                }
            }
            Scorer::Dot { wq, wk } => {
                let q = s.tape.matmul(h, s.p(wq))?;
                let kk = s.tape.matmul(h, s.p(wk))?;
                for k in 0..self.heads {
                    let qh = s.tape.slice_cols(q, k * dk, (k + 1) * dk)?;
                    let kh = s.tape.slice_cols(kk, k * dk, (k + 1) * dk)?;
                    let mut score = s.tape.scale(s.tape.matmul(qh, s.tape.transpose(kh))?, 1.0 / util::sqrt(dk as f64));
                    if let Some(es) = edge_scores {
                        let ek = s.tape.reshape(s.tape.slice_cols(es, k, k + 1)?, n, n)?;
                        score = s.tape.add(score, ek)?;
                    }
                    out.push(s.tape.softmax_masked(score, neighbours)?);
                }
            }
        }
        Ok(out)
    }

    pub fn forward(&self, s: &Session<'_>, h: Var, edges: Option<Var>, neighbours: &[bool]) -> Result<Var, TapeError> {
        let alphas = self.coefficients(s, h, edges, neighbours)?;
        let dk = self.d / self.heads;
        let v = s.tape.matmul(h, s.p(self.values))?;
        let mut heads = Vec::with_capacity(self.heads);
        for (k, alpha) in alphas.into_iter().enumerate() {
            let vk = s.tape.slice_cols(v, k * dk, (k + 1) * dk)?;
            heads.push(s.tape.matmul(alpha, vk)?);
        }
        let mixed = s.tape.relu(s.tape.concat_cols(&heads)?);
        let h1 = self.bn1.forward(s, s.tape.add(h, mixed)?)?;
        let f = self.ff.forward(s, h1)?;
        self.bn2.forward(s, s.tape.add(h1, f)?)
    }
}

/// Keys and values projected once and reused across decoding steps.
#[derive(Debug, Clone, Copy)]
pub struct KeyValues {
    pub keys: Var,
    pub values: Var,
}

/// Multi-head attention of one query over a set of keys (the glimpse).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mha {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub d: usize,
}

impl Mha {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_query: usize, d_key: usize, d: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && d.is_multiple_of(heads), "hidden dim must split evenly over heads");
        Self {
            wq: store.add(alloc::format!("{name}.wq"), init(d_query, d, d_query, rng)),
            wk: store.add(alloc::format!("{name}.wk"), init(d_key, d, d_key, rng)),
            wv: store.add(alloc::format!("{name}.wv"), init(d_key, d, d_key, rng)),
            wo: store.add(alloc::format!("{name}.wo"), init(d, d, d, rng)),
            heads,
            d,
        }
    }

    pub fn project(&self, s: &Session<'_>, src: Var) -> Result<KeyValues, TapeError> {
        Ok(KeyValues {
            keys: s.tape.matmul(src, s.p(self.wk))?,
            values: s.tape.matmul(src, s.p(self.wv))?,
        })
    }

    /// Glimpse `[1, d]`; `keep` marks the keys that may be attended to.
    pub fn attend(&self, s: &Session<'_>, query: Var, kv: KeyValues, keep: &[bool]) -> Result<Var, TapeError> {
        let q = s.tape.matmul(query, s.p(self.wq))?;
        let dk = self.d / self.heads;
        let scale = 1.0 / util::sqrt(dk as f64);
        let mut heads = Vec::with_capacity(self.heads);
        for k in 0..self.heads {
            let qh = s.tape.slice_cols(q, k * dk, (k + 1) * dk)?;
            let kh = s.tape.slice_cols(kv.keys, k * dk, (k + 1) * dk)?;
            let vh = s.tape.slice_cols(kv.values, k * dk, (k + 1) * dk)?;
            let scores = s.tape.scale(s.tape.matmul(qh, s.tape.transpose(kh))?, scale);
            let alpha = s.tape.softmax_masked(scores, keep)?;
            heads.push(s.tape.matmul(alpha, vh)?);
        }
        let cat = s.tape.concat_cols(&heads)?;
        s.tape.matmul(cat, s.p(self.wo))
    }
}

/// Single-head compatibility `C * tanh(q . k / sqrt(d))`, unmasked.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Compat {
    pub wq: ParamId,
    pub wk: ParamId,
    pub d: usize,
    pub clip: f64,
}

impl Compat {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d_query: usize, d_key: usize, d: usize, clip: f64, rng: &mut R) -> Self {
        assert!(clip > 0.0, "clip must be positive");
        Self {
            wq: store.add(alloc::format!("{name}.wq"), init(d_query, d, d_query, rng)),
            wk: store.add(alloc::format!("{name}.wk"), init(d_key, d, d_key, rng)),
            d,
            clip,
        }
    }

    pub fn project_keys(&self, s: &Session<'_>, src: Var) -> Result<Var, TapeError> {
        s.tape.matmul(src, s.p(self.wk))
    }

    /// Logits `[1, m]`, each within `[-clip, clip]`.
    pub fn logits(&self, s: &Session<'_>, query: Var, keys: Var) -> Result<Var, TapeError> {
        let q = s.tape.matmul(query, s.p(self.wq))?;
        let raw = s.tape.matmul(q, s.tape.transpose(keys))?;
        let t = s.tape.tanh(s.tape.scale(raw, 1.0 / util::sqrt(self.d as f64)));
        Ok(s.tape.scale(t, self.clip))
    }
}

/// Logits with masked entries set to `-inf`, for reporting.
pub fn masked_logits(logits: &Tensor, keep: &[bool]) -> Vec<f64> {
    logits
        .data()
        .iter()
        .zip(keep)
        .map(|(&u, &k)| if k { u } else { f64::NEG_INFINITY })
        .collect()
}

/// `n*n` keep mask with every entry set.
pub fn full_neighbourhood(n: usize) -> Vec<bool> {
    vec![true; n * n]
}
