//! Bidirectional LSTM encoder with additive attention, a ReLU dense layer
//! and a sigmoid output, trained on weighted soft labels with Adam.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize, Segment};
use crate::embedding::EmbeddingTable;
use crate::{Error, Result, TrainError};

pub const CHECKPOINT_FORMAT: &str = "abintent-sequence-model/1";
/// Examples per gradient task; sums are combined in chunk order.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub max_tokens: usize,
    pub embedding_dim: usize,
    pub recurrent_units: usize,
    pub attention_dim: usize,
    pub dense_units: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub train_fraction: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            max_tokens: 200,
            embedding_dim: 200,
            recurrent_units: 200,
            attention_dim: 400,
            dense_units: 50,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            max_epochs: 50,
            patience: 3,
            train_fraction: 0.85,
            batch_size: 32,
            seed: 17,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("max_tokens", self.max_tokens),
            ("embedding_dim", self.embedding_dim),
            ("recurrent_units", self.recurrent_units),
            ("dense_units", self.dense_units),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.attention_dim != 2 * self.recurrent_units {
            return Err(Error::Config(format!(
                "attention_dim {} must equal twice recurrent_units ({})",
                self.attention_dim,
                2 * self.recurrent_units
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1]", self.train_fraction)));
        }
        if !(self.learning_rate > 0.0 && self.epsilon > 0.0) {
            return Err(Error::Config("learning_rate and epsilon must be positive".into()));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    /// `floor(n * train_fraction)`, at least one and at most `n`.
    pub fn train_size(&self, n: usize) -> usize {
        ((n as f64 * self.train_fraction + 1e-9).floor() as usize).clamp(1.min(n), n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// Input weights, gate blocks i, f, g, o stacked: (4U x D).
    pub w: Array2<f64>,
    /// Recurrent weights (4U x U).
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

/// All trainable tensors. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub forward: Lstm,
    pub backward: Lstm,
    /// Attention projection (A x 2U), bias (A) and context vector (A).
    pub att_w: Array2<f64>,
    pub att_b: Array1<f64>,
    pub att_v: Array1<f64>,
    pub dense_w: Array2<f64>,
    pub dense_b: Array1<f64>,
    pub out_w: Array1<f64>,
    pub out_b: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

impl Params {
    pub fn zeros(c: &ModelConfig) -> Self {
        let (d, u, a, n) = (c.embedding_dim, c.recurrent_units, c.attention_dim, c.dense_units);
        let lstm = || Lstm {
            w: Array2::zeros((4 * u, d)),
            u: Array2::zeros((4 * u, u)),
            b: Array1::zeros(4 * u),
        };
        Params {
            forward: lstm(),
            backward: lstm(),
            att_w: Array2::zeros((a, 2 * u)),
            att_b: Array1::zeros(a),
            att_v: Array1::zeros(a),
            dense_w: Array2::zeros((n, 2 * u)),
            dense_b: Array1::zeros(n),
            out_w: Array1::zeros(n),
            out_b: Array1::zeros(1),
        }
    }

    pub fn init(c: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let (d, u, a, n) = (c.embedding_dim, c.recurrent_units, c.attention_dim, c.dense_units);
        let mut lstm = || {
            let mut b = Array1::zeros(4 * u);
            b.slice_mut(s![u..2 * u]).fill(1.0);
            Lstm {
                w: glorot(rng, 4 * u, d),
                u: glorot(rng, 4 * u, u),
                b,
            }
        };
        let forward = lstm();
        let backward = lstm();
        let att_w = glorot(rng, a, 2 * u);
        let att_v = glorot(rng, a, 1).remove_axis(Axis(1));
        let dense_w = glorot(rng, n, 2 * u);
        let out_w = glorot(rng, n, 1).remove_axis(Axis(1));
        Params {
            forward,
            backward,
            att_w,
            att_b: Array1::zeros(a),
            att_v,
            dense_w,
            dense_b: Array1::zeros(n),
            out_w,
            out_b: Array1::zeros(1),
        }
    }

    /// Flat views of every tensor in a fixed order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        fn f(x: Option<&[f64]>) -> &[f64] {
            x.expect("parameters are in standard layout")
        }
        vec![
            f(self.forward.w.as_slice()),
            f(self.forward.u.as_slice()),
            f(self.forward.b.as_slice()),
            f(self.backward.w.as_slice()),
            f(self.backward.u.as_slice()),
            f(self.backward.b.as_slice()),
            f(self.att_w.as_slice()),
            f(self.att_b.as_slice()),
            f(self.att_v.as_slice()),
            f(self.dense_w.as_slice()),
            f(self.dense_b.as_slice()),
            f(self.out_w.as_slice()),
            f(self.out_b.as_slice()),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        fn f(x: Option<&mut [f64]>) -> &mut [f64] {
            x.expect("parameters are in standard layout")
        }
        vec![
            f(self.forward.w.as_slice_mut()),
            f(self.forward.u.as_slice_mut()),
            f(self.forward.b.as_slice_mut()),
            f(self.backward.w.as_slice_mut()),
            f(self.backward.u.as_slice_mut()),
            f(self.backward.b.as_slice_mut()),
            f(self.att_w.as_slice_mut()),
            f(self.att_b.as_slice_mut()),
            f(self.att_v.as_slice_mut()),
            f(self.dense_w.as_slice_mut()),
            f(self.dense_b.as_slice_mut()),
            f(self.out_w.as_slice_mut()),
            f(self.out_b.as_slice_mut()),
        ]
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn add_assign(&mut self, other: &Params) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    fn scale(&mut self, k: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= k);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `|2p - 1|`: zero at 0.5, one at 0 and 1.
pub fn example_weight(p: f64) -> f64 {
    (2.0 * p - 1.0).abs()
}

/// Supervision target: `round(p)`, with 0.5 mapped to 0 (its weight is zero).
pub fn hard_target(p: f64) -> f64 {
    if p > 0.5 {
        1.0
    } else {
        0.0
    }
}

struct Step {
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    c: Array1<f64>,
    tc: Array1<f64>,
    h: Array1<f64>,
}

fn processing_order(t: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..t).rev().collect()
    } else {
        (0..t).collect()
    }
}

fn lstm_forward(l: &Lstm, x: ArrayView2<f64>, order: &[usize]) -> Vec<Step> {
    let u = l.b.len() / 4;
    let mut h = Array1::zeros(u);
    let mut c = Array1::zeros(u);
    let mut steps = Vec::with_capacity(order.len());
    for &t in order {
        let z = l.w.dot(&x.row(t)) + l.u.dot(&h) + &l.b;
        let i = z.slice(s![0..u]).mapv(sigmoid);
        let f = z.slice(s![u..2 * u]).mapv(sigmoid);
        let g = z.slice(s![2 * u..3 * u]).mapv(f64::tanh);
        let o = z.slice(s![3 * u..4 * u]).mapv(sigmoid);
        c = &f * &c + &i * &g;
        let tc = c.mapv(f64::tanh);
        h = &o * &tc;
        steps.push(Step {
            i,
            f,
            g,
            o,
            c: c.clone(),
            tc,
            h: h.clone(),
        });
    }
    steps
}

fn outer_acc(acc: &mut Array2<f64>, col: &Array1<f64>, row: ArrayView1<f64>) {
    let a = col.view().insert_axis(Axis(1));
    let b = row.insert_axis(Axis(0));
    general_mat_mul(1.0, &a, &b, 1.0, acc);
}

/// `dh` holds gradients w.r.t. the hidden state at each sequence position.
fn lstm_backward(l: &Lstm, x: ArrayView2<f64>, order: &[usize], steps: &[Step], dh: ArrayView2<f64>, grad: &mut Lstm) {
    let u = l.b.len() / 4;
    let zero = Array1::zeros(u);
    let mut dh_next: Array1<f64> = Array1::zeros(u);
    let mut dc_next: Array1<f64> = Array1::zeros(u);
    let mut dz = Array1::zeros(4 * u);
    for k in (0..order.len()).rev() {
        let t = order[k];
        let st = &steps[k];
        let (c_prev, h_prev) = if k == 0 {
            (&zero, &zero)
        } else {
            (&steps[k - 1].c, &steps[k - 1].h)
        };
        let dht = &dh.row(t) + &dh_next;
        let d_o = &dht * &st.tc;
        let dc = &dc_next + &(&dht * &st.o * &st.tc.mapv(|v| 1.0 - v * v));
        let di = &dc * &st.g;
        let dg = &dc * &st.i;
        let df = &dc * c_prev;
        dc_next = &dc * &st.f;
        dz.slice_mut(s![0..u]).assign(&(&di * &st.i.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![u..2 * u]).assign(&(&df * &st.f.mapv(|v| v * (1.0 - v))));
        dz.slice_mut(s![2 * u..3 * u]).assign(&(&dg * &st.g.mapv(|v| 1.0 - v * v)));
        dz.slice_mut(s![3 * u..4 * u]).assign(&(&d_o * &st.o.mapv(|v| v * (1.0 - v))));
        outer_acc(&mut grad.w, &dz, x.row(t));
        outer_acc(&mut grad.u, &dz, h_prev.view());
        grad.b += &dz;
        dh_next = l.u.t().dot(&dz);
    }
}

struct Forward {
    order_f: Vec<usize>,
    order_b: Vec<usize>,
    steps_f: Vec<Step>,
    steps_b: Vec<Step>,
    /// Concatenated hidden states (T x 2U).
    h: Array2<f64>,
    att_u: Array2<f64>,
    alpha: Array1<f64>,
    context: Array1<f64>,
    dense_pre: Array1<f64>,
    dense: Array1<f64>,
    logit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerShapes {
    pub recurrent: (usize, usize),
    pub attention: usize,
    pub dense: usize,
    pub output: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceModel {
    pub config: ModelConfig,
    pub params: Params,
}

/// One supervised sequence: token vectors (T x D), hard target and weight.
pub struct Example<'a> {
    pub x: ArrayView2<'a, f64>,
    pub target: f64,
    pub weight: f64,
}

impl SequenceModel {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params = Params::init(&config, &mut rng);
        Ok(SequenceModel { config, params })
    }

    pub fn layer_shapes(&self) -> LayerShapes {
        LayerShapes {
            recurrent: (self.config.max_tokens, 2 * self.config.recurrent_units),
            attention: self.config.attention_dim,
            dense: self.config.dense_units,
            output: 1,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    fn run(&self, x: ArrayView2<f64>) -> Forward {
        let p = &self.params;
        let u = self.config.recurrent_units;
        let t = x.nrows().min(self.config.max_tokens);
        let x = x.slice(s![0..t, ..]);
        let order_f = processing_order(t, false);
        let order_b = processing_order(t, true);
        let steps_f = lstm_forward(&p.forward, x, &order_f);
        let steps_b = lstm_forward(&p.backward, x, &order_b);
        let mut h = Array2::zeros((t, 2 * u));
        for (k, &pos) in order_f.iter().enumerate() {
            h.slice_mut(s![pos, 0..u]).assign(&steps_f[k].h);
        }
        for (k, &pos) in order_b.iter().enumerate() {
            h.slice_mut(s![pos, u..2 * u]).assign(&steps_b[k].h);
        }
        let mut att_u = h.dot(&p.att_w.t());
        att_u += &p.att_b;
        att_u.mapv_inplace(f64::tanh);
        let scores = att_u.dot(&p.att_v);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut alpha = scores.mapv(|e| (e - max).exp());
        let z = alpha.sum();
        if z > 0.0 {
            alpha /= z;
        }
        let context = if t == 0 { Array1::zeros(2 * u) } else { h.t().dot(&alpha) };
        let dense_pre = p.dense_w.dot(&context) + &p.dense_b;
        let dense = dense_pre.mapv(|v| v.max(0.0));
        let logit = p.out_w.dot(&dense) + p.out_b[0];
        Forward {
            order_f,
            order_b,
            steps_f,
            steps_b,
            h,
            att_u,
            alpha,
            context,
            dense_pre,
            dense,
            logit,
        }
    }

    /// Score for one sequence of token vectors; rows past `max_tokens` are ignored.
    pub fn forward(&self, x: ArrayView2<f64>) -> f64 {
        sigmoid(self.run(x).logit)
    }

    /// Weighted cross-entropy of one example and its gradient contribution
    /// (both unscaled by batch size).
    fn example_grad(&self, ex: &Example, grad: &mut Params) -> f64 {
        let p = &self.params;
        let u = self.config.recurrent_units;
        let fw = self.run(ex.x);
        let loss = ex.weight * if ex.target > 0.5 { softplus(-fw.logit) } else { softplus(fw.logit) };
        let dlogit = ex.weight * (sigmoid(fw.logit) - ex.target);
        if dlogit == 0.0 {
            return loss;
        }
        grad.out_w.scaled_add(dlogit, &fw.dense);
        grad.out_b[0] += dlogit;
        let mut d_pre = &p.out_w * dlogit;
        d_pre.zip_mut_with(&fw.dense_pre, |d, &z| {
            if z <= 0.0 {
                *d = 0.0
            }
        });
        outer_acc(&mut grad.dense_w, &d_pre, fw.context.view());
        grad.dense_b += &d_pre;
        let t = fw.h.nrows();
        if t == 0 {
            return loss;
        }
        let d_ctx = p.dense_w.t().dot(&d_pre);

        // attention
        let mut d_h = Array2::zeros((t, 2 * u));
        general_mat_mul(
            1.0,
            &fw.alpha.view().insert_axis(Axis(1)),
            &d_ctx.view().insert_axis(Axis(0)),
            0.0,
            &mut d_h,
        );
        let d_alpha = fw.h.dot(&d_ctx);
        let mean = fw.alpha.dot(&d_alpha);
        let d_e = &fw.alpha * &d_alpha.mapv(|v| v - mean);
        grad.att_v += &fw.att_u.t().dot(&d_e);
        let mut d_att_pre = Array2::zeros(fw.att_u.raw_dim());
        general_mat_mul(
            1.0,
            &d_e.view().insert_axis(Axis(1)),
            &p.att_v.view().insert_axis(Axis(0)),
            0.0,
            &mut d_att_pre,
        );
        d_att_pre.zip_mut_with(&fw.att_u, |d, &a| *d *= 1.0 - a * a);
        general_mat_mul(1.0, &d_att_pre.t(), &fw.h, 1.0, &mut grad.att_w);
        grad.att_b += &d_att_pre.sum_axis(Axis(0));
        general_mat_mul(1.0, &d_att_pre, &p.att_w, 1.0, &mut d_h);

        let x = ex.x.slice(s![0..t, ..]);
        lstm_backward(&p.forward, x, &fw.order_f, &fw.steps_f, d_h.slice(s![.., 0..u]), &mut grad.forward);
        lstm_backward(
            &p.backward,
            x,
            &fw.order_b,
            &fw.steps_b,
            d_h.slice(s![.., u..2 * u]),
            &mut grad.backward,
        );
        loss
    }

    /// Batch loss (weighted cross-entropy summed over examples, divided by
    /// batch size) and its gradient. Chunk sums are added in a fixed order,
    /// so the result does not depend on the thread count.
    pub fn loss_and_gradients(&self, batch: &[Example]) -> (f64, Params) {
        let partials: Vec<(f64, Params)> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut g = Params::zeros(&self.config);
                let l = chunk.iter().map(|ex| self.example_grad(ex, &mut g)).sum::<f64>();
                (l, g)
            })
            .collect();
        let mut total = Params::zeros(&self.config);
        let mut loss = 0.0;
        for (l, g) in &partials {
            loss += l;
            total.add_assign(g);
        }
        let n = batch.len().max(1) as f64;
        total.scale(1.0 / n);
        (loss / n, total)
    }

    pub fn predict(&self, data: &dyn SequenceSource) -> Result<Vec<f64>> {
        check_dimension(&self.config, data)?;
        Ok((0..data.len())
            .into_par_iter()
            .map(|i| self.forward(data.sequence(i).view()))
            .collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer(w, &self.checkpoint())?;
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.config.clone(),
            tensors: self.params.tensors().into_iter().map(|t| t.to_vec()).collect(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::Config(format!("unsupported checkpoint format `{}`", ck.format)));
        }
        ck.config.validate()?;
        let mut params = Params::zeros(&ck.config);
        let slots = params.tensors_mut();
        if slots.len() != ck.tensors.len() {
            return Err(Error::Config("checkpoint tensor count mismatch".into()));
        }
        for (slot, data) in slots.into_iter().zip(&ck.tensors) {
            if slot.len() != data.len() {
                return Err(Error::Config("checkpoint tensor shape mismatch".into()));
            }
            slot.copy_from_slice(data);
        }
        Ok(SequenceModel { config: ck.config, params })
    }

    pub fn read(r: impl Read) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_reader(r)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read(std::io::BufReader::new(f))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<Vec<f64>>,
}

/// Encodes sequence `i` on demand so a corpus never has to be held as vectors.
pub trait SequenceSource: Sync {
    fn len(&self) -> usize;
    fn dimension(&self) -> usize;
    fn sequence(&self, i: usize) -> Array2<f64>;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SequenceSource for [Array2<f64>] {
    fn len(&self) -> usize {
        <[Array2<f64>]>::len(self)
    }

    fn dimension(&self) -> usize {
        self.first().map_or(0, |x| x.ncols())
    }

    fn sequence(&self, i: usize) -> Array2<f64> {
        self[i].clone()
    }
}

impl SequenceSource for Vec<Array2<f64>> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn dimension(&self) -> usize {
        self.as_slice().dimension()
    }

    fn sequence(&self, i: usize) -> Array2<f64> {
        self[i].clone()
    }
}

fn check_dimension(config: &ModelConfig, data: &dyn SequenceSource) -> Result<()> {
    if !data.is_empty() && data.dimension() != config.embedding_dim {
        return Err(TrainError::InputDimension {
            expected: config.embedding_dim,
            found: data.dimension(),
        }
        .into());
    }
    Ok(())
}

/// Maps cleaned text to token vectors through an embedding table, keeping
/// the first `max_tokens` tokens.
#[derive(Clone)]
pub struct TextEncoder {
    pub table: Arc<EmbeddingTable>,
    pub max_tokens: usize,
}

impl TextEncoder {
    pub fn new(table: Arc<EmbeddingTable>, max_tokens: usize) -> Self {
        TextEncoder { table, max_tokens }
    }

    pub fn encode(&self, text: &str) -> Array2<f64> {
        let tokens: Vec<&str> = tokenize(text).into_iter().take(self.max_tokens).collect();
        let d = self.table.dimension();
        let mut x = Array2::zeros((tokens.len(), d));
        for (row, tok) in tokens.iter().enumerate() {
            // Unresolvable words stay as zero rows.
            if let Ok(v) = self.table.resolve(tok) {
                x.row_mut(row).iter_mut().zip(v.iter()).for_each(|(a, &b)| *a = b as f64);
            }
        }
        x
    }
}

pub struct TextSource<'a, S: AsRef<str> + Sync> {
    pub encoder: &'a TextEncoder,
    pub texts: &'a [S],
}

impl<S: AsRef<str> + Sync> SequenceSource for TextSource<'_, S> {
    fn len(&self) -> usize {
        self.texts.len()
    }

    fn dimension(&self) -> usize {
        self.encoder.table.dimension()
    }

    fn sequence(&self, i: usize) -> Array2<f64> {
        self.encoder.encode(self.texts[i].as_ref())
    }
}

pub struct SegmentSource<'a> {
    pub encoder: &'a TextEncoder,
    pub segments: &'a [Segment],
}

impl SequenceSource for SegmentSource<'_> {
    fn len(&self) -> usize {
        self.segments.len()
    }

    fn dimension(&self) -> usize {
        self.encoder.table.dimension()
    }

    fn sequence(&self, i: usize) -> Array2<f64> {
        self.encoder.encode(&self.segments[i].text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_size: usize,
    pub val_size: usize,
}

struct Adam {
    m: Params,
    v: Params,
    t: i32,
}

impl Adam {
    fn new(c: &ModelConfig) -> Self {
        Adam {
            m: Params::zeros(c),
            v: Params::zeros(c),
            t: 0,
        }
    }

    fn step(&mut self, c: &ModelConfig, params: &mut Params, grad: &Params) {
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for k in 0..p.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
            }
        }
    }
}

struct Encoded {
    x: Array2<f64>,
    target: f64,
    weight: f64,
}

impl Encoded {
    fn example(&self) -> Example<'_> {
        Example {
            x: self.x.view(),
            target: self.target,
            weight: self.weight,
        }
    }
}

/// Weighted mean loss and accuracy of the model over `set`.
fn evaluate(model: &SequenceModel, set: &[Encoded]) -> (f64, f64) {
    let per: Vec<(f64, bool)> = set
        .par_iter()
        .map(|e| {
            let logit = model.run(e.x.view()).logit;
            let l = if e.target > 0.5 { softplus(-logit) } else { softplus(logit) };
            (e.weight * l, (sigmoid(logit) >= 0.5) == (e.target > 0.5))
        })
        .collect();
    let n = set.len().max(1) as f64;
    let loss: f64 = per.iter().map(|p| p.0).sum();
    let correct = per.iter().filter(|p| p.1).count();
    (loss / n, correct as f64 / n)
}

/// Fits the model to soft labels, continuing from its current weights.
/// Examples are weighted by `|2p - 1|` and supervised with `round(p)`;
/// training stops when held-out loss fails to improve for `patience`
/// epochs, and the best weights are restored.
pub fn train(model: &mut SequenceModel, data: &dyn SequenceSource, labels: &[f64]) -> Result<TrainReport> {
    let cfg = model.config.clone();
    if labels.len() != data.len() {
        return Err(Error::Config(format!("{} labels for {} sequences", labels.len(), data.len())));
    }
    check_dimension(&cfg, data)?;
    for &p in labels {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::OutOfRange {
                what: "soft label",
                value: p,
            });
        }
    }
    let mut usable: Vec<usize> = (0..labels.len()).filter(|&i| example_weight(labels[i]) > 0.0).collect();
    if usable.is_empty() {
        return Err(TrainError::NoSupervision.into());
    }
    let positives = usable.iter().filter(|&&i| labels[i] > 0.5).count();
    let negatives = usable.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(TrainError::SingleClass { positives, negatives }.into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    usable.shuffle(&mut rng);
    let n_train = cfg.train_size(usable.len());
    let encode = |idx: &[usize]| -> Vec<Encoded> {
        idx.par_iter()
            .map(|&i| Encoded {
                x: data.sequence(i),
                target: hard_target(labels[i]),
                weight: example_weight(labels[i]),
            })
            .collect()
    };
    let train_set = encode(&usable[..n_train]);
    let val_set = encode(&usable[n_train..]);

    let mut adam = Adam::new(&cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<Example> = batch_idx.iter().map(|&i| train_set[i].example()).collect();
            let (_, grad) = model.loss_and_gradients(&batch);
            adam.step(&cfg, &mut model.params, &grad);
        }
        let (loss, accuracy) = evaluate(model, &train_set);
        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate(model, &val_set);
            (Some(l), Some(a))
        };
        history.push(EpochRecord {
            epoch,
            loss,
            accuracy,
            val_loss,
            val_accuracy,
        });
        log::debug!("epoch {epoch}: loss {loss:.4} accuracy {accuracy:.4} val_loss {val_loss:?}");
        let monitored = val_loss.unwrap_or(loss);
        if monitored < best.0 {
            best = (monitored, epoch, model.params.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    model.params = best.2;
    Ok(TrainReport {
        history,
        best_epoch: best.1,
        stopped_early,
        train_size: train_set.len(),
        val_size: val_set.len(),
    })
}

pub fn amplify(p: f64, threshold: f64, factor: f64) -> f64 {
    if p >= threshold {
        (p + factor * (1.0 - p)).min(1.0)
    } else if p <= 1.0 - threshold {
        (p * (1.0 - factor)).max(0.0)
    } else {
        p
    }
}

/// Pushes scores near either extreme a fraction `factor` closer to it.
pub fn amplify_extremes(scores: &[f64], threshold: f64, factor: f64) -> Result<Vec<f64>> {
    if !(threshold > 0.5 && threshold <= 1.0) {
        return Err(Error::Config(format!("amplification threshold {threshold} must lie in (0.5, 1]")));
    }
    if !(0.0..=1.0).contains(&factor) {
        return Err(Error::OutOfRange {
            what: "amplification factor",
            value: factor,
        });
    }
    scores
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok(amplify(p, threshold, factor))
            } else {
                Err(Error::OutOfRange { what: "score", value: p })
            }
        })
        .collect()
}
