//! Tweet text encoder: tokenization, vocabulary lookup, a trainable embedding
//! table and a bidirectional LSTM that emits one `K`-wide row per position.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{sigmoid, uniform_fan_in};
use crate::params::{visit_matrix, visit_vector, ParamSet};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const URL_TOKEN: &str = "<url>";
pub const USER_TOKEN: &str = "<user>";

/// Lowercases, maps URLs and @mentions to sentinels, and splits the rest into
/// alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            out.push(URL_TOKEN.to_string());
            continue;
        }
        if lower.starts_with('@') && lower.len() > 1 {
            out.push(USER_TOKEN.to_string());
            continue;
        }
        let mut current = String::new();
        for c in lower.chars() {
            if c.is_alphanumeric() {
                current.push(c);
            } else if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        }
        if !current.is_empty() {
            out.push(current);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from a corpus: tokens with at least `min_count` occurrences,
    /// most frequent first (ties lexicographic), capped at `max_size` entries
    /// including the specials.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize, max_size: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(
            ranked
                .into_iter()
                .map(|(t, _)| t)
                .filter(|t| t != PAD_TOKEN && t != UNK_TOKEN)
                .take(max_size.saturating_sub(2)),
        );
        Self::from_tokens(tokens).expect("specials are in place")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.first().map(String::as_str) != Some(PAD_TOKEN) || tokens.get(1).map(String::as_str) != Some(UNK_TOKEN) {
            return Err(Error::Precondition(format!(
                "vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Precondition(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Token ids truncated or right-padded with `PAD` to exactly `n`.
    pub fn encode(&self, text: &str, n: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = tokenize(text).iter().map(|t| self.id(t)).take(n).collect();
        ids.resize(n, PAD);
        ids
    }

    /// `vocab.txt`: one token per line, line number = index.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }
}

/// One LSTM direction. Gate rows are stacked as input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_x: Array2<f64>,
    pub w_h: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone)]
struct StepCache {
    h_prev: Array1<f64>,
    c_prev: Array1<f64>,
    i: Array1<f64>,
    f: Array1<f64>,
    g: Array1<f64>,
    o: Array1<f64>,
    tanh_c: Array1<f64>,
}

/// Per-step activations of one direction, stored in processing order.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    order: Vec<usize>,
    steps: Vec<StepCache>,
}

impl LstmCell {
    pub fn new<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        LstmCell {
            w_x: uniform_fan_in(4 * hidden, input, hidden, rng),
            w_h: uniform_fan_in(4 * hidden, hidden, hidden, rng),
            b: Array1::zeros(4 * hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_h.ncols()
    }

    pub fn input(&self) -> usize {
        self.w_x.ncols()
    }

    /// Runs over the rows of `inputs` (in reverse when `reverse`) from a zero
    /// state; row `t` of the result is the hidden state after consuming row `t`.
    pub fn run(&self, inputs: &Array2<f64>, reverse: bool) -> (Array2<f64>, LstmTrace) {
        let n = inputs.nrows();
        let h_dim = self.hidden();
        let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
        let mut out = Array2::zeros((n, h_dim));
        let mut h = Array1::zeros(h_dim);
        let mut c = Array1::zeros(h_dim);
        let mut steps = Vec::with_capacity(n);
        for &t in &order {
            let z = self.w_x.dot(&inputs.row(t)) + self.w_h.dot(&h) + &self.b;
            let i = z.slice(s![0..h_dim]).mapv(sigmoid);
            let f = z.slice(s![h_dim..2 * h_dim]).mapv(sigmoid);
            let g = z.slice(s![2 * h_dim..3 * h_dim]).mapv(f64::tanh);
            let o = z.slice(s![3 * h_dim..]).mapv(sigmoid);
            let c_new = &f * &c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            out.row_mut(t).assign(&h_new);
            steps.push(StepCache {
                h_prev: h,
                c_prev: c,
                i,
                f,
                g,
                o,
                tanh_c,
            });
            h = h_new;
            c = c_new;
        }
        (out, LstmTrace { order, steps })
    }

    /// Back-propagates `d_out` (gradient w.r.t. every emitted hidden state).
    /// Accumulates parameter gradients into `grads` and returns d(inputs).
    pub fn backward(&self, inputs: &Array2<f64>, trace: &LstmTrace, d_out: &Array2<f64>, grads: &mut LstmCell) -> Array2<f64> {
        let h_dim = self.hidden();
        let mut d_inputs = Array2::zeros(inputs.raw_dim());
        let mut dh_next = Array1::<f64>::zeros(h_dim);
        let mut dc_next = Array1::<f64>::zeros(h_dim);
        let mut dz = Array1::<f64>::zeros(4 * h_dim);
        for (k, &t) in trace.order.iter().enumerate().rev() {
            let st = &trace.steps[k];
            let dh = &d_out.row(t) + &dh_next;
            let d_o = &dh * &st.tanh_c;
            let dc = &dc_next + &(&dh * &st.o * &st.tanh_c.mapv(|x| 1.0 - x * x));
            let di = &dc * &st.g;
            let dg = &dc * &st.i;
            let df = &dc * &st.c_prev;
            dc_next = &dc * &st.f;
            dz.slice_mut(s![0..h_dim]).assign(&(&di * &st.i.mapv(|x| x * (1.0 - x))));
            dz.slice_mut(s![h_dim..2 * h_dim]).assign(&(&df * &st.f.mapv(|x| x * (1.0 - x))));
            dz.slice_mut(s![2 * h_dim..3 * h_dim]).assign(&(&dg * &st.g.mapv(|x| 1.0 - x * x)));
            dz.slice_mut(s![3 * h_dim..]).assign(&(&d_o * &st.o.mapv(|x| x * (1.0 - x))));

            add_outer(&mut grads.w_x, &dz, inputs.row(t));
            add_outer(&mut grads.w_h, &dz, st.h_prev.view());
            grads.b += &dz;
            d_inputs.row_mut(t).assign(&self.w_x.t().dot(&dz));
            dh_next = self.w_h.t().dot(&dz);
        }
        d_inputs
    }
}

pub(crate) fn add_outer(m: &mut Array2<f64>, a: &Array1<f64>, b: ArrayView1<f64>) {
    for (mut row, &ai) in m.axis_iter_mut(Axis(0)).zip(a.iter()) {
        if ai != 0.0 {
            row.scaled_add(ai, &b);
        }
    }
}

/// Embedding table plus forward and backward LSTM cells, each of width `K/2`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmParams {
    pub embedding: Array2<f64>,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
}

impl BiLstmParams {
    pub fn new<R: Rng>(vocab_size: usize, embed_dim: usize, output_dim: usize, rng: &mut R) -> Result<Self> {
        if output_dim == 0 || output_dim % 2 != 0 {
            return Err(Error::Dimension(format!("BiLSTM output width K={output_dim} must be even and positive")));
        }
        let hidden = output_dim / 2;
        let embedding = uniform_fan_in(vocab_size, embed_dim, embed_dim, rng);
        Ok(BiLstmParams {
            embedding,
            forward: LstmCell::new(embed_dim, hidden, rng),
            backward: LstmCell::new(embed_dim, hidden, rng),
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.ncols()
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden()
    }

    /// Looks up rows of the embedding table (`len(ids) × E`).
    pub fn embed(&self, ids: &[usize]) -> Array2<f64> {
        self.embedding.select(Axis(0), ids)
    }

    /// Encodes already-embedded inputs; row `t` is `[h_fwd(t), h_bwd(t)]`.
    pub fn encode_embedded(&self, inputs: &Array2<f64>) -> (Array2<f64>, BiLstmTrace) {
        let (hf, fwd) = self.forward.run(inputs, false);
        let (hb, bwd) = self.backward.run(inputs, true);
        let h = self.forward.hidden();
        let mut out = Array2::zeros((inputs.nrows(), 2 * h));
        out.slice_mut(s![.., ..h]).assign(&hf);
        out.slice_mut(s![.., h..]).assign(&hb);
        (out, BiLstmTrace { fwd, bwd })
    }

    /// Gradients for the two cells accumulate into `grads`; returns d(inputs).
    /// The embedding table gradient is added by [`BiLstmParams::scatter_embedding_grad`].
    pub fn backward_embedded(
        &self,
        inputs: &Array2<f64>,
        trace: &BiLstmTrace,
        d_out: &Array2<f64>,
        grads: &mut BiLstmParams,
    ) -> Array2<f64> {
        let h = self.forward.hidden();
        let d_f = d_out.slice(s![.., ..h]).to_owned();
        let d_b = d_out.slice(s![.., h..]).to_owned();
        let mut d_in = self.forward.backward(inputs, &trace.fwd, &d_f, &mut grads.forward);
        d_in += &self.backward.backward(inputs, &trace.bwd, &d_b, &mut grads.backward);
        d_in
    }

    pub fn scatter_embedding_grad(grads: &mut BiLstmParams, ids: &[usize], d_inputs: &Array2<f64>) {
        for (row, &id) in d_inputs.rows().into_iter().zip(ids) {
            grads.embedding.row_mut(id).scaled_add(1.0, &row);
        }
    }
}

impl ParamSet for BiLstmParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix("textenc.", "embedding", &self.embedding, f);
        for (dir, cell) in [("fwd.", &self.forward), ("bwd.", &self.backward)] {
            visit_matrix(&format!("textenc.{dir}"), "w_x", &cell.w_x, f);
            visit_matrix(&format!("textenc.{dir}"), "w_h", &cell.w_h, f);
            visit_vector(&format!("textenc.{dir}"), "b", &cell.b, f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("textenc.embedding", self.embedding.as_slice_mut().unwrap());
        for (dir, cell) in [("fwd", &mut self.forward), ("bwd", &mut self.backward)] {
            f(&format!("textenc.{dir}.w_x"), cell.w_x.as_slice_mut().unwrap());
            f(&format!("textenc.{dir}.w_h"), cell.w_h.as_slice_mut().unwrap());
            f(&format!("textenc.{dir}.b"), cell.b.as_slice_mut().unwrap());
        }
    }
}

/// Text to the `N × K` sequence representation.
pub fn encode_text(text: &str, vocab: &Vocabulary, params: &BiLstmParams, n: usize) -> Result<Array2<f64>> {
    if n == 0 {
        return Err(Error::Precondition("sequence length N must be at least 1".into()));
    }
    let ids = vocab.encode(text, n);
    Ok(params.encode_embedded(&params.embed(&ids)).0)
}
