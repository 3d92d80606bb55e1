//! The full classifier: BiLSTM text encoder, evidence↔text and
//! tweet-graph↔user-graph co-attention, contextual network and fused head.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::coattn::{coattend_backward, coattend_traced, CoAttentionOutput, CoAttentionParams, CoAttentionTrace};
use crate::error::{Error, Result};
use crate::fusion::{
    encode_context_backward, encode_context_joined, head_backward, head_forward, FusionParams, HeadLayout, HeadTrace, Mode,
};
use crate::math::seeded_rng;
use crate::params::ParamSet;
use crate::textenc::{BiLstmParams, BiLstmTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Sentence / text representation width.
    pub k: usize,
    /// Graph embedding width.
    pub g: usize,
    /// Contextual network output width.
    pub c: usize,
    /// Co-attention hidden width.
    pub attn_hidden: usize,
    /// Tokens per tweet.
    pub seq_len: usize,
    /// Word embedding width.
    pub embed_dim: usize,
    /// Evidence rows per tweet.
    pub evidence_rows: usize,
    pub vocab_size: usize,
    pub n_features: usize,
}

impl ModelDims {
    pub fn check(&self) -> Result<()> {
        let named = [
            ("k", self.k),
            ("g", self.g),
            ("c", self.c),
            ("attn_hidden", self.attn_hidden),
            ("seq_len", self.seq_len),
            ("embed_dim", self.embed_dim),
            ("evidence_rows", self.evidence_rows),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Dimension(format!("{name} must be positive")));
        }
        if self.k % 2 != 0 {
            return Err(Error::Dimension(format!("k = {} must be even", self.k)));
        }
        Ok(())
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout {
            k: self.k,
            g: self.g,
            c: self.c,
        }
    }
}

/// Which continuous inputs adversarial perturbations act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbScope {
    /// Word embeddings of the tweet text only.
    #[default]
    Embeddings,
    /// Word embeddings, evidence rows, graph embeddings and contextual features.
    AllInputs,
}

/// One prepared example.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub token_ids: Vec<usize>,
    /// `evidence_rows × k`, zero padded.
    pub evidence: Array2<f64>,
    pub tweet_graph: Array1<f64>,
    pub user_graph: Array1<f64>,
    /// Standardized `x_TF ⊕ x_UF`.
    pub context: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EndemicModel {
    pub dims: ModelDims,
    pub textenc: BiLstmParams,
    pub ek_tt: CoAttentionParams,
    pub tg_ug: CoAttentionParams,
    pub fusion: FusionParams,
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    token_ids: Vec<usize>,
    embedded: Array2<f64>,
    text_trace: BiLstmTrace,
    text_repr: Array2<f64>,
    evidence: Array2<f64>,
    ek_out: CoAttentionOutput,
    ek_trace: CoAttentionTrace,
    tweet_graph: Array2<f64>,
    user_graph: Array2<f64>,
    graph_out: CoAttentionOutput,
    graph_trace: CoAttentionTrace,
    context: Array1<f64>,
    d_tu: Array1<f64>,
    pub head: HeadTrace,
    scope: PerturbScope,
}

impl ForwardTrace {
    pub fn probs(&self) -> [f64; 2] {
        self.head.probs
    }

    pub fn logits(&self) -> [f64; 2] {
        self.head.logits
    }

    pub fn evidence_attention(&self) -> &Array1<f64> {
        &self.ek_out.attn_a
    }
}

fn row(v: &Array1<f64>) -> Array2<f64> {
    v.clone().insert_axis(ndarray::Axis(0))
}

impl EndemicModel {
    pub fn new(dims: ModelDims, p_drop: f64, seed: u64) -> Result<Self> {
        dims.check()?;
        let mut rng = seeded_rng(&[seed, 0x0de1]);
        Ok(EndemicModel {
            dims,
            textenc: BiLstmParams::new(dims.vocab_size, dims.embed_dim, dims.k, &mut rng)?,
            ek_tt: CoAttentionParams::new("ek_tt", dims.k, dims.attn_hidden, &mut rng),
            tg_ug: CoAttentionParams::new("tg_ug", dims.g, dims.attn_hidden, &mut rng),
            fusion: FusionParams::new(dims.n_features, dims.layout(), p_drop, &mut rng)?,
        })
    }

    pub fn check_input(&self, input: &ModelInput) -> Result<()> {
        let d = &self.dims;
        if input.token_ids.len() != d.seq_len {
            return Err(Error::Dimension(format!(
                "{} token ids, expected {}",
                input.token_ids.len(),
                d.seq_len
            )));
        }
        if let Some(&bad) = input.token_ids.iter().find(|&&t| t >= d.vocab_size) {
            return Err(Error::Dimension(format!("token id {bad} outside vocabulary of {}", d.vocab_size)));
        }
        if input.evidence.dim() != (d.evidence_rows, d.k) {
            return Err(Error::Dimension(format!(
                "evidence is {:?}, expected ({}, {})",
                input.evidence.dim(),
                d.evidence_rows,
                d.k
            )));
        }
        if input.tweet_graph.len() != d.g || input.user_graph.len() != d.g {
            return Err(Error::Dimension(format!("graph embeddings must have length {}", d.g)));
        }
        if input.context.len() != d.n_features {
            return Err(Error::Schema(format!(
                "{} contextual features, expected {}",
                input.context.len(),
                d.n_features
            )));
        }
        Ok(())
    }

    /// Length of the flat perturbation vector for `scope`.
    pub fn perturb_len(&self, scope: PerturbScope) -> usize {
        let d = &self.dims;
        let emb = d.seq_len * d.embed_dim;
        match scope {
            PerturbScope::Embeddings => emb,
            PerturbScope::AllInputs => emb + d.evidence_rows * d.k + 2 * d.g + d.n_features,
        }
    }

    /// Forward pass with an optional additive perturbation over the inputs in `scope`.
    pub fn forward<R: Rng>(
        &self,
        input: &ModelInput,
        perturbation: Option<&[f64]>,
        scope: PerturbScope,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ForwardTrace> {
        self.check_input(input)?;
        let d = &self.dims;
        let mut embedded = self.textenc.embed(&input.token_ids);
        let mut evidence = input.evidence.clone();
        let mut tweet_graph = row(&input.tweet_graph);
        let mut user_graph = row(&input.user_graph);
        let mut context = input.context.clone();
        if let Some(r) = perturbation {
            if r.len() != self.perturb_len(scope) {
                return Err(Error::Dimension(format!(
                    "perturbation has length {}, expected {}",
                    r.len(),
                    self.perturb_len(scope)
                )));
            }
            let mut offset = 0;
            let mut add = |slice: &mut [f64]| {
                for (x, dr) in slice.iter_mut().zip(&r[offset..]) {
                    *x += dr;
                }
                offset += slice.len();
            };
            add(embedded.as_slice_mut().unwrap());
            if scope == PerturbScope::AllInputs {
                add(evidence.as_slice_mut().unwrap());
                add(tweet_graph.as_slice_mut().unwrap());
                add(user_graph.as_slice_mut().unwrap());
                add(context.as_slice_mut().unwrap());
            }
        }

        let (text_repr, text_trace) = self.textenc.encode_embedded(&embedded);
        let (ek_out, ek_trace) = coattend_traced(&evidence, &text_repr, &self.ek_tt)?;
        let (graph_out, graph_trace) = coattend_traced(&tweet_graph, &user_graph, &self.tg_ug)?;
        let d_tu = encode_context_joined(&context, &self.fusion)?;
        let head = head_forward(
            [&ek_out.a_hat, &ek_out.b_hat, &graph_out.a_hat, &graph_out.b_hat, &d_tu],
            d.layout(),
            &self.fusion,
            mode,
            rng,
        )?;
        Ok(ForwardTrace {
            token_ids: input.token_ids.clone(),
            embedded,
            text_trace,
            text_repr,
            evidence,
            ek_out,
            ek_trace,
            tweet_graph,
            user_graph,
            graph_out,
            graph_trace,
            context,
            d_tu,
            head,
            scope,
        })
    }

    /// Eval-mode probabilities.
    pub fn predict(&self, input: &ModelInput) -> Result<[f64; 2]> {
        let mut unused = seeded_rng(&[0]);
        Ok(self
            .forward(input, None, PerturbScope::Embeddings, Mode::Eval, &mut unused)?
            .probs())
    }

    /// Back-propagates d(logits). Parameter gradients (including the embedding
    /// table) accumulate into `grads`; returns the gradient w.r.t. the
    /// perturbable inputs of the trace's scope, flattened in perturbation order.
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: [f64; 2], grads: &mut EndemicModel) -> Vec<f64> {
        let [g_ek, g_tt, g_tg, g_ug, g_tu] =
            head_backward(&trace.head, grad_logits, self.dims.layout(), &self.fusion, &mut grads.fusion);
        let g_ctx = encode_context_backward(&trace.context, &trace.d_tu, &g_tu, &self.fusion, &mut grads.fusion);
        let graph_back = coattend_backward(
            &trace.tweet_graph,
            &trace.user_graph,
            &self.tg_ug,
            &trace.graph_out,
            &trace.graph_trace,
            &g_tg,
            &g_ug,
            &mut grads.tg_ug,
        );
        let ek_back = coattend_backward(
            &trace.evidence,
            &trace.text_repr,
            &self.ek_tt,
            &trace.ek_out,
            &trace.ek_trace,
            &g_ek,
            &g_tt,
            &mut grads.ek_tt,
        );
        let g_emb = self
            .textenc
            .backward_embedded(&trace.embedded, &trace.text_trace, &ek_back.d_b, &mut grads.textenc);
        BiLstmParams::scatter_embedding_grad(&mut grads.textenc, &trace.token_ids, &g_emb);

        let mut out = Vec::with_capacity(self.perturb_len(trace.scope));
        out.extend_from_slice(g_emb.as_slice().unwrap());
        if trace.scope == PerturbScope::AllInputs {
            out.extend(ek_back.d_a.iter());
            out.extend(graph_back.d_a.iter());
            out.extend(graph_back.d_b.iter());
            out.extend(g_ctx.iter());
        }
        out
    }
}

impl ParamSet for EndemicModel {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        self.textenc.visit(f);
        self.ek_tt.visit(f);
        self.tg_ug.visit(f);
        self.fusion.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        self.textenc.visit_mut(f);
        self.ek_tt.visit_mut(f);
        self.tg_ug.visit_mut(f);
        self.fusion.visit_mut(f);
    }
}

/// A two-class model whose logits can be evaluated and differentiated at a
/// perturbed copy of a continuous input. Virtual adversarial training is
/// written against this trait.
pub trait Perturbable {
    type Input;

    fn perturb_len(&self, input: &Self::Input) -> usize;

    /// Deterministic (eval-mode) logits at `input + r`.
    fn logits_at(&self, input: &Self::Input, r: &[f64]) -> Result<[f64; 2]>;

    /// Gradient w.r.t. `r` of `dot(grad_logits, logits_at(input, r))`.
    fn input_grad_at(&self, input: &Self::Input, r: &[f64], grad_logits: [f64; 2]) -> Result<Vec<f64>>;
}

/// The full model bound to a perturbation scope.
pub struct ScopedModel<'a> {
    pub model: &'a EndemicModel,
    pub scope: PerturbScope,
}

impl Perturbable for ScopedModel<'_> {
    type Input = ModelInput;

    fn perturb_len(&self, _input: &ModelInput) -> usize {
        self.model.perturb_len(self.scope)
    }

    fn logits_at(&self, input: &ModelInput, r: &[f64]) -> Result<[f64; 2]> {
        let mut unused = seeded_rng(&[0]);
        Ok(self
            .model
            .forward(input, Some(r), self.scope, Mode::Eval, &mut unused)?
            .logits())
    }

    fn input_grad_at(&self, input: &ModelInput, r: &[f64], grad_logits: [f64; 2]) -> Result<Vec<f64>> {
        let mut unused = seeded_rng(&[0]);
        let trace = self.model.forward(input, Some(r), self.scope, Mode::Eval, &mut unused)?;
        // Parameter gradients are discarded; only the input gradient is needed.
        let mut scratch = self.model.zeros_like();
        Ok(self.model.backward(&trace, grad_logits, &mut scratch))
    }
}
