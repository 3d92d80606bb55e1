//! Contextual-feature network and the classification head that fuses the
//! five component representations.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{softmax, uniform_fan_in};
use crate::params::{visit_matrix, visit_vector, ParamSet};
use crate::textenc::add_outer;

pub const DEFAULT_CONTEXT_DIM: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// C × (N_TF + N_UF).
    pub context_w: Array2<f64>,
    pub context_b: Array1<f64>,
    /// 2 × (2K + 2G + C).
    pub head_w: Array2<f64>,
    pub head_b: Array1<f64>,
    pub p_drop: f64,
}

/// Widths of the five head inputs, in concatenation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadLayout {
    pub k: usize,
    pub g: usize,
    pub c: usize,
}

impl HeadLayout {
    pub fn width(&self) -> usize {
        2 * self.k + 2 * self.g + self.c
    }

    fn parts(&self) -> [(&'static str, usize); 5] {
        [
            ("ek_hat", self.k),
            ("tt_hat", self.k),
            ("tg_hat", self.g),
            ("ug_hat", self.g),
            ("d_tu", self.c),
        ]
    }
}

impl FusionParams {
    pub fn new<R: Rng>(n_features: usize, layout: HeadLayout, p_drop: f64, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&p_drop) {
            return Err(Error::Precondition(format!("dropout rate must lie in [0, 1), got {p_drop}")));
        }
        Ok(FusionParams {
            context_w: uniform_fan_in(layout.c, n_features, n_features, rng),
            context_b: Array1::zeros(layout.c),
            head_w: uniform_fan_in(2, layout.width(), layout.width(), rng),
            head_b: Array1::zeros(2),
            p_drop,
        })
    }

    pub fn layout(&self, k: usize, g: usize) -> HeadLayout {
        HeadLayout {
            k,
            g,
            c: self.context_w.nrows(),
        }
    }

    pub fn n_features(&self) -> usize {
        self.context_w.ncols()
    }

    pub fn context_dim(&self) -> usize {
        self.context_w.nrows()
    }
}

impl ParamSet for FusionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        visit_matrix("fusion.", "context_w", &self.context_w, f);
        visit_vector("fusion.", "context_b", &self.context_b, f);
        visit_matrix("fusion.", "head_w", &self.head_w, f);
        visit_vector("fusion.", "head_b", &self.head_b, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        f("fusion.context_w", self.context_w.as_slice_mut().unwrap());
        f("fusion.context_b", self.context_b.as_slice_mut().unwrap());
        f("fusion.head_w", self.head_w.as_slice_mut().unwrap());
        f("fusion.head_b", self.head_b.as_slice_mut().unwrap());
    }
}

/// `d_TU = tanh(W·(x_TF ⊕ x_UF) + b)`.
pub fn encode_context(x_tf: &Array1<f64>, x_uf: &Array1<f64>, params: &FusionParams) -> Result<Array1<f64>> {
    let x = concatenate![Axis(0), *x_tf, *x_uf];
    encode_context_joined(&x, params)
}

pub fn encode_context_joined(x: &Array1<f64>, params: &FusionParams) -> Result<Array1<f64>> {
    if x.len() != params.n_features() {
        return Err(Error::Schema(format!(
            "contextual input has {} features, network expects {}",
            x.len(),
            params.n_features()
        )));
    }
    Ok((params.context_w.dot(x) + &params.context_b).mapv(f64::tanh))
}

/// Returns d(x); parameter gradients accumulate into `grads`.
pub fn encode_context_backward(
    x: &Array1<f64>,
    d_tu: &Array1<f64>,
    grad_out: &Array1<f64>,
    params: &FusionParams,
    grads: &mut FusionParams,
) -> Array1<f64> {
    let d_pre = grad_out * &d_tu.mapv(|v| 1.0 - v * v);
    add_outer(&mut grads.context_w, &d_pre, x.view());
    grads.context_b += &d_pre;
    params.context_w.t().dot(&d_pre)
}

#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub joined: Array1<f64>,
    /// Inverted-dropout multipliers (all ones in eval mode).
    pub mask: Array1<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

/// Concatenate, drop out (train mode only), project to two logits.
pub fn head_forward<R: Rng>(
    parts: [&Array1<f64>; 5],
    layout: HeadLayout,
    params: &FusionParams,
    mode: Mode,
    rng: &mut R,
) -> Result<HeadTrace> {
    for ((name, width), part) in layout.parts().iter().zip(parts.iter()) {
        if part.len() != *width {
            return Err(Error::Dimension(format!("{name} has length {}, expected {width}", part.len())));
        }
        if !part.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(*name, "non-finite head input"));
        }
    }
    if params.head_w.ncols() != layout.width() {
        return Err(Error::Dimension(format!(
            "head expects {} inputs, layout provides {}",
            params.head_w.ncols(),
            layout.width()
        )));
    }
    let joined = concatenate(Axis(0), &parts.map(|p| p.view())).expect("1-D parts");
    let mask = match mode {
        Mode::Eval => Array1::ones(joined.len()),
        Mode::Train => {
            let keep = 1.0 - params.p_drop;
            Array1::from_shape_fn(joined.len(), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
        }
    };
    let z = params.head_w.dot(&(&joined * &mask)) + &params.head_b;
    let logits = [z[0], z[1]];
    let p = softmax(&logits);
    Ok(HeadTrace {
        joined,
        mask,
        logits,
        probs: [p[0], p[1]],
    })
}

/// Returns the gradient for each of the five parts.
pub fn head_backward(
    trace: &HeadTrace,
    grad_logits: [f64; 2],
    layout: HeadLayout,
    params: &FusionParams,
    grads: &mut FusionParams,
) -> [Array1<f64>; 5] {
    let dz = Array1::from(grad_logits.to_vec());
    let dropped = &trace.joined * &trace.mask;
    add_outer(&mut grads.head_w, &dz, dropped.view());
    grads.head_b += &dz;
    let d_joined = params.head_w.t().dot(&dz) * &trace.mask;
    let mut offset = 0;
    layout.parts().map(|(_, w)| {
        let part = d_joined.slice(s![offset..offset + w]).to_owned();
        offset += w;
        part
    })
}

/// Probability pair `[p(genuine), p(fake)]` for one example.
#[allow(clippy::too_many_arguments)]
pub fn classify<R: Rng>(
    ek_hat: &Array1<f64>,
    tt_hat: &Array1<f64>,
    tg_hat: &Array1<f64>,
    ug_hat: &Array1<f64>,
    d_tu: &Array1<f64>,
    params: &FusionParams,
    mode: Mode,
    rng: &mut R,
) -> Result<[f64; 2]> {
    let layout = HeadLayout {
        k: ek_hat.len(),
        g: tg_hat.len(),
        c: d_tu.len(),
    };
    Ok(head_forward([ek_hat, tt_hat, tg_hat, ug_hat, d_tu], layout, params, mode, rng)?.probs)
}

/// Per-feature standardization fitted on the train split. Masked or missing
/// values map to 0, the train mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [Option<f64>]>, n: usize) -> Self {
        let mut sum = vec![0.0; n];
        let mut sq = vec![0.0; n];
        let mut count = vec![0usize; n];
        for row in rows {
            for (j, v) in row.iter().enumerate().take(n) {
                if let Some(v) = v {
                    sum[j] += v;
                    sq[j] += v * v;
                    count[j] += 1;
                }
            }
        }
        let mut mean = vec![0.0; n];
        let mut std = vec![1.0; n];
        for j in 0..n {
            if count[j] > 0 {
                let m = sum[j] / count[j] as f64;
                let var = (sq[j] / count[j] as f64 - m * m).max(0.0);
                mean[j] = m;
                std[j] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
            }
        }
        Standardizer { mean, std }
    }

    pub fn identity(n: usize) -> Self {
        Standardizer {
            mean: vec![0.0; n],
            std: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, row: &[Option<f64>]) -> Result<Array1<f64>> {
        if row.len() != self.mean.len() {
            return Err(Error::Schema(format!(
                "feature row has {} values, standardizer fitted on {}",
                row.len(),
                self.mean.len()
            )));
        }
        Ok(Array1::from_shape_fn(row.len(), |j| match row[j] {
            Some(v) => (v - self.mean[j]) / self.std[j],
            None => 0.0,
        }))
    }
}
