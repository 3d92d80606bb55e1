//! Parallel co-attention between two row-sequences `d_a` (X × Z) and `d_b`
//! (Y × Z).
//!
//! ```text
//! C   = tanh(d_b · W_bᵀ · d_aᵀ)                       (Y × X)
//! H_A = tanh(W_A·d_aᵀ + (W_B·d_bᵀ)·C)                 (k × X)
//! H_B = tanh(W_B·d_bᵀ + (W_A·d_aᵀ)·Cᵀ)                (k × Y)
//! a_A = softmax(w_hAᵀ·H_A),  a_B = softmax(w_hBᵀ·H_B)
//! Â   = Σ a_A[i]·d_a[i],     B̂ = Σ a_B[j]·d_b[j]
//! ```
//!
//! `C[y, x]` is the bilinear affinity `d_a[x]·W_b·d_b[y]` squashed by tanh.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;

use crate::error::{Error, Result};
use crate::math::{softmax_array, softmax_backward, uniform_fan_in};
use crate::params::{visit_matrix, visit_vector, ParamSet};

pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct CoAttentionParams {
    /// `W_b`, Z × Z.
    pub affinity: Array2<f64>,
    /// `W_A`, k × Z.
    pub proj_a: Array2<f64>,
    /// `W_B`, k × Z.
    pub proj_b: Array2<f64>,
    /// `w_hA`, k.
    pub score_a: Array1<f64>,
    /// `w_hB`, k.
    pub score_b: Array1<f64>,
    name: &'static str,
}

impl CoAttentionParams {
    pub fn new<R: Rng>(name: &'static str, z: usize, k: usize, rng: &mut R) -> Self {
        CoAttentionParams {
            affinity: uniform_fan_in(z, z, z, rng),
            proj_a: uniform_fan_in(k, z, z, rng),
            proj_b: uniform_fan_in(k, z, z, rng),
            score_a: uniform_fan_in(1, k, k, rng).remove_axis(Axis(0)),
            score_b: uniform_fan_in(1, k, k, rng).remove_axis(Axis(0)),
            name,
        }
    }

    pub fn zeros(name: &'static str, z: usize, k: usize) -> Self {
        CoAttentionParams {
            affinity: Array2::zeros((z, z)),
            proj_a: Array2::zeros((k, z)),
            proj_b: Array2::zeros((k, z)),
            score_a: Array1::zeros(k),
            score_b: Array1::zeros(k),
            name,
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn inner_dim(&self) -> usize {
        self.affinity.nrows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.proj_a.nrows()
    }
}

impl ParamSet for CoAttentionParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
        let p = format!("{}.", self.name);
        visit_matrix(&p, "w_b", &self.affinity, f);
        visit_matrix(&p, "w_a", &self.proj_a, f);
        visit_matrix(&p, "w_bproj", &self.proj_b, f);
        visit_vector(&p, "w_ha", &self.score_a, f);
        visit_vector(&p, "w_hb", &self.score_b, f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
        let p = self.name;
        f(&format!("{p}.w_b"), self.affinity.as_slice_mut().unwrap());
        f(&format!("{p}.w_a"), self.proj_a.as_slice_mut().unwrap());
        f(&format!("{p}.w_bproj"), self.proj_b.as_slice_mut().unwrap());
        f(&format!("{p}.w_ha"), self.score_a.as_slice_mut().unwrap());
        f(&format!("{p}.w_hb"), self.score_b.as_slice_mut().unwrap());
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoAttentionOutput {
    pub a_hat: Array1<f64>,
    pub b_hat: Array1<f64>,
    pub attn_a: Array1<f64>,
    pub attn_b: Array1<f64>,
    /// `C`, Y × X.
    pub affinity: Array2<f64>,
    pub h_a: Array2<f64>,
    pub h_b: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct CoAttentionTrace {
    proj_a: Array2<f64>,
    proj_b: Array2<f64>,
}

fn check_shapes(d_a: &Array2<f64>, d_b: &Array2<f64>, p: &CoAttentionParams) -> Result<()> {
    let z = p.inner_dim();
    if d_a.nrows() == 0 || d_b.nrows() == 0 {
        return Err(Error::Dimension(format!("{}: d_a and d_b need at least one row", p.name)));
    }
    if d_a.ncols() != z || d_b.ncols() != z {
        return Err(Error::Dimension(format!(
            "{}: d_a is {}x{}, d_b is {}x{}, W_b is {z}x{z}",
            p.name,
            d_a.nrows(),
            d_a.ncols(),
            d_b.nrows(),
            d_b.ncols()
        )));
    }
    let k = p.hidden_dim();
    if p.proj_b.dim() != (k, z) || p.score_a.len() != k || p.score_b.len() != k || p.affinity.ncols() != z {
        return Err(Error::Dimension(format!("{}: inconsistent parameter shapes", p.name)));
    }
    Ok(())
}

pub fn coattend(d_a: &Array2<f64>, d_b: &Array2<f64>, params: &CoAttentionParams) -> Result<CoAttentionOutput> {
    Ok(coattend_traced(d_a, d_b, params)?.0)
}

pub fn coattend_traced(
    d_a: &Array2<f64>,
    d_b: &Array2<f64>,
    params: &CoAttentionParams,
) -> Result<(CoAttentionOutput, CoAttentionTrace)> {
    check_shapes(d_a, d_b, params)?;
    // S = d_a W_b d_bᵀ (X × Y); C = tanh(Sᵀ).
    let s = d_a.dot(&params.affinity).dot(&d_b.t());
    let c = s.t().mapv(f64::tanh);
    let pa = params.proj_a.dot(&d_a.t());
    let pb = params.proj_b.dot(&d_b.t());
    let h_a = (&pa + &pb.dot(&c)).mapv(f64::tanh);
    let h_b = (&pb + &pa.dot(&c.t())).mapv(f64::tanh);
    let attn_a = softmax_array(&params.score_a.dot(&h_a));
    let attn_b = softmax_array(&params.score_b.dot(&h_b));
    let a_hat = attn_a.dot(d_a);
    let b_hat = attn_b.dot(d_b);
    Ok((
        CoAttentionOutput {
            a_hat,
            b_hat,
            attn_a,
            attn_b,
            affinity: c,
            h_a,
            h_b,
        },
        CoAttentionTrace { proj_a: pa, proj_b: pb },
    ))
}

/// Gradients of a loss through one co-attention call.
pub struct CoAttentionBackward {
    pub d_a: Array2<f64>,
    pub d_b: Array2<f64>,
}

/// Accumulates parameter gradients into `grads`; returns input gradients.
pub fn coattend_backward(
    d_a: &Array2<f64>,
    d_b: &Array2<f64>,
    params: &CoAttentionParams,
    out: &CoAttentionOutput,
    trace: &CoAttentionTrace,
    grad_a_hat: &Array1<f64>,
    grad_b_hat: &Array1<f64>,
    grads: &mut CoAttentionParams,
) -> CoAttentionBackward {
    let c = &out.affinity;
    let (pa, pb) = (&trace.proj_a, &trace.proj_b);

    // Weighted sums.
    let mut g_da = outer(&out.attn_a, grad_a_hat);
    let mut g_db = outer(&out.attn_b, grad_b_hat);
    let g_attn_a = d_a.dot(grad_a_hat);
    let g_attn_b = d_b.dot(grad_b_hat);

    // Softmax and score vectors.
    let g_sa = softmax_backward(&out.attn_a, &g_attn_a);
    let g_sb = softmax_backward(&out.attn_b, &g_attn_b);
    grads.score_a += &out.h_a.dot(&g_sa);
    grads.score_b += &out.h_b.dot(&g_sb);
    let g_pre_a = outer(&params.score_a, &g_sa) * out.h_a.mapv(|h| 1.0 - h * h);
    let g_pre_b = outer(&params.score_b, &g_sb) * out.h_b.mapv(|h| 1.0 - h * h);

    // H_A = tanh(PA + PB·C), H_B = tanh(PB + PA·Cᵀ).
    let g_pa = &g_pre_a + &g_pre_b.dot(c);
    let g_pb = &g_pre_b + &g_pre_a.dot(&c.t());
    let g_c = pb.t().dot(&g_pre_a) + g_pre_b.t().dot(pa);

    // C = tanh(Sᵀ), S = d_a W_b d_bᵀ.
    let g_s = (&g_c * &c.mapv(|v| 1.0 - v * v)).reversed_axes();
    grads.affinity += &d_a.t().dot(&g_s).dot(d_b);
    g_da += &g_s.dot(d_b).dot(&params.affinity.t());
    g_db += &g_s.t().dot(d_a).dot(&params.affinity);

    // PA = W_A d_aᵀ, PB = W_B d_bᵀ.
    grads.proj_a += &g_pa.dot(d_a);
    grads.proj_b += &g_pb.dot(d_b);
    g_da += &g_pa.t().dot(&params.proj_a);
    g_db += &g_pb.t().dot(&params.proj_b);

    CoAttentionBackward { d_a: g_da, d_b: g_db }
}

fn outer(a: &Array1<f64>, b: &Array1<f64>) -> Array2<f64> {
    let a2 = a.view().insert_axis(Axis(1));
    let b2 = b.view().insert_axis(Axis(0));
    a2.dot(&b2)
}
