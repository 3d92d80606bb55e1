//! Uniform access to learnable tensors, plus the optimizers that update them.
//!
//! Every parameter block exposes its tensors in a fixed order through
//! [`ParamSet`]. Gradients use the same struct type as the parameters, so an
//! optimizer only has to zip two visitations together.

use ndarray::{Array1, Array2};

pub trait ParamSet {
    /// Visits `(name, shape, data)` in a fixed order.
    fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64]));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64]));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, d| n += d.len());
        n
    }

    fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, d| out.extend_from_slice(d));
        out
    }

    fn load_flat(&mut self, values: &[f64]) {
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            d.copy_from_slice(&values[offset..offset + d.len()]);
            offset += d.len();
        });
        assert_eq!(offset, values.len(), "flat parameter length mismatch");
    }

    fn fill(&mut self, value: f64) {
        self.visit_mut(&mut |_, d| d.iter_mut().for_each(|x| *x = value));
    }

    fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, _, d| ok &= d.iter().all(|v| v.is_finite()));
        ok
    }

    /// `self += scale * other`; both must have identical layout.
    fn add_scaled(&mut self, other: &Self, scale: f64)
    where
        Self: Sized,
    {
        let flat = other.flatten();
        let mut offset = 0;
        self.visit_mut(&mut |_, d| {
            for (x, g) in d.iter_mut().zip(&flat[offset..]) {
                *x += scale * g;
            }
            offset += d.len();
        });
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.fill(0.0);
        z
    }
}

pub(crate) fn visit_matrix(
    prefix: &str,
    name: &str,
    m: &Array2<f64>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(
        &format!("{prefix}{name}"),
        m.shape(),
        m.as_slice().expect("standard layout"),
    );
}

pub(crate) fn visit_vector(
    prefix: &str,
    name: &str,
    v: &Array1<f64>,
    f: &mut dyn FnMut(&str, &[usize], &[f64]),
) {
    f(
        &format!("{prefix}{name}"),
        v.shape(),
        v.as_slice().expect("standard layout"),
    );
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Adaptive-moment optimizer over a flattened parameter set.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(lr: f64, num_params: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        let g = grads.flatten();
        assert_eq!(g.len(), self.m.len(), "optimizer state size mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m, v) = (&mut self.m, &mut self.v);
        let mut offset = 0;
        params.visit_mut(&mut |_, d| {
            for (j, x) in d.iter_mut().enumerate() {
                let i = offset + j;
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                *x -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            offset += d.len();
        });
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr, num_params)),
        }
    }

    pub fn step<P: ParamSet>(&mut self, params: &mut P, grads: &P) {
        match self {
            Optimizer::Sgd { lr } => params.add_scaled(grads, -*lr),
            Optimizer::Adam(adam) => adam.step(params, grads),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone)]
    struct Toy {
        w: Array2<f64>,
        b: Array1<f64>,
    }

    impl ParamSet for Toy {
        fn visit(&self, f: &mut dyn FnMut(&str, &[usize], &[f64])) {
            visit_matrix("toy.", "w", &self.w, f);
            visit_vector("toy.", "b", &self.b, f);
        }
        fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut [f64])) {
            f("toy.w", self.w.as_slice_mut().unwrap());
            f("toy.b", self.b.as_slice_mut().unwrap());
        }
    }

    #[test]
    fn flatten_and_load_are_inverse() {
        let mut t = Toy {
            w: Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            b: Array1::from(vec![5.0]),
        };
        let flat = t.flatten();
        assert_eq!(flat, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        t.fill(0.0);
        t.load_flat(&flat);
        assert_eq!(t.flatten(), flat);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient_sign() {
        let mut t = Toy {
            w: Array2::zeros((1, 2)),
            b: Array1::zeros(1),
        };
        let mut g = t.zeros_like();
        g.w[[0, 0]] = 3.0;
        g.w[[0, 1]] = -0.01;
        let mut adam = Adam::new(0.1, t.num_params());
        adam.step(&mut t, &g);
        assert!((t.w[[0, 0]] + 0.1).abs() < 1e-6);
        assert!((t.w[[0, 1]] - 0.1).abs() < 1e-4);
        assert_eq!(t.b[0], 0.0);
    }
}
