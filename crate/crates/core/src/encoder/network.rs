use std::ops::Range;

use rand::Rng;

use super::SparseVec;

/// Offsets of each parameter block inside the flat buffer.
///
/// `w1` is stored input-major (`w1[j * hidden + h]`) so the column touched by
/// a sparse input coordinate is contiguous. `w2` is row-major
/// (`w2[f * hidden + h]`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub hash_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
}

impl Layout {
    pub fn new(hash_dim: usize, hidden_dim: usize, feature_dim: usize) -> Self {
        Layout {
            hash_dim,
            hidden_dim,
            feature_dim,
        }
    }

    pub fn w1(&self) -> Range<usize> {
        0..self.hash_dim * self.hidden_dim
    }

    pub fn b1(&self) -> Range<usize> {
        let s = self.w1().end;
        s..s + self.hidden_dim
    }

    pub fn w2(&self) -> Range<usize> {
        let s = self.b1().end;
        s..s + self.feature_dim * self.hidden_dim
    }

    pub fn b2(&self) -> Range<usize> {
        let s = self.w2().end;
        s..s + self.feature_dim
    }

    pub fn head_w(&self) -> Range<usize> {
        let s = self.b2().end;
        s..s + self.feature_dim
    }

    pub fn head_b(&self) -> usize {
        self.head_w().end
    }

    pub fn len(&self) -> usize {
        self.head_b() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layout: Layout,
    pub data: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub input: SparseVec,
    pub pre_activation: Vec<f64>,
    pub hidden: Vec<f64>,
    pub features: Vec<f64>,
    pub score: f64,
}

impl Params {
    pub fn zeros(layout: Layout) -> Self {
        Params {
            layout,
            data: vec![0.0; layout.len()],
        }
    }

    pub(crate) fn glorot_uniform<R: Rng>(layout: Layout, rng: &mut R) -> Self {
        let mut p = Params::zeros(layout);
        let blocks = [
            (layout.w1(), layout.hash_dim, layout.hidden_dim),
            (layout.w2(), layout.hidden_dim, layout.feature_dim),
            (layout.head_w(), layout.feature_dim, 1),
        ];
        for (range, fan_in, fan_out) in blocks {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in &mut p.data[range] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        p
    }

    pub fn w1(&self) -> &[f64] {
        &self.data[self.layout.w1()]
    }
    pub fn b1(&self) -> &[f64] {
        &self.data[self.layout.b1()]
    }
    pub fn w2(&self) -> &[f64] {
        &self.data[self.layout.w2()]
    }
    pub fn b2(&self) -> &[f64] {
        &self.data[self.layout.b2()]
    }
    pub fn head_w(&self) -> &[f64] {
        &self.data[self.layout.head_w()]
    }
    pub fn head_b(&self) -> f64 {
        self.data[self.layout.head_b()]
    }

    pub fn forward(&self, input: SparseVec) -> Forward {
        let l = self.layout;
        let hd = l.hidden_dim;
        let w1 = self.w1();
        let mut pre = self.b1().to_vec();
        for &(j, v) in &input.entries {
            let col = &w1[j as usize * hd..(j as usize + 1) * hd];
            for (p, w) in pre.iter_mut().zip(col) {
                *p += v * w;
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&p| p.max(0.0)).collect();
        let w2 = self.w2();
        let features: Vec<f64> = self
            .b2()
            .iter()
            .enumerate()
            .map(|(f, &b)| {
                let row = &w2[f * hd..(f + 1) * hd];
                b + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
            })
            .collect();
        let score = self.head_b()
            + self
                .head_w()
                .iter()
                .zip(&features)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        Forward {
            input,
            pre_activation: pre,
            hidden,
            features,
            score,
        }
    }

    /// Accumulates `Σ_f upstream[f] · ∂φ_f/∂θ` into `grad` (encoder blocks only).
    pub fn backward_features(&self, fwd: &Forward, upstream: &[f64], grad: &mut [f64]) {
        let l = self.layout;
        let hd = l.hidden_dim;
        let w2 = self.w2();

        let mut d_hidden = vec![0.0; hd];
        {
            let g_w2 = &mut grad[l.w2()];
            for (f, &u) in upstream.iter().enumerate() {
                if u == 0.0 {
                    continue;
                }
                let row = &w2[f * hd..(f + 1) * hd];
                let g_row = &mut g_w2[f * hd..(f + 1) * hd];
                for h in 0..hd {
                    g_row[h] += u * fwd.hidden[h];
                    d_hidden[h] += u * row[h];
                }
            }
        }
        for (g, &u) in grad[l.b2()].iter_mut().zip(upstream) {
            *g += u;
        }

        let d_pre: Vec<f64> = d_hidden
            .iter()
            .zip(&fwd.pre_activation)
            .map(|(&d, &p)| if p > 0.0 { d } else { 0.0 })
            .collect();
        for (g, &d) in grad[l.b1()].iter_mut().zip(&d_pre) {
            *g += d;
        }
        let g_w1 = &mut grad[l.w1()];
        for &(j, v) in &fwd.input.entries {
            let col = &mut g_w1[j as usize * hd..(j as usize + 1) * hd];
            for (g, &d) in col.iter_mut().zip(&d_pre) {
                *g += v * d;
            }
        }
    }

    /// Accumulates `weight · ∂o/∂θ` into `grad`.
    pub fn backward_score(&self, fwd: &Forward, weight: f64, grad: &mut [f64]) {
        let l = self.layout;
        for (g, &x) in grad[l.head_w()].iter_mut().zip(&fwd.features) {
            *g += weight * x;
        }
        grad[l.head_b()] += weight;
        let upstream: Vec<f64> = self.head_w().iter().map(|&w| weight * w).collect();
        self.backward_features(fwd, &upstream, grad);
    }
}
