//! Network building blocks over `ndarray`: 3x3 same-padding convolution via
//! im2col, 2x2 max-pool with argmax bookkeeping, global average pooling, and
//! a dense head. Forward passes keep what backward needs.

use ndarray::{Array1, Array2, Array3};

/// Unfolds a (c, h, w) input into (c*9, h*w) patch columns for a 3x3
/// convolution with zero padding 1.
pub fn im2col3x3(input: &Array3<f32>) -> Array2<f32> {
    let (c, h, w) = input.dim();
    let mut cols = Array2::<f32>::zeros((c * 9, h * w));
    for ci in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ci * 9 + ky * 3 + kx;
                for y in 0..h {
                    let sy = y as i64 + ky as i64 - 1;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as i64 + kx as i64 - 1;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        cols[(row, y * w + x)] = input[(ci, sy as usize, sx as usize)];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds patch-column gradients back to input positions; the adjoint
/// of [`im2col3x3`].
pub fn col2im3x3(dcols: &Array2<f32>, c: usize, h: usize, w: usize) -> Array3<f32> {
    let mut dinput = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = ci * 9 + ky * 3 + kx;
                for y in 0..h {
                    let sy = y as i64 + ky as i64 - 1;
                    if sy < 0 || sy >= h as i64 {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as i64 + kx as i64 - 1;
                        if sx < 0 || sx >= w as i64 {
                            continue;
                        }
                        dinput[(ci, sy as usize, sx as usize)] += dcols[(row, y * w + x)];
                    }
                }
            }
        }
    }
    dinput
}

/// 3x3 convolution, padding 1, stride 1. Weight rows are output channels;
/// columns follow im2col order (input channel, then kernel y, then x).
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3x3 {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Conv3x3 {
    pub fn zeros(c_out: usize, c_in: usize) -> Self {
        Self {
            weight: Array2::zeros((c_out, c_in * 9)),
            bias: Array1::zeros(c_out),
        }
    }

    pub fn forward(&self, input: &Array3<f32>) -> (Array3<f32>, Array2<f32>) {
        let (_, h, w) = input.dim();
        let cols = im2col3x3(input);
        let mut out = self.weight.dot(&cols);
        for (mut row, b) in out.rows_mut().into_iter().zip(self.bias.iter()) {
            row += *b;
        }
        let c_out = self.weight.nrows();
        (
            out.into_shape_with_order((c_out, h, w)).expect("conv shape"),
            cols,
        )
    }

    /// Returns (dweight, dbias, dinput) given the saved `cols` and the
    /// upstream gradient.
    pub fn backward(
        &self,
        cols: &Array2<f32>,
        dout: &Array3<f32>,
    ) -> (Array2<f32>, Array1<f32>, Array3<f32>) {
        let (c_out, h, w) = dout.dim();
        let dout_mat = dout
            .to_owned()
            .into_shape_with_order((c_out, h * w))
            .expect("dout shape");
        let dweight = dout_mat.dot(&cols.t());
        let dbias = dout_mat.sum_axis(ndarray::Axis(1));
        let dcols = self.weight.t().dot(&dout_mat);
        let c_in = self.weight.ncols() / 9;
        (dweight, dbias, col2im3x3(&dcols, c_in, h, w))
    }
}

/// 2x2 max-pool, stride 2. Trailing odd rows/columns are dropped. Argmax
/// positions (flat y*w + x per channel) feed the backward scatter.
pub fn maxpool2_forward(input: &Array3<f32>) -> (Array3<f32>, Vec<u32>) {
    let (c, h, w) = input.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array3::<f32>::zeros((c, oh, ow));
    let mut argmax = vec![0u32; c * oh * ow];
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_pos = 0u32;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let (y, x) = (oy * 2 + dy, ox * 2 + dx);
                        let v = input[(ci, y, x)];
                        if v > best {
                            best = v;
                            best_pos = (y * w + x) as u32;
                        }
                    }
                }
                out[(ci, oy, ox)] = best;
                argmax[(ci * oh + oy) * ow + ox] = best_pos;
            }
        }
    }
    (out, argmax)
}

pub fn maxpool2_backward(
    dout: &Array3<f32>,
    argmax: &[u32],
    input_dim: (usize, usize, usize),
) -> Array3<f32> {
    let (c, h, w) = input_dim;
    let (_, oh, ow) = dout.dim();
    let mut dinput = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let pos = argmax[(ci * oh + oy) * ow + ox] as usize;
                dinput[(ci, pos / w, pos % w)] += dout[(ci, oy, ox)];
            }
        }
    }
    dinput
}

/// Mean over each channel plane.
pub fn global_avg_pool(input: &Array3<f32>) -> Array1<f32> {
    let (c, h, w) = input.dim();
    let scale = 1.0 / (h * w) as f32;
    Array1::from_iter(
        (0..c).map(|ci| input.index_axis(ndarray::Axis(0), ci).sum() * scale),
    )
}

pub fn global_avg_pool_backward(
    dout: &Array1<f32>,
    input_dim: (usize, usize, usize),
) -> Array3<f32> {
    let (c, h, w) = input_dim;
    let scale = 1.0 / (h * w) as f32;
    let mut dinput = Array3::<f32>::zeros((c, h, w));
    for ci in 0..c {
        dinput
            .index_axis_mut(ndarray::Axis(0), ci)
            .fill(dout[ci] * scale);
    }
    dinput
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f32>,
    pub bias: Array1<f32>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn forward(&self, input: &Array1<f32>) -> Array1<f32> {
        self.weight.dot(input) + &self.bias
    }

    pub fn backward(
        &self,
        input: &Array1<f32>,
        dout: &Array1<f32>,
    ) -> (Array2<f32>, Array1<f32>, Array1<f32>) {
        let dweight = dout
            .view()
            .into_shape_with_order((dout.len(), 1))
            .expect("dout col")
            .dot(&input.view().into_shape_with_order((1, input.len())).expect("input row"));
        (dweight, dout.clone(), self.weight.t().dot(dout))
    }
}

/// Softmax over logits, computed in f64 with max subtraction; the result
/// sums to 1 within 1e-6 by construction.
pub fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| ((v as f64) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
