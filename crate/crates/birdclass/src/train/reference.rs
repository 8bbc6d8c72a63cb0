//! The built-in convolutional backbone: four blocks of (3x3 conv, swish,
//! 2x2 max-pool) at widths 16/32/64/64, global average pooling, and a dense
//! 16-way head. Small enough to train on a CPU in seconds at low resolution.

use ndarray::{Array1, Array2, Array3};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::activations::{swish_f32, swish_grad_f32};
use super::layers::{
    global_avg_pool, global_avg_pool_backward, maxpool2_backward, maxpool2_forward, softmax_f64,
    Conv3x3, Dense,
};
use crate::dataset::NUM_SPECIES;
use crate::raster::Image;
use crate::rng::uniform;

pub const CHANNELS: [usize; 4] = [16, 32, 64, 64];

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceCnn {
    pub(super) convs: Vec<Conv3x3>,
    pub(super) head: Dense,
}

/// Per-tensor gradients in [`ReferenceCnn::param_names`] order.
pub struct Gradients {
    pub tensors: Vec<Vec<f32>>,
}

/// Saved intermediates from one forward pass, enough to backpropagate.
pub struct ForwardTrace {
    /// Input to each conv block (the image, then each pooled activation).
    block_inputs: Vec<Array3<f32>>,
    /// im2col patches per conv.
    cols: Vec<Array2<f32>>,
    /// Pre-activation conv outputs per block.
    pre_acts: Vec<Array3<f32>>,
    /// Swish outputs per block (the pool inputs).
    acts: Vec<Array3<f32>>,
    /// Pool argmax tables per block.
    argmaxes: Vec<Vec<u32>>,
    /// Final pooled activation entering global average pooling.
    gap_input_dim: (usize, usize, usize),
    /// Feature vector entering the head.
    features: Array1<f32>,
    pub logits: Vec<f32>,
}

impl ReferenceCnn {
    /// He-uniform init (limit sqrt(6 / fan_in)), biases zero, all draws from
    /// one seeded stream in fixed tensor order.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw_conv = |c_out: usize, c_in: usize| {
            let fan_in = (c_in * 9) as f64;
            let limit = (6.0 / fan_in).sqrt();
            let mut conv = Conv3x3::zeros(c_out, c_in);
            for v in conv.weight.iter_mut() {
                *v = uniform(&mut rng, -limit, limit) as f32;
            }
            conv
        };
        let mut convs = Vec::with_capacity(4);
        let mut c_in = 3;
        for &c_out in &CHANNELS {
            convs.push(draw_conv(c_out, c_in));
            c_in = c_out;
        }
        let mut head = Dense::zeros(NUM_SPECIES, CHANNELS[3]);
        let limit = (6.0 / CHANNELS[3] as f64).sqrt();
        for v in head.weight.iter_mut() {
            *v = uniform(&mut rng, -limit, limit) as f32;
        }
        Self { convs, head }
    }

    pub fn param_names() -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..4 {
            names.push(format!("conv{}.weight", i + 1));
            names.push(format!("conv{}.bias", i + 1));
        }
        names.push("head.weight".to_string());
        names.push("head.bias".to_string());
        names
    }

    pub fn param_slices(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for conv in &self.convs {
            out.push(conv.weight.as_slice().expect("contiguous"));
            out.push(conv.bias.as_slice().expect("contiguous"));
        }
        out.push(self.head.weight.as_slice().expect("contiguous"));
        out.push(self.head.bias.as_slice().expect("contiguous"));
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out: Vec<&mut [f32]> = Vec::new();
        for conv in &mut self.convs {
            out.push(conv.weight.as_slice_mut().expect("contiguous"));
            out.push(conv.bias.as_slice_mut().expect("contiguous"));
        }
        out.push(self.head.weight.as_slice_mut().expect("contiguous"));
        out.push(self.head.bias.as_slice_mut().expect("contiguous"));
        out
    }

    /// Forward pass on a (3, r, r) input, keeping intermediates.
    pub fn forward(&self, input: Array3<f32>) -> ForwardTrace {
        let mut block_inputs = Vec::with_capacity(4);
        let mut cols = Vec::with_capacity(4);
        let mut pre_acts = Vec::with_capacity(4);
        let mut acts = Vec::with_capacity(4);
        let mut argmaxes = Vec::with_capacity(4);
        let mut current = input;
        for conv in &self.convs {
            let (pre, col) = conv.forward(&current);
            let act = pre.mapv(swish_f32);
            let (pooled, argmax) = maxpool2_forward(&act);
            block_inputs.push(current);
            cols.push(col);
            pre_acts.push(pre);
            acts.push(act);
            argmaxes.push(argmax);
            current = pooled;
        }
        let gap_input_dim = current.dim();
        let features = global_avg_pool(&current);
        let logits = self.head.forward(&features).to_vec();
        ForwardTrace {
            block_inputs,
            cols,
            pre_acts,
            acts,
            argmaxes,
            gap_input_dim,
            features,
            logits,
        }
    }

    /// Backpropagates d loss / d logits through the whole network.
    pub fn backward(&self, trace: &ForwardTrace, dlogits: &[f32]) -> Gradients {
        let dlogits = Array1::from_vec(dlogits.to_vec());
        let (dhead_w, dhead_b, dfeatures) = self.head.backward(&trace.features, &dlogits);
        let mut dcurrent = global_avg_pool_backward(&dfeatures, trace.gap_input_dim);

        let mut conv_grads: Vec<(Array2<f32>, Array1<f32>)> = Vec::with_capacity(4);
        for i in (0..4).rev() {
            let dact = maxpool2_backward(&dcurrent, &trace.argmaxes[i], trace.acts[i].dim());
            let dpre = &dact * &trace.pre_acts[i].mapv(swish_grad_f32);
            let (dw, db, dinput) = self.convs[i].backward(&trace.cols[i], &dpre);
            conv_grads.push((dw, db));
            dcurrent = dinput;
            debug_assert_eq!(dcurrent.dim(), trace.block_inputs[i].dim());
        }
        conv_grads.reverse();

        let mut tensors = Vec::with_capacity(10);
        for (dw, db) in conv_grads {
            tensors.push(dw.into_raw_vec_and_offset().0);
            tensors.push(db.into_raw_vec_and_offset().0);
        }
        tensors.push(dhead_w.into_raw_vec_and_offset().0);
        tensors.push(dhead_b.into_raw_vec_and_offset().0);
        Gradients { tensors }
    }

    /// Probabilities for one preprocessed input.
    pub fn probabilities(&self, input: Array3<f32>) -> Vec<f64> {
        softmax_f64(&self.forward(input).logits)
    }
}

/// Resizes to `resolution` square and scales channels to [0, 1], laid out
/// (channel, y, x).
pub fn image_to_input(image: &Image, resolution: u32) -> Array3<f32> {
    let resized = if image.width() == resolution && image.height() == resolution {
        image.clone()
    } else {
        image.resize(resolution, resolution)
    };
    let r = resolution as usize;
    let mut input = Array3::<f32>::zeros((3, r, r));
    for y in 0..r {
        for x in 0..r {
            let px = resized.pixel(x as u32, y as u32);
            for c in 0..3 {
                input[(c, y, x)] = px[c] as f32 / 255.0;
            }
        }
    }
    input
}
