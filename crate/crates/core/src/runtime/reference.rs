//! FP32 reference training of the same model, for accuracy comparison.

use crate::error::{Error, Result};
use crate::kernels::reference as f;
use crate::qtensor::FloatTensor;
use crate::translator::{ModelSpec, ResolvedLayer, TrainGraph};

use super::data::Dataset;
use super::params::init_float;

pub struct FloatNet {
    layers: Vec<ResolvedLayer>,
    /// One weight per weighted layer, in layer order.
    pub weights: Vec<FloatTensor>,
    classes: usize,
}

enum Cache {
    Input(FloatTensor),
    Pool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Shape(Vec<usize>),
}

impl FloatNet {
    /// Weights drawn exactly as the INT8 run draws its FP32 initial values.
    pub fn new(model: &ModelSpec, graph: &TrainGraph, seed: u64) -> Result<Self> {
        let layers = model.resolve()?.into_iter().map(|(l, _)| l).collect();
        Ok(Self {
            layers,
            weights: init_float(&graph.params, graph.initializer, seed)?,
            classes: model.classes,
        })
    }

    fn forward(&self, x: &FloatTensor, keep: bool) -> Result<(FloatTensor, Vec<Cache>)> {
        let mut caches = Vec::new();
        let mut h = x.clone();
        let mut wi = 0;
        for l in &self.layers {
            let cache;
            h = match l {
                ResolvedLayer::Conv2D { params, .. } => {
                    cache = Cache::Input(h.clone());
                    wi += 1;
                    f::conv2d(&h, &self.weights[wi - 1], *params)?
                }
                ResolvedLayer::Dense { .. } => {
                    cache = Cache::Input(h.clone());
                    wi += 1;
                    f::matmul(&h, &self.weights[wi - 1])?
                }
                ResolvedLayer::ReLU => {
                    cache = Cache::Input(h.clone());
                    f::relu(&h)
                }
                ResolvedLayer::MaxPool(p) => {
                    let (y, argmax) = f::maxpool(&h, *p)?;
                    cache = Cache::Pool {
                        argmax,
                        in_shape: h.shape().to_vec(),
                    };
                    y
                }
                ResolvedLayer::Flatten => {
                    cache = Cache::Shape(h.shape().to_vec());
                    let n = h.shape()[0];
                    h.reshape(vec![n, h.len() / n])?
                }
            };
            if keep {
                caches.push(cache);
            }
        }
        Ok((h, caches))
    }

    /// One SGD step on the batch-summed loss; returns the mean loss.
    pub fn step(&mut self, x: &FloatTensor, labels: &[usize], lr: f32) -> Result<f32> {
        let (logits, caches) = self.forward(x, true)?;
        let (loss, mut e) = f::softmax_xent(&logits, labels)?;
        let mut grads: Vec<Option<FloatTensor>> = vec![None; self.weights.len()];
        let mut wi = self.weights.len();
        for (l, c) in self.layers.iter().zip(&caches).rev() {
            e = match (l, c) {
                (ResolvedLayer::Conv2D { params, weight }, Cache::Input(xin)) => {
                    wi -= 1;
                    grads[wi] = Some(f::conv2d_filter_grad(
                        xin,
                        &e,
                        *params,
                        (weight[2], weight[3]),
                    )?);
                    let hw = (xin.shape()[2], xin.shape()[3]);
                    f::conv2d_input_grad(&e, &self.weights[wi], *params, hw)?
                }
                (ResolvedLayer::Dense { .. }, Cache::Input(xin)) => {
                    wi -= 1;
                    grads[wi] = Some(f::matmul(&f::transpose(xin)?, &e)?);
                    f::matmul(&e, &f::transpose(&self.weights[wi])?)?
                }
                (ResolvedLayer::ReLU, Cache::Input(xin)) => {
                    f::relu_bwd(&e.reshape(xin.shape().to_vec())?, xin)?
                }
                (ResolvedLayer::MaxPool(_), Cache::Pool { argmax, in_shape }) => {
                    f::maxpool_bwd(&e, argmax, in_shape)?
                }
                (ResolvedLayer::Flatten, Cache::Shape(s)) => e.reshape(s.clone())?,
                _ => return Err(Error::Internal("layer cache mismatch".into())),
            };
        }
        for (w, g) in self.weights.iter_mut().zip(grads) {
            let g = g.ok_or_else(|| Error::Internal("missing weight gradient".into()))?;
            let data = w
                .data()
                .iter()
                .zip(g.data())
                .map(|(&a, &b)| a - lr * b)
                .collect();
            *w = FloatTensor::new(data, w.shape().to_vec())?;
        }
        Ok(loss)
    }

    pub fn accuracy(&self, data: &Dataset, chunk: usize) -> Result<f64> {
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut hits = 0usize;
        for part in idx.chunks(chunk.max(1)) {
            let (x, labels) = data.gather(part)?;
            let (logits, _) = self.forward(&x, false)?;
            for (i, &l) in labels.iter().enumerate() {
                let row = &logits.data()[i * self.classes..(i + 1) * self.classes];
                let best = row
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |(bi, bv), (j, &v)| {
                        if v > bv {
                            (j, v)
                        } else {
                            (bi, bv)
                        }
                    })
                    .0;
                hits += (best == l) as usize;
            }
        }
        Ok(hits as f64 / data.len().max(1) as f64)
    }
}
