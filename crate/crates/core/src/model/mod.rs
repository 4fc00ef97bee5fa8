//! The multi-stream 3D CNN.
//!
//! Each region of interest gets its own stream of conv layers
//! (conv -> BN -> ReLU, optionally followed by 2x2 spatial max pooling) and a
//! fully connected FC1 (linear -> BN -> ReLU -> dropout). The FC1 outputs of
//! all streams are concatenated and fed to a shared FC2 with the same
//! structure, then to a 2-unit output layer and a softmax. No layer has a
//! bias term and nothing pools or pads along time: temporal kernels are
//! applied in valid mode until a single time step remains.

mod checkpoint;
pub(crate) mod config;
pub mod gradcheck;

use rand::Rng;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ConvLayerShape, InitScheme, LayerPlan, ModelConfig, POOL_WINDOW, ROI_NAMES};

use crate::error::{Error, Result};
use crate::nn::{
    batchnorm_backward, batchnorm_forward, concat, conv3d, conv3d_backward, dropout, dropout_backward, linear,
    linear_backward, maxpool2d, maxpool2d_backward, relu, relu_backward, softmax, split_features, BatchNormCache,
    BatchNormState, ConvSpec, DropoutMask, Mode, PoolIndices,
};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub spec: ConvSpec,
    pub weights: Tensor<T>,
    pub bn: BatchNormState<T>,
    pub pooled: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Tensor<T>,
    pub bn: BatchNormState<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stream<T> {
    pub roi: String,
    pub conv: Vec<ConvLayer<T>>,
    pub fc1: DenseLayer<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T = f32> {
    config: ModelConfig,
    plan: LayerPlan,
    streams: Vec<Stream<T>>,
    fc2: DenseLayer<T>,
    output: Tensor<T>,
}

/// One `[N, C, T, H, W]` tensor per stream, all with the same `N`.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamBatch<T = f32> {
    streams: Vec<Tensor<T>>,
}

impl<T: Scalar> StreamBatch<T> {
    pub fn new(streams: Vec<Tensor<T>>) -> Result<Self> {
        let n = streams
            .first()
            .ok_or_else(|| Error::InvalidArgument("batch with no streams".into()))?
            .dims5()?[0];
        for s in &streams {
            if s.dims5()?[0] != n || s.shape() != streams[0].shape() {
                return Err(Error::Shape(format!(
                    "stream tensors disagree: {:?} vs {:?}",
                    s.shape(),
                    streams[0].shape()
                )));
            }
        }
        Ok(StreamBatch { streams })
    }

    pub fn batch_size(&self) -> usize {
        self.streams[0].shape()[0]
    }

    pub fn streams(&self) -> &[Tensor<T>] {
        &self.streams
    }

    pub fn into_streams(self) -> Vec<Tensor<T>> {
        self.streams
    }

    pub fn cast<U: Scalar>(&self) -> StreamBatch<U> {
        StreamBatch {
            streams: self.streams.iter().map(|t| t.cast()).collect(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
}

struct ConvTape<T> {
    input: Tensor<T>,
    bn_cache: BatchNormCache<T>,
    bn_out: Tensor<T>,
    pool: Option<PoolIndices>,
}

struct DenseTape<T> {
    input: Tensor<T>,
    bn_cache: BatchNormCache<T>,
    bn_out: Tensor<T>,
    mask: Option<DropoutMask<T>>,
}

struct StreamTape<T> {
    conv: Vec<ConvTape<T>>,
    conv_out_shape: Vec<usize>,
    fc1: DenseTape<T>,
}

/// Intermediate values of a forward pass, consumed by [`Model::backward`].
pub struct Tape<T> {
    mode: Mode,
    streams: Vec<StreamTape<T>>,
    fc2: DenseTape<T>,
    fc2_out: Tensor<T>,
}

impl<T: Scalar> Tape<T> {
    /// Temporal extent of the tensor entering each conv layer, followed by
    /// the extent leaving the last one, for every stream.
    pub fn temporal_extents(&self) -> Vec<Vec<usize>> {
        self.streams
            .iter()
            .map(|s| {
                let mut t: Vec<usize> = s.conv.iter().map(|c| c.input.shape()[2]).collect();
                t.push(s.conv_out_shape[2]);
                t
            })
            .collect()
    }
}

/// Per-stream activation probes, useful for checking stream independence.
pub struct Activations<T> {
    pub fc1: Vec<Tensor<T>>,
    pub output: ForwardOutput<T>,
}

fn init_std(scheme: InitScheme, fan_in: usize, fan_out: usize) -> f64 {
    match scheme {
        InitScheme::HeNormal => (2.0 / fan_in as f64).sqrt(),
        InitScheme::XavierNormal => (2.0 / (fan_in + fan_out) as f64).sqrt(),
    }
}

impl<T: Scalar> DenseLayer<T> {
    fn forward<R: Rng + ?Sized>(
        &self,
        input: Tensor<T>,
        mode: Mode,
        dropout_rate: f64,
        rng: &mut R,
    ) -> Result<(Tensor<T>, DenseTape<T>)> {
        let z = linear(&input, &self.weights)?;
        let (bn_out, bn_cache) = batchnorm_forward(&z, &self.bn, mode)?;
        let a = relu(&bn_out);
        let (out, mask) = dropout(&a, dropout_rate, mode, rng)?;
        Ok((
            out,
            DenseTape {
                input,
                bn_cache,
                bn_out,
                mask,
            },
        ))
    }

    /// Returns `(grad_input, grad_weights, grad_gamma)`.
    fn backward(&self, tape: &DenseTape<T>, grad: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
        let g = dropout_backward(grad, tape.mask.as_ref())?;
        let g = relu_backward(&tape.bn_out, &g)?;
        let (g, g_gamma) = batchnorm_backward(&g, &tape.bn_cache, &self.bn.gamma)?;
        let (gx, gw) = linear_backward(&tape.input, &self.weights, &g)?;
        Ok((gx, gw, g_gamma))
    }
}

impl<T: Scalar> Model<T> {
    /// Builds a model with fan-in scaled random weights, BN scales of 1 and
    /// running statistics (0, 1). Deterministic for a given generator state.
    pub fn build<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let plan = config.validate()?;
        let bn = |c: usize| BatchNormState::new(c, config.bn_momentum, config.bn_epsilon);
        let mut streams = Vec::with_capacity(config.num_streams());
        for roi in &config.roi_names {
            let mut conv = Vec::with_capacity(plan.conv.len());
            for (i, shape) in plan.conv.iter().enumerate() {
                let (kt, ks) = (config.temporal_kernels[i], config.spatial_kernels[i]);
                let (f, c) = (shape.conv_out.0, shape.input.0);
                let spec = ConvSpec::new(f, (kt, ks, ks), (ks / 2, ks / 2))?;
                let std = init_std(config.init, c * kt * ks * ks, f * kt * ks * ks);
                conv.push(ConvLayer {
                    spec,
                    weights: Tensor::randn(&[f, c, kt, ks, ks], std, rng),
                    bn: bn(f)?,
                    pooled: shape.pooled,
                });
            }
            let fc1 = DenseLayer {
                weights: Tensor::randn(
                    &[plan.flat_features, config.fc1_width],
                    init_std(config.init, plan.flat_features, config.fc1_width),
                    rng,
                ),
                bn: bn(config.fc1_width)?,
            };
            streams.push(Stream {
                roi: roi.clone(),
                conv,
                fc1,
            });
        }
        let fc2_in = config.num_streams() * config.fc1_width;
        let fc2 = DenseLayer {
            weights: Tensor::randn(
                &[fc2_in, config.fc2_width],
                init_std(config.init, fc2_in, config.fc2_width),
                rng,
            ),
            bn: bn(config.fc2_width)?,
        };
        let output = Tensor::randn(&[config.fc2_width, 2], init_std(config.init, config.fc2_width, 2), rng);
        Ok(Model {
            config: config.clone(),
            plan,
            streams,
            fc2,
            output,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn plan(&self) -> &LayerPlan {
        &self.plan
    }

    pub fn streams(&self) -> &[Stream<T>] {
        &self.streams
    }

    fn check_batch(&self, batch: &StreamBatch<T>) -> Result<()> {
        if batch.streams.len() != self.streams.len() {
            return Err(Error::Shape(format!(
                "batch has {} streams, model has {}",
                batch.streams.len(),
                self.streams.len()
            )));
        }
        let [_, c, t, h, w] = batch.streams[0].dims5()?;
        let cfg = &self.config;
        if (c, t, h, w) != (cfg.channels_in, cfg.input_frames, cfg.roi_pixels.0, cfg.roi_pixels.1) {
            return Err(Error::Shape(format!(
                "stream input [_, {c}, {t}, {h}, {w}] does not match model [_, {}, {}, {}, {}]",
                cfg.channels_in, cfg.input_frames, cfg.roi_pixels.0, cfg.roi_pixels.1
            )));
        }
        Ok(())
    }

    fn run<R: Rng + ?Sized>(&self, batch: &StreamBatch<T>, mode: Mode, rng: &mut R) -> Result<(ForwardOutput<T>, Tape<T>)> {
        self.check_batch(batch)?;
        let n = batch.batch_size();
        let rate = self.config.dropout_rate;
        let mut stream_tapes = Vec::with_capacity(self.streams.len());
        let mut fc1_outputs = Vec::with_capacity(self.streams.len());
        for (stream, x) in self.streams.iter().zip(&batch.streams) {
            let mut x = x.clone();
            let mut conv_tapes = Vec::with_capacity(stream.conv.len());
            for layer in &stream.conv {
                let z = conv3d(&x, &layer.weights, &layer.spec)?;
                let (bn_out, bn_cache) = batchnorm_forward(&z, &layer.bn, mode)?;
                let a = relu(&bn_out);
                let (y, pool) = if layer.pooled {
                    let (p, idx) = maxpool2d(&a, POOL_WINDOW)?;
                    (p, Some(idx))
                } else {
                    (a, None)
                };
                conv_tapes.push(ConvTape {
                    input: std::mem::replace(&mut x, y),
                    bn_cache,
                    bn_out,
                    pool,
                });
            }
            let conv_out_shape = x.shape().to_vec();
            let flat = x.reshape(&[n, self.plan.flat_features])?;
            let (h1, fc1) = stream.fc1.forward(flat, mode, rate, rng)?;
            fc1_outputs.push(h1);
            stream_tapes.push(StreamTape {
                conv: conv_tapes,
                conv_out_shape,
                fc1,
            });
        }
        let joined = concat(&fc1_outputs.iter().collect::<Vec<_>>())?;
        let (fc2_out, fc2) = self.fc2.forward(joined, mode, rate, rng)?;
        let logits = linear(&fc2_out, &self.output)?;
        let probs = softmax(&logits)?;
        Ok((
            ForwardOutput { logits, probs },
            Tape {
                mode,
                streams: stream_tapes,
                fc2,
                fc2_out,
            },
        ))
    }

    fn commit_running_stats(&mut self, tape: &Tape<T>) {
        if tape.mode != Mode::Train {
            return;
        }
        for (stream, st) in self.streams.iter_mut().zip(&tape.streams) {
            for (layer, lt) in stream.conv.iter_mut().zip(&st.conv) {
                layer.bn.update_running(&lt.bn_cache);
            }
            stream.fc1.bn.update_running(&st.fc1.bn_cache);
        }
        self.fc2.bn.update_running(&tape.fc2.bn_cache);
    }

    /// Forward pass. Train mode uses batch statistics and dropout and
    /// updates the BN running statistics; eval mode uses running statistics.
    pub fn forward<R: Rng + ?Sized>(&mut self, batch: &StreamBatch<T>, mode: Mode, rng: &mut R) -> Result<ForwardOutput<T>> {
        Ok(self.forward_with_tape(batch, mode, rng)?.0)
    }

    /// Like [`Model::forward`] but also returns the tape for [`Model::backward`].
    pub fn forward_with_tape<R: Rng + ?Sized>(
        &mut self,
        batch: &StreamBatch<T>,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(ForwardOutput<T>, Tape<T>)> {
        let (out, tape) = self.run(batch, mode, rng)?;
        self.commit_running_stats(&tape);
        Ok((out, tape))
    }

    /// Eval-mode forward on a shared model.
    pub fn infer(&self, batch: &StreamBatch<T>) -> Result<ForwardOutput<T>> {
        Ok(self.run(batch, Mode::Eval, &mut crate::rng::substream(0, "unused", &[]))?.0)
    }

    /// Eval-mode forward that also exposes each stream's FC1 activation.
    pub fn probe(&self, batch: &StreamBatch<T>) -> Result<Activations<T>> {
        let (output, tape) = self.run(batch, Mode::Eval, &mut crate::rng::substream(0, "unused", &[]))?;
        let widths = vec![self.config.fc1_width; self.streams.len()];
        let fc2_in = &tape.fc2.input;
        Ok(Activations {
            fc1: split_features(fc2_in, &widths)?,
            output,
        })
    }

    /// Gradients of a loss with respect to every parameter, in
    /// [`Model::parameters`] order, given the gradient at the logits.
    pub fn backward(&self, tape: &Tape<T>, grad_logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let layers = self.plan.conv.len();
        let per_stream = 2 * layers + 2;
        let total = self.streams.len() * per_stream + 3;
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; total];

        let (g_fc2_out, g_out_w) = linear_backward(&tape.fc2_out, &self.output, grad_logits)?;
        grads[total - 1] = Some(g_out_w);
        let (g_joined, g_fc2_w, g_fc2_gamma) = self.fc2.backward(&tape.fc2, &g_fc2_out)?;
        grads[total - 3] = Some(g_fc2_w);
        grads[total - 2] = Some(g_fc2_gamma);

        let widths = vec![self.config.fc1_width; self.streams.len()];
        let g_fc1 = split_features(&g_joined, &widths)?;
        for (s, ((stream, st), g)) in self.streams.iter().zip(&tape.streams).zip(g_fc1).enumerate() {
            let base = s * per_stream;
            let (g_flat, g_w, g_gamma) = stream.fc1.backward(&st.fc1, &g)?;
            grads[base + 2 * layers] = Some(g_w);
            grads[base + 2 * layers + 1] = Some(g_gamma);
            let mut g = g_flat.reshape(&st.conv_out_shape)?;
            for (l, (layer, lt)) in stream.conv.iter().zip(&st.conv).enumerate().rev() {
                if let Some(idx) = &lt.pool {
                    g = maxpool2d_backward(&g, idx)?;
                }
                g = relu_backward(&lt.bn_out, &g)?;
                let (g_z, g_gamma) = batchnorm_backward(&g, &lt.bn_cache, &layer.bn.gamma)?;
                let cg = conv3d_backward(&lt.input, &layer.weights, &layer.spec, &g_z, l > 0)?;
                grads[base + 2 * l] = Some(cg.weights);
                grads[base + 2 * l + 1] = Some(g_gamma);
                if let Some(gi) = cg.input {
                    g = gi;
                }
            }
        }
        Ok(grads.into_iter().map(|g| g.expect("every parameter gradient is filled")).collect())
    }

    /// Trainable tensors with stable unique names: streams in order, layers
    /// in order, then FC2 and the output layer.
    pub fn parameters(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for s in &self.streams {
            for (i, l) in s.conv.iter().enumerate() {
                out.push((format!("stream.{}.conv{}.weight", s.roi, i + 1), &l.weights));
                out.push((format!("stream.{}.conv{}.bn.gamma", s.roi, i + 1), &l.bn.gamma));
            }
            out.push((format!("stream.{}.fc1.weight", s.roi), &s.fc1.weights));
            out.push((format!("stream.{}.fc1.bn.gamma", s.roi), &s.fc1.bn.gamma));
        }
        out.push(("fc2.weight".into(), &self.fc2.weights));
        out.push(("fc2.bn.gamma".into(), &self.fc2.bn.gamma));
        out.push(("output.weight".into(), &self.output));
        out
    }

    /// Mutable view of the same tensors, in the same order as [`Model::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for s in &mut self.streams {
            for l in &mut s.conv {
                out.push(&mut l.weights);
                out.push(&mut l.bn.gamma);
            }
            out.push(&mut s.fc1.weights);
            out.push(&mut s.fc1.bn.gamma);
        }
        out.push(&mut self.fc2.weights);
        out.push(&mut self.fc2.bn.gamma);
        out.push(&mut self.output);
        out
    }

    /// Non-trainable state (BN running statistics).
    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.bn_prefixes()
            .into_iter()
            .zip(self.bn_states())
            .flat_map(|(p, bn)| {
                [
                    (format!("{p}.bn.running_mean"), &bn.running_mean),
                    (format!("{p}.bn.running_var"), &bn.running_var),
                ]
            })
            .collect()
    }

    fn bn_prefixes(&self) -> Vec<String> {
        let mut v = Vec::new();
        for s in &self.streams {
            v.extend((1..=s.conv.len()).map(|i| format!("stream.{}.conv{i}", s.roi)));
            v.push(format!("stream.{}.fc1", s.roi));
        }
        v.push("fc2".into());
        v
    }

    fn bn_states(&self) -> Vec<&BatchNormState<T>> {
        let mut v = Vec::new();
        for s in &self.streams {
            v.extend(s.conv.iter().map(|l| &l.bn));
            v.push(&s.fc1.bn);
        }
        v.push(&self.fc2.bn);
        v
    }

    fn bn_states_mut(&mut self) -> Vec<&mut BatchNormState<T>> {
        let mut v = Vec::new();
        for s in &mut self.streams {
            v.extend(s.conv.iter_mut().map(|l| &mut l.bn));
            v.push(&mut s.fc1.bn);
        }
        v.push(&mut self.fc2.bn);
        v
    }

    /// Parameters followed by buffers; everything a checkpoint stores.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut v = self.parameters();
        v.extend(self.buffers());
        v
    }

    /// Replaces the tensor called `name`, checking its shape.
    pub fn set_state_tensor(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let names: Vec<String> = self.state_tensors().into_iter().map(|(n, _)| n).collect();
        let pos = names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::InvalidArgument(format!("no tensor named {name}")))?;
        let n_params = self.parameters().len();
        let slot: &mut Tensor<T> = if pos < n_params {
            self.parameters_mut().swap_remove(pos)
        } else {
            let k = pos - n_params;
            let bn = self.bn_states_mut().swap_remove(k / 2);
            if k.is_multiple_of(2) {
                &mut bn.running_mean
            } else {
                &mut bn.running_var
            }
        };
        if slot.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected shape {:?}, got {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// True for tensors subject to L2 regularization (weights, not BN scales).
    pub fn is_regularized(name: &str) -> bool {
        name.ends_with(".weight")
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let bn = |b: &BatchNormState<T>| BatchNormState {
            gamma: b.gamma.cast(),
            running_mean: b.running_mean.cast(),
            running_var: b.running_var.cast(),
            momentum: b.momentum,
            epsilon: b.epsilon,
        };
        let dense = |d: &DenseLayer<T>| DenseLayer {
            weights: d.weights.cast(),
            bn: bn(&d.bn),
        };
        Model {
            config: self.config.clone(),
            plan: self.plan.clone(),
            streams: self
                .streams
                .iter()
                .map(|s| Stream {
                    roi: s.roi.clone(),
                    conv: s
                        .conv
                        .iter()
                        .map(|l| ConvLayer {
                            spec: l.spec,
                            weights: l.weights.cast(),
                            bn: bn(&l.bn),
                            pooled: l.pooled,
                        })
                        .collect(),
                    fc1: dense(&s.fc1),
                })
                .collect(),
            fc2: dense(&self.fc2),
            output: self.output.cast(),
        }
    }
}
