//! Spatial CNN over window images, temporal 1D CNN over the window sequence,
//! per-window sub-path heads, kernel penalties and the combined loss.

mod config;
mod loss;
mod penalty;
mod pipeline;

pub use config::{LossConfig, ModelConfig, PathCnnConfig, TemporalConfig};
pub use loss::{mape_loss, total_loss};
pub use penalty::{line_penalties, line_penalties_backward, Penalties};
pub use pipeline::{forward_record, full_forward, render_path, subpath_truths, PathSample};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    conv1d_same, conv1d_same_backward, conv2d_same, conv2d_same_backward, dense, dense_backward,
    dropout, dropout_backward, pool1d_max, pool1d_max_backward, pool2d, pool2d_backward, relu,
    relu_backward, Activation, Parameter, PoolMode, Tensor,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Inference,
    /// Dropout active; masks are drawn from `seed`.
    Training {
        seed: u64,
    },
}

impl Mode {
    fn training(self) -> bool {
        matches!(self, Mode::Training { .. })
    }

    fn seed(self, tag: u64) -> u64 {
        match self {
            Mode::Inference => 0,
            Mode::Training { seed } => splitmix(seed ^ splitmix(tag)),
        }
    }
}

pub(crate) fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct MaxAvgIdx {
    max_k: usize,
    max_b: usize,
    avg_k: usize,
    avg_b: usize,
}

#[derive(Debug, Clone, Copy)]
struct DenseIdx {
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    maxavg: Vec<MaxAvgIdx>,
    fc: DenseIdx,
    conv1d: Vec<DenseIdx>,
    heads: Vec<DenseIdx>,
    sub: [DenseIdx; 2],
}

/// Parameter name, shape and fan-in, in storage order.
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    fan_in: usize,
    bias_init: Option<f64>,
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<ParamSpec>) {
    let mut specs: Vec<ParamSpec> = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, fan_in: usize, bias_init: Option<f64>| {
        specs.push(ParamSpec {
            name,
            shape,
            fan_in,
            bias_init,
        });
        specs.len() - 1
    };
    let p = &cfg.pathcnn;
    let f = p.kernel;
    let mut c_in = p.d;
    let mut maxavg = Vec::new();
    for (m, &c) in p.channels.iter().enumerate() {
        let max_k = push(
            format!("pathcnn.{m}.max.kernel"),
            vec![f, f, c_in, c],
            f * f * c_in,
            None,
        );
        let max_b = push(format!("pathcnn.{m}.max.bias"), vec![c], 0, Some(0.0));
        let avg_k = push(
            format!("pathcnn.{m}.avg.kernel"),
            vec![f, f, c_in, c],
            f * f * c_in,
            None,
        );
        let avg_b = push(format!("pathcnn.{m}.avg.bias"), vec![c], 0, Some(0.0));
        maxavg.push(MaxAvgIdx {
            max_k,
            max_b,
            avg_k,
            avg_b,
        });
        c_in = 2 * c;
    }
    let flat = p.flatten_dim();
    let fc = DenseIdx {
        w: push("pathcnn.fc.weight".into(), vec![p.lambda, flat], flat, None),
        b: push("pathcnn.fc.bias".into(), vec![p.lambda], 0, Some(0.0)),
    };

    let t = &cfg.temporal;
    let mut c_in = p.lambda;
    let mut conv1d = Vec::new();
    for (n, &c) in t.channels.iter().enumerate() {
        conv1d.push(DenseIdx {
            w: push(
                format!("temporal.conv{n}.kernel"),
                vec![t.kernel, c_in, c],
                t.kernel * c_in,
                None,
            ),
            b: push(format!("temporal.conv{n}.bias"), vec![c], 0, Some(0.0)),
        });
        c_in = c;
    }
    let mut inp = t.flatten_dim();
    let mut heads = Vec::new();
    for (i, &out) in t.head_dims.iter().enumerate() {
        let last = i + 1 == t.head_dims.len();
        heads.push(DenseIdx {
            w: push(
                format!("temporal.head{i}.weight"),
                vec![out, inp],
                inp,
                None,
            ),
            b: push(
                format!("temporal.head{i}.bias"),
                vec![out],
                0,
                Some(if last { 1.0 } else { 0.0 }),
            ),
        });
        inp = out;
    }
    let h = t.subpath_hidden;
    let sub = [
        DenseIdx {
            w: push(
                "subpath.head0.weight".into(),
                vec![h, p.lambda],
                p.lambda,
                None,
            ),
            b: push("subpath.head0.bias".into(), vec![h], 0, Some(0.0)),
        },
        DenseIdx {
            w: push("subpath.head1.weight".into(), vec![1, h], h, None),
            b: push("subpath.head1.bias".into(), vec![1], 0, Some(1.0)),
        },
    ];
    (
        Layout {
            maxavg,
            fc,
            conv1d,
            heads,
            sub,
        },
        specs,
    )
}

/// Per-parameter gradient buffers, parallel to [`Model::params`].
pub type Grads<T> = Vec<Tensor<T>>;

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: Vec<Parameter<T>>,
    layout: Layout,
}

struct MaxAvgCache<T> {
    input: Tensor<T>,
    max_act: Tensor<T>,
    max_arg: Vec<usize>,
    avg_act: Tensor<T>,
}

struct SpatialCache<T> {
    layers: Vec<Vec<MaxAvgCache<T>>>,
    out_shape: Vec<usize>,
    flat: Tensor<T>,
    fc_out: Tensor<T>,
    mask: Option<Vec<T>>,
}

struct TemporalCache<T> {
    conv_in: Vec<Tensor<T>>,
    conv_act: Vec<Tensor<T>>,
    pool_arg: Vec<Vec<usize>>,
    pooled_shape: Vec<usize>,
    head_in: Vec<Tensor<T>>,
    head_out: Vec<Tensor<T>>,
    masks: Vec<Option<Vec<T>>>,
}

struct SubPathCache<T> {
    rows: Tensor<T>,
    hidden: Tensor<T>,
    mask: Option<Vec<T>>,
    dropped: Tensor<T>,
    out: Tensor<T>,
}

/// Result of one path through the network, with what the backward pass needs.
pub struct PathPass<T> {
    /// Path travel time estimate in seconds.
    pub estimate: T,
    /// Sub-path estimates in seconds for the windows that survive truncation.
    pub subpath_estimates: Vec<T>,
    /// Spatial feature rows `[n, lambda]` (before zero padding).
    pub features: Tensor<T>,
    spatial: SpatialCache<T>,
    temporal: TemporalCache<T>,
    sub: SubPathCache<T>,
}

fn pair_mut<U>(v: &mut [U], i: usize, j: usize) -> (&mut U, &mut U) {
    assert!(i < j);
    let (a, b) = v.split_at_mut(j);
    (&mut a[i], &mut b[0])
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|s| match s.bias_init {
                Some(v) => Parameter::new(s.name, Tensor::filled(&s.shape, T::from_f64_lossy(v))),
                None => Parameter::kaiming_uniform(s.name, &s.shape, s.fan_in, &mut rng),
            })
            .collect();
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Wraps loaded parameters after checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, params: Vec<Parameter<T>>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = build_layout(&config);
        if specs.len() != params.len() {
            return Err(Error::shape(format!(
                "config expects {} parameters, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (s, p) in specs.iter().zip(&params) {
            if s.name != p.name || s.shape != p.value.shape() {
                return Err(Error::shape(format!(
                    "parameter {} {:?} does not match expected {} {:?}",
                    p.name,
                    p.value.shape(),
                    s.name,
                    s.shape
                )));
            }
        }
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn zero_grads(&self) -> Grads<T> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn w(&self, i: usize) -> &Tensor<T> {
        &self.params[i].value
    }

    /// All PathCNN convolution kernels (both branches of every layer).
    pub fn pathcnn_kernels(&self) -> Vec<&Tensor<T>> {
        self.layout
            .maxavg
            .iter()
            .flat_map(|l| [self.w(l.max_k), self.w(l.avg_k)])
            .collect()
    }

    pub fn penalties(&self) -> Penalties {
        line_penalties(&self.pathcnn_kernels())
    }

    /// Adds the weighted penalty gradient to `grads`.
    pub fn penalties_backward(&self, cfg: &LossConfig, grads: &mut Grads<T>) {
        for l in &self.layout.maxavg {
            for k in [l.max_k, l.avg_k] {
                line_penalties_backward(self.w(k), cfg, &mut grads[k]);
            }
        }
    }

    /// ReLU activations of both branches of layer `m` before pooling, for each
    /// layer up to and including `m`.
    pub fn maxavg_activations(
        &self,
        image: &Tensor<T>,
        m: usize,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        if m >= self.layout.maxavg.len() {
            return Err(Error::config(format!("layer {m} out of range")));
        }
        let mut x = image.clone();
        for i in 0..=m {
            let (out, cache) = self.maxavg_layer(i, &x)?;
            if i == m {
                return Ok((cache.max_act, cache.avg_act));
            }
            x = out;
        }
        unreachable!()
    }

    fn maxavg_layer(&self, m: usize, x: &Tensor<T>) -> Result<(Tensor<T>, MaxAvgCache<T>)> {
        let l = self.layout.maxavg[m];
        let s = x.shape();
        if s.len() != 3 || s[0] < 2 || s[1] < 2 {
            return Err(Error::shape(format!(
                "max+avg layer {m} needs [H>=2, W>=2, C], got {s:?}"
            )));
        }
        let max_act = relu(&conv2d_same(x, self.w(l.max_k), self.w(l.max_b))?);
        let avg_act = relu(&conv2d_same(x, self.w(l.avg_k), self.w(l.avg_b))?);
        let pmax = pool2d(&max_act, PoolMode::Max)?;
        let pavg = pool2d(&avg_act, PoolMode::Avg)?;
        let (oh, ow, c) = (
            pmax.output.shape()[0],
            pmax.output.shape()[1],
            pmax.output.shape()[2],
        );
        let mut out = Vec::with_capacity(oh * ow * 2 * c);
        for (a, b) in pmax
            .output
            .data()
            .chunks_exact(c)
            .zip(pavg.output.data().chunks_exact(c))
        {
            out.extend_from_slice(a);
            out.extend_from_slice(b);
        }
        let cache = MaxAvgCache {
            input: x.clone(),
            max_act,
            max_arg: pmax.argmax.expect("max pooling"),
            avg_act,
        };
        Ok((Tensor::from_vec(&[oh, ow, 2 * c], out)?, cache))
    }

    fn maxavg_backward(
        &self,
        m: usize,
        cache: &MaxAvgCache<T>,
        dout: &Tensor<T>,
        want_input: bool,
        grads: &mut Grads<T>,
    ) -> Result<Option<Tensor<T>>> {
        let l = self.layout.maxavg[m];
        let (oh, ow, c2) = (dout.shape()[0], dout.shape()[1], dout.shape()[2]);
        let c = c2 / 2;
        let mut dmax = Vec::with_capacity(oh * ow * c);
        let mut davg = Vec::with_capacity(oh * ow * c);
        for px in dout.data().chunks_exact(c2) {
            dmax.extend_from_slice(&px[..c]);
            davg.extend_from_slice(&px[c..]);
        }
        let dmax = Tensor::from_vec(&[oh, ow, c], dmax)?;
        let davg = Tensor::from_vec(&[oh, ow, c], davg)?;
        let mut dinput = want_input.then(|| Tensor::zeros(cache.input.shape()));

        let d_act = pool2d_backward(
            cache.max_act.shape(),
            PoolMode::Max,
            Some(&cache.max_arg),
            &dmax,
        )?;
        let d_pre = relu_backward(&cache.max_act, &d_act);
        let (gk, gb) = pair_mut(grads, l.max_k, l.max_b);
        conv2d_same_backward(
            &cache.input,
            self.w(l.max_k),
            &d_pre,
            dinput.as_mut(),
            gk,
            gb,
        )?;

        let d_act = pool2d_backward(cache.avg_act.shape(), PoolMode::Avg, None, &davg)?;
        let d_pre = relu_backward(&cache.avg_act, &d_act);
        let (gk, gb) = pair_mut(grads, l.avg_k, l.avg_b);
        conv2d_same_backward(
            &cache.input,
            self.w(l.avg_k),
            &d_pre,
            dinput.as_mut(),
            gk,
            gb,
        )?;
        Ok(dinput)
    }

    fn check_image(&self, img: &Tensor<T>) -> Result<()> {
        let p = &self.config.pathcnn;
        img.expect_shape(&[p.k, p.k, p.d], "window image")
    }

    /// Spatial features `[n, lambda]` for a batch of window images.
    fn spatial_forward(
        &self,
        images: &[&Tensor<T>],
        mode: Mode,
    ) -> Result<(Tensor<T>, SpatialCache<T>)> {
        let p = &self.config.pathcnn;
        let flat_dim = p.flatten_dim();
        let mut flat = Vec::with_capacity(images.len() * flat_dim);
        let mut layers = Vec::with_capacity(images.len());
        let mut out_shape = Vec::new();
        for img in images {
            self.check_image(img)?;
            let mut x = (*img).clone();
            let mut caches = Vec::with_capacity(p.channels.len());
            for m in 0..p.channels.len() {
                let (y, cache) = self.maxavg_layer(m, &x)?;
                caches.push(cache);
                x = y;
            }
            if x.len() != flat_dim {
                return Err(Error::shape(format!(
                    "flattened size {} != {flat_dim}",
                    x.len()
                )));
            }
            out_shape = x.shape().to_vec();
            flat.extend_from_slice(x.data());
            layers.push(caches);
        }
        let flat = Tensor::from_vec(&[images.len(), flat_dim], flat)?;
        let fc = self.layout.fc;
        let fc_out = dense(&flat, self.w(fc.w), self.w(fc.b), Activation::Relu)?;
        let (rows, mask) = dropout(&fc_out, p.dropout, mode.training(), mode.seed(1))?;
        Ok((
            rows,
            SpatialCache {
                layers,
                out_shape,
                flat,
                fc_out,
                mask,
            },
        ))
    }

    fn spatial_backward(
        &self,
        cache: &SpatialCache<T>,
        drows: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let fc = self.layout.fc;
        let d_fc = dropout_backward(cache.mask.as_deref(), drows);
        let (gw, gb) = pair_mut(grads, fc.w, fc.b);
        let dflat = dense_backward(
            &cache.flat,
            self.w(fc.w),
            &cache.fc_out,
            Activation::Relu,
            &d_fc,
            gw,
            gb,
        )?;
        let flat_dim = dflat.shape()[1];
        for (i, caches) in cache.layers.iter().enumerate() {
            let row = dflat.data()[i * flat_dim..(i + 1) * flat_dim].to_vec();
            let mut d = Tensor::from_vec(&cache.out_shape, row)?;
            for m in (0..caches.len()).rev() {
                match self.maxavg_backward(m, &caches[m], &d, m > 0, grads)? {
                    Some(next) => d = next,
                    None => break,
                }
            }
        }
        Ok(())
    }

    /// Spatial feature vectors for window images (one row each).
    pub fn pathcnn_forward(&self, images: &[&Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        Ok(self.spatial_forward(images, mode)?.0)
    }

    fn temporal_forward_cached(&self, s: &Tensor<T>, mode: Mode) -> Result<(T, TemporalCache<T>)> {
        let t = &self.config.temporal;
        s.expect_shape(
            &[t.s_max, self.config.pathcnn.lambda],
            "spatial pattern sequence",
        )?;
        let mut y = s.clone();
        let mut cache = TemporalCache {
            conv_in: Vec::new(),
            conv_act: Vec::new(),
            pool_arg: Vec::new(),
            pooled_shape: Vec::new(),
            head_in: Vec::new(),
            head_out: Vec::new(),
            masks: Vec::new(),
        };
        for l in &self.layout.conv1d {
            let act = relu(&conv1d_same(&y, self.w(l.w), self.w(l.b))?);
            let pooled = pool1d_max(&act)?;
            cache.conv_in.push(y);
            cache.conv_act.push(act);
            cache.pool_arg.push(pooled.argmax.expect("max pooling"));
            y = pooled.output;
        }
        cache.pooled_shape = y.shape().to_vec();
        let n = y.len();
        let mut h = y.reshape(&[n])?;
        let last = self.layout.heads.len() - 1;
        for (i, l) in self.layout.heads.iter().enumerate() {
            let act = if i == last {
                Activation::Linear
            } else {
                Activation::Relu
            };
            let out = dense(&h, self.w(l.w), self.w(l.b), act)?;
            cache.head_in.push(h);
            if i == last {
                cache.masks.push(None);
                h = out.clone();
            } else {
                let (dropped, mask) = dropout(
                    &out,
                    self.config.pathcnn.dropout,
                    mode.training(),
                    mode.seed(100 + i as u64),
                )?;
                cache.masks.push(mask);
                h = dropped;
            }
            cache.head_out.push(out);
        }
        Ok((h[0], cache))
    }

    /// Raw temporal output for an `S_max x lambda` sequence (in units of `output_scale_s`).
    pub fn temporal_forward(&self, s: &Tensor<T>, mode: Mode) -> Result<T> {
        Ok(self.temporal_forward_cached(s, mode)?.0)
    }

    fn temporal_backward(
        &self,
        cache: &TemporalCache<T>,
        draw: T,
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let last = self.layout.heads.len() - 1;
        let mut d = Tensor::from_vec(&[1], vec![draw])?;
        for (i, l) in self.layout.heads.iter().enumerate().rev() {
            let act = if i == last {
                Activation::Linear
            } else {
                Activation::Relu
            };
            d = dropout_backward(cache.masks[i].as_deref(), &d);
            let (gw, gb) = pair_mut(grads, l.w, l.b);
            d = dense_backward(
                &cache.head_in[i],
                self.w(l.w),
                &cache.head_out[i],
                act,
                &d,
                gw,
                gb,
            )?;
        }
        let mut d = d.reshape(&cache.pooled_shape)?;
        for (n, l) in self.layout.conv1d.iter().enumerate().rev() {
            let act = &cache.conv_act[n];
            let d_act = pool1d_max_backward(act.shape(), &cache.pool_arg[n], &d)?;
            let d_pre = relu_backward(act, &d_act);
            let mut dinput = Tensor::zeros(cache.conv_in[n].shape());
            let (gw, gb) = pair_mut(grads, l.w, l.b);
            conv1d_same_backward(
                &cache.conv_in[n],
                self.w(l.w),
                &d_pre,
                Some(&mut dinput),
                gw,
                gb,
            )?;
            d = dinput;
        }
        Ok(d)
    }

    fn subpath_forward(&self, rows: &Tensor<T>, mode: Mode) -> Result<(Vec<T>, SubPathCache<T>)> {
        let [l0, l1] = self.layout.sub;
        let hidden = dense(rows, self.w(l0.w), self.w(l0.b), Activation::Relu)?;
        let (dropped, mask) = dropout(
            &hidden,
            self.config.pathcnn.dropout,
            mode.training(),
            mode.seed(200),
        )?;
        let out = dense(&dropped, self.w(l1.w), self.w(l1.b), Activation::Linear)?;
        let est = out.data().to_vec();
        Ok((
            est,
            SubPathCache {
                rows: rows.clone(),
                hidden,
                mask,
                dropped,
                out,
            },
        ))
    }

    /// Raw per-row sub-path outputs (in units of `subpath_scale_s`).
    pub fn subpath_heads(&self, rows: &Tensor<T>, mode: Mode) -> Result<Vec<T>> {
        Ok(self.subpath_forward(rows, mode)?.0)
    }

    fn subpath_backward(
        &self,
        cache: &SubPathCache<T>,
        draw: &[T],
        grads: &mut Grads<T>,
    ) -> Result<Tensor<T>> {
        let [l0, l1] = self.layout.sub;
        let d = Tensor::from_vec(cache.out.shape(), draw.to_vec())?;
        let (gw, gb) = pair_mut(grads, l1.w, l1.b);
        let d = dense_backward(
            &cache.dropped,
            self.w(l1.w),
            &cache.out,
            Activation::Linear,
            &d,
            gw,
            gb,
        )?;
        let d = dropout_backward(cache.mask.as_deref(), &d);
        let (gw, gb) = pair_mut(grads, l0.w, l0.b);
        dense_backward(
            &cache.rows,
            self.w(l0.w),
            &cache.hidden,
            Activation::Relu,
            &d,
            gw,
            gb,
        )
    }

    /// Runs one path given its window images. Windows past `S_max` are ignored.
    pub fn forward_path(&self, images: &[&Tensor<T>], mode: Mode) -> Result<PathPass<T>> {
        if images.is_empty() {
            return Err(Error::validation("path has no windows"));
        }
        let s_max = self.config.temporal.s_max;
        let lambda = self.config.pathcnn.lambda;
        let used = &images[..images.len().min(s_max)];
        let (rows, spatial) = self.spatial_forward(used, mode)?;
        let mut s = Tensor::zeros(&[s_max, lambda]);
        s.data_mut()[..rows.len()].copy_from_slice(rows.data());
        let (raw, temporal) = self.temporal_forward_cached(&s, mode)?;
        let (raw_sub, sub) = self.subpath_forward(&rows, mode)?;
        let scale = T::from_f64_lossy(self.config.output_scale_s);
        let sub_scale = T::from_f64_lossy(self.config.subpath_scale_s);
        Ok(PathPass {
            estimate: raw * scale,
            subpath_estimates: raw_sub.into_iter().map(|v| v * sub_scale).collect(),
            features: rows,
            spatial,
            temporal,
            sub,
        })
    }

    /// Accumulates parameter gradients given `dL/d estimate` and `dL/d subpath_estimates`.
    pub fn backward_path(
        &self,
        pass: &PathPass<T>,
        d_estimate: T,
        d_sub: &[T],
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let n = pass.features.shape()[0];
        if d_sub.len() != n {
            return Err(Error::shape(format!(
                "{} sub-path gradients for {n} windows",
                d_sub.len()
            )));
        }
        let scale = T::from_f64_lossy(self.config.output_scale_s);
        let sub_scale = T::from_f64_lossy(self.config.subpath_scale_s);
        let ds = self.temporal_backward(&pass.temporal, d_estimate * scale, grads)?;
        let d_sub_raw: Vec<T> = d_sub.iter().map(|&g| g * sub_scale).collect();
        let mut drows = self.subpath_backward(&pass.sub, &d_sub_raw, grads)?;
        for (a, &b) in drows
            .data_mut()
            .iter_mut()
            .zip(&ds.data()[..n * self.config.pathcnn.lambda])
        {
            *a += b;
        }
        self.spatial_backward(&pass.spatial, &drows, grads)
    }
}

#[cfg(test)]
mod tests;
