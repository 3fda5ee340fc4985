//! Convolutional building blocks: conv layers, residual blocks, the feature
//! pyramid, the multiple-flow-field estimator and the shallow codec.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::params::{kaiming_conv, ParamId, ParamStore};
use crate::tensor::{Dims, Real, Tensor};

#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        slope: f64,
    ) -> Result<Self> {
        let wd = Dims::new(cout, cin, kernel, kernel);
        let weight = store.add(format!("{name}.weight"), kaiming_conv(rng, wd, slope), true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Dims::new(1, cout, 1, 1)), true)?;
        Ok(Conv {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        })
    }

    /// Same as [`Conv::new`] with all-zero weights and bias.
    pub fn zeros<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        let wd = Dims::new(cout, cin, kernel, kernel);
        let weight = store.add(format!("{name}.weight"), Tensor::zeros(wd), true)?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(Dims::new(1, cout, 1, 1)), true)?;
        Ok(Conv {
            weight,
            bias,
            stride: 1,
            pad: kernel / 2,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv2d(x, w, Some(b), self.stride, self.pad)
    }

    pub fn in_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).value.dims().c
    }

    pub fn out_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        store.get(self.weight).value.dims().n
    }
}

/// `x + act(conv(act(conv(x))))`, channel preserving.
#[derive(Clone, Debug)]
pub struct ResBlock {
    conv1: Conv,
    conv2: Conv,
    slope: f64,
}

impl ResBlock {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, name: &str, ch: usize, slope: f64) -> Result<Self> {
        Ok(ResBlock {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), ch, ch, 3, 1, slope)?,
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), ch, ch, 3, 1, slope)?,
            slope,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = g.leaky_relu(h, self.slope)?;
        let h = self.conv2.forward(g, store, h)?;
        let h = g.leaky_relu(h, self.slope)?;
        g.add(x, h)
    }
}

/// Feature pyramid: `N` layers of stride-2 conv followed by two residual blocks.
#[derive(Clone, Debug)]
pub struct Pyramid {
    layers: Vec<(Conv, [ResBlock; 2])>,
    slope: f64,
}

impl Pyramid {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        channels: &[usize],
        slope: f64,
    ) -> Result<Self> {
        let mut layers = Vec::with_capacity(channels.len());
        let mut prev = cin;
        for (i, &c) in channels.iter().enumerate() {
            let base = format!("{name}.layer{}", i + 1);
            let down = Conv::new(store, rng, &format!("{base}.down"), prev, c, 3, 2, slope)?;
            let res = [
                ResBlock::new(store, rng, &format!("{base}.res1"), c, slope)?,
                ResBlock::new(store, rng, &format!("{base}.res2"), c, slope)?,
            ];
            layers.push((down, res));
            prev = c;
        }
        Ok(Pyramid { layers, slope })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Feature maps ordered coarsest first.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Vec<Var>> {
        let mut feats = Vec::with_capacity(self.layers.len());
        let mut h = x;
        for (down, res) in &self.layers {
            h = down.forward(g, store, h)?;
            h = g.leaky_relu(h, self.slope)?;
            for r in res {
                h = r.forward(g, store, h)?;
            }
            feats.push(h);
        }
        feats.reverse();
        Ok(feats)
    }
}

/// Which estimator of a cascade level a [`FlowEstimator`] plays.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimatorRole {
    /// Reference features alone.
    SelfFlow,
    /// Source features concatenated with the self-warped reference.
    CrossFlow,
    /// Both warped streams; emits residuals and final attention for both.
    Refine,
}

/// Four-layer ConvNet with a zero-initialized head emitting offsets and logits.
#[derive(Clone, Debug)]
pub struct FlowEstimator {
    hidden: Vec<Conv>,
    head: Conv,
    slope: f64,
    pub role: EstimatorRole,
    pub samples: usize,
    /// Number of streams the head predicts for (1, or 2 for the full refine).
    pub streams: usize,
}

impl FlowEstimator {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        role: EstimatorRole,
        cin: usize,
        hidden: &[usize],
        kernels: &[usize],
        samples: usize,
        streams: usize,
        slope: f64,
    ) -> Result<Self> {
        let mut convs = Vec::with_capacity(hidden.len());
        let mut prev = cin;
        for (i, (&h, &k)) in hidden.iter().zip(kernels).enumerate() {
            convs.push(Conv::new(store, rng, &format!("{name}.conv{}", i + 1), prev, h, k, 1, slope)?);
            prev = h;
        }
        let head = Conv::zeros(store, &format!("{name}.head"), prev, 3 * samples * streams, 3)?;
        Ok(FlowEstimator {
            hidden: convs,
            head,
            slope,
            role,
            samples,
            streams,
        })
    }

    pub fn in_channels<T: Real>(&self, store: &ParamStore<T>) -> usize {
        self.hidden[0].in_channels(store)
    }

    pub fn out_channels(&self) -> usize {
        3 * self.samples * self.streams
    }

    /// Raw head output: per stream `2K` offsets, then per stream `K` logits.
    /// For the two-stream refine estimator the order is
    /// `(offsets_src, offsets_ref, logits_src, logits_ref)`.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let cin = self.in_channels(store);
        if g.dims(x).c != cin {
            return Err(Error::shape(
                "mfe_forward",
                format!("{:?} estimator expects {cin} channels, got {}", self.role, g.dims(x)),
            ));
        }
        let mut h = x;
        for conv in &self.hidden {
            h = conv.forward(g, store, h)?;
            h = g.leaky_relu(h, self.slope)?;
        }
        self.head.forward(g, store, h)
    }

    pub fn head(&self) -> &Conv {
        &self.head
    }
}

/// Splits a single-stream estimator output into `(offsets, logits)`.
pub fn split_single<T: Real>(g: &mut Graph<T>, out: Var, samples: usize) -> Result<(Var, Var)> {
    let flow = g.slice_channels(out, 0, 2 * samples)?;
    let logits = g.slice_channels(out, 2 * samples, samples)?;
    Ok((flow, logits))
}

/// Splits the refine output into `(d_src, d_ref, a_src, a_ref)`.
pub fn split_refine<T: Real>(g: &mut Graph<T>, out: Var, samples: usize) -> Result<[Var; 4]> {
    let k = samples;
    Ok([
        g.slice_channels(out, 0, 2 * k)?,
        g.slice_channels(out, 2 * k, 2 * k)?,
        g.slice_channels(out, 4 * k, k)?,
        g.slice_channels(out, 5 * k, k)?,
    ])
}

/// Two convolutions without downsampling.
#[derive(Clone, Debug)]
pub struct ShallowCodec {
    conv1: Conv,
    conv2: Conv,
    slope: f64,
    /// Decoders end in a sigmoid so outputs lie in `[0, 1]`.
    sigmoid: bool,
}

impl ShallowCodec {
    pub fn encoder<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        hidden: &[usize],
        slope: f64,
    ) -> Result<Self> {
        Ok(ShallowCodec {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), cin, hidden[0], 3, 1, slope)?,
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), hidden[0], hidden[1], 3, 1, slope)?,
            slope,
            sigmoid: false,
        })
    }

    pub fn decoder<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        hidden: usize,
        cout: usize,
        slope: f64,
    ) -> Result<Self> {
        Ok(ShallowCodec {
            conv1: Conv::new(store, rng, &format!("{name}.conv1"), cin, hidden, 3, 1, slope)?,
            conv2: Conv::new(store, rng, &format!("{name}.conv2"), hidden, cout, 3, 1, 1.0 / 3f64.sqrt())?,
            slope,
            sigmoid: true,
        })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(g, store, x)?;
        let h = g.leaky_relu(h, self.slope)?;
        let h = self.conv2.forward(g, store, h)?;
        if self.sigmoid {
            g.sigmoid(h)
        } else {
            g.leaky_relu(h, self.slope)
        }
    }
}
