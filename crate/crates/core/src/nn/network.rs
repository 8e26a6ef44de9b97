//! Sequential networks and the two autoencoder architectures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, Activation, Cache, ConvShape, LayerSpec};
use crate::error::{Error, Result};

/// Row-major batch of `n` samples with `width` features each.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * width {
            return Err(Error::Shape(format!("{} values for a {n}x{width} batch", data.len())));
        }
        Ok(Self { n, width, data })
    }

    pub fn zeros(n: usize, width: usize) -> Self {
        Self { n, width, data: vec![0.0; n * width] }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    /// Sub-batch made of the given rows.
    pub fn rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.width);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { n: idx.len(), width: self.width, data }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Forward caches needed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
    n: usize,
}

/// Per-layer `(dW, db)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

/// A feed-forward stack of layers with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub rng_seed: u64,
}

fn check_chain(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::Shape("network has no layers".into()));
    }
    for s in specs {
        s.validate()?;
    }
    for (i, w) in specs.windows(2).enumerate() {
        let out = w[0].output_len()?;
        if out != w[1].input_len() {
            return Err(Error::Shape(format!(
                "layer {i} ({}) emits {out} values but layer {} ({}) expects {}",
                w[0].name(),
                i + 1,
                w[1].name(),
                w[1].input_len()
            )));
        }
    }
    Ok(())
}

impl Network {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        check_chain(&specs)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (nw, nb) = spec.param_counts();
                let (fan_in, fan_out) = spec.fans();
                let limit = if nw > 0 { (6.0 / (fan_in + fan_out) as f64).sqrt() } else { 0.0 };
                let weights = (0..nw).map(|_| rng.random_range(-limit..=limit)).collect();
                Layer { spec, weights, bias: vec![0.0; nb] }
            })
            .collect();
        Ok(Self { layers, rng_seed: seed })
    }

    /// All parameters zero.
    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        check_chain(&specs)?;
        let layers = specs
            .into_iter()
            .map(|spec| {
                let (nw, nb) = spec.param_counts();
                Layer { spec, weights: vec![0.0; nw], bias: vec![0.0; nb] }
            })
            .collect();
        Ok(Self { layers, rng_seed: 0 })
    }

    /// Rebuilds a network from specs and explicit parameters.
    pub fn from_parts(layers: Vec<Layer>, rng_seed: u64) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        check_chain(&specs)?;
        for l in &layers {
            let (nw, nb) = l.spec.param_counts();
            if l.weights.len() != nw || l.bias.len() != nb {
                return Err(Error::Shape(format!("{} layer has wrong parameter count", l.spec.name())));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("non-finite network weight".into()));
            }
        }
        Ok(Self { layers, rng_seed })
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].spec.input_len()
    }

    pub fn output_len(&self) -> usize {
        self.layers.last().and_then(|l| l.spec.output_len().ok()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Forward pass recording caches. Dropout masks come from `rng` when
    /// `train` is set; otherwise dropout is the identity.
    pub fn forward(&self, x: &Batch, train: bool, rng: &mut impl Rng) -> Result<(Batch, Tape)> {
        if x.width != self.input_len() {
            return Err(Error::Shape(format!("input width {} but network expects {}", x.width, self.input_len())));
        }
        let mut cur = x.data.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let (y, c) = layers::forward(&l.spec, &l.weights, &l.bias, &cur, x.n, train, rng)?;
            cur = y;
            caches.push(c);
        }
        Ok((Batch { n: x.n, width: self.output_len(), data: cur }, Tape { caches, n: x.n }))
    }

    /// Evaluation-mode forward pass.
    pub fn predict(&self, x: &Batch) -> Result<Batch> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, false, &mut rng)?.0)
    }

    /// Backpropagates `dy` through the recorded pass. The input gradient is
    /// computed only when `need_dx` is set.
    pub fn backward(&self, tape: &Tape, dy: &Batch, need_dx: bool) -> Result<(Gradients, Batch)> {
        if dy.width != self.output_len() || dy.n != tape.n {
            return Err(Error::Shape("output gradient does not match the forward pass".into()));
        }
        let mut grads = vec![(Vec::new(), Vec::new()); self.layers.len()];
        let mut cur = dy.data.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let want = need_dx || i > 0;
            let (dw, db, dx) = layers::backward(&l.spec, &l.weights, &tape.caches[i], &cur, tape.n, want)?;
            grads[i] = (dw, db);
            cur = dx;
        }
        let width = if need_dx { self.input_len() } else { 0 };
        let data = if need_dx { cur } else { Vec::new() };
        Ok((Gradients { layers: grads }, Batch { n: if need_dx { tape.n } else { 0 }, width, data }))
    }
}

/// Encoder and decoder pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    pub encoder: Network,
    pub decoder: Network,
}

impl Autoencoder {
    pub fn encode(&self, u: &Batch) -> Result<Batch> {
        self.encoder.predict(u)
    }

    pub fn decode(&self, z: &Batch) -> Result<Batch> {
        self.decoder.predict(z)
    }

    pub fn reconstruct(&self, u: &Batch) -> Result<Batch> {
        self.decode(&self.encode(u)?)
    }
}

/// Activation placement for the two builders.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArchOptions {
    pub activation: Activation,
    /// Keep probability of the encoder dropout layers.
    pub keep: f64,
}

impl Default for ArchOptions {
    fn default() -> Self {
        Self { activation: Activation::Elu, keep: 0.9 }
    }
}

const FF_HIDDEN: [usize; 6] = [64, 128, 256, 256, 128, 64];
/// Leading dense layers followed by an activation; the last two are linear.
const FF_ACTIVATED: usize = 5;

/// Encoder/decoder layer lists of the fully connected autoencoder.
pub fn ff_autoencoder_specs(n_h: usize, k: usize, opts: ArchOptions) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    if k == 0 || n_h < k {
        return Err(Error::InvalidParameter(format!("need N_h >= k >= 1, got N_h={n_h}, k={k}")));
    }
    let mut widths = vec![n_h];
    widths.extend_from_slice(&FF_HIDDEN);
    widths.push(k);
    let mut enc = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        enc.push(LayerSpec::Dense { input: w[0], output: w[1] });
        if i < FF_ACTIVATED {
            enc.push(LayerSpec::Activation { kind: opts.activation, width: w[1] });
            enc.push(LayerSpec::Dropout { keep: opts.keep, width: w[1] });
        }
    }
    widths.reverse();
    let mut dec = Vec::new();
    for (i, w) in widths.windows(2).enumerate() {
        dec.push(LayerSpec::Dense { input: w[0], output: w[1] });
        if i < FF_ACTIVATED {
            dec.push(LayerSpec::Activation { kind: opts.activation, width: w[1] });
        }
    }
    Ok((enc, dec))
}

pub fn build_ff_autoencoder(n_h: usize, k: usize, opts: ArchOptions, seed: u64) -> Result<Autoencoder> {
    let (enc, dec) = ff_autoencoder_specs(n_h, k, opts)?;
    Ok(Autoencoder { encoder: Network::new(enc, seed)?, decoder: Network::new(dec, seed.wrapping_add(1))? })
}

const CAE_CHANNELS: [usize; 5] = [1, 8, 16, 32, 64];
const CAE_DECODER_WIDTH: usize = 256;

/// Encoder/decoder layer lists of the convolutional autoencoder on
/// single-channel `h x w` images.
pub fn conv_autoencoder_specs(h: usize, w: usize, k: usize, opts: ArchOptions) -> Result<(Vec<LayerSpec>, Vec<LayerSpec>)> {
    if k == 0 {
        return Err(Error::InvalidParameter("bottleneck must be positive".into()));
    }
    let act = |width| LayerSpec::Activation { kind: opts.activation, width };
    let mut enc = Vec::new();
    let (mut ch, mut cw) = (h, w);
    for c in CAE_CHANNELS.windows(2) {
        let g = ConvShape { in_ch: c[0], out_ch: c[1], in_h: ch, in_w: cw, filter: 4, stride: 2, pad: 1 };
        (ch, cw) = g.conv_out()?;
        enc.push(LayerSpec::Conv(g));
        enc.push(act(c[1] * ch * cw));
    }
    let flat = 64 * ch * cw;
    enc.push(LayerSpec::Flatten { ch: 64, h: ch, w: cw });
    enc.push(LayerSpec::Dense { input: flat, output: k });

    // Three stride-2 upsamplings then a size-preserving output layer.
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Shape(format!("{h}x{w} images cannot be rebuilt from three stride-2 upsamplings")));
    }
    let (mut dh, mut dw) = (h / 8, w / 8);
    let mut dec = vec![
        LayerSpec::Dense { input: k, output: CAE_DECODER_WIDTH },
        act(CAE_DECODER_WIDTH),
        LayerSpec::Dense { input: CAE_DECODER_WIDTH, output: 64 * dh * dw },
        act(64 * dh * dw),
        LayerSpec::Unflatten { ch: 64, h: dh, w: dw },
    ];
    for c in [[64, 32], [32, 16], [16, 8]] {
        let g = ConvShape { in_ch: c[0], out_ch: c[1], in_h: dh, in_w: dw, filter: 4, stride: 2, pad: 1 };
        (dh, dw) = g.transpose_out()?;
        dec.push(LayerSpec::ConvTranspose(g));
        dec.push(act(c[1] * dh * dw));
    }
    let last = ConvShape { in_ch: 8, out_ch: 1, in_h: dh, in_w: dw, filter: 3, stride: 1, pad: 1 };
    if last.transpose_out()? != (h, w) {
        return Err(Error::Shape(format!("decoder does not land on {h}x{w}")));
    }
    dec.push(LayerSpec::ConvTranspose(last));
    check_chain(&enc)?;
    check_chain(&dec)?;
    Ok((enc, dec))
}

pub fn build_conv_autoencoder(h: usize, w: usize, k: usize, opts: ArchOptions, seed: u64) -> Result<Autoencoder> {
    let (enc, dec) = conv_autoencoder_specs(h, w, k, opts)?;
    Ok(Autoencoder { encoder: Network::new(enc, seed)?, decoder: Network::new(dec, seed.wrapping_add(1))? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, width: usize) -> Batch {
        Batch::new(n, width, (0..n * width).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Checks parameter and input gradients of `<w, net(x)>` against central
    /// differences at `probes` random coordinates.
    fn gradient_check(net: &mut Network, n: usize, probes: usize, tol: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_batch(&mut rng, n, net.input_len());
        let w = random_batch(&mut rng, n, net.output_len());
        let mut drng = ChaCha8Rng::seed_from_u64(0);
        let (_, tape) = net.forward(&x, false, &mut drng).unwrap();
        let (g, dx) = net.backward(&tape, &w, true).unwrap();
        let f = |net: &Network, x: &Batch| dot(&net.predict(x).unwrap().data, &w.data);
        let h = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / (a.abs().max(b.abs()).max(1e-3));
        let with_params: Vec<usize> = (0..net.layers.len()).filter(|&i| !net.layers[i].weights.is_empty()).collect();
        for p in 0..probes {
            if p % 3 == 2 {
                let i = rng.random_range(0..x.data.len());
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (f(net, &xp) - f(net, &xm)) / (2.0 * h);
                assert!(rel(fd, dx.data[i]) < tol, "input grad {i}: {fd} vs {}", dx.data[i]);
                continue;
            }
            let li = with_params[rng.random_range(0..with_params.len())];
            let bias = p % 3 == 1;
            let len = if bias { net.layers[li].bias.len() } else { net.layers[li].weights.len() };
            let j = rng.random_range(0..len);
            let get = |net: &mut Network, d: f64| {
                let l = &mut net.layers[li];
                if bias {
                    l.bias[j] += d;
                } else {
                    l.weights[j] += d;
                }
            };
            get(net, h);
            let fp = f(net, &x);
            get(net, -2.0 * h);
            let fm = f(net, &x);
            get(net, h);
            let fd = (fp - fm) / (2.0 * h);
            let an = if bias { g.layers[li].1[j] } else { g.layers[li].0[j] };
            assert!(rel(fd, an) < tol, "layer {li} param {j} (bias={bias}): {fd} vs {an}");
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        let specs = vec![
            LayerSpec::Dense { input: 5, output: 7 },
            LayerSpec::Activation { kind: Activation::Elu, width: 7 },
            LayerSpec::Dense { input: 7, output: 3 },
        ];
        let mut net = Network::new(specs, 4).unwrap();
        for l in &mut net.layers {
            l.bias.iter_mut().enumerate().for_each(|(i, b)| *b = 0.1 * i as f64 - 0.2);
        }
        gradient_check(&mut net, 3, 150, 1e-6, 11);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let g = ConvShape { in_ch: 2, out_ch: 3, in_h: 6, in_w: 6, filter: 4, stride: 2, pad: 1 };
        let (h, w) = g.conv_out().unwrap();
        let specs = vec![
            LayerSpec::Conv(g),
            LayerSpec::Activation { kind: Activation::Elu, width: 3 * h * w },
            LayerSpec::ConvTranspose(ConvShape { in_ch: 3, out_ch: 2, in_h: h, in_w: w, filter: 4, stride: 2, pad: 1 }),
            LayerSpec::ConvTranspose(ConvShape { in_ch: 2, out_ch: 1, in_h: 6, in_w: 6, filter: 3, stride: 1, pad: 1 }),
        ];
        let mut net = Network::new(specs, 5).unwrap();
        gradient_check(&mut net, 2, 150, 1e-5, 12);
    }

    #[test]
    fn dropout_backward_uses_the_forward_mask() {
        let specs = vec![LayerSpec::Dense { input: 4, output: 6 }, LayerSpec::Dropout { keep: 0.5, width: 6 }];
        let net = Network::new(specs, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_batch(&mut rng, 2, 4);
        let (y, tape) = net.forward(&x, true, &mut rng).unwrap();
        let ones = Batch::new(2, 6, vec![1.0; 12]).unwrap();
        let (g, _) = net.backward(&tape, &ones, false).unwrap();
        let clean = net.predict(&x).unwrap();
        let mut expect = vec![0.0; 6];
        for s in 0..2 {
            for j in 0..6 {
                assert!(clean.data[s * 6 + j] != 0.0);
                let kept = y.data[s * 6 + j] != 0.0;
                if kept {
                    assert!((y.data[s * 6 + j] - 2.0 * clean.data[s * 6 + j]).abs() < 1e-12);
                    expect[j] += 2.0;
                }
            }
        }
        for (a, b) in g.layers[0].1.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_dense_layer() {
        let mut net = Network::zeros(vec![LayerSpec::Dense { input: 3, output: 3 }]).unwrap();
        for i in 0..3 {
            net.layers[0].weights[i * 3 + i] = 1.0;
        }
        let x = Batch::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn ff_architecture_widths_and_counts() {
        let ae = build_ff_autoencoder(1024, 5, ArchOptions::default(), 0).unwrap();
        assert_eq!(ae.encoder.input_len(), 1024);
        assert_eq!(ae.encoder.output_len(), 5);
        assert_eq!(ae.decoder.input_len(), 5);
        assert_eq!(ae.decoder.output_len(), 1024);
        let widths = [1024, 64, 128, 256, 256, 128, 64, 5];
        let per: usize = widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let mirrored: usize = widths.windows(2).map(|w| w[0] * w[1] + w[0]).sum();
        assert_eq!(ae.encoder.param_count(), per);
        assert_eq!(ae.decoder.param_count(), mirrored);
        let dropouts = ae.encoder.specs().iter().filter(|s| matches!(s, LayerSpec::Dropout { .. })).count();
        assert_eq!(dropouts, 5);
        let last = ae.decoder.specs();
        assert!(matches!(last.last(), Some(LayerSpec::Dense { .. })));
        let acts = |s: &[LayerSpec]| s.iter().filter(|l| matches!(l, LayerSpec::Activation { .. })).count();
        assert_eq!(acts(&ae.encoder.specs()), 5);
        assert_eq!(acts(&last), 5);
        assert!(build_ff_autoencoder(3, 5, ArchOptions::default(), 0).is_err());
    }

    #[test]
    fn conv_architecture_chain() {
        let (enc, dec) = conv_autoencoder_specs(32, 32, 4, ArchOptions::default()).unwrap();
        let sizes: Vec<usize> = enc
            .iter()
            .filter_map(|s| match s {
                LayerSpec::Conv(g) => Some(g.conv_out().unwrap().0),
                _ => None,
            })
            .collect();
        assert_eq!(sizes, vec![16, 8, 4, 2]);
        let flat = enc.iter().find_map(|s| match s {
            LayerSpec::Flatten { ch, h, w } => Some(ch * h * w),
            _ => None,
        });
        assert_eq!(flat, Some(256));
        assert_eq!(dec.last().unwrap().output_len().unwrap(), 1024);
        assert!(conv_autoencoder_specs(30, 30, 4, ArchOptions::default()).is_err());
    }

    #[test]
    fn zero_networks_map_to_bias() {
        let (enc, _) = ff_autoencoder_specs(16, 2, ArchOptions::default()).unwrap();
        let enc = Network::zeros(enc).unwrap();
        let x = Batch::new(1, 16, vec![0.0; 16]).unwrap();
        assert!(enc.predict(&x).unwrap().data.iter().all(|v| *v == 0.0));
        let mut dec = Network::zeros(conv_autoencoder_specs(32, 32, 3, ArchOptions::default()).unwrap().1).unwrap();
        dec.layers.last_mut().unwrap().bias[0] = 0.7;
        let z = Batch::new(2, 3, vec![1.0, -4.0, 2.0, 0.5, 0.5, 9.0]).unwrap();
        let y = dec.predict(&z).unwrap();
        assert!(y.data.iter().all(|v| (*v - 0.7).abs() < 1e-15));
    }

    #[test]
    fn round_trip_shape_is_identity_shape() {
        let ae = build_conv_autoencoder(32, 32, 4, ArchOptions::default(), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random_batch(&mut rng, 2, 1024);
        let r = ae.reconstruct(&u).unwrap();
        assert_eq!((r.n, r.width), (2, 1024));
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let specs = vec![LayerSpec::Dense { input: 3, output: 4 }, LayerSpec::Dense { input: 5, output: 1 }];
        assert!(Network::new(specs, 0).is_err());
    }
}
