//! Three-block adversarial adaptation model with hand-written backprop.
//!
//! * generator `G`: `x -> tanh(W1 x + b1) -> tanh(W2 h + b2)` (features)
//! * classifier `C`: `f -> Wc f + bc` (logits, softmax cross-entropy)
//! * discriminator `D`: `f -> sigmoid(wd . f + bd)` (probability of "source")
//!
//! The full parameter vector is laid out as `[theta_g | theta_d | theta_c]`.
//! Inside each block, weight matrices are row-major (`out x in`) and are
//! followed by their bias.

use std::ops::Range;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harmonizer::GradientPair;
use crate::matrix::Matrix;
use crate::rng;
use crate::vecmath::ParamVector;

/// Discriminator outputs are clamped to `[P_CLAMP, 1 - P_CLAMP]` before logs.
pub const P_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Dims {
    pub fn validate(&self) -> Result<()> {
        let Dims { input_dim, hidden_dim, feature_dim, num_classes } = *self;
        if input_dim == 0 || hidden_dim == 0 || feature_dim == 0 || num_classes == 0 {
            return Err(Error::InvalidDims(format!("all dimensions must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    pub fn generator_len(&self) -> usize {
        self.hidden_dim * self.input_dim + self.hidden_dim + self.feature_dim * self.hidden_dim + self.feature_dim
    }

    pub fn discriminator_len(&self) -> usize {
        self.feature_dim + 1
    }

    pub fn classifier_len(&self) -> usize {
        self.num_classes * self.feature_dim + self.num_classes
    }

    pub fn total_len(&self) -> usize {
        self.generator_len() + self.discriminator_len() + self.classifier_len()
    }

    /// Block ranges inside the full parameter vector.
    pub fn layout(&self) -> Layout {
        let g = self.generator_len();
        let d = g + self.discriminator_len();
        Layout { generator: 0..g, discriminator: g..d, classifier: d..d + self.classifier_len() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub generator: Range<usize>,
    pub discriminator: Range<usize>,
    pub classifier: Range<usize>,
}

/// Which parameters the gradient pair is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    /// All of `[theta_g | theta_d | theta_c]`, with structural zero blocks.
    #[default]
    FullTheta,
    /// Only the shared generator block.
    SharedOnly,
}

/// One training step's data. Target rows carry no labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub source_x: Matrix,
    pub source_y: Vec<usize>,
    pub target_x: Matrix,
}

impl Batch {
    pub fn new(source_x: Matrix, source_y: Vec<usize>, target_x: Matrix) -> Result<Self> {
        if source_x.rows() != source_y.len() {
            return Err(Error::DimensionMismatch { left: source_x.rows(), right: source_y.len() });
        }
        if source_x.is_empty() || target_x.is_empty() {
            return Err(Error::InvalidDataset("batch needs at least one source and one target row".into()));
        }
        if source_x.cols() != target_x.cols() {
            return Err(Error::DimensionMismatch { left: source_x.cols(), right: target_x.cols() });
        }
        Ok(Self { source_x, source_y, target_x })
    }
}

/// Both losses and their raw gradients over the full parameter vector.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss_dom: f64,
    pub loss_cls: f64,
    /// Gradient of `L_dom`; zero on the classifier block.
    pub g_dom: ParamVector,
    /// Gradient of `L_cls`; zero on the discriminator block.
    pub g_cls: ParamVector,
}

impl LossGrads {
    pub fn pair(&self, dims: &Dims, scope: Scope) -> GradientPair {
        let (g1, g2) = match scope {
            Scope::FullTheta => (self.g_dom.clone(), self.g_cls.clone()),
            Scope::SharedOnly => {
                let r = dims.layout().generator;
                (
                    ParamVector::from_vec_unchecked(self.g_dom.as_slice()[r.clone()].to_vec()),
                    ParamVector::from_vec_unchecked(self.g_cls.as_slice()[r].to_vec()),
                )
            }
        };
        GradientPair::new(g1, g2).expect("blocks have equal length")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyNetwork {
    dims: Dims,
    theta_g: ParamVector,
    theta_d: ParamVector,
    theta_c: ParamVector,
}

/// Per-sample activations kept for the backward pass.
struct Forward {
    hidden: Vec<f64>,
    feature: Vec<f64>,
}

fn tanh_layer(w: &[f64], b: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    (0..out).map(|j| (b[j] + crate::vecmath::dot_slices(&w[j * n..(j + 1) * n], x)).tanh()).collect()
}

fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl ToyNetwork {
    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
    pub fn init(seed: u64, dims: Dims) -> Result<Self> {
        dims.validate()?;
        let mut rng = rng::stream(seed, "init");
        let mut layer = |fan_in: usize, fan_out: usize, out: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..fan_out * fan_in + fan_out {
                out.push(rng.random_range(-bound..=bound));
            }
        };
        let mut g = Vec::with_capacity(dims.generator_len());
        layer(dims.input_dim, dims.hidden_dim, &mut g);
        layer(dims.hidden_dim, dims.feature_dim, &mut g);
        let mut d = Vec::with_capacity(dims.discriminator_len());
        layer(dims.feature_dim, 1, &mut d);
        let mut c = Vec::with_capacity(dims.classifier_len());
        layer(dims.feature_dim, dims.num_classes, &mut c);
        Self::from_parts(dims, ParamVector::new(g)?, ParamVector::new(d)?, ParamVector::new(c)?)
    }

    pub fn from_parts(dims: Dims, theta_g: ParamVector, theta_d: ParamVector, theta_c: ParamVector) -> Result<Self> {
        dims.validate()?;
        for (got, want) in [
            (theta_g.len(), dims.generator_len()),
            (theta_d.len(), dims.discriminator_len()),
            (theta_c.len(), dims.classifier_len()),
        ] {
            if got != want {
                return Err(Error::DimensionMismatch { left: got, right: want });
            }
        }
        Ok(Self { dims, theta_g, theta_d, theta_c })
    }

    pub fn from_flat(dims: Dims, params: &ParamVector) -> Result<Self> {
        dims.validate()?;
        if params.len() != dims.total_len() {
            return Err(Error::DimensionMismatch { left: params.len(), right: dims.total_len() });
        }
        let l = dims.layout();
        let s = params.as_slice();
        let part = |r: Range<usize>| ParamVector::from_vec_unchecked(s[r].to_vec());
        Self::from_parts(dims, part(l.generator), part(l.discriminator), part(l.classifier))
    }

    pub fn dims(&self) -> &Dims {
        &self.dims
    }

    pub fn theta_g(&self) -> &ParamVector {
        &self.theta_g
    }

    pub fn theta_d(&self) -> &ParamVector {
        &self.theta_d
    }

    pub fn theta_c(&self) -> &ParamVector {
        &self.theta_c
    }

    pub fn flat(&self) -> ParamVector {
        let mut v = Vec::with_capacity(self.dims.total_len());
        v.extend_from_slice(self.theta_g.as_slice());
        v.extend_from_slice(self.theta_d.as_slice());
        v.extend_from_slice(self.theta_c.as_slice());
        ParamVector::from_vec_unchecked(v)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dims.input_dim {
            return Err(Error::DimensionMismatch { left: x.cols(), right: self.dims.input_dim });
        }
        Ok(())
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        self.check_input(&batch.source_x)?;
        self.check_input(&batch.target_x)?;
        if let Some(&label) = batch.source_y.iter().find(|&&y| y >= self.dims.num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes: self.dims.num_classes });
        }
        Ok(())
    }

    fn generator_parts(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let Dims { input_dim: i, hidden_dim: h, feature_dim: f, .. } = self.dims;
        let g = self.theta_g.as_slice();
        let (w1, rest) = g.split_at(h * i);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(f * h);
        (w1, b1, w2, b2)
    }

    fn forward_one(&self, x: &[f64]) -> Forward {
        let (w1, b1, w2, b2) = self.generator_parts();
        let hidden = tanh_layer(w1, b1, x, self.dims.hidden_dim);
        let feature = tanh_layer(w2, b2, &hidden, self.dims.feature_dim);
        Forward { hidden, feature }
    }

    fn logits(&self, feature: &[f64]) -> Vec<f64> {
        let (f, k) = (self.dims.feature_dim, self.dims.num_classes);
        let c = self.theta_c.as_slice();
        let (w, b) = c.split_at(k * f);
        (0..k).map(|j| b[j] + crate::vecmath::dot_slices(&w[j * f..(j + 1) * f], feature)).collect()
    }

    fn disc_prob(&self, feature: &[f64]) -> f64 {
        let d = self.theta_d.as_slice();
        let f = self.dims.feature_dim;
        sigmoid(d[f] + crate::vecmath::dot_slices(&d[..f], feature))
    }

    /// Generator features, one row per input row.
    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let rows: Vec<Vec<f64>> = x.iter_rows().map(|r| self.forward_one(r).feature).collect();
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, self.dims.feature_dim));
        }
        Matrix::from_rows(&rows)
    }

    /// Arg-max class per row (first index on ties).
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        self.check_input(x)?;
        Ok(x.iter_rows()
            .map(|r| {
                let z = self.logits(&self.forward_one(r).feature);
                z.iter().enumerate().fold(0, |best, (j, &v)| if v > z[best] { j } else { best })
            })
            .collect())
    }

    /// Mean cross-entropy of `C(G(x_s))` against the source labels.
    pub fn loss_cls(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let n = batch.source_x.rows() as f64;
        Ok(batch
            .source_x
            .iter_rows()
            .zip(&batch.source_y)
            .map(|(x, &y)| -log_softmax(&self.logits(&self.forward_one(x).feature))[y])
            .sum::<f64>()
            / n)
    }

    /// `mean_s log D(G(x_s)) + mean_t log(1 - D(G(x_t)))`.
    pub fn loss_dom(&self, batch: &Batch) -> Result<f64> {
        self.check_batch(batch)?;
        let clamp = |p: f64| p.clamp(P_CLAMP, 1.0 - P_CLAMP);
        let src = batch.source_x.iter_rows().map(|x| clamp(self.disc_prob(&self.forward_one(x).feature)).ln()).sum::<f64>()
            / batch.source_x.rows() as f64;
        let tgt = batch
            .target_x
            .iter_rows()
            .map(|x| (1.0 - clamp(self.disc_prob(&self.forward_one(x).feature))).ln())
            .sum::<f64>()
            / batch.target_x.rows() as f64;
        Ok(src + tgt)
    }

    /// Accumulates the generator gradient for one sample given `dL/dfeature`.
    fn backprop_generator(&self, x: &[f64], fw: &Forward, d_feature: &[f64], grad_g: &mut [f64]) {
        let Dims { input_dim: i, hidden_dim: h, feature_dim: f, .. } = self.dims;
        let (_, _, w2, _) = self.generator_parts();
        let (gw1, rest) = grad_g.split_at_mut(h * i);
        let (gb1, rest) = rest.split_at_mut(h);
        let (gw2, gb2) = rest.split_at_mut(f * h);

        let mut d_hidden = vec![0.0; h];
        for k in 0..f {
            let da = d_feature[k] * (1.0 - fw.feature[k] * fw.feature[k]);
            if da == 0.0 {
                continue;
            }
            gb2[k] += da;
            for j in 0..h {
                gw2[k * h + j] += da * fw.hidden[j];
                d_hidden[j] += da * w2[k * h + j];
            }
        }
        for j in 0..h {
            let da = d_hidden[j] * (1.0 - fw.hidden[j] * fw.hidden[j]);
            if da == 0.0 {
                continue;
            }
            gb1[j] += da;
            for m in 0..i {
                gw1[j * i + m] += da * x[m];
            }
        }
    }

    /// Both losses and their gradients over `[theta_g | theta_d | theta_c]`
    /// in one pass.
    pub fn loss_grads(&self, batch: &Batch) -> Result<LossGrads> {
        self.check_batch(batch)?;
        let dims = self.dims;
        let layout = dims.layout();
        let (f, k) = (dims.feature_dim, dims.num_classes);
        let mut g_dom = vec![0.0; dims.total_len()];
        let mut g_cls = vec![0.0; dims.total_len()];
        let wd = &self.theta_d.as_slice()[..f];
        let wc = &self.theta_c.as_slice()[..k * f];

        let n_s = batch.source_x.rows() as f64;
        let n_t = batch.target_x.rows() as f64;
        let mut loss_cls = 0.0;
        let mut loss_dom = 0.0;

        let mut d_feature = vec![0.0; f];
        for (x, &y) in batch.source_x.iter_rows().zip(&batch.source_y) {
            let fw = self.forward_one(x);

            // classification
            let logp = log_softmax(&self.logits(&fw.feature));
            loss_cls -= logp[y] / n_s;
            d_feature.iter_mut().for_each(|v| *v = 0.0);
            {
                let gc = &mut g_cls[layout.classifier.clone()];
                let (gw, gb) = gc.split_at_mut(k * f);
                for j in 0..k {
                    let dz = (logp[j].exp() - if j == y { 1.0 } else { 0.0 }) / n_s;
                    gb[j] += dz;
                    for m in 0..f {
                        gw[j * f + m] += dz * fw.feature[m];
                        d_feature[m] += dz * wc[j * f + m];
                    }
                }
            }
            self.backprop_generator(x, &fw, &d_feature, &mut g_cls[layout.generator.clone()]);

            // domain, source term: log D
            let p = self.disc_prob(&fw.feature);
            let pc = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            loss_dom += pc.ln() / n_s;
            let ds = if pc == p { (1.0 - p) / n_s } else { 0.0 };
            self.accumulate_domain(x, &fw, ds, wd, &mut g_dom, &layout);
        }
        for x in batch.target_x.iter_rows() {
            let fw = self.forward_one(x);
            let p = self.disc_prob(&fw.feature);
            let pc = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
            loss_dom += (1.0 - pc).ln() / n_t;
            let ds = if pc == p { -p / n_t } else { 0.0 };
            self.accumulate_domain(x, &fw, ds, wd, &mut g_dom, &layout);
        }

        Ok(LossGrads {
            loss_dom,
            loss_cls,
            g_dom: ParamVector::new(g_dom)?,
            g_cls: ParamVector::new(g_cls)?,
        })
    }

    fn accumulate_domain(&self, x: &[f64], fw: &Forward, ds: f64, wd: &[f64], g: &mut [f64], layout: &Layout) {
        if ds == 0.0 {
            return;
        }
        let f = self.dims.feature_dim;
        let gd = &mut g[layout.discriminator.clone()];
        for (gm, h) in gd[..f].iter_mut().zip(&fw.feature) {
            *gm += ds * h;
        }
        gd[f] += ds;
        let d_feature: Vec<f64> = wd.iter().map(|w| ds * w).collect();
        self.backprop_generator(x, fw, &d_feature, &mut g[layout.generator.clone()]);
    }

    /// `g1 = grad L_dom`, `g2 = grad L_cls`, over the requested scope.
    pub fn grad_pair(&self, batch: &Batch, scope: Scope) -> Result<GradientPair> {
        Ok(self.loss_grads(batch)?.pair(&self.dims, scope))
    }

    /// One SGD update. `update` is either full-length or generator-only.
    ///
    /// Generator and classifier blocks descend (`theta -= eta * u`); the
    /// discriminator block ascends (`theta_d += eta * u_d`).
    pub fn sgd_step(&self, update: &ParamVector, eta: f64) -> Result<ToyNetwork> {
        let mut next = self.clone();
        next.apply_update(update, eta)?;
        Ok(next)
    }

    pub fn apply_update(&mut self, update: &ParamVector, eta: f64) -> Result<()> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate must be positive, got {eta}")));
        }
        let layout = self.dims.layout();
        let u = update.as_slice();
        let step = |theta: &mut ParamVector, part: &[f64], sign: f64| {
            let v: Vec<f64> = theta.iter().zip(part).map(|(t, d)| t + sign * eta * d).collect();
            *theta = ParamVector::new(v)?;
            Ok::<_, Error>(())
        };
        if u.len() == self.dims.total_len() {
            step(&mut self.theta_g, &u[layout.generator], -1.0)?;
            step(&mut self.theta_d, &u[layout.discriminator], 1.0)?;
            step(&mut self.theta_c, &u[layout.classifier], -1.0)?;
        } else if u.len() == self.dims.generator_len() {
            step(&mut self.theta_g, u, -1.0)?;
        } else {
            return Err(Error::DimensionMismatch { left: u.len(), right: self.dims.total_len() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use super::*;

    fn dims() -> Dims {
        Dims { input_dim: 2, hidden_dim: 8, feature_dim: 2, num_classes: 2 }
    }

    fn batch() -> Batch {
        Batch::new(
            Matrix::from_rows(&[[0.5, -1.0], [1.5, 0.3], [-0.7, 0.2]]).unwrap(),
            vec![0, 1, 1],
            Matrix::from_rows(&[[0.1, 0.9], [-1.2, -0.4]]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(dims().generator_len(), 42);
        let net = ToyNetwork::init(1, dims()).unwrap();
        assert_eq!(net.theta_g().len(), 42);
        assert_eq!(net.theta_d().len(), 3);
        assert_eq!(net.theta_c().len(), 6);
        assert_eq!(net.flat().len(), 51);
        let l = dims().layout();
        assert_eq!((l.generator, l.discriminator, l.classifier), (0..42, 42..45, 45..51));
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = ToyNetwork::init(3, dims()).unwrap();
        assert_eq!(a, ToyNetwork::init(3, dims()).unwrap());
        assert_ne!(a, ToyNetwork::init(4, dims()).unwrap());
        let (w1, ..) = a.generator_parts();
        assert!(w1.iter().all(|v| v.abs() <= 1.0 / 2f64.sqrt()));
    }

    #[test]
    fn invalid_dims() {
        let bad = Dims { hidden_dim: 0, ..dims() };
        assert!(matches!(ToyNetwork::init(0, bad), Err(Error::InvalidDims(_))));
    }

    #[test]
    fn uniform_classifier_gives_ln2() {
        let net = ToyNetwork::init(5, dims()).unwrap();
        let flat_c = ParamVector::zeros(6).unwrap();
        let net = ToyNetwork::from_parts(dims(), net.theta_g().clone(), net.theta_d().clone(), flat_c).unwrap();
        assert!((net.loss_cls(&batch()).unwrap() - LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_classifier_gives_near_zero_loss() {
        // Features are tanh-bounded, so scale the classifier to saturate.
        let d = Dims { input_dim: 1, hidden_dim: 1, feature_dim: 1, num_classes: 2 };
        let g = ParamVector::new(vec![50.0, 0.0, 50.0, 0.0]).unwrap();
        let c = ParamVector::new(vec![-100.0, 100.0, 0.0, 0.0]).unwrap();
        let net = ToyNetwork::from_parts(d, g, ParamVector::zeros(2).unwrap(), c).unwrap();
        let b = Batch::new(
            Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(),
            vec![1, 0],
            Matrix::from_rows(&[[0.0]]).unwrap(),
        )
        .unwrap();
        assert!(net.loss_cls(&b).unwrap() < 1e-80);
    }

    #[test]
    fn constant_discriminator_gives_two_ln_half() {
        let net = ToyNetwork::init(5, dims()).unwrap();
        let net = ToyNetwork::from_parts(dims(), net.theta_g().clone(), ParamVector::zeros(3).unwrap(), net.theta_c().clone()).unwrap();
        assert!((net.loss_dom(&batch()).unwrap() - 2.0 * 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn perfect_discriminator_is_clamped() {
        let d = Dims { input_dim: 1, hidden_dim: 1, feature_dim: 1, num_classes: 2 };
        let g = ParamVector::new(vec![50.0, 0.0, 50.0, 0.0]).unwrap();
        let disc = ParamVector::new(vec![1000.0, 0.0]).unwrap();
        let net = ToyNetwork::from_parts(d, g, disc, ParamVector::zeros(4).unwrap()).unwrap();
        let b = Batch::new(
            Matrix::from_rows(&[[1.0]]).unwrap(),
            vec![0],
            Matrix::from_rows(&[[-1.0]]).unwrap(),
        )
        .unwrap();
        let l = net.loss_dom(&b).unwrap();
        let expected = 2.0 * (1.0 - P_CLAMP).ln();
        assert!(l < 0.0 && (l - expected).abs() < 1e-15);
        // saturated discriminator: no gradient flows through the clamp
        let lg = net.loss_grads(&b).unwrap();
        assert!(lg.g_dom.is_zero());
    }

    #[test]
    fn label_out_of_range() {
        let net = ToyNetwork::init(1, dims()).unwrap();
        let mut b = batch();
        b.source_y[0] = 2;
        assert!(matches!(net.loss_cls(&b), Err(Error::LabelOutOfRange { label: 2, .. })));
    }

    #[test]
    fn structural_zero_blocks() {
        let net = ToyNetwork::init(2, dims()).unwrap();
        let lg = net.loss_grads(&batch()).unwrap();
        let l = dims().layout();
        assert!(lg.g_cls.as_slice()[l.discriminator].iter().all(|&v| v == 0.0));
        assert!(lg.g_dom.as_slice()[l.classifier].iter().all(|&v| v == 0.0));
        let full = lg.pair(&dims(), Scope::FullTheta);
        let shared = lg.pair(&dims(), Scope::SharedOnly);
        assert_eq!(shared.len(), 42);
        assert_eq!(full.inner_product(), shared.inner_product());
    }

    #[test]
    fn loss_grads_match_loss_functions() {
        let net = ToyNetwork::init(9, dims()).unwrap();
        let lg = net.loss_grads(&batch()).unwrap();
        assert!((lg.loss_cls - net.loss_cls(&batch()).unwrap()).abs() < 1e-14);
        assert!((lg.loss_dom - net.loss_dom(&batch()).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn sgd_step_examples() {
        let net = ToyNetwork::init(2, dims()).unwrap();
        let zero = ParamVector::zeros(51).unwrap();
        assert_eq!(net.sgd_step(&zero, 0.1).unwrap(), net);

        for (idx, sign) in [(0usize, -1.0), (43, 1.0), (50, -1.0)] {
            let mut e = vec![0.0; 51];
            e[idx] = 1.0;
            let next = net.sgd_step(&ParamVector::new(e).unwrap(), 1.0).unwrap();
            let (a, b) = (net.flat(), next.flat());
            for i in 0..51 {
                if i == idx {
                    assert_eq!(b[i], a[i] + sign);
                } else {
                    assert_eq!(b[i], a[i]);
                }
            }
        }

        let u = ParamVector::new((0..51).map(|i| i as f64 * 0.125).collect()).unwrap();
        let two = net.sgd_step(&u, 0.25).unwrap().sgd_step(&u, 0.25).unwrap();
        let one = net.sgd_step(&u, 0.5).unwrap();
        for (a, b) in two.flat().iter().zip(one.flat().iter()) {
            assert!((a - b).abs() < 1e-14);
        }

        let g_only = ParamVector::new(vec![1.0; 42]).unwrap();
        let next = net.sgd_step(&g_only, 1.0).unwrap();
        assert_eq!(next.theta_d(), net.theta_d());
        assert!(net.sgd_step(&ParamVector::zeros(7).unwrap(), 1.0).is_err());
        assert!(net.sgd_step(&zero, 0.0).is_err());
    }
}
