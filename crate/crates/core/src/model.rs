//! Miniature residual network trained with exact backpropagation and Adam.
//!
//! Layout: an affine stem with relu, `n_blocks` residual blocks
//! `x + W₂·relu(W₁·x + b₁) + b₂`, then an affine head producing one score per
//! class. The stem and blocks form the feature trunk that transfer regimes
//! carry over between tasks; the head is task specific.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::top_k_indices;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub width: usize,
    pub n_blocks: usize,
    pub n_classes: usize,
    pub init_seed: u64,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 {
            return Err(Error::Spec(format!(
                "input_dim {} and width {} must be positive",
                self.input_dim, self.width
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::Spec(format!(
                "need at least 2 classes, got {}",
                self.n_classes
            )));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.width, self.input_dim)];
        shapes.extend(std::iter::repeat_n((self.width, self.width), 2 * self.n_blocks));
        shapes.push((self.n_classes, self.width));
        shapes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// Affine layer `y = W·x + b` with `W` stored row-major as `out × in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Dense {
            weight: Matrix::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    fn he_init(out_dim: usize, in_dim: usize, rng: &mut seed::Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).expect("positive std");
        let data = (0..out_dim * in_dim).map(|_| normal.sample(rng)).collect();
        Dense {
            weight: Matrix::from_vec(out_dim, in_dim, data).expect("sized buffer"),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.out_dim() == other.out_dim() && self.in_dim() == other.in_dim()
    }

    /// `out = input · Wᵀ + b`, optionally followed by relu.
    fn apply(&self, input: &Matrix, relu: bool) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.out_dim());
        for (b, x) in input.iter_rows().enumerate() {
            let row = out.row_mut(b);
            for (o, y) in row.iter_mut().enumerate() {
                let w = self.weight.row(o);
                let mut acc = self.bias[o];
                for (wi, xi) in w.iter().zip(x) {
                    acc += wi * xi;
                }
                *y = if relu { acc.max(0.0) } else { acc };
            }
        }
        out
    }

    /// Accumulates `Σ_b delta_b ⊗ input_b` into `grad` and returns
    /// `delta · W`, the gradient with respect to the layer input.
    fn backprop(&self, input: &Matrix, delta: &Matrix, grad: &mut Dense) -> Matrix {
        let mut d_input = Matrix::zeros(input.rows(), self.in_dim());
        for b in 0..input.rows() {
            let x = input.row(b);
            let d = delta.row(b);
            for (o, &dv) in d.iter().enumerate() {
                if dv == 0.0 {
                    continue;
                }
                grad.bias[o] += dv;
                let gw = grad.weight.row_mut(o);
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += dv * xi;
                }
                let w = self.weight.row(o);
                for (di, wi) in d_input.row_mut(b).iter_mut().zip(w) {
                    *di += dv * wi;
                }
            }
        }
        d_input
    }

    fn for_each_param(&self, mut f: impl FnMut(f64)) {
        self.weight.as_slice().iter().chain(&self.bias).for_each(|&v| f(v));
    }
}

/// Parameters of the residual network.
///
/// `layers` holds the stem, then two layers per residual block, then the head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Dense>,
    frozen_features: bool,
}

/// Activations kept by [`Network::forward`] for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    fingerprint: u64,
    input: Matrix,
    /// Stem output after relu.
    stem_out: Matrix,
    /// Per block: input to the block and the inner relu output.
    blocks: Vec<(Matrix, Matrix)>,
    trunk_out: Matrix,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// One gradient array per network parameter array, same layout as
/// [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Dense>,
}

impl GradientSet {
    pub fn zeros_like(net: &Network) -> Self {
        GradientSet {
            layers: net
                .layers
                .iter()
                .map(|l| Dense::zeros(l.out_dim(), l.in_dim()))
                .collect(),
        }
    }
}

/// How [`transfer_init`] treats the copied feature trunk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferMode {
    /// Trunk copied and trainable, head re-initialized.
    HeadOnlyReinit,
    /// Trunk copied and frozen, head re-initialized.
    FreezeFeatures,
}

/// He-initialized network: Gaussian weights with std `sqrt(2/fan_in)`, zero biases.
pub fn init_network(spec: NetworkSpec) -> Result<Network> {
    spec.validate()?;
    let mut rng = seed::rng(spec.init_seed);
    let layers = spec
        .layer_shapes()
        .into_iter()
        .map(|(o, i)| Dense::he_init(o, i, &mut rng))
        .collect();
    Ok(Network {
        spec,
        layers,
        frozen_features: false,
    })
}

impl Network {
    /// Builds a network from explicit layers, checking them against `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense>, frozen_features: bool) -> Result<Self> {
        spec.validate()?;
        let net = Network {
            spec,
            layers,
            frozen_features,
        };
        net.check_shapes()?;
        Ok(net)
    }

    fn check_shapes(&self) -> Result<()> {
        let shapes = self.spec.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::Shape(format!(
                "spec needs {} layers, found {}",
                shapes.len(),
                self.layers.len()
            )));
        }
        for (i, ((o, inp), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.out_dim() != *o || layer.in_dim() != *inp || layer.bias.len() != *o {
                return Err(Error::Shape(format!(
                    "layer {i} is {}x{} (bias {}), spec needs {o}x{inp}",
                    layer.out_dim(),
                    layer.in_dim(),
                    layer.bias.len()
                )));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn stem(&self) -> &Dense {
        &self.layers[0]
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("head layer")
    }

    /// Stem and residual-block layers.
    pub fn trunk(&self) -> &[Dense] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn frozen_features(&self) -> bool {
        self.frozen_features
    }

    pub fn set_frozen_features(&mut self, frozen: bool) {
        self.frozen_features = frozen;
    }

    pub fn parameter_count(&self) -> usize {
        self.spec.parameter_count()
    }

    pub fn is_finite(&self) -> bool {
        let mut finite = true;
        for layer in &self.layers {
            layer.for_each_param(|v| finite &= v.is_finite());
        }
        finite
    }

    /// Cheap identity of the current parameter values, used to reject caches
    /// produced by a different or since-updated network.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for layer in &self.layers {
            layer.for_each_param(|v| {
                h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3);
            });
        }
        h
    }

    fn check_input(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "features have {} columns, network expects {}",
                features.cols(),
                self.spec.input_dim
            )));
        }
        Ok(())
    }

    /// Scores for every row of `features`, plus the activations needed by
    /// [`Network::backward`].
    pub fn forward(&self, features: &Matrix) -> Result<(Matrix, ForwardCache)> {
        self.check_input(features)?;
        let stem_out = self.layers[0].apply(features, true);
        let mut blocks = Vec::with_capacity(self.spec.n_blocks);
        let mut h = stem_out.clone();
        for pair in self.layers[1..self.layers.len() - 1].chunks_exact(2) {
            let inner = pair[0].apply(&h, true);
            let mut out = pair[1].apply(&inner, false);
            for (o, x) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
                *o += x;
            }
            blocks.push((std::mem::replace(&mut h, out), inner));
        }
        let scores = self.head().apply(&h, false);
        let cache = ForwardCache {
            fingerprint: self.fingerprint(),
            input: features.clone(),
            stem_out,
            blocks,
            trunk_out: h,
        };
        Ok((scores, cache))
    }

    /// Scores without keeping activations.
    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        self.check_input(features)?;
        let mut h = self.layers[0].apply(features, true);
        for pair in self.layers[1..self.layers.len() - 1].chunks_exact(2) {
            let inner = pair[0].apply(&h, true);
            let mut out = pair[1].apply(&inner, false);
            for (o, x) in out.as_mut_slice().iter_mut().zip(h.as_slice()) {
                *o += x;
            }
            h = out;
        }
        Ok(self.head().apply(&h, false))
    }

    /// Gradient of `mean_b loss_b + μ·Σ‖W‖²` given per-sample `∂loss_b/∂scores_b`.
    ///
    /// Biases are not penalized.
    pub fn backward(&self, cache: &ForwardCache, loss_grads: &Matrix, mu: f64) -> Result<GradientSet> {
        if cache.fingerprint != self.fingerprint()
            || cache.blocks.len() != self.spec.n_blocks
            || cache.input.cols() != self.spec.input_dim
        {
            return Err(Error::Shape(
                "forward cache does not belong to this network state".into(),
            ));
        }
        let batch = cache.batch_size();
        if loss_grads.rows() != batch || loss_grads.cols() != self.spec.n_classes {
            return Err(Error::Shape(format!(
                "loss gradients are {}x{}, expected {batch}x{}",
                loss_grads.rows(),
                loss_grads.cols(),
                self.spec.n_classes
            )));
        }

        let mut grads = GradientSet::zeros_like(self);
        let n_layers = self.layers.len();
        if batch > 0 {
            let mut delta = loss_grads.clone();
            let inv = 1.0 / batch as f64;
            delta.as_mut_slice().iter_mut().for_each(|d| *d *= inv);

            let mut d_h = self.layers[n_layers - 1].backprop(
                &cache.trunk_out,
                &delta,
                &mut grads.layers[n_layers - 1],
            );
            for (k, (block_in, inner)) in cache.blocks.iter().enumerate().rev() {
                let (i1, i2) = (1 + 2 * k, 2 + 2 * k);
                let mut d_inner = self.layers[i2].backprop(inner, &d_h, &mut grads.layers[i2]);
                relu_mask(&mut d_inner, inner);
                let d_skip = self.layers[i1].backprop(block_in, &d_inner, &mut grads.layers[i1]);
                for (d, s) in d_h.as_mut_slice().iter_mut().zip(d_skip.as_slice()) {
                    *d += s;
                }
            }
            relu_mask(&mut d_h, &cache.stem_out);
            self.layers[0].backprop(&cache.input, &d_h, &mut grads.layers[0]);
        }

        if mu != 0.0 {
            for (g, l) in grads.layers.iter_mut().zip(&self.layers) {
                for (gv, wv) in g.weight.as_mut_slice().iter_mut().zip(l.weight.as_slice()) {
                    *gv += 2.0 * mu * wv;
                }
            }
        }
        Ok(grads)
    }

    /// Top-`k` classes per row, by descending score with ties to the lower index.
    pub fn predict_topk(&self, features: &Matrix, k: usize) -> Result<Vec<Vec<usize>>> {
        if k == 0 || k > self.spec.n_classes {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.spec.n_classes
            )));
        }
        let scores = self.scores(features)?;
        Ok(scores.iter_rows().map(|row| top_k_indices(row, k)).collect())
    }
}

/// Zeroes gradient entries where the relu output was inactive.
fn relu_mask(delta: &mut Matrix, activated: &Matrix) {
    for (d, a) in delta.as_mut_slice().iter_mut().zip(activated.as_slice()) {
        if *a <= 0.0 {
            *d = 0.0;
        }
    }
}

/// `μ · Σ ‖W‖²_F` over every weight matrix; biases excluded.
pub fn l2_penalty(net: &Network, mu: f64) -> f64 {
    mu * net.layers.iter().map(|l| l.weight.squared_norm()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<Dense>,
    second_moment: Vec<Dense>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Fresh state with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
    pub fn new(net: &Network, learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {learning_rate} must be > 0"
            )));
        }
        let zeros = GradientSet::zeros_like(net).layers;
        Ok(AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            learning_rate,
        })
    }
}

/// One bias-corrected Adam update in place. With frozen features only the
/// head (parameters and moments) moves.
pub fn adam_step(net: &mut Network, grads: &GradientSet, state: &mut AdamState) -> Result<()> {
    let compatible = |a: &[Dense]| {
        a.len() == net.layers.len() && a.iter().zip(&net.layers).all(|(x, y)| x.same_shape(y))
    };
    if !compatible(&grads.layers) || !compatible(&state.first_moment) {
        return Err(Error::Shape(
            "gradients or optimizer state do not match the network".into(),
        ));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let correct1 = 1.0 - b1.powi(t);
    let correct2 = 1.0 - b2.powi(t);
    let (lr, eps) = (state.learning_rate, state.epsilon);

    let first = if net.frozen_features {
        net.layers.len() - 1
    } else {
        0
    };
    for i in first..net.layers.len() {
        let layer = &mut net.layers[i];
        let g = &grads.layers[i];
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let params = layer
            .weight
            .as_mut_slice()
            .iter_mut()
            .chain(layer.bias.iter_mut());
        let gs = g.weight.as_slice().iter().chain(&g.bias);
        let ms = m.weight.as_mut_slice().iter_mut().chain(m.bias.iter_mut());
        let vs = v.weight.as_mut_slice().iter_mut().chain(v.bias.iter_mut());
        for (((p, &gv), mv), vv) in params.zip(gs).zip(ms).zip(vs) {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / correct1;
            let v_hat = *vv / correct2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Copies the feature trunk of `source` and attaches a fresh head with
/// `new_n_classes` outputs drawn from `seed`.
pub fn transfer_init(
    source: &Network,
    new_n_classes: usize,
    mode: TransferMode,
    seed: u64,
) -> Result<Network> {
    source.check_shapes()?;
    let spec = NetworkSpec {
        n_classes: new_n_classes,
        init_seed: seed,
        ..source.spec
    };
    spec.validate()?;
    let mut rng = seed::rng(seed);
    let mut layers = source.trunk().to_vec();
    layers.push(Dense::he_init(new_n_classes, spec.width, &mut rng));
    Ok(Network {
        spec,
        layers,
        frozen_features: mode == TransferMode::FreezeFeatures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(input_dim: usize, width: usize, n_blocks: usize, n_classes: usize, init_seed: u64) -> NetworkSpec {
        NetworkSpec {
            input_dim,
            width,
            n_blocks,
            n_classes,
            init_seed,
        }
    }

    #[test]
    fn parameter_count_matches_shape_arithmetic() {
        let net = init_network(spec(4, 8, 2, 7, 1)).unwrap();
        assert_eq!(net.parameter_count(), 391);
        let counted: usize = net
            .layers()
            .iter()
            .map(|l| l.weight.as_slice().len() + l.bias.len())
            .sum();
        assert_eq!(counted, 391);
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_network(spec(4, 8, 2, 7, 11)).unwrap();
        let b = init_network(spec(4, 8, 2, 7, 11)).unwrap();
        let c = init_network(spec(4, 8, 2, 7, 12)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(matches!(init_network(spec(0, 8, 1, 3, 0)), Err(Error::Spec(_))));
        assert!(matches!(init_network(spec(3, 0, 1, 3, 0)), Err(Error::Spec(_))));
        assert!(matches!(init_network(spec(3, 4, 1, 1, 0)), Err(Error::Spec(_))));
        assert!(init_network(spec(3, 4, 0, 2, 0)).is_ok());
    }

    #[test]
    fn zero_blocks_are_identity() {
        let mut net = init_network(spec(3, 5, 2, 4, 9)).unwrap();
        for layer in &mut net.layers_mut()[1..5] {
            *layer = Dense::zeros(5, 5);
        }
        let shallow = Network::from_layers(
            spec(3, 5, 0, 4, 9),
            vec![net.stem().clone(), net.head().clone()],
            false,
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.3, -1.0, 2.0], [1.5, 0.2, -0.7]]).unwrap();
        assert_eq!(net.scores(&x).unwrap(), shallow.scores(&x).unwrap());
    }

    #[test]
    fn all_zero_parameters_give_zero_scores() {
        let mut net = init_network(spec(3, 4, 1, 3, 0)).unwrap();
        for layer in net.layers_mut() {
            *layer = Dense::zeros(layer.out_dim(), layer.in_dim());
        }
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert!(net.scores(&x).unwrap().as_slice().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn hand_computed_forward() {
        // stem W=[[1,0],[0,1]], b=[0,-1]; block W1=[[1,1],[0,0]], b1=0,
        // W2=[[0.5,0],[0,0]], b2=[0,0.1]; head W=[[1,-1],[2,0]], b=[0.5,0].
        let dense = |w: &[f64], b: &[f64]| Dense {
            weight: Matrix::from_vec(2, 2, w.to_vec()).unwrap(),
            bias: b.to_vec(),
        };
        let net = Network::from_layers(
            spec(2, 2, 1, 2, 0),
            vec![
                dense(&[1.0, 0.0, 0.0, 1.0], &[0.0, -1.0]),
                dense(&[1.0, 1.0, 0.0, 0.0], &[0.0, 0.0]),
                dense(&[0.5, 0.0, 0.0, 0.0], &[0.0, 0.1]),
                dense(&[1.0, -1.0, 2.0, 0.0], &[0.5, 0.0]),
            ],
            false,
        )
        .unwrap();
        // x=(2,3): stem relu(2, 2) = (2,2); inner relu(4, 0) = (4,0);
        // block out = (2,2) + (2, 0.1) = (4, 2.1); head = (4-2.1+0.5, 8) = (2.4, 8)
        let x = Matrix::from_rows(&[[2.0, 3.0]]).unwrap();
        let s = net.scores(&x).unwrap();
        assert!((s.get(0, 0) - 2.4).abs() < 1e-12);
        assert!((s.get(0, 1) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn backward_penalty_only() {
        let net = init_network(spec(3, 4, 1, 3, 5)).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0, -1.0], [0.5, 0.5, 0.5]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let zeros = Matrix::zeros(2, 3);

        let g = net.backward(&cache, &zeros, 0.0).unwrap();
        assert_eq!(g, GradientSet::zeros_like(&net));

        let g = net.backward(&cache, &zeros, 0.25).unwrap();
        for (gl, l) in g.layers.iter().zip(net.layers()) {
            for (gv, wv) in gl.weight.as_slice().iter().zip(l.weight.as_slice()) {
                assert_eq!(*gv, 0.5 * wv);
            }
            assert!(gl.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = init_network(spec(2, 3, 1, 2, 5)).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        net.layers_mut()[0].bias[0] += 1.0;
        assert!(matches!(
            net.backward(&cache, &Matrix::zeros(1, 2), 0.0),
            Err(Error::Shape(_))
        ));
        let other = init_network(spec(2, 3, 1, 2, 6)).unwrap();
        assert!(other.backward(&cache, &Matrix::zeros(1, 2), 0.0).is_err());
    }

    #[test]
    fn forward_shape_mismatch() {
        let net = init_network(spec(3, 4, 1, 3, 0)).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(2, 4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn l2_penalty_values() {
        let mut net = init_network(spec(1, 1, 0, 2, 0)).unwrap();
        assert_eq!(l2_penalty(&net, 0.0), 0.0);
        net.layers_mut()[0].weight.set(0, 0, 3.0);
        net.layers_mut()[1] = Dense::zeros(2, 1);
        net.layers_mut()[1].bias = vec![7.0, 7.0];
        assert_eq!(l2_penalty(&net, 0.25), 2.25);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut net = init_network(spec(1, 1, 0, 2, 0)).unwrap();
        net.layers_mut()[0].weight.set(0, 0, 1.0);
        let mut grads = GradientSet::zeros_like(&net);
        grads.layers[0].weight.set(0, 0, 1.0);
        let mut state = AdamState::new(&net, 1e-4).unwrap();
        adam_step(&mut net, &grads, &mut state).unwrap();
        let p = net.layers()[0].weight.get(0, 0);
        assert!((1.0 - p - 1e-4).abs() < 1e-11, "moved by {}", 1.0 - p);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut net = init_network(spec(3, 4, 2, 3, 8)).unwrap();
        let before = net.clone();
        let grads = GradientSet::zeros_like(&net);
        let mut state = AdamState::new(&net, 1e-3).unwrap();
        for _ in 0..5 {
            adam_step(&mut net, &grads, &mut state).unwrap();
        }
        assert_eq!(net, before);
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut net = init_network(spec(3, 4, 1, 3, 8)).unwrap();
        let other = init_network(spec(3, 5, 1, 3, 8)).unwrap();
        let grads = GradientSet::zeros_like(&other);
        let mut state = AdamState::new(&net, 1e-3).unwrap();
        assert!(adam_step(&mut net, &grads, &mut state).is_err());
    }

    #[test]
    fn transfer_copies_trunk_and_replaces_head() {
        let source = init_network(spec(4, 6, 2, 7, 3)).unwrap();
        let target = transfer_init(&source, 5, TransferMode::HeadOnlyReinit, 99).unwrap();
        assert_eq!(target.trunk(), source.trunk());
        assert_eq!(target.head().out_dim(), 5);
        assert_eq!(target.spec().n_classes, 5);
        assert!(!target.frozen_features());

        let same_classes = transfer_init(&source, 7, TransferMode::HeadOnlyReinit, 99).unwrap();
        assert_ne!(same_classes.head(), source.head());
        assert!(transfer_init(&source, 1, TransferMode::HeadOnlyReinit, 0).is_err());
    }

    #[test]
    fn predict_topk_ranks_and_checks_k() {
        let net = init_network(spec(2, 3, 1, 4, 3)).unwrap();
        let x = Matrix::from_rows(&[[0.1, -0.3], [2.0, 1.0]]).unwrap();
        let all = net.predict_topk(&x, 4).unwrap();
        for ranked in &all {
            let mut sorted = ranked.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2, 3]);
        }
        assert!(net.predict_topk(&x, 0).is_err());
        assert!(net.predict_topk(&x, 5).is_err());
    }
}
