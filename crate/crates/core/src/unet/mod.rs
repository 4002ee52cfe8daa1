//! Valid-convolution U-Net assembled from [`crate::tensor`] ops.

mod augment;
mod geometry;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};

pub use augment::{augment4, Transform};
pub use geometry::{geometry_solve, recurrence_output, trace_geometry, GeometryPlan, MAX_INPUT};
pub use train::{
    eval_loss, predict_prob, train, training_pair, CheckpointFn, InputSpec, TrainConfig, TrainReport, TrainSample,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UNetConfig {
    pub depth: usize,
    pub base_features: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub classes: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { depth: 4, base_features: 16, in_channels: 5, kernel: 3, classes: 2, dropout_p: 0.5, seed: 0 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_features == 0 || self.in_channels == 0 {
            return Err(Error::invalid("depth, base_features and in_channels must be at least 1"));
        }
        if self.kernel != 3 {
            return Err(Error::invalid("only 3x3 kernels are supported"));
        }
        if self.classes < 2 {
            return Err(Error::invalid("need at least two classes"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!("dropout rate {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// Feature channels at contraction level `level`; `level == depth` is the bottleneck.
    pub fn features(&self, level: usize) -> usize {
        self.base_features << level
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: NodeId,
    /// Leaf node of each parameter, in [`ParamStore`] order.
    pub params: Vec<NodeId>,
    pub down_sizes: Vec<usize>,
    pub bottleneck: usize,
    pub up_sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UNet {
    cfg: UNetConfig,
}

/// Builds the network and its freshly initialized parameters.
pub fn build_model(cfg: UNetConfig) -> Result<(UNet, ParamStore)> {
    let net = UNet::new(cfg)?;
    let params = net.init_params();
    Ok((net, params))
}

impl UNet {
    pub fn new(cfg: UNetConfig) -> Result<UNet> {
        cfg.validate()?;
        Ok(UNet { cfg })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    /// Parameter names and shapes in creation order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = &self.cfg;
        let k = c.kernel;
        let mut out = Vec::new();
        let mut conv = |prefix: String, co: usize, ci: usize, k: usize| {
            out.push((format!("{prefix}.weight"), vec![co, ci, k, k]));
            out.push((format!("{prefix}.bias"), vec![co]));
        };
        let mut cin = c.in_channels;
        for l in 0..c.depth {
            let f = c.features(l);
            conv(format!("down{l}.conv1"), f, cin, k);
            conv(format!("down{l}.conv2"), f, f, k);
            cin = f;
        }
        let fb = c.features(c.depth);
        conv("bottleneck.conv1".into(), fb, cin, k);
        conv("bottleneck.conv2".into(), fb, fb, k);
        for l in (0..c.depth).rev() {
            let f = c.features(l);
            conv(format!("up{l}.conv1"), f, 2 * f, k);
            conv(format!("up{l}.conv2"), f, f, k);
        }
        conv("head".into(), c.classes, c.features(0), 1);

        // Up-convolutions use Cin×Cout×2×2 weights; insert them before each expansion conv pair.
        let mut layout = Vec::with_capacity(out.len() + 2 * c.depth);
        for (name, shape) in out {
            if let Some(rest) = name.strip_prefix("up") {
                if rest.ends_with(".conv1.weight") {
                    let l: usize = rest.split('.').next().unwrap().parse().unwrap();
                    let f = c.features(l);
                    layout.push((format!("up{l}.upconv.weight"), vec![2 * f, f, 2, 2]));
                    layout.push((format!("up{l}.upconv.bias"), vec![f]));
                }
            }
            layout.push((name, shape));
        }
        layout
    }

    /// He-normal weights truncated at two standard deviations; zero biases.
    pub fn init_params(&self) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        let mut store = ParamStore::new();
        for (name, shape) in self.layout() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with(".bias") {
                vec![0.0; n]
            } else {
                let fan_in = if name.contains("upconv") { shape[0] * 4 } else { shape[1] * shape[2] * shape[3] };
                let sigma = (2.0 / fan_in as f64).sqrt();
                let normal = Normal::new(0.0, sigma).expect("positive sigma");
                (0..n)
                    .map(|_| loop {
                        let v: f64 = normal.sample(&mut rng);
                        if v.abs() <= 2.0 * sigma {
                            break v;
                        }
                    })
                    .collect()
            };
            store.insert(name, Tensor::new(shape, data).expect("layout shapes are consistent"));
        }
        store
    }

    /// Runs the network on a C×S×S input node. Dropout is active only when `train` is set.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ParamStore,
        input: NodeId,
        train: bool,
        rng: &mut impl Rng,
    ) -> Result<Forward> {
        let layout = self.layout();
        if params.len() != layout.len()
            || layout
                .iter()
                .enumerate()
                .any(|(i, (n, s))| params.names()[i] != *n || params.value(i).shape() != s.as_slice())
        {
            return Err(Error::DimensionMismatch("parameters do not match the network layout".into()));
        }
        let ids = (0..params.len()).map(|i| g.leaf(params.value(i).clone())).collect::<Result<Vec<_>, _>>()?;
        let p = |name: &str| ids[params.position(name).expect("name from layout")];
        let c = self.cfg;

        let conv_relu = |g: &mut Graph, x: NodeId, prefix: &str| -> Result<NodeId> {
            let y = g.conv2d_valid(x, p(&format!("{prefix}.weight")), p(&format!("{prefix}.bias")))?;
            Ok(g.relu(y)?)
        };
        let size = |g: &Graph, x: NodeId| -> Result<usize> { Ok(g.value(x)?.shape()[1]) };

        let mut x = input;
        let mut skips = Vec::with_capacity(c.depth);
        let mut down_sizes = Vec::with_capacity(c.depth);
        for l in 0..c.depth {
            x = conv_relu(g, x, &format!("down{l}.conv1"))?;
            x = conv_relu(g, x, &format!("down{l}.conv2"))?;
            if l + 1 == c.depth {
                x = g.dropout(x, c.dropout_p, train, rng)?;
            }
            down_sizes.push(size(g, x)?);
            skips.push(x);
            x = g.maxpool2(x)?;
        }
        x = conv_relu(g, x, "bottleneck.conv1")?;
        x = conv_relu(g, x, "bottleneck.conv2")?;
        x = g.dropout(x, c.dropout_p, train, rng)?;
        let bottleneck = size(g, x)?;

        let mut up_sizes = Vec::with_capacity(c.depth);
        for l in (0..c.depth).rev() {
            let up = g.upconv2(x, p(&format!("up{l}.upconv.weight")), p(&format!("up{l}.upconv.bias")))?;
            x = g.center_crop_concat(skips[l], up)?;
            x = conv_relu(g, x, &format!("up{l}.conv1"))?;
            x = conv_relu(g, x, &format!("up{l}.conv2"))?;
            up_sizes.push(size(g, x)?);
        }
        let logits = g.conv2d_valid(x, p("head.weight"), p("head.bias"))?;
        Ok(Forward { logits, params: ids, down_sizes, bottleneck, up_sizes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;

    fn small(depth: usize, base: usize, inc: usize) -> UNetConfig {
        UNetConfig { depth, base_features: base, in_channels: inc, seed: 3, ..UNetConfig::default() }
    }

    #[test]
    fn channel_doubling() {
        let c = UNetConfig::default();
        let down: Vec<usize> = (0..4).map(|l| c.features(l)).collect();
        assert_eq!(down, vec![16, 32, 64, 128]);
        assert_eq!(c.features(4), 256);
    }

    #[test]
    fn parameter_count_by_enumeration() {
        // conv layer: co·(ci·k² + 1); up-convolution: co·(ci·4 + 1)
        let conv = |co: usize, ci: usize, k: usize| co * (ci * k * k + 1);
        let expected = conv(1, 3, 3) + conv(1, 1, 3) // contraction, 1 feature
            + conv(2, 1, 3) + conv(2, 2, 3)          // bottleneck, 2 features
            + (2 * 4 + 1)                            // up-convolution 2 → 1
            + conv(1, 2, 3) + conv(1, 1, 3)          // expansion after concat
            + conv(2, 1, 1); // 1×1 head
        let (_, params) = build_model(small(1, 1, 3)).unwrap();
        assert_eq!(params.scalar_count(), expected);
        assert_eq!(expected, 138);
    }

    #[test]
    fn init_is_seeded_and_truncated() {
        let (net, a) = build_model(small(2, 4, 5)).unwrap();
        let b = net.init_params();
        assert_eq!(a, b);
        let (_, c) = build_model(UNetConfig { seed: 4, ..*net.config() }).unwrap();
        assert_ne!(a, c);
        for i in 0..a.len() {
            let name = &a.names()[i];
            let t = a.value(i);
            if name.ends_with(".bias") {
                assert!(t.data().iter().all(|&v| v == 0.0));
            } else {
                let s = t.shape();
                let fan_in = if name.contains("upconv") { s[0] * 4 } else { s[1] * s[2] * s[3] };
                let bound = 2.0 * (2.0 / fan_in as f64).sqrt();
                assert!(t.data().iter().all(|v| v.abs() <= bound), "{name}");
            }
        }
    }

    #[test]
    fn forward_shapes_match_geometry() {
        for depth in 1..=3 {
            let plan = geometry_solve(20, depth).unwrap();
            let (net, params) = build_model(small(depth, 2, 3)).unwrap();
            let s = plan.input_size;
            let mut g = Graph::new();
            let input = g.leaf(Tensor::full(&[3, s, s], 0.5)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let f = net.forward(&mut g, &params, input, true, &mut rng).unwrap();
            assert_eq!(f.down_sizes, plan.down_sizes);
            assert_eq!(f.bottleneck, plan.bottleneck);
            assert_eq!(f.up_sizes, plan.up_sizes);
            assert_eq!(g.value(f.logits).unwrap().shape(), &[2, plan.output_size, plan.output_size]);
        }
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let (net, params) = build_model(small(1, 2, 3)).unwrap();
        let input = Tensor::new(vec![3, 22, 22], (0..3 * 22 * 22).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let run = |seed| {
            let mut g = Graph::new();
            let x = g.leaf(input.clone()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = net.forward(&mut g, &params, x, false, &mut rng).unwrap();
            g.value(f.logits).unwrap().clone()
        };
        assert_eq!(run(1), run(2));
    }

    #[test]
    fn mismatched_params_rejected() {
        let (net, _) = build_model(small(1, 2, 3)).unwrap();
        let (_, other) = build_model(small(1, 3, 3)).unwrap();
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[3, 22, 22])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(net.forward(&mut g, &other, x, false, &mut rng).is_err());
    }

    #[test]
    fn end_to_end_gradient() {
        // Depth 1, base 2, 22×22 input → 6×6 output.
        let (net, params) = build_model(small(1, 2, 3)).unwrap();
        let target: Vec<usize> = (0..36).map(|i| (i / 3) % 2).collect();
        let x =
            Tensor::new(vec![3, 22, 22], (0..3 * 22 * 22).map(|i| ((i * 31 % 17) as f64) / 17.0).collect()).unwrap();
        let check = grad_check(
            |g, leaf| {
                let mut rng = ChaCha8Rng::seed_from_u64(0);
                let f = net.forward(g, &params, leaf, false, &mut rng).map_err(|e| match e {
                    Error::Tensor(t) => t,
                    other => panic!("{other}"),
                })?;
                g.softmax_ce_loss(f.logits, &target)
            },
            &x,
            1e-3,
            0,
        )
        .unwrap();
        assert!(check.passed, "max relative error {}", check.max_rel_error);
        assert_eq!(check.checked, 64);
    }
}
