use rand::Rng;

use super::kernels;
use super::{shape_err, Tensor, TensorError};
use crate::par::Exec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: NodeId },
    UpConv2 { input: NodeId, weight: NodeId, bias: NodeId },
    MaxPool2 { input: NodeId, argmax: Vec<usize> },
    Relu { input: NodeId },
    Dropout { input: NodeId, scale: Vec<f64> },
    CropConcat { skip: NodeId, up: NodeId, offset: (usize, usize) },
    SoftmaxCe { logits: NodeId, probs: Vec<f64>, target: Vec<usize> },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sum { input: NodeId },
}

impl Op {
    fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { input, weight, bias } | Op::UpConv2 { input, weight, bias } => vec![input, weight, bias],
            Op::MaxPool2 { input, .. } | Op::Relu { input } | Op::Dropout { input, .. } | Op::Sum { input } => {
                vec![input]
            }
            Op::CropConcat { skip, up, .. } => vec![skip, up],
            Op::SoftmaxCe { logits, .. } => vec![logits],
            Op::Add { a, b } | Op::Mul { a, b } => vec![a, b],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Append-only tape. Nodes can only reference earlier nodes, so insertion
/// order is a topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    exec: Exec,
}

/// Gradient of the loss with respect to every node that influences it.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn with_exec(exec: Exec) -> Graph {
        Graph { nodes: Vec::new(), exec }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, id: NodeId) -> Result<&Node, TensorError> {
        self.nodes.get(id.0).ok_or(TensorError::MissingNode(id.0))
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor, TensorError> {
        Ok(&self.node(id)?.value)
    }

    fn push(&mut self, value: Tensor, op: Op, name: &'static str) -> Result<NodeId, TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, t: Tensor) -> Result<NodeId, TensorError> {
        self.push(t, Op::Leaf, "leaf")
    }

    fn chw(&self, id: NodeId, op: &'static str) -> Result<(usize, usize, usize), TensorError> {
        let t = self.value(id)?;
        t.chw().ok_or_else(|| shape_err(op, format!("expected C×H×W, got {:?}", t.shape())))
    }

    pub fn conv2d_valid(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        const OP: &str = "conv2d_valid";
        let (ci, h, w) = self.chw(input, OP)?;
        let ws = self.value(weight)?.shape().to_vec();
        let [co, wci, k, k2] = ws[..] else {
            return Err(shape_err(OP, format!("weight must be rank 4, got {ws:?}")));
        };
        if wci != ci || k != k2 || k == 0 {
            return Err(shape_err(OP, format!("weight {ws:?} incompatible with {ci} input channels")));
        }
        if self.value(bias)?.shape() != [co] {
            return Err(shape_err(OP, format!("bias must have shape [{co}]")));
        }
        if h < k || w < k {
            return Err(shape_err(OP, format!("{h}×{w} input smaller than {k}×{k} kernel")));
        }
        let out = kernels::conv2d_forward(
            self.exec,
            self.value(input)?.data(),
            (ci, h, w),
            self.value(weight)?.data(),
            co,
            k,
            self.value(bias)?.data(),
        );
        let t = Tensor::new(vec![co, h + 1 - k, w + 1 - k], out)?;
        self.push(t, Op::Conv2d { input, weight, bias }, OP)
    }

    pub fn upconv2(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        const OP: &str = "upconv2";
        let (ci, h, w) = self.chw(input, OP)?;
        let ws = self.value(weight)?.shape().to_vec();
        let [wci, co, 2, 2] = ws[..] else {
            return Err(shape_err(OP, format!("weight must be Cin×Cout×2×2, got {ws:?}")));
        };
        if wci != ci {
            return Err(shape_err(OP, format!("weight {ws:?} incompatible with {ci} input channels")));
        }
        if self.value(bias)?.shape() != [co] {
            return Err(shape_err(OP, format!("bias must have shape [{co}]")));
        }
        let out = kernels::upconv2_forward(
            self.exec,
            self.value(input)?.data(),
            (ci, h, w),
            self.value(weight)?.data(),
            co,
            self.value(bias)?.data(),
        );
        let t = Tensor::new(vec![co, 2 * h, 2 * w], out)?;
        self.push(t, Op::UpConv2 { input, weight, bias }, OP)
    }

    pub fn maxpool2(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        const OP: &str = "maxpool2";
        let (c, h, w) = self.chw(input, OP)?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(shape_err(OP, format!("spatial size {h}×{w} must be even")));
        }
        let (out, argmax) = kernels::maxpool2_forward(self.exec, self.value(input)?.data(), (c, h, w));
        let t = Tensor::new(vec![c, h / 2, w / 2], out)?;
        self.push(t, Op::MaxPool2 { input, argmax }, OP)
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let x = self.value(input)?;
        let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v.max(0.0)).collect())?;
        self.push(t, Op::Relu { input }, "relu")
    }

    /// Inverted dropout. Outside training this is the identity and adds no node.
    pub fn dropout(&mut self, input: NodeId, p: f64, train: bool, rng: &mut impl Rng) -> Result<NodeId, TensorError> {
        self.node(input)?;
        if !train || p <= 0.0 {
            return Ok(input);
        }
        if p >= 1.0 {
            return Err(shape_err("dropout", format!("rate {p} must be below 1")));
        }
        let keep = 1.0 / (1.0 - p);
        let n = self.value(input)?.len();
        let scale: Vec<f64> = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        let x = self.value(input)?;
        let data = x.data().iter().zip(&scale).map(|(v, s)| v * s).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        self.push(t, Op::Dropout { input, scale }, "dropout")
    }

    /// Crops `skip` centrally to `up`'s spatial size and stacks `[skip, up]`
    /// along channels.
    pub fn center_crop_concat(&mut self, skip: NodeId, up: NodeId) -> Result<NodeId, TensorError> {
        const OP: &str = "center_crop_concat";
        let (cs, hs, ws) = self.chw(skip, OP)?;
        let (cu, hu, wu) = self.chw(up, OP)?;
        if hs < hu || ws < wu {
            return Err(shape_err(OP, format!("skip {hs}×{ws} smaller than {hu}×{wu}")));
        }
        if (hs - hu) % 2 != 0 || (ws - wu) % 2 != 0 {
            return Err(shape_err(OP, format!("odd crop margin from {hs}×{ws} to {hu}×{wu}")));
        }
        let (oy, ox) = ((hs - hu) / 2, (ws - wu) / 2);
        let mut data = Vec::with_capacity((cs + cu) * hu * wu);
        let s = self.value(skip)?.data();
        for c in 0..cs {
            for y in 0..hu {
                let start = (c * hs + y + oy) * ws + ox;
                data.extend_from_slice(&s[start..start + wu]);
            }
        }
        data.extend_from_slice(self.value(up)?.data());
        let t = Tensor::new(vec![cs + cu, hu, wu], data)?;
        self.push(t, Op::CropConcat { skip, up, offset: (oy, ox) }, OP)
    }

    /// Mean per-pixel cross-entropy of a channel softmax against class indices.
    pub fn softmax_ce_loss(&mut self, logits: NodeId, target: &[usize]) -> Result<NodeId, TensorError> {
        const OP: &str = "softmax_ce_loss";
        let (c, h, w) = self.chw(logits, OP)?;
        let n = h * w;
        if target.len() != n {
            return Err(shape_err(OP, format!("target has {} pixels, logits {h}×{w}", target.len())));
        }
        if let Some(&bad) = target.iter().find(|&&t| t >= c) {
            return Err(shape_err(OP, format!("class {bad} out of range for {c} channels")));
        }
        let z = self.value(logits)?.data();
        let mut probs = vec![0.0; c * n];
        let mut loss = 0.0;
        for p in 0..n {
            let max = (0..c).map(|k| z[k * n + p]).fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = (0..c).map(|k| (z[k * n + p] - max).exp()).sum();
            for k in 0..c {
                probs[k * n + p] = (z[k * n + p] - max).exp() / sum;
            }
            loss -= z[target[p] * n + p] - max - sum.ln();
        }
        let t = Tensor::scalar(loss / n as f64);
        self.push(t, Op::SoftmaxCe { logits, probs, target: target.to_vec() }, OP)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let t = self.zip(a, b, "add", |x, y| x + y)?;
        self.push(t, Op::Add { a, b }, "add")
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let t = self.zip(a, b, "mul", |x, y| x * y)?;
        self.push(t, Op::Mul { a, b }, "mul")
    }

    fn zip(&self, a: NodeId, b: NodeId, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor, TensorError> {
        let (x, y) = (self.value(a)?, self.value(b)?);
        if x.shape() != y.shape() {
            return Err(shape_err(op, format!("{:?} vs {:?}", x.shape(), y.shape())));
        }
        Tensor::new(x.shape().to_vec(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn sum(&mut self, input: NodeId) -> Result<NodeId, TensorError> {
        let t = Tensor::scalar(self.value(input)?.data().iter().sum());
        self.push(t, Op::Sum { input }, "sum")
    }

    /// Reverse accumulation from a scalar `loss`; fan-out gradients add.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients, TensorError> {
        let root = self.node(loss)?;
        if root.value.len() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            for inp in node.op.inputs() {
                if inp.0 >= idx {
                    return Err(TensorError::Cycle { node: idx, input: inp.0 });
                }
            }
            for (target, contrib) in self.local_grads(node, &g)? {
                match &mut grads[target.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(NodeId, Tensor)>, TensorError> {
        let exec = self.exec;
        Ok(match &node.op {
            Op::Leaf => vec![],
            &Op::Conv2d { input, weight, bias } => {
                let x = self.value(input)?;
                let wt = self.value(weight)?;
                let (ci, h, w) = x.chw().expect("checked in forward");
                let (co, k) = (wt.shape()[0], wt.shape()[2]);
                let (dx, dw, db) = kernels::conv2d_backward(exec, x.data(), (ci, h, w), wt.data(), co, k, g.data());
                vec![
                    (input, Tensor::new(x.shape().to_vec(), dx)?),
                    (weight, Tensor::new(wt.shape().to_vec(), dw)?),
                    (bias, Tensor::new(vec![co], db)?),
                ]
            }
            &Op::UpConv2 { input, weight, bias } => {
                let x = self.value(input)?;
                let wt = self.value(weight)?;
                let (ci, h, w) = x.chw().expect("checked in forward");
                let co = wt.shape()[1];
                let (dx, dw, db) = kernels::upconv2_backward(exec, x.data(), (ci, h, w), wt.data(), co, g.data());
                vec![
                    (input, Tensor::new(x.shape().to_vec(), dx)?),
                    (weight, Tensor::new(wt.shape().to_vec(), dw)?),
                    (bias, Tensor::new(vec![co], db)?),
                ]
            }
            Op::MaxPool2 { input, argmax } => {
                let x = self.value(*input)?;
                let mut dx = Tensor::zeros(x.shape());
                for (&i, &gv) in argmax.iter().zip(g.data()) {
                    dx.data_mut()[i] += gv;
                }
                vec![(*input, dx)]
            }
            Op::Relu { input } => {
                let x = self.value(*input)?;
                let data = x.data().iter().zip(g.data()).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                vec![(*input, Tensor::new(x.shape().to_vec(), data)?)]
            }
            Op::Dropout { input, scale } => {
                let data = g.data().iter().zip(scale).map(|(gv, s)| gv * s).collect();
                vec![(*input, Tensor::new(g.shape().to_vec(), data)?)]
            }
            &Op::CropConcat { skip, up, offset: (oy, ox) } => {
                let s = self.value(skip)?;
                let (cs, hs, ws) = s.chw().expect("checked in forward");
                let (_, hu, wu) = g.chw().expect("concat output is rank 3");
                let mut ds = Tensor::zeros(s.shape());
                for c in 0..cs {
                    for y in 0..hu {
                        let dst = (c * hs + y + oy) * ws + ox;
                        let src = (c * hu + y) * wu;
                        ds.data_mut()[dst..dst + wu].copy_from_slice(&g.data()[src..src + wu]);
                    }
                }
                let du = Tensor::new(self.value(up)?.shape().to_vec(), g.data()[cs * hu * wu..].to_vec())?;
                vec![(skip, ds), (up, du)]
            }
            Op::SoftmaxCe { logits, probs, target } => {
                let n = target.len();
                let scale = g.data()[0] / n as f64;
                let mut d = probs.clone();
                for (p, &t) in target.iter().enumerate() {
                    d[t * n + p] -= 1.0;
                }
                for v in &mut d {
                    *v *= scale;
                }
                vec![(*logits, Tensor::new(self.value(*logits)?.shape().to_vec(), d)?)]
            }
            &Op::Add { a, b } => vec![(a, g.clone()), (b, g.clone())],
            &Op::Mul { a, b } => {
                let (x, y) = (self.value(a)?, self.value(b)?);
                let da = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                let db = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                vec![(a, Tensor::new(x.shape().to_vec(), da)?), (b, Tensor::new(y.shape().to_vec(), db)?)]
            }
            Op::Sum { input } => {
                let x = self.value(*input)?;
                vec![(*input, Tensor::full(x.shape(), g.data()[0]))]
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_sum_of_window() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::full(&[1, 3, 3], 1.0)).unwrap();
        let w = g.leaf(Tensor::full(&[1, 1, 3, 3], 1.0)).unwrap();
        let b = g.leaf(Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d_valid(x, w, b).unwrap();
        assert_eq!(g.value(y).unwrap(), &t(&[1, 1, 1], &[9.0]));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(w).unwrap(), &Tensor::full(&[1, 1, 3, 3], 1.0));
        assert_eq!(grads.get(b).unwrap(), &t(&[1], &[1.0]));

        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[1, 4, 4])).unwrap();
        let w = g.leaf(Tensor::zeros(&[1, 1, 3, 3])).unwrap();
        let b = g.leaf(Tensor::zeros(&[1])).unwrap();
        let y = g.conv2d_valid(x, w, b).unwrap();
        assert_eq!(g.value(y).unwrap().shape(), &[1, 2, 2]);
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::zeros(&[2, 4, 4])).unwrap();
        let w = g.leaf(Tensor::zeros(&[1, 3, 3, 3])).unwrap();
        let b = g.leaf(Tensor::zeros(&[1])).unwrap();
        assert!(g.conv2d_valid(x, w, b).is_err());
        let small = g.leaf(Tensor::zeros(&[3, 2, 2])).unwrap();
        assert!(g.conv2d_valid(small, w, b).is_err());
    }

    #[test]
    fn pooling_routes_to_argmax() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let p = g.maxpool2(x).unwrap();
        assert_eq!(g.value(p).unwrap().data(), &[4.0]);
        let s = g.sum(p).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.0, 1.0]);

        let c = g.leaf(Tensor::full(&[2, 4, 6], 0.7)).unwrap();
        let p = g.maxpool2(c).unwrap();
        assert_eq!(g.value(p).unwrap(), &Tensor::full(&[2, 2, 3], 0.7));
        let odd = g.leaf(Tensor::zeros(&[1, 3, 4])).unwrap();
        assert!(g.maxpool2(odd).is_err());
    }

    #[test]
    fn upconv_single_block() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[1, 1, 1], &[2.0])).unwrap();
        let w = g.leaf(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        let b = g.leaf(Tensor::zeros(&[1])).unwrap();
        let y = g.upconv2(x, w, b).unwrap();
        assert_eq!(g.value(y).unwrap(), &t(&[1, 2, 2], &[2.0, 4.0, 6.0, 8.0]));
        let x3 = g.leaf(Tensor::zeros(&[2, 3, 5])).unwrap();
        let w3 = g.leaf(Tensor::zeros(&[2, 4, 2, 2])).unwrap();
        let b3 = g.leaf(Tensor::zeros(&[4])).unwrap();
        let y3 = g.upconv2(x3, w3, b3).unwrap();
        assert_eq!(g.value(y3).unwrap().shape(), &[4, 6, 10]);
        assert!(g.upconv2(x3, w, b).is_err());
    }

    #[test]
    fn relu_dropout_concat() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[-1.0, 2.0])).unwrap();
        let r = g.relu(x).unwrap();
        assert_eq!(g.value(r).unwrap().data(), &[0.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(g.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        let big = g.leaf(Tensor::full(&[10_000], 1.0)).unwrap();
        let d = g.dropout(big, 0.5, true, &mut rng).unwrap();
        let vals = g.value(d).unwrap().data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v == 2.0).count();
        assert!((4500..5500).contains(&kept));

        let skip = g.leaf(Tensor::zeros(&[64, 56, 56])).unwrap();
        let up = g.leaf(Tensor::zeros(&[64, 52, 52])).unwrap();
        let cat = g.center_crop_concat(skip, up).unwrap();
        assert_eq!(g.value(cat).unwrap().shape(), &[128, 52, 52]);
        let odd = g.leaf(Tensor::zeros(&[64, 53, 53])).unwrap();
        assert!(g.center_crop_concat(odd, up).is_err());
    }

    #[test]
    fn concat_crops_centrally() {
        let mut g = Graph::new();
        let skip = g.leaf(Tensor::new(vec![1, 4, 4], (0..16).map(|v| v as f64).collect()).unwrap()).unwrap();
        let up = g.leaf(t(&[1, 2, 2], &[-1.0, -2.0, -3.0, -4.0])).unwrap();
        let cat = g.center_crop_concat(skip, up).unwrap();
        assert_eq!(g.value(cat).unwrap().data(), &[5.0, 6.0, 9.0, 10.0, -1.0, -2.0, -3.0, -4.0]);
    }

    #[test]
    fn loss_closed_forms() {
        let mut g = Graph::new();
        let z = g.leaf(Tensor::full(&[2, 3, 3], 0.3)).unwrap();
        let l = g.softmax_ce_loss(z, &[1; 9]).unwrap();
        assert!((g.value(l).unwrap().data()[0] - std::f64::consts::LN_2).abs() < 1e-15);

        let mut data = vec![20.0; 9];
        data.extend(vec![-20.0; 9]);
        let z = g.leaf(Tensor::new(vec![2, 3, 3], data).unwrap()).unwrap();
        let l = g.softmax_ce_loss(z, &[0; 9]).unwrap();
        let v = g.value(l).unwrap().data()[0];
        assert!((0.0..1e-8).contains(&v));
    }

    #[test]
    fn fan_out_gradients_add() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[1.0, 2.0, 3.0])).unwrap();
        let s = g.sum(x).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 3]);

        let y = g.add(x, x).unwrap();
        let sq = g.mul(x, x).unwrap();
        let both = g.add(y, sq).unwrap();
        let s = g.sum(both).unwrap();
        let grads = g.backward(s).unwrap();
        // d/dx (2x + x²) = 2 + 2x
        assert_eq!(grads.get(x).unwrap().data(), &[4.0, 6.0, 8.0]);
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0])).unwrap();
        assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
        assert!(matches!(g.backward(NodeId(99)), Err(TensorError::MissingNode(99))));
        let nan = g.leaf(t(&[1], &[f64::NAN]));
        assert!(matches!(nan, Err(TensorError::NonFinite { .. })));
    }
}
