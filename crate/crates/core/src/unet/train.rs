use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GeometryPlan, Transform, UNet};
use crate::colorspace::{assemble_input, prepare_input, rescale_max_dim, InputMode, NetInput, Plane};
use crate::dataio::{BinaryMask, RgbImage};
use crate::error::{Error, Result};
use crate::posteval::ProbMap;
use crate::tensor::{AdamState, Graph, ParamStore, Tensor, TensorError};

const ORDER_STREAM: u64 = 0;
const DROPOUT_STREAM: u64 = 1;
/// Pools up to this many views keep their assembled inputs in memory.
const CACHE_LIMIT: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: RgbImage,
    pub mask: BinaryMask,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub augment: bool,
    /// Checkpoint period in iterations; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { iterations: 10_000, lr: AdamState::DEFAULT_LR, augment: true, checkpoint_every: 0, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Training-mode loss of every iteration.
    pub loss_trace: Vec<f64>,
}

/// How images become network inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InputSpec {
    pub mode: InputMode,
    pub plan: GeometryPlan,
    pub fwhm: f64,
}

impl InputSpec {
    fn check(&self, net: &UNet) -> Result<()> {
        if net.config().in_channels != self.mode.channels() {
            return Err(Error::DimensionMismatch(format!(
                "network expects {} channels, mode {} provides {}",
                net.config().in_channels,
                self.mode.tag(),
                self.mode.channels()
            )));
        }
        if net.config().depth != self.plan.depth {
            return Err(Error::DimensionMismatch("geometry plan built for another depth".into()));
        }
        Ok(())
    }
}

fn to_tensor(input: NetInput) -> Tensor {
    Tensor::new(vec![input.channels, input.size, input.size], input.data).expect("assembled input is C×S×S")
}

/// Network input and per-output-pixel class indices for one view. Output
/// pixels that fall on padding are background.
pub fn training_pair(image: &RgbImage, mask: &BinaryMask, spec: &InputSpec) -> Result<(Tensor, Vec<usize>)> {
    if image.dims() != mask.dims() {
        return Err(Error::DimensionMismatch(format!("image {:?} vs mask {:?}", image.dims(), mask.dims())));
    }
    let scaled = rescale_max_dim(image, spec.plan.target);
    let (rw, rh) = scaled.dims();
    let truth = mask.resize_nearest(rw, rh);
    let input = assemble_input(&scaled, spec.mode, &spec.plan, spec.fwhm)?;
    let o = spec.plan.output_size;
    let mut target = vec![0usize; o * o];
    for v in 0..o {
        for u in 0..o {
            if let Some((x, y)) = input.geometry.output_to_image(u, v) {
                target[v * o + u] = truth.get(x, y) as usize;
            }
        }
    }
    Ok((to_tensor(input), target))
}

fn non_finite(iteration: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { iteration },
        other => other,
    }
}

/// Called with (iterations done, parameters, loss trace so far).
pub type CheckpointFn<'a> = dyn FnMut(usize, &ParamStore, &[f64]) -> Result<()> + 'a;

/// Batch-size-1 Adam training. `on_checkpoint` runs every
/// `checkpoint_every` iterations and after the last one.
///
/// On a non-finite loss the parameters are left at their last finite state
/// and [`Error::NonFiniteLoss`] is returned.
pub fn train(
    net: &UNet,
    params: &mut ParamStore,
    samples: &[TrainSample],
    spec: &InputSpec,
    tc: &TrainConfig,
    on_checkpoint: &mut CheckpointFn<'_>,
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::invalid("training needs at least one sample"));
    }
    if tc.iterations == 0 {
        return Err(Error::invalid("iterations must be at least 1"));
    }
    spec.check(net)?;
    let transforms: &[Transform] = if tc.augment { &Transform::ALL } else { &[Transform::Identity] };
    let pool = samples.len() * transforms.len();
    let mut cache: Vec<Option<(Tensor, Vec<usize>)>> = vec![None; if pool <= CACHE_LIMIT { pool } else { 0 }];

    let mut order_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    order_rng.set_stream(ORDER_STREAM);
    let mut drop_rng = ChaCha8Rng::seed_from_u64(tc.seed);
    drop_rng.set_stream(DROPOUT_STREAM);
    let mut adam = AdamState::new(params, tc.lr);
    let mut order: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(tc.iterations);

    for it in 0..tc.iterations {
        if order.is_empty() {
            order = (0..pool).collect();
            order.shuffle(&mut order_rng);
            order.reverse();
        }
        let view = order.pop().expect("refilled above");
        let (sample, t) = (&samples[view / transforms.len()], transforms[view % transforms.len()]);
        let build = || training_pair(&t.apply_image(&sample.image), &t.apply_mask(&sample.mask), spec);
        let (input, target) = match cache.get_mut(view) {
            Some(slot) => {
                if slot.is_none() {
                    *slot = Some(build()?);
                }
                slot.clone().expect("filled above")
            }
            None => build()?,
        };

        let mut g = Graph::new();
        let x = g.leaf(input)?;
        let step = (|| {
            let f = net.forward(&mut g, params, x, true, &mut drop_rng)?;
            let loss = g.softmax_ce_loss(f.logits, &target)?;
            Ok::<_, Error>((f, loss))
        })();
        let (f, loss) = step.map_err(non_finite(it + 1))?;
        let value = g.value(loss)?.data()[0];
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it + 1 });
        }
        let mut grads = g.backward(loss).map_err(|e| non_finite(it + 1)(e.into()))?;
        for (i, &node) in f.params.iter().enumerate() {
            let grad = grads.take(node).unwrap_or_else(|| Tensor::zeros(params.value(i).shape()));
            if !grad.is_finite() {
                return Err(Error::NonFiniteLoss { iteration: it + 1 });
            }
            params.set_grad(i, grad)?;
        }
        adam.step(params);
        trace.push(value);

        let done = it + 1;
        if (tc.checkpoint_every > 0 && done % tc.checkpoint_every == 0) || done == tc.iterations {
            on_checkpoint(done, params, &trace)?;
        }
    }
    Ok(TrainReport { loss_trace: trace })
}

/// Eval-mode loss of one image against its mask.
pub fn eval_loss(net: &UNet, params: &ParamStore, sample: &TrainSample, spec: &InputSpec) -> Result<f64> {
    spec.check(net)?;
    let (input, target) = training_pair(&sample.image, &sample.mask, spec)?;
    let mut g = Graph::new();
    let x = g.leaf(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = net.forward(&mut g, params, x, false, &mut rng)?;
    let loss = g.softmax_ce_loss(f.logits, &target)?;
    Ok(g.value(loss)?.data()[0])
}

/// Lesion-class probability for every pixel of the original image.
pub fn predict_prob(net: &UNet, params: &ParamStore, img: &RgbImage, spec: &InputSpec) -> Result<ProbMap> {
    spec.check(net)?;
    let input = prepare_input(img, spec.mode, &spec.plan, spec.fwhm)?;
    let geometry = input.geometry.clone();
    let mut g = Graph::new();
    let x = g.leaf(to_tensor(input))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let f = net.forward(&mut g, params, x, false, &mut rng)?;
    let logits = g.value(f.logits)?;
    let (classes, o) = (logits.shape()[0], logits.shape()[1]);
    let z = logits.data();
    let n = o * o;

    let (x0, y0, rw, rh) = geometry.image_rect_in_output();
    let crop = Plane::from_fn(rw, rh, |x, y| {
        let p = (y0 + y) * o + x0 + x;
        let max = (0..classes).map(|k| z[k * n + p]).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = (0..classes).map(|k| (z[k * n + p] - max).exp()).sum();
        (z[n + p] - max).exp() / sum
    });
    let (ow, oh) = geometry.original;
    let full = if (ow, oh) == (rw, rh) { crop } else { crop.resize_bilinear(ow, oh) };
    ProbMap::new(ow, oh, full.into_vec().into_iter().map(|v| v.clamp(0.0, 1.0)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{synth_lesion, SynthSpec};
    use crate::unet::{build_model, geometry_solve, UNetConfig};

    fn setup(mode: InputMode) -> (UNet, ParamStore, InputSpec) {
        let cfg =
            UNetConfig { depth: 1, base_features: 2, in_channels: mode.channels(), seed: 1, ..UNetConfig::default() };
        let (net, params) = build_model(cfg).unwrap();
        let spec = InputSpec { mode, plan: geometry_solve(24, 1).unwrap(), fwhm: 12.0 };
        (net, params, spec)
    }

    fn sample(seed: u64, w: usize, h: usize) -> TrainSample {
        let mut spec = SynthSpec::random(seed, w.min(h), 0, false);
        spec.width = w;
        spec.height = h;
        let (image, mask) = synth_lesion(&spec).unwrap();
        TrainSample { image, mask }
    }

    #[test]
    fn target_covers_image_only() {
        let (_, _, spec) = setup(InputMode::Raw1A);
        let s = sample(2, 24, 24);
        let (input, target) = training_pair(&s.image, &s.mask, &spec).unwrap();
        assert_eq!(input.shape(), &[3, spec.plan.input_size, spec.plan.input_size]);
        let o = spec.plan.output_size;
        let c = spec.plan.output_crop;
        let ones = target.iter().filter(|&&t| t == 1).count();
        assert_eq!(ones, s.mask.count());
        for y in 0..24 {
            for x in 0..24 {
                assert_eq!(target[(c + y) * o + c + x] == 1, s.mask.get(x, y));
            }
        }
    }

    #[test]
    fn probabilities_have_original_dims() {
        for mode in [InputMode::Raw1A, InputMode::Enhanced1B] {
            let (net, params, spec) = setup(mode);
            let s = sample(5, 40, 30);
            let p = predict_prob(&net, &params, &s.image, &spec).unwrap();
            assert_eq!((p.width(), p.height()), (40, 30));
            assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
            let again = predict_prob(&net, &params, &s.image, &spec).unwrap();
            assert_eq!(p, again);
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let (net, params, mut spec) = setup(InputMode::Raw1A);
        spec.mode = InputMode::Enhanced1B;
        let s = sample(5, 24, 24);
        assert!(predict_prob(&net, &params, &s.image, &spec).is_err());
    }

    #[test]
    fn training_is_deterministic_and_checkpoints() {
        let (net, init, spec) = setup(InputMode::Enhanced1B);
        let samples = vec![sample(1, 24, 24), sample(2, 24, 24)];
        let tc = TrainConfig { iterations: 6, lr: 0.001, checkpoint_every: 4, seed: 9, ..TrainConfig::default() };
        let run = || {
            let mut p = init.clone();
            let mut seen = Vec::new();
            let report = train(&net, &mut p, &samples, &spec, &tc, &mut |it, _, trace| {
                seen.push((it, trace.len()));
                Ok(())
            })
            .unwrap();
            (p, report, seen)
        };
        let (a, ra, seen) = run();
        let (b, rb, _) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.loss_trace.len(), 6);
        assert_eq!(seen, vec![(4, 4), (6, 6)]);
        assert_ne!(a.value(0), init.value(0));
    }

    #[test]
    fn first_loss_near_ln2() {
        // 24-px content at depth 1 gives a 24-px output with no crop, so a half mask is balanced.
        let (net, mut params, spec) = setup(InputMode::Raw1A);
        assert_eq!(spec.plan.output_size, 24);
        let mask = BinaryMask::from_fn(24, 24, |x, _| x < 12);
        let image = RgbImage::from_clamped(
            24,
            24,
            (0..24 * 24).flat_map(|i| if i % 24 < 12 { [0.3; 3] } else { [0.8; 3] }).collect(),
        );
        let tc = TrainConfig { iterations: 1, augment: false, ..TrainConfig::default() };
        let r = train(&net, &mut params, &[TrainSample { image, mask }], &spec, &tc, &mut |_, _, _| Ok(())).unwrap();
        assert!((r.loss_trace[0] - std::f64::consts::LN_2).abs() < 0.2, "{}", r.loss_trace[0]);
    }

    #[test]
    fn rejects_empty_input() {
        let (net, mut params, spec) = setup(InputMode::Raw1A);
        let tc = TrainConfig::default();
        assert!(train(&net, &mut params, &[], &spec, &tc, &mut |_, _, _| Ok(())).is_err());
    }
}
