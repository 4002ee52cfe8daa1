//! End-to-end runs: segmentation methods, checkpoints and fold evaluation.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::colorspace::{rescale_max_dim, InputMode};
use crate::config::{Config, ThresholdMode};
use crate::dataio::{load_image, load_mask, make_folds, BinaryMask, DatasetCatalog, FoldPlan, RgbImage};
use crate::error::{Error, Result};
use crate::fuzzyclust::{cluster_segment, ClusterConfig};
use crate::par::Exec;
use crate::posteval::{
    binarize_and_clean, emit_report, optimize_threshold, overlap_counts, Algorithm, EvalRow, ProbMap, ReportTable,
};
use crate::tensor::ParamStore;
use crate::unet::{
    build_model, geometry_solve, predict_prob, train, InputSpec, TrainReport, TrainSample, UNet, UNetConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    Cluster,
    UnetA,
    UnetB,
}

impl Method {
    pub fn parse(s: &str) -> Option<Method> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cluster" | "2" => Some(Method::Cluster),
            "unet-a" | "1a" => Some(Method::UnetA),
            "unet-b" | "1b" => Some(Method::UnetB),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Cluster => "cluster",
            Method::UnetA => "unet-a",
            Method::UnetB => "unet-b",
        }
    }

    pub fn algorithm(self) -> Algorithm {
        match self {
            Method::Cluster => Algorithm::Cluster2,
            Method::UnetA => Algorithm::Unet1A,
            Method::UnetB => Algorithm::Unet1B,
        }
    }

    pub fn input_mode(self) -> Option<InputMode> {
        match self {
            Method::Cluster => None,
            Method::UnetA => Some(InputMode::Raw1A),
            Method::UnetB => Some(InputMode::Enhanced1B),
        }
    }
}

/// Clustering settings with the run seed applied.
pub fn cluster_config(cfg: &Config) -> ClusterConfig {
    let mut c = cfg.cluster;
    c.fcm.seed = cfg.seed;
    c
}

/// A trained network with everything needed to turn images into masks.
#[derive(Clone, Debug)]
pub struct UnetModel {
    pub net: UNet,
    pub params: ParamStore,
    pub spec: InputSpec,
    pub threshold: f64,
}

impl UnetModel {
    pub fn new(cfg: &Config, mode: InputMode) -> Result<UnetModel> {
        let ucfg = UNetConfig { in_channels: mode.channels(), seed: cfg.seed, ..cfg.unet };
        let (net, params) = build_model(ucfg)?;
        let plan = geometry_solve(cfg.content, ucfg.depth)?;
        Ok(UnetModel { net, params, spec: InputSpec { mode, plan, fwhm: cfg.fwhm }, threshold: 0.5 })
    }

    pub fn mode(&self) -> InputMode {
        self.spec.mode
    }

    pub fn algorithm(&self) -> Algorithm {
        match self.spec.mode {
            InputMode::Raw1A => Algorithm::Unet1A,
            InputMode::Enhanced1B => Algorithm::Unet1B,
        }
    }

    pub fn probabilities(&self, img: &RgbImage) -> Result<ProbMap> {
        predict_prob(&self.net, &self.params, img, &self.spec)
    }

    pub fn segment(&self, img: &RgbImage) -> Result<BinaryMask> {
        Ok(binarize_and_clean(&self.probabilities(img)?, self.threshold, self.algorithm()))
    }

    /// Metadata describing the checkpoint; saved with the config as `<ckpt>.manifest`.
    pub fn sidecar(&self, iteration: usize, loss: Option<f64>) -> Vec<(String, String)> {
        vec![
            ("format".to_string(), "DSEG1".to_string()),
            ("mode".into(), self.mode().tag().into()),
            ("iteration".into(), iteration.to_string()),
            ("loss".into(), loss.map_or("-".into(), |l| format!("{l:e}"))),
            ("threshold".into(), self.threshold.to_string()),
            ("geometry.input".into(), self.spec.plan.input_size.to_string()),
            ("geometry.output".into(), self.spec.plan.output_size.to_string()),
        ]
    }

    /// Writes the parameters and a sidecar holding `sidecar()` plus `extra` metadata.
    pub fn save(
        &self,
        path: &Path,
        cfg: &Config,
        iteration: usize,
        loss: Option<f64>,
        extra: &[(String, String)],
    ) -> Result<()> {
        self.params.save(path)?;
        let mut meta = self.sidecar(iteration, loss);
        meta.extend_from_slice(extra);
        let side = sidecar_path(path);
        fs::write(&side, manifest_text(&meta, cfg)).map_err(|e| Error::io(&side, e))
    }

    /// Loads a checkpoint and its sidecar manifest.
    pub fn load(path: &Path) -> Result<(UnetModel, Config)> {
        let side = sidecar_path(path);
        let kv = read_kv(&side)?;
        let mut cfg = Config::default();
        let mut mode = None;
        let mut threshold = 0.5;
        for (k, v) in &kv {
            match k.as_str() {
                "mode" => mode = InputMode::from_tag(v),
                "threshold" => {
                    threshold = v.parse().map_err(|_| Error::Format {
                        what: "checkpoint manifest",
                        message: format!("bad threshold {v}"),
                    })?
                }
                _ if cfg.get(k).is_some() => cfg.set(k, v)?,
                _ => {}
            }
        }
        let mode = mode.ok_or_else(|| Error::Format {
            what: "checkpoint manifest",
            message: format!("{} lacks a mode line", side.display()),
        })?;
        let mut model = UnetModel::new(&cfg, mode)?;
        let params = ParamStore::load(path)?;
        if params.names() != model.params.names() {
            return Err(Error::DimensionMismatch(format!(
                "{} does not match the network described by its manifest",
                path.display()
            )));
        }
        model.params = params;
        model.threshold = threshold;
        Ok((model, cfg))
    }
}

pub fn sidecar_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

/// Manifest layout: metadata as `# key=value` comments, then every config key.
/// The result loads back as a config file.
pub fn manifest_text(meta: &[(String, String)], cfg: &Config) -> String {
    let mut out: String = meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect();
    out.push_str(&cfg.to_text());
    out
}

/// All `key=value` pairs of a manifest, metadata included.
pub fn read_kv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.strip_prefix('#').unwrap_or(l))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect())
}

/// Deterministic split of `n` items into (train, holdout) for threshold tuning.
/// With fewer than two items everything is used for both.
pub fn holdout_split(n: usize, frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let k = ((frac * n as f64).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    if n < 2 {
        return ((0..n).collect(), (0..n).collect());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7410_1d00);
    idx.shuffle(&mut rng);
    let (hold, rest) = idx.split_at(k);
    let (mut train, mut hold) = (rest.to_vec(), hold.to_vec());
    train.sort_unstable();
    hold.sort_unstable();
    (train, hold)
}

pub struct TrainOutcome {
    pub model: UnetModel,
    pub report: TrainReport,
}

/// Called with (iterations done, model snapshot, loss trace so far).
pub type ModelCheckpointFn<'a> = dyn FnMut(usize, &UnetModel, &[f64]) -> Result<()> + 'a;

/// Trains one U-Net variant. For 1B the threshold is tuned on a held-out
/// slice of `samples` that the network never sees.
pub fn train_unet(
    samples: &[TrainSample],
    mode: InputMode,
    cfg: &Config,
    on_checkpoint: &mut ModelCheckpointFn<'_>,
) -> Result<TrainOutcome> {
    let mut model = UnetModel::new(cfg, mode)?;
    let (train_idx, hold_idx) = if mode == InputMode::Enhanced1B {
        holdout_split(samples.len(), cfg.threshold_holdout, cfg.seed)
    } else {
        ((0..samples.len()).collect(), Vec::new())
    };
    let fit: Vec<TrainSample> = train_idx.iter().map(|&i| samples[i].clone()).collect();
    let tc = crate::unet::TrainConfig { seed: cfg.seed, ..cfg.train };
    let UnetModel { net, params, spec, .. } = &mut model;
    let report = {
        let mut cb = |it: usize, p: &ParamStore, trace: &[f64]| {
            let snapshot = UnetModel { net: net.clone(), params: p.clone(), spec: spec.clone(), threshold: 0.5 };
            on_checkpoint(it, &snapshot, trace)
        };
        train(net, params, &fit, spec, &tc, &mut cb)?
    };
    if !hold_idx.is_empty() {
        let probs = hold_idx.iter().map(|&i| model.probabilities(&samples[i].image)).collect::<Result<Vec<_>>>()?;
        let truths: Vec<BinaryMask> = hold_idx.iter().map(|&i| samples[i].mask.clone()).collect();
        model.threshold = optimize_threshold(&probs, &truths)?;
    }
    Ok(TrainOutcome { model, report })
}

/// Loads an image/mask pair at content resolution for training.
pub fn load_training_sample(image: &Path, mask: &Path, content: usize) -> Result<TrainSample> {
    let img = load_image(image)?;
    let m = load_mask(mask)?;
    if img.dims() != m.dims() {
        return Err(Error::DimensionMismatch(format!(
            "{} is {:?} but its mask is {:?}",
            image.display(),
            img.dims(),
            m.dims()
        )));
    }
    let scaled = rescale_max_dim(&img, content);
    let (w, h) = scaled.dims();
    Ok(TrainSample { image: scaled, mask: m.resize_nearest(w, h) })
}

/// Per-image scores of one method.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub fold: usize,
    pub id: String,
    pub algorithm: Algorithm,
    pub jaccard: f64,
    pub dice: f64,
}

pub struct EvalOutcome {
    pub plan: FoldPlan,
    pub report: ReportTable,
    pub per_image: Vec<ImageScore>,
}

fn score(pred: &BinaryMask, truth: &BinaryMask) -> Result<(f64, f64)> {
    let (i, a, b) = overlap_counts(pred, truth)?;
    let j = if a + b - i == 0 { 1.0 } else { i as f64 / (a + b - i) as f64 };
    let d = if a + b == 0 { 1.0 } else { 2.0 * i as f64 / (a + b) as f64 };
    Ok((j, d))
}

fn mean_row(fold: usize, algorithm: Algorithm, scores: &[(f64, f64)]) -> EvalRow {
    let n = scores.len() as f64;
    EvalRow {
        fold,
        algorithm,
        jaccard: scores.iter().map(|s| s.0).sum::<f64>() / n,
        dice: scores.iter().map(|s| s.1).sum::<f64>() / n,
    }
}

/// Runs the fold plan for every method. Clustering needs no training, so
/// each image is segmented once and its score reused by every fold.
pub fn evaluate(
    catalog: &DatasetCatalog,
    methods: &[Method],
    cfg: &Config,
    exec: Exec,
    log: &mut dyn FnMut(&str),
) -> Result<EvalOutcome> {
    let catalog = catalog.with_masks();
    let n = catalog.len();
    let plan = make_folds(n, cfg.folds, cfg.train_frac, cfg.seed)?;
    let samples = &catalog.samples;
    let mask_path = |i: usize| samples[i].mask_path.clone().expect("catalog filtered to masked samples");
    let mut rows = Vec::new();
    let mut per_image = Vec::new();

    if methods.contains(&Method::Cluster) {
        let ccfg = cluster_config(cfg);
        let scores = exec.map_indices(n, |i| -> Result<(f64, f64)> {
            let img = load_image(&samples[i].image_path)?;
            let truth = load_mask(mask_path(i))?;
            score(&cluster_segment(&img, &ccfg)?, &truth)
        });
        let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
        for (f, fold) in plan.folds.iter().enumerate() {
            let s: Vec<(f64, f64)> = fold.validation.iter().map(|&i| scores[i]).collect();
            rows.push(mean_row(f, Algorithm::Cluster2, &s));
            per_image.extend(fold.validation.iter().map(|&i| ImageScore {
                fold: f,
                id: samples[i].id.clone(),
                algorithm: Algorithm::Cluster2,
                jaccard: scores[i].0,
                dice: scores[i].1,
            }));
        }
        log(&format!("cluster: {n} images segmented"));
    }

    for &method in methods.iter().filter(|m| **m != Method::Cluster) {
        let mode = method.input_mode().expect("U-Net method");
        for (f, fold) in plan.folds.iter().enumerate() {
            let train_set = exec
                .map_slice(&fold.train, |&i| load_training_sample(&samples[i].image_path, &mask_path(i), cfg.content))
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            let fold_cfg = Config { seed: cfg.seed.wrapping_add(f as u64), ..cfg.clone() };
            let mut outcome = train_unet(&train_set, mode, &fold_cfg, &mut |_, _, _| Ok(()))?;
            drop(train_set);
            let model = &outcome.model;
            let preds = exec
                .map_slice(&fold.validation, |&i| -> Result<(ProbMap, BinaryMask)> {
                    let img = load_image(&samples[i].image_path)?;
                    Ok((model.probabilities(&img)?, load_mask(mask_path(i))?))
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()?;
            if method == Method::UnetB && cfg.threshold_mode == ThresholdMode::TestSet {
                let (p, t): (Vec<ProbMap>, Vec<BinaryMask>) = preds.iter().cloned().unzip();
                outcome.model.threshold = optimize_threshold(&p, &t)?;
            }
            let tau = outcome.model.threshold;
            let mut s = Vec::with_capacity(preds.len());
            for (k, (p, truth)) in preds.iter().enumerate() {
                let sc = score(&binarize_and_clean(p, tau, method.algorithm()), truth)?;
                let i = fold.validation[k];
                per_image.push(ImageScore {
                    fold: f,
                    id: samples[i].id.clone(),
                    algorithm: method.algorithm(),
                    jaccard: sc.0,
                    dice: sc.1,
                });
                s.push(sc);
            }
            let row = mean_row(f, method.algorithm(), &s);
            log(&format!("{} fold {}: J={:.4} D={:.4} tau={tau}", method.name(), f + 1, row.jaccard, row.dice));
            rows.push(row);
        }
    }

    let mut report = emit_report(rows);
    if methods.contains(&Method::UnetB) {
        report.threshold_mode = Some(match cfg.threshold_mode {
            ThresholdMode::Holdout => format!("1B tuned on {} of each training split", cfg.threshold_holdout),
            ThresholdMode::TestSet => "1B tuned on the evaluated images".to_string(),
        });
    }
    Ok(EvalOutcome { plan, report, per_image })
}

/// `fold,id,algorithm,jaccard,dice` with folds numbered from 1.
pub fn per_image_csv(scores: &[ImageScore]) -> String {
    let mut sorted: BTreeMap<(Algorithm, usize, &str), &ImageScore> = BTreeMap::new();
    for s in scores {
        sorted.insert((s.algorithm, s.fold, s.id.as_str()), s);
    }
    let mut out = String::from("fold,id,algorithm,jaccard,dice\n");
    for s in sorted.values() {
        out.push_str(&format!("{},{},{},{:.6},{:.6}\n", s.fold + 1, s.id, s.algorithm.label(), s.jaccard, s.dice));
    }
    out
}

/// Mean of per-image Jaccard values per algorithm over all folds.
pub fn mean_jaccard_by_algorithm(scores: &[ImageScore]) -> HashMap<Algorithm, f64> {
    let mut acc: HashMap<Algorithm, (f64, usize)> = HashMap::new();
    for s in scores {
        let e = acc.entry(s.algorithm).or_default();
        e.0 += s.jaccard;
        e.1 += 1;
    }
    acc.into_iter().map(|(a, (sum, n))| (a, sum / n as f64)).collect()
}
