mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dermseg::colorspace::InputMode;
use dermseg::config::Config;
use dermseg::dataio::{load_image, save_image, save_mask, scan_catalog, synth_lesion_full, SynthSpec};
use dermseg::fuzzyclust::cluster_segment;
use dermseg::pipeline::{self, cluster_config, load_training_sample, Method, UnetModel};
use dermseg::{Error, Exec};

use manifest::Manifest;

const EXIT_FAILURE: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_MISSING_MODEL: u8 = 3;
const EXIT_NON_FINITE: u8 = 4;

#[derive(Parser)]
#[command(name = "dermseg", version, about = "Skin lesion segmentation: U-Net and fuzzy c-means pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key=value config file (defaults to $DERMSEG_CONFIG when set).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set unet.depth=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic lesion images with exact masks.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        /// Overrides `run.seed` (default 0).
        #[arg(long)]
        seed: Option<u64>,
        /// Hair strokes per image.
        #[arg(long, default_value_t = 0)]
        hairs: usize,
        /// Darken everything outside the inscribed circle.
        #[arg(long)]
        vignette: bool,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Segment one image or every image in a directory.
    Segment {
        #[arg(long, value_parser = parse_method)]
        method: Method,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint written by `train` (U-Net methods only).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Overrides `run.seed` (default 0).
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Train a U-Net on a dataset directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: InputMode,
        /// Defaults to `train.iterations` (10000).
        #[arg(long)]
        iterations: Option<usize>,
        /// Overrides `run.seed` (default 0).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Cross-validated evaluation producing Jaccard/Dice tables.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated: cluster, unet-a, unet-b.
        #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "cluster")]
        methods: Vec<Method>,
        /// Defaults to `eval.folds` (5).
        #[arg(long)]
        folds: Option<usize>,
        /// Overrides `run.seed` (default 0).
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads for per-image work.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn parse_method(s: &str) -> Result<Method, String> {
    Method::parse(s).ok_or_else(|| format!("unknown method {s:?} (cluster, unet-a, unet-b)"))
}

fn parse_mode(s: &str) -> Result<InputMode, String> {
    InputMode::from_tag(s).ok_or_else(|| format!("unknown mode {s:?} (1a, 1b)"))
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io { .. } | Error::Decode { .. } | Error::Encode { .. } => EXIT_IO,
            Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
            _ => EXIT_FAILURE,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn load_config(args: &ConfigArgs, seed: Option<u64>) -> Result<Config, Failure> {
    let path = args.config.clone().or_else(|| std::env::var_os("DERMSEG_CONFIG").map(PathBuf::from));
    let mut cfg = match path {
        Some(p) => Config::load(&p)?,
        None => Config::default(),
    };
    for o in &args.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Failure { code: EXIT_FAILURE, message: format!("--set expects KEY=VALUE, got {o:?}") })?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })
}

fn cmd_synth(out: &Path, count: usize, seed: u64, hairs: usize, vignette: bool, cfg: &Config) -> CmdResult {
    let (img_dir, mask_dir) = (out.join("images"), out.join("masks"));
    create_dir(&img_dir)?;
    create_dir(&mask_dir)?;
    let mut m = Manifest::new("synth", cfg);
    m.meta("count", count);
    m.meta("hairs", hairs);
    m.meta("vignette", vignette);
    for i in 0..count {
        let sample_seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
        let spec = SynthSpec::random(sample_seed, cfg.synth_size, hairs, vignette);
        let s = synth_lesion_full(&spec)?;
        let id = format!("synth_{i:05}");
        let (ip, mp) = (img_dir.join(format!("{id}.png")), mask_dir.join(format!("{id}_segmentation.png")));
        save_image(&s.image, &ip)?;
        save_mask(&s.mask, &mp)?;
        m.meta(
            &format!("sample.{id}"),
            format!(
                "seed={sample_seed} center={:.3},{:.3} axes={:.3},{:.3} rotation={:.4} hairs={} hair_pixels={}",
                spec.center.0,
                spec.center.1,
                spec.axes.0,
                spec.axes.1,
                spec.rotation,
                spec.hair_count,
                s.hair_mask.count()
            ),
        );
        m.artifact(out, &ip)?;
        m.artifact(out, &mp)?;
    }
    m.write(&out.join("manifest.txt"))?;
    log::info!("wrote {count} samples to {}", out.display());
    Ok(())
}

fn image_inputs(input: &Path) -> Result<Vec<(String, PathBuf)>, Error> {
    if input.is_dir() {
        Ok(scan_catalog(input)?.samples.into_iter().map(|s| (s.id, s.image_path)).collect())
    } else {
        let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        Ok(vec![(id, input.to_path_buf())])
    }
}

fn cmd_segment(method: Method, input: &Path, out: &Path, model: Option<&Path>, cfg: &Config) -> CmdResult {
    let unet = match method {
        Method::Cluster => None,
        _ => {
            let path = model.ok_or_else(|| Failure {
                code: EXIT_MISSING_MODEL,
                message: format!("method {} needs --model", method.name()),
            })?;
            if !path.is_file() {
                return Err(Failure {
                    code: EXIT_MISSING_MODEL,
                    message: format!("model {} not found", path.display()),
                });
            }
            let (m, _) =
                UnetModel::load(path).map_err(|e| Failure { code: EXIT_MISSING_MODEL, message: e.to_string() })?;
            if method.input_mode() != Some(m.mode()) {
                return Err(Failure {
                    code: EXIT_FAILURE,
                    message: format!("model was trained for mode {}, not {}", m.mode().tag(), method.name()),
                });
            }
            Some(m)
        }
    };
    let inputs = image_inputs(input)?;
    let to_dir = input.is_dir();
    if to_dir {
        create_dir(out)?;
    } else if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let ccfg = cluster_config(cfg);
    let mut m = Manifest::new("segment", cfg);
    m.meta("method", method.name());
    if let Some(p) = model {
        m.meta("model", p.display());
    }
    let root = if to_dir { out.to_path_buf() } else { out.parent().map(Path::to_path_buf).unwrap_or_default() };
    for (id, path) in &inputs {
        let img = load_image(path)?;
        let mask = match &unet {
            Some(model) => model.segment(&img)?,
            None => cluster_segment(&img, &ccfg)?,
        };
        let dest = if to_dir { out.join(format!("{id}_segmentation.png")) } else { out.to_path_buf() };
        save_mask(&mask, &dest)?;
        m.artifact(&root, &dest)?;
    }
    let manifest_path = if to_dir { out.join("manifest.txt") } else { pipeline::sidecar_path(out) };
    m.write(&manifest_path)?;
    Ok(())
}

fn cmd_train(data: &Path, mode: InputMode, out: &Path, cfg: &Config) -> CmdResult {
    let catalog = scan_catalog(data)?.with_masks();
    if catalog.is_empty() {
        return Err(Failure { code: EXIT_FAILURE, message: format!("no image/mask pairs under {}", data.display()) });
    }
    let samples = catalog
        .samples
        .iter()
        .map(|s| load_training_sample(&s.image_path, s.mask_path.as_ref().expect("filtered"), cfg.content))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let loss_path = suffixed(out, ".loss.csv");
    let mut last_good = None;
    let result = pipeline::train_unet(&samples, mode, cfg, &mut |it, model, trace| {
        model.save(out, cfg, it, trace.last().copied(), &[])?;
        last_good = Some(model.clone());
        log::info!("iteration {it}: loss {:.5}", trace.last().copied().unwrap_or(f64::NAN));
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e @ Error::NonFiniteLoss { .. }) => {
            if let Some(model) = last_good {
                let diag = suffixed(out, ".diverged");
                model.save(&diag, cfg, 0, None, &[("reason".into(), e.to_string())])?;
                log::error!("last finite checkpoint saved to {}", diag.display());
            }
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let csv: String = outcome.report.loss_trace.iter().enumerate().map(|(i, l)| format!("{},{l:e}\n", i + 1)).collect();
    fs::write(&loss_path, csv).map_err(|e| Error::Io { path: loss_path.clone(), source: e })?;
    let iterations = outcome.report.loss_trace.len();
    let root = out.parent().map(Path::to_path_buf).unwrap_or_default();
    outcome.model.params.save(out)?;
    let mut extra = vec![("command".to_string(), "train".to_string()), ("samples".into(), samples.len().to_string())];
    extra.push((format!("sha256:{}", manifest::relative(&root, out)), manifest::sha256_file(out)?));
    extra.push((format!("sha256:{}", manifest::relative(&root, &loss_path)), manifest::sha256_file(&loss_path)?));
    outcome.model.save(out, cfg, iterations, outcome.report.loss_trace.last().copied(), &extra)?;
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_eval(data: &Path, methods: &[Method], out: &Path, jobs: usize, cfg: &Config) -> CmdResult {
    let catalog = scan_catalog(data)?;
    create_dir(out)?;
    let exec = if jobs > 1 { Exec::Parallel } else { Exec::Sequential };
    let run = || pipeline::evaluate(&catalog, methods, cfg, exec, &mut |line| log::info!("{line}"));
    #[cfg(feature = "parallel")]
    let outcome = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Failure { code: EXIT_FAILURE, message: e.to_string() })?
        .install(run)?;
    #[cfg(not(feature = "parallel"))]
    let outcome = run()?;

    let ids = catalog.with_masks().ids();
    let files = [
        ("report.csv", outcome.report.to_csv()),
        ("report.txt", outcome.report.to_text()),
        ("per_image.csv", pipeline::per_image_csv(&outcome.per_image)),
        ("folds.txt", outcome.plan.to_text(&ids)?),
    ];
    let mut m = Manifest::new("eval", cfg);
    m.meta("methods", methods.iter().map(|m| m.name()).collect::<Vec<_>>().join(","));
    m.meta("samples", ids.len());
    m.meta("jobs", jobs);
    for (name, text) in &files {
        let p = out.join(name);
        fs::write(&p, text).map_err(|e| Error::Io { path: p.clone(), source: e })?;
        m.artifact(out, &p)?;
    }
    m.write(&out.join("manifest.txt"))?;
    print!("{}", outcome.report.to_text());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Synth { out, count, seed, hairs, vignette, cfg } => {
            let cfg = load_config(&cfg, seed)?;
            cmd_synth(&out, count, cfg.seed, hairs, vignette, &cfg)
        }
        Command::Segment { method, input, out, model, seed, cfg } => {
            let cfg = load_config(&cfg, seed)?;
            cmd_segment(method, &input, &out, model.as_deref(), &cfg)
        }
        Command::Train { data, mode, iterations, seed, out, cfg } => {
            let mut cfg = load_config(&cfg, seed)?;
            if let Some(n) = iterations {
                cfg.train.iterations = n;
            }
            cmd_train(&data, mode, &out, &cfg)
        }
        Command::Eval { data, methods, folds, seed, out, jobs, cfg } => {
            let mut cfg = load_config(&cfg, seed)?;
            if let Some(k) = folds {
                cfg.folds = k;
            }
            cmd_eval(&data, &methods, &out, jobs, &cfg)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
