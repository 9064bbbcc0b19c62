mod manifest;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use mvnet::backbone::{Model, ModelConfig};
use mvnet::bench::{bench_csv, growth, run_bench, BenchConfig};
use mvnet::checkpoint;
use mvnet::data::{
    nearest_centroid_accuracy, stratified_split, synthesize_dataset, HsiCube, PadMode, PatchSet, Ratios,
    SplitSpec, Subset, SynthSpec,
};
use mvnet::rng::streams;
use mvnet::selfcheck::{CheckEnv, CheckRegistry, SignFlippedKernel};
use mvnet::ssm::PathRegistry;
use mvnet::training::{evaluate, history_csv, train, TrainConfig};
use mvnet::{Error, Result};

use manifest::{sha256_hex, RunManifest};

#[derive(Parser)]
#[command(name = "mvnet", version, about = "Hyperspectral pixel classification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Pad {
    Replicate,
    Zero,
}

impl From<Pad> for PadMode {
    fn from(p: Pad) -> Self {
        match p {
            Pad::Replicate => PadMode::Replicate,
            Pad::Zero => PadMode::Zero,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic labeled cube
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 16)]
        bands: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Split, train and write a run directory
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Model config JSON; bands and classes default to the cube's
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training config JSON
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long, default_value = "6:1:3")]
        ratios: String,
        /// Odd spatial block size; overrides the model config
        #[arg(long)]
        block: Option<usize>,
        #[arg(long, value_enum, default_value_t = Pad::Replicate)]
        pad: Pad,
        /// Overrides the training config seed
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics table for one split of a trained run
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// train, val, test or all
        #[arg(long, default_value = "test")]
        split: String,
        /// Defaults to model.json next to the checkpoint
        #[arg(long)]
        model: Option<PathBuf>,
        /// Defaults to split.json next to the checkpoint
        #[arg(long)]
        split_file: Option<PathBuf>,
        /// Also write the table here (plus a manifest alongside)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render predictions for every labeled pixel as a PPM image
    Map {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        split_file: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the invariant suite
    Selfcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true)]
        inject_kernel_sign_error: bool,
    },
    /// Time the recurrent and kernel paths
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "512,1024,2048,4096")]
        lengths: Vec<usize>,
        #[arg(long, default_value_t = 8)]
        state: usize,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
        /// Minimum duration of one timed sample
        #[arg(long, default_value_t = 20)]
        sample_ms: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Pipeline state written next to a checkpoint: which cube, how it was
/// padded, and the sample assignment.
#[derive(Serialize, Deserialize)]
struct RunSplit {
    data_sha256: String,
    pad: PadMode,
    split: SplitSpec,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Synth {
            out,
            height,
            width,
            bands,
            classes,
            noise,
            seed,
        } => {
            let spec = SynthSpec {
                height,
                width,
                bands,
                classes,
                noise,
                seed,
            };
            synth(&spec, &out)
        }
        Cmd::Train {
            data,
            model,
            train,
            ratios,
            block,
            pad,
            seed,
            out,
        } => cmd_train(&data, model.as_deref(), train.as_deref(), &ratios, block, pad.into(), seed, &out),
        Cmd::Eval {
            checkpoint,
            data,
            split,
            model,
            split_file,
            out,
        } => cmd_eval(&checkpoint, &data, &split, model.as_deref(), split_file.as_deref(), out.as_deref()),
        Cmd::Map {
            checkpoint,
            data,
            model,
            split_file,
            out,
        } => cmd_map(&checkpoint, &data, model.as_deref(), split_file.as_deref(), &out),
        Cmd::Selfcheck {
            seed,
            out,
            inject_kernel_sign_error,
        } => cmd_selfcheck(seed, out.as_deref(), inject_kernel_sign_error),
        Cmd::Bench {
            lengths,
            state,
            repeats,
            sample_ms,
            seed,
            out,
        } => {
            let cfg = BenchConfig {
                lengths,
                state,
                repeats,
                min_sample: Duration::from_millis(sample_ms),
                seed,
            };
            cmd_bench(&cfg, out.as_deref())
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn synth(spec: &SynthSpec, out: &Path) -> Result<ExitCode> {
    let mut man = RunManifest::start("synth");
    man.seeds.insert("seed".into(), spec.seed);
    man.seeds.insert("synth_stream".into(), streams::SYNTH);
    let cube = synthesize_dataset(spec)?;
    man.write(out, &cube.to_bytes())?;
    eprintln!(
        "wrote {}: {}×{}×{}, {} classes, nearest-centroid accuracy {:.2}%",
        out.display(),
        cube.height(),
        cube.width(),
        cube.bands(),
        cube.classes(),
        100.0 * nearest_centroid_accuracy(&cube)
    );
    man.finish(&manifest_path(out))?;
    Ok(ExitCode::SUCCESS)
}

fn load_cube(man: &mut RunManifest, path: &Path) -> Result<(HsiCube, String)> {
    let bytes = man.read(path)?;
    let hash = sha256_hex(&bytes);
    Ok((HsiCube::from_bytes(&bytes)?, hash))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    model: Option<&Path>,
    train_cfg: Option<&Path>,
    ratios: &str,
    block: Option<usize>,
    pad: PadMode,
    seed: Option<u64>,
    out: &Path,
) -> Result<ExitCode> {
    let ratios: Ratios = ratios.parse()?;
    if let Some(b) = block {
        if b < 3 || b % 2 == 0 {
            return Err(Error::Usage(format!("--block must be odd and at least 3, got {b}")));
        }
    }
    if out.is_file() {
        return Err(Error::Usage(format!("--out {} is a file", out.display())));
    }
    let mut man = RunManifest::start("train");
    let (cube, data_hash) = load_cube(&mut man, data)?;
    let mut mcfg = match model {
        Some(p) => ModelConfig::from_json(&man.read_config("model", p)?)?,
        None => ModelConfig::new(cube.bands(), cube.classes()),
    };
    if let Some(b) = block {
        mcfg.block = b;
    }
    mcfg.validate()?;
    if mcfg.bands != cube.bands() || mcfg.classes != cube.classes() {
        return Err(Error::Dimension(format!(
            "model expects {} bands / {} classes, cube has {} / {}",
            mcfg.bands,
            mcfg.classes,
            cube.bands(),
            cube.classes()
        )));
    }
    let mut tcfg = match train_cfg {
        Some(p) => TrainConfig::from_json(&man.read_config("train", p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    tcfg.validate()?;
    let net = Model::new(mcfg.clone())?;

    eprintln!(
        "data {}: {}×{}×{}, {} classes, {} labeled pixels",
        data.display(),
        cube.height(),
        cube.width(),
        cube.bands(),
        cube.classes(),
        cube.labeled_count()
    );
    let patches = PatchSet::from_cube(&cube, mcfg.block, pad)?;
    eprintln!("patch shape {0}×{0}×{1}, {2} samples", mcfg.block, cube.bands(), patches.len());
    let split = stratified_split(patches.labels(), ratios, tcfg.seed)?;
    eprintln!("split {ratios} (seed {})", tcfg.seed);
    for c in &split.per_class {
        eprintln!("  class {}: {}/{}/{}", c.class, c.train, c.val, c.test);
    }
    eprintln!("model: {} parameters, precision {:?}", net.param_count()?, tcfg.precision);

    let outcome = train(&net, &patches, &split, &tcfg, |r| {
        eprintln!("epoch {:>3}  loss {:.6}  val OA {:.2}%", r.epoch, r.train_loss, 100.0 * r.val_oa);
    })?;
    eprintln!(
        "best epoch {} (val OA {:.2}%){}",
        outcome.best_epoch,
        100.0 * outcome.best_val_oa,
        if outcome.stopped_early { ", stopped early" } else { "" }
    );
    let test = if split.test.is_empty() {
        None
    } else {
        let ev = evaluate(&net, &outcome.best, &patches, &split.test, tcfg.precision, (cube.height(), cube.width()))?;
        eprintln!(
            "test OA {:.2}%  AA {:.2}%  K {:.2}",
            100.0 * ev.metrics.oa,
            100.0 * ev.metrics.aa,
            100.0 * ev.metrics.kappa
        );
        Some(render::metrics_csv(&ev.metrics, cube.class_names()))
    };

    man.seeds.insert("seed".into(), tcfg.seed);
    for (name, id) in [
        ("init_stream", streams::INIT),
        ("shuffle_stream", streams::SHUFFLE),
        ("dropout_stream", streams::DROPOUT),
        ("split_stream", streams::SPLIT),
    ] {
        man.seeds.insert(name.into(), id);
    }
    std::fs::create_dir_all(out)?;
    let run_split = RunSplit {
        data_sha256: data_hash,
        pad,
        split,
    };
    man.write(&out.join("model.mvnw"), &checkpoint::encode(&outcome.best)?)?;
    man.write(&out.join("model.json"), format!("{}\n", mcfg.to_json()).as_bytes())?;
    man.write(&out.join("train.json"), format!("{}\n", tcfg.to_json()).as_bytes())?;
    man.write(&out.join("split.json"), serde_json::to_string_pretty(&run_split)?.as_bytes())?;
    man.write(&out.join("history.csv"), history_csv(&outcome.history).as_bytes())?;
    if let Some(t) = test {
        man.write(&out.join("test_metrics.csv"), t.as_bytes())?;
    }
    man.finish(&out.join("manifest.json"))?;
    Ok(ExitCode::SUCCESS)
}

struct Trained {
    cube: HsiCube,
    net: Model,
    store: mvnet::params::ParamStore,
    patches: PatchSet,
    split: SplitSpec,
    precision: mvnet::Precision,
}

fn sibling(ckpt: &Path, name: &str) -> PathBuf {
    ckpt.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_trained(
    man: &mut RunManifest,
    ckpt: &Path,
    data: &Path,
    model: Option<&Path>,
    split_file: Option<&Path>,
) -> Result<Trained> {
    let model = model.map(PathBuf::from).unwrap_or_else(|| sibling(ckpt, "model.json"));
    let split_file = split_file.map(PathBuf::from).unwrap_or_else(|| sibling(ckpt, "split.json"));
    let train_file = sibling(ckpt, "train.json");
    let cfg = ModelConfig::from_json(&man.read_config("model", &model)?)?;
    let rs: RunSplit = serde_json::from_str(&man.read_config("split", &split_file)?)
        .map_err(|e| Error::Config(format!("{}: {e}", split_file.display())))?;
    let precision = if train_file.exists() {
        TrainConfig::from_json(&man.read_config("train", &train_file)?)?.precision
    } else {
        mvnet::Precision::default()
    };
    let store = checkpoint::decode(&man.read(ckpt)?)?;
    let (cube, hash) = load_cube(man, data)?;
    if hash != rs.data_sha256 {
        return Err(Error::Data(format!(
            "{} is not the cube this run was trained on (sha256 {} vs {})",
            data.display(),
            &hash[..12],
            &rs.data_sha256[..12.min(rs.data_sha256.len())]
        )));
    }
    let net = Model::new(cfg)?;
    let expected = net.init(0)?;
    for (name, t) in expected.iter() {
        let got = store.get(name)?;
        if got.shape() != t.shape() {
            return Err(Error::Dimension(format!(
                "checkpoint tensor `{name}` is {:?}, model expects {:?}",
                got.shape(),
                t.shape()
            )));
        }
    }
    let patches = PatchSet::from_cube(&cube, net.cfg.block, rs.pad)?;
    Ok(Trained {
        cube,
        net,
        store,
        patches,
        split: rs.split,
        precision,
    })
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    split: &str,
    model: Option<&Path>,
    split_file: Option<&Path>,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let subset = match split {
        "all" => None,
        s => Some(s.parse::<Subset>()?),
    };
    let mut man = RunManifest::start("eval");
    let t = load_trained(&mut man, ckpt, data, model, split_file)?;
    let idx: Vec<usize> = match subset {
        Some(s) => t.split.subset(s).to_vec(),
        None => (0..t.patches.len()).collect(),
    };
    let ev = evaluate(&t.net, &t.store, &t.patches, &idx, t.precision, (t.cube.height(), t.cube.width()))?;
    let table = render::metrics_csv(&ev.metrics, t.cube.class_names());
    print!("{table}");
    if let Some(o) = out {
        man.write(o, table.as_bytes())?;
        man.finish(&manifest_path(o))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_map(ckpt: &Path, data: &Path, model: Option<&Path>, split_file: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let mut man = RunManifest::start("map");
    let t = load_trained(&mut man, ckpt, data, model, split_file)?;
    let idx: Vec<usize> = (0..t.patches.len()).collect();
    let (h, w) = (t.cube.height(), t.cube.width());
    let ev = evaluate(&t.net, &t.store, &t.patches, &idx, t.precision, (h, w))?;
    man.write(out, &render::ppm(&ev.map, h, w))?;
    eprintln!("wrote {} ({w}×{h}), OA over labeled pixels {:.2}%", out.display(), 100.0 * ev.metrics.oa);
    man.finish(&manifest_path(out))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_selfcheck(seed: u64, out: Option<&Path>, inject: bool) -> Result<ExitCode> {
    let mut man = RunManifest::start("selfcheck");
    man.seeds.insert("seed".into(), seed);
    let mut paths = PathRegistry::with_defaults();
    if inject {
        paths.register(Box::new(SignFlippedKernel));
    }
    let report = CheckRegistry::with_defaults().run(&CheckEnv { paths, seed });
    let text = format!("{report}\n");
    print!("{text}");
    if let Some(o) = out {
        man.write(o, text.as_bytes())?;
        man.finish(&manifest_path(o))?;
    }
    Ok(if report.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(4)
    })
}

fn cmd_bench(cfg: &BenchConfig, out: Option<&Path>) -> Result<ExitCode> {
    let mut man = RunManifest::start("bench");
    man.seeds.insert("seed".into(), cfg.seed);
    let rows = run_bench(&PathRegistry::with_defaults(), cfg)?;
    let csv = bench_csv(&rows);
    print!("{csv}");
    let (lo, hi) = (cfg.lengths[0], *cfg.lengths.last().unwrap());
    if let Some((s, k)) = growth(&rows, lo, hi) {
        eprintln!("T={hi}/T={lo}: scan ×{s:.2}, kernel ×{k:.2}");
    }
    if let Some(o) = out {
        man.write(o, csv.as_bytes())?;
        man.finish(&manifest_path(o))?;
    }
    Ok(ExitCode::SUCCESS)
}
