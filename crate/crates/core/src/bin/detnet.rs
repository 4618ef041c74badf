use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use detnet::anchors::{kmeans_anchors, KMeansConfig};
use detnet::model::{Model, ModelConfig};
use detnet::pipeline::{
    build_model, evaluate_model, model_gradcheck, reference_pairs, run_experiment, train, EvalConfig,
    ExperimentConfig, Interpolation, Preset, ReferencePolicy, TrainConfig,
};
use detnet::synthvid::{build_dataset, export_dataset, load_dataset, load_frames, read_annotations, DatasetSpec};
use detnet::tensor::FdConfig;
use detnet::{Error, Result, Tensor};

#[derive(Parser)]
#[command(name = "detnet", version, about = "Video vehicle detector with 3D temporal fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic benchmark.
    Generate {
        /// Dataset spec JSON; defaults to the 200-sequence blur-heavy mix.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit anchor priors to annotated boxes.
    Anchors {
        #[arg(long)]
        ann: PathBuf,
        #[arg(short, long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 8)]
        stride: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.7)]
        iou: f64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        pr: Option<PathBuf>,
        #[arg(long, default_value_t = 0.01)]
        score: f64,
        #[arg(long, default_value_t = 0.45)]
        nms: f64,
        /// Use 11-point interpolated AP.
        #[arg(long)]
        eleven_point: bool,
    },
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        seq: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        score: f64,
        #[arg(long, default_value_t = 0.45)]
        nms: f64,
    },
    /// Finite-difference check of model and loss gradients.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
    },
    Experiment {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated seeds overriding the preset's.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Generate { spec, out } => {
            let spec: DatasetSpec = match spec {
                Some(p) => read_json(&p)?,
                None => DatasetSpec::blur_heavy(200, 0),
            };
            let data = build_dataset(&spec)?;
            export_dataset(&data, &out)?;
            println!("wrote {} sequences to {}", data.len(), out.display());
        }
        Command::Anchors {
            ann,
            k,
            stride,
            seed,
            out,
        } => {
            if stride == 0 {
                return Err(Error::InvalidArgument {
                    arg: "stride",
                    reason: "must be positive".into(),
                });
            }
            let dims: Vec<(f64, f64)> = read_annotations(&ann)?
                .iter()
                .flat_map(|r| r.boxes.iter().map(|b| (b.bbox.w / stride as f64, b.bbox.h / stride as f64)))
                .collect();
            let res = kmeans_anchors(
                &dims,
                &KMeansConfig {
                    k,
                    seed,
                    ..KMeansConfig::default()
                },
            )?;
            let priors: Vec<[f64; 2]> = res.anchors.priors().iter().map(|p| [p.w, p.h]).collect();
            let text = serde_json::to_string(&json!({"k": k, "stride": stride, "priors": priors}))?;
            match out {
                Some(p) => write_text(&p, &text)?,
                None => println!("{text}"),
            }
        }
        Command::Train { config, data, out } => {
            let cfg: TrainConfig = read_json(&config)?;
            let data = load_dataset(&data)?;
            let mut model = build_model(&cfg, &data)?;
            let report = train(&mut model, &data, &cfg, Some(&out))?;
            println!(
                "trained {} steps, final loss {:.6}, model at {}",
                report.history.len(),
                report.final_loss(),
                out.join("model.bin").display()
            );
        }
        Command::Eval {
            ckpt,
            data,
            iou,
            report,
            pr,
            score,
            nms,
            eleven_point,
        } => {
            let model = Model::load_checkpoint(&ckpt)?;
            let data = load_dataset(&data)?;
            let cfg = EvalConfig {
                iou_threshold: iou,
                score_threshold: score,
                nms_threshold: nms,
                interpolation: if eleven_point {
                    Interpolation::ElevenPoint
                } else {
                    Interpolation::AllPoint
                },
                ..EvalConfig::default()
            };
            let pairs = reference_pairs(&data, ReferencePolicy::All);
            let rep = evaluate_model(&model, &data, &pairs, &cfg)?;
            println!("mAP@{iou} = {:.4}  (tp {} fp {} fn {})", rep.map, rep.tp, rep.fp, rep.fn_);
            for (sc, m) in &rep.per_scenario {
                println!("  {sc:8} {m:.4}");
            }
            if let Some(p) = report {
                write_text(&p, &serde_json::to_string_pretty(&rep)?)?;
            }
            if let Some(p) = pr {
                write_text(&p, &rep.pr_csv())?;
            }
        }
        Command::Predict {
            ckpt,
            seq,
            out,
            score,
            nms,
        } => {
            let model = Model::load_checkpoint(&ckpt)?;
            let frames = load_frames(&seq)?;
            let s = frames.shape().to_vec();
            let (t, plane) = (s[0], s[1] * s[2] * s[3]);
            let file = fs::File::create(&out).map_err(|e| Error::Io {
                path: out.clone(),
                source: e,
            })?;
            let mut w = std::io::BufWriter::new(file);
            for r in 0..t {
                let idx = [r.saturating_sub(1), r, (r + 1).min(t - 1)];
                let mut data = Vec::with_capacity(3 * plane);
                for i in idx {
                    data.extend_from_slice(&frames.data()[i * plane..(i + 1) * plane]);
                }
                let x = Tensor::new(vec![1, 3, s[1], s[2], s[3]], data)?;
                let dets = model.predict(&x, score, nms)?.remove(0);
                serde_json::to_writer(&mut w, &json!({"frame": r, "detections": dets}))?;
                w.write_all(b"\n").map_err(|e| Error::Io {
                    path: out.clone(),
                    source: e,
                })?;
            }
        }
        Command::Gradcheck {
            config,
            seed,
            tolerance,
        } => {
            let cfg: ModelConfig = read_json(&config)?;
            let rep = model_gradcheck(&cfg, seed, &FdConfig::default())?;
            println!(
                "max relative error {:.3e} over {} coordinates ({} skipped at kinks)",
                rep.max_rel_error, rep.checked, rep.skipped_kinks
            );
            if !rep.passes(tolerance) {
                return Err(Error::Numeric(format!(
                    "gradient check failed: {:.3e} > {tolerance:e} at {:?}",
                    rep.max_rel_error, rep.worst
                )));
            }
        }
        Command::Experiment { preset, out, seeds } => {
            let mut cfg = ExperimentConfig::preset(preset.parse::<Preset>()?);
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            let table = run_experiment(&cfg, out.as_deref())?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
