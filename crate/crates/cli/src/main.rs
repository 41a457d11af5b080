use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use embryo_align::alignreg::AlignmentSequence;
use embryo_align::autodiff::ParamStore;
use embryo_align::diagnostics::{centroid_curve, centroid_tracking};
use embryo_align::embed::{pca_embed, tsne_embed, EmbeddingResult};
use embryo_align::foldnet::{self, LossTrace};
use embryo_align::geometry::{make_spherical_template, SeriesFrameSet};
use embryo_align::io;
use embryo_align::pipeline::{self, AutoencoderMeta, PipelineConfig, Profile, RegressorMeta};
use embryo_align::svg;
use embryo_align::warp::{self, WarpFamily};

/// Learned point-cloud features and temporal alignment of embryo series.
#[derive(Parser)]
#[command(name = "embryo-align", version)]
struct Cli {
    /// JSON config overriding fields of the selected profile.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; every stage seed is derived from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default settings to start from when the config names none.
    #[arg(long, global = true, default_value = "desk")]
    profile: ProfileArg,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Paper,
    Desk,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Profile {
        match p {
            ProfileArg::Paper => Profile::Paper,
            ProfileArg::Desk => Profile::Desk,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    All,
    Cos,
    Sin,
    Gaussian,
    Faster,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Pca,
    Tsne,
}

#[derive(Args)]
struct InOut {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a reference series into a directory of frame CSVs.
    Simulate {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write time-warped copies of a series with ground-truth indices.
    Warp {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value = "all")]
        family: FamilyArg,
    },
    /// Train the folding autoencoder on a series.
    TrainAe {
        #[command(flatten)]
        io: InOut,
    },
    /// Extract one codeword per frame.
    Encode {
        #[command(flatten)]
        io: InOut,
        /// Autoencoder checkpoint manifest.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Reconstruct every frame through the autoencoder.
    Reconstruct {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the alignment regressor on reference codewords.
    TrainReg {
        #[command(flatten)]
        io: InOut,
        /// Reference series, needed when augmentation is enabled.
        #[arg(long)]
        series: Option<PathBuf>,
        /// Autoencoder checkpoint, needed when augmentation is enabled.
        #[arg(long)]
        ae: Option<PathBuf>,
    },
    /// Predict reference indices for query codewords.
    Align {
        #[command(flatten)]
        io: InOut,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Ground-truth CSV to store alongside the prediction.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Tabulate mean alignment errors in minutes.
    Evaluate {
        /// Alignment CSVs with a ground_truth_index column.
        #[arg(long = "in", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// 2D embedding of codewords as CSV and SVG.
    Embed {
        #[command(flatten)]
        io: InOut,
        #[arg(long, default_value = "tsne")]
        method: MethodArg,
    },
    /// Per-frame centroid curves of a series and its reconstructions.
    CentroidDiag {
        #[command(flatten)]
        io: InOut,
        /// Reconstruction directory as LABEL=DIR; repeatable.
        #[arg(long = "recon", required = true)]
        recons: Vec<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let profile = cli.profile.into();
    let cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path, profile)?,
        None => PipelineConfig::for_profile(profile),
    };
    Ok(match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let data = |name: &str| cfg.data_dir.join(name);
    let output = |name: &str| cfg.output_dir.join(name);
    let ckpt = |name: &str| cfg.checkpoint_dir.join(name);
    let pick = |p: &Option<PathBuf>, default: PathBuf| p.clone().unwrap_or(default);

    match &cli.command {
        Command::Simulate { out } => {
            let out = pick(out, data("reference"));
            let series = pipeline::simulate(&cfg)?;
            io::write_series_dir(&out, &series)?;
            println!("wrote {} frames to {}", series.len(), out.display());
        }
        Command::Warp { io: paths, family } => {
            let series = read_series(&cfg, &pick(&paths.input, data("reference")))?;
            let out = pick(&paths.out, data("warped"));
            let wanted: Option<WarpFamily> = match family {
                FamilyArg::All => None,
                FamilyArg::Cos => Some(WarpFamily::Cos),
                FamilyArg::Sin => Some(WarpFamily::Sin),
                FamilyArg::Gaussian => Some(WarpFamily::Gaussian),
                FamilyArg::Faster => Some(WarpFamily::Faster),
            };
            for spec in cfg.warps.iter().filter(|w| wanted.is_none_or(|f| f == w.family)) {
                let warped = warp::apply_warp(&series, spec)?;
                let dir = out.join(spec.family.name());
                io::write_series_dir(&dir, &warped.frames)?;
                io::write_ground_truth_csv(&dir.join("ground_truth.csv"), &warped.ground_truth)?;
                println!("wrote {}", dir.display());
            }
        }
        Command::TrainAe { io: paths } => {
            let series = read_series(&cfg, &pick(&paths.input, data("reference")))?;
            let out = pick(&paths.out, ckpt("autoencoder.json"));
            let (params, trace) = pipeline::train_autoencoder(&cfg, &series, |e, loss| {
                eprintln!("epoch {e} loss {loss:.6}");
            })?;
            let meta = AutoencoderMeta {
                encoder: cfg.encoder.clone(),
                decoder: cfg.decoder.clone(),
                training: cfg.autoencoder.clone(),
            };
            ensure_parent(&out)?;
            pipeline::save_model(&out, &params, &meta)?;
            write_loss(&out, &trace, "autoencoder loss")?;
            println!("saved {}", out.display());
        }
        Command::Encode { io: paths, checkpoint } => {
            let series = read_series(&cfg, &pick(&paths.input, data("reference")))?;
            let (params, meta) = load_ae(&pick(checkpoint, ckpt("autoencoder.json")))?;
            let cfg = PipelineConfig {
                encoder: meta.encoder,
                ..cfg.clone()
            };
            let codes = pipeline::encode(&cfg, &series, &params)?;
            let out = pick(&paths.out, output("codewords.csv"));
            ensure_parent(&out)?;
            io::write_codewords_csv(&out, &codes)?;
            println!("wrote {} codewords to {}", codes.len(), out.display());
        }
        Command::Reconstruct { io: paths, checkpoint } => {
            let series = read_series(&cfg, &pick(&paths.input, data("reference")))?;
            let (params, meta) = load_ae(&pick(checkpoint, ckpt("autoencoder.json")))?;
            let template = make_spherical_template(meta.decoder.template_size)?;
            let (_, recons) = foldnet::reconstruct_series(
                &series,
                &meta.encoder,
                &meta.decoder,
                &template,
                &params,
                cfg.encode_points,
                cfg.encode_seed(),
            )?;
            let out = pick(&paths.out, output("reconstruction"));
            io::write_series_dir(&out, &SeriesFrameSet::new(recons, series.minutes_per_frame())?)?;
            println!("wrote {} reconstructions to {}", series.len(), out.display());
        }
        Command::TrainReg { io: paths, series, ae } => {
            let codes = io::read_codewords_csv(&pick(&paths.input, output("codewords.csv")))?;
            let out = pick(&paths.out, ckpt("regressor.json"));
            let augment_inputs = if cfg.augment_regressor {
                let s = read_series(&cfg, &pick(series, data("reference")))?;
                let (p, m) = load_ae(&pick(ae, ckpt("autoencoder.json")))?;
                Some((s, p, m))
            } else {
                None
            };
            let run_cfg = match &augment_inputs {
                Some((_, _, m)) => PipelineConfig {
                    encoder: m.encoder.clone(),
                    ..cfg.clone()
                },
                None => cfg.clone(),
            };
            let reference = augment_inputs.as_ref().map(|(s, p, _)| (s, p));
            let (params, trace) = pipeline::train_regressor(&run_cfg, &codes, reference, |e, loss| {
                eprintln!("epoch {e} loss {loss:.6}");
            })?;
            let meta = RegressorMeta {
                regression: cfg.regression.clone(),
                training: cfg.regressor.clone(),
                reference_t: codes.len(),
            };
            ensure_parent(&out)?;
            pipeline::save_model(&out, &params, &meta)?;
            write_loss(&out, &trace, "regressor loss")?;
            println!("saved {}", out.display());
        }
        Command::Align {
            io: paths,
            checkpoint,
            ground_truth,
        } => {
            let codes = io::read_codewords_csv(&pick(&paths.input, output("codewords.csv")))?;
            let (params, meta): (ParamStore, RegressorMeta) =
                pipeline::load_model(&pick(checkpoint, ckpt("regressor.json")))?;
            let cfg = PipelineConfig {
                regression: meta.regression,
                ..cfg.clone()
            };
            let seq = pipeline::align(&cfg, &codes, &params, meta.reference_t)?;
            let truth = ground_truth.as_deref().map(io::read_ground_truth_csv).transpose()?;
            let rows = io::alignment_rows(&seq, truth.as_deref())?;
            let out = pick(&paths.out, output("alignment.csv"));
            ensure_parent(&out)?;
            io::write_alignment_csv(&out, &rows)?;
            fs::write(out.with_extension("svg"), alignment_svg(&seq, truth.as_deref()))?;
            println!("wrote {}", out.display());
        }
        Command::Evaluate { inputs, out } => {
            let mpf = cfg.simulation.minutes_per_frame;
            let mut table = Vec::new();
            for path in inputs {
                let rows = io::read_alignment_csv(path)?;
                let truth: Vec<f64> = rows
                    .iter()
                    .map(|r| r.ground_truth_index)
                    .collect::<Option<_>>()
                    .with_context(|| format!("{}: no ground_truth_index column", path.display()))?;
                let pred: Vec<f64> = rows.iter().map(|r| r.monotone_index).collect();
                let raw: Vec<f64> = rows.iter().map(|r| r.raw_index).collect();
                let err = embryo_align::alignreg::alignment_error(&pred, &truth, mpf)?;
                let raw_err = embryo_align::alignreg::alignment_error(&raw, &truth, mpf)?;
                table.push((label_of(path), raw_err, err));
            }
            print!("{}", format_table(&table));
            if let Some(out) = out {
                ensure_parent(out)?;
                let rows: Vec<Vec<f64>> = table.iter().map(|(_, r, p)| vec![*r, *p]).collect();
                io::write_table_csv(out, &["raw_error_minutes", "monotone_error_minutes"], &rows)?;
            }
        }
        Command::Embed { io: paths, method } => {
            let codes = io::read_codewords_csv(&pick(&paths.input, output("codewords.csv")))?;
            let (result, name): (EmbeddingResult, &str) = match method {
                MethodArg::Pca => (pca_embed(&codes)?, "pca"),
                MethodArg::Tsne => (tsne_embed(&codes, &cfg.tsne)?, "tsne"),
            };
            let out = pick(&paths.out, output(&format!("embedding_{name}.csv")));
            ensure_parent(&out)?;
            let rows: Vec<Vec<f64>> = result
                .coords
                .iter()
                .zip(&result.frame_indices)
                .map(|(c, &f)| vec![f as f64, c[0], c[1]])
                .collect();
            io::write_table_csv(&out, &["frame", "u", "v"], &rows)?;
            let frames: Vec<f64> = result.frame_indices.iter().map(|&f| f as f64).collect();
            let title = format!("{} embedding of codewords", name.to_uppercase());
            fs::write(
                out.with_extension("svg"),
                svg::scatter_svg(&result.coords, &frames, &title, "u", "v"),
            )?;
            if let (Some(a), Some(b)) = (result.kl_after_exaggeration, result.final_kl) {
                println!("KL after exaggeration {a:.6}, final {b:.6}");
            }
            println!("wrote {}", out.display());
        }
        Command::CentroidDiag { io: paths, recons } => {
            let series = read_series(&cfg, &pick(&paths.input, data("reference")))?;
            let input_curve = centroid_curve(series.frames());
            let mut header = vec!["frame".to_string(), "input_x".into(), "input_y".into()];
            let mut columns: Vec<Vec<f64>> = vec![
                (1..=series.len()).map(|t| t as f64).collect(),
                input_curve.iter().map(|p| p.x).collect(),
                input_curve.iter().map(|p| p.y).collect(),
            ];
            let mut lines_x = vec![("input".to_string(), columns[1].clone())];
            let mut lines_y = vec![("input".to_string(), columns[2].clone())];
            for spec in recons {
                let (label, dir) = spec
                    .split_once('=')
                    .with_context(|| format!("--recon expects LABEL=DIR, got {spec:?}"))?;
                let recon = read_series(&cfg, Path::new(dir))?;
                let tracking = centroid_tracking(series.frames(), recon.frames())?;
                println!(
                    "{label}: mean |dx| {:.4}, mean |dy| {:.4}",
                    tracking.error_x, tracking.error_y
                );
                let curve = centroid_curve(recon.frames());
                header.push(format!("{label}_x"));
                header.push(format!("{label}_y"));
                columns.push(curve.iter().map(|p| p.x).collect());
                columns.push(curve.iter().map(|p| p.y).collect());
                lines_x.push((label.to_string(), columns[columns.len() - 2].clone()));
                lines_y.push((label.to_string(), columns[columns.len() - 1].clone()));
            }
            let out = pick(&paths.out, output("centroids.csv"));
            ensure_parent(&out)?;
            let rows: Vec<Vec<f64>> = (0..series.len()).map(|i| columns.iter().map(|c| c[i]).collect()).collect();
            let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
            io::write_table_csv(&out, &header_refs, &rows)?;
            for (axis, lines) in [("x", lines_x), ("y", lines_y)] {
                let series: Vec<(&str, Vec<[f64; 2]>)> = lines
                    .iter()
                    .map(|(l, v)| (l.as_str(), v.iter().enumerate().map(|(i, y)| [(i + 1) as f64, *y]).collect()))
                    .collect();
                let path = out.with_file_name(format!("{}_{axis}.svg", stem(&out)));
                fs::write(
                    path,
                    svg::line_svg(&series, &format!("mean {axis} per frame"), "frame", &format!("mean {axis}")),
                )?;
            }
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn read_series(cfg: &PipelineConfig, dir: &Path) -> Result<SeriesFrameSet> {
    io::read_series_dir(dir, cfg.simulation.minutes_per_frame)
        .with_context(|| format!("reading series from {}", dir.display()))
}

fn load_ae(path: &Path) -> Result<(ParamStore, AutoencoderMeta)> {
    Ok(pipeline::load_model(path)?)
}

/// Writes `<stem>_loss.csv` and `<stem>_loss.svg` next to a checkpoint.
fn write_loss(path: &Path, trace: &LossTrace, title: &str) -> Result<()> {
    let rows: Vec<Vec<f64>> = trace
        .epoch_means
        .iter()
        .enumerate()
        .map(|(i, v)| vec![(i + 1) as f64, *v])
        .collect();
    let loss_csv = path.with_file_name(format!("{}_loss.csv", stem(path)));
    io::write_table_csv(&loss_csv, &["epoch", "mean_loss"], &rows)?;
    let points: Vec<[f64; 2]> = rows.iter().map(|r| [r[0], r[1]]).collect();
    fs::write(
        loss_csv.with_extension("svg"),
        svg::line_svg(&[("mean loss", points)], title, "epoch", "loss"),
    )?;
    Ok(())
}

fn alignment_svg(seq: &AlignmentSequence, truth: Option<&[f64]>) -> String {
    let curve = |v: &[f64]| v.iter().enumerate().map(|(i, y)| [(i + 1) as f64, *y]).collect::<Vec<_>>();
    let mut lines = vec![("raw", curve(&seq.raw)), ("monotone", curve(&seq.postprocessed))];
    if let Some(t) = truth {
        lines.push(("ground truth", curve(t)));
    }
    svg::line_svg(&lines, "alignment", "query frame", "reference frame")
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Name of the containing directory, else the file stem.
fn label_of(path: &Path) -> String {
    match path.parent().and_then(Path::file_name) {
        Some(dir) if stem(path) == "alignment" => dir.to_string_lossy().into_owned(),
        _ => stem(path),
    }
}

fn format_table(rows: &[(String, f64, f64)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(7);
    let mut s = format!("{:<width$}  {:>10}  {:>10}\n", "warp", "raw (min)", "post (min)");
    for (label, raw, post) in rows {
        s.push_str(&format!("{label:<width$}  {raw:>10.2}  {post:>10.2}\n"));
    }
    if rows.len() > 1 {
        let n = rows.len() as f64;
        let raw = rows.iter().map(|r| r.1).sum::<f64>() / n;
        let post = rows.iter().map(|r| r.2).sum::<f64>() / n;
        s.push_str(&format!("{:<width$}  {raw:>10.2}  {post:>10.2}\n", "average"));
    }
    s
}
