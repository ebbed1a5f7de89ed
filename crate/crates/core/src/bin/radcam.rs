use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use radcam::calibration::{reprojection_errors, solve_dlt, solve_robust};
use radcam::io::{self, CalibrationFile, OutputBatch};
use radcam::pipeline::{self, PipelineConfig, PipelineSettings};
use radcam::simulator;
use radcam::tracking::TrackStatus;

#[derive(Parser)]
#[command(name = "radcam", version, about = "Offline radar/camera calibration, fusion and tracking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate radar/detection streams, ground truth and correspondences from a scene file
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, value_name = "DIR")]
        plot_data: Option<PathBuf>,
    },
    /// Estimate the radar-to-pixel projection from correspondences
    Calibrate {
        #[arg(long)]
        correspondences: PathBuf,
        #[arg(long)]
        robust: bool,
        #[arg(long, default_value_t = 2.0)]
        threshold_px: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2000)]
        max_iters: usize,
        /// RFC 3339 creation time; defaults to SOURCE_DATE_EPOCH, then the clock
        #[arg(long)]
        created_at: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        plot_data: Option<PathBuf>,
    },
    /// Associate camera boxes with radar clusters
    Fuse(FuseArgs),
    /// Fuse, then track and run the spoof checks
    Track(FuseArgs),
    /// Score pipeline reports against a ground-truth log
    Eval {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_name = "DIR")]
        plot_data: Option<PathBuf>,
    },
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    radar: PathBuf,
    #[arg(long)]
    detections: PathBuf,
    /// Pipeline settings document; every field optional
    #[arg(long)]
    config: Option<PathBuf>,
    /// Class size models document; overrides the settings' models
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the run summary here
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    plot_data: Option<PathBuf>,
}

type CliResult = Result<(), String>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate {
            scene,
            out_dir,
            plot_data,
        } => simulate(&scene, &out_dir, plot_data.as_deref()),
        Command::Calibrate {
            correspondences,
            robust,
            threshold_px,
            seed,
            max_iters,
            created_at,
            out,
            plot_data,
        } => calibrate(
            &correspondences,
            robust.then_some((threshold_px, max_iters, seed)),
            created_at,
            &out,
            plot_data.as_deref(),
        ),
        Command::Fuse(args) => fuse(&args, false),
        Command::Track(args) => fuse(&args, true),
        Command::Eval {
            reports,
            truth,
            out,
            plot_data,
        } => eval(&reports, &truth, &out, plot_data.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::FAILURE
        }
    }
}

fn simulate(scene_path: &Path, out_dir: &Path, plot_dir: Option<&Path>) -> CliResult {
    let scene_file = io::parse_scene(&read(scene_path)?).map_err(|e| format!("{}: {e}", scene_path.display()))?;
    let scene = &scene_file.scene;
    let sim = simulator::generate(scene).map_err(|e| e.to_string())?;
    for w in &sim.warnings {
        eprintln!("warning: {w}");
    }
    let corrs = simulator::generate_correspondences(scene, scene_file.calibration_points).map_err(|e| e.to_string())?;

    std::fs::create_dir_all(out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let mut batch = OutputBatch::new();
    stage(&mut batch, &out_dir.join("radar.jsonl"), &io::write_radar_stream(&sim.radar))?;
    stage(&mut batch, &out_dir.join("detections.jsonl"), &io::write_detection_stream(&sim.detections))?;
    stage(&mut batch, &out_dir.join("truth.jsonl"), &io::write_truth(&sim.truth))?;
    stage(&mut batch, &out_dir.join("correspondences.jsonl"), &io::write_correspondences(&corrs))?;
    if let Some(dir) = plot_dir {
        let mut csv = String::from("t_us,point_index,range_m,doppler_mps,snr_db\n");
        for f in &sim.radar {
            for (i, p) in f.points.iter().enumerate() {
                let _ = writeln!(csv, "{},{},{},{},{}", f.t_us, i, p.range, p.doppler, p.snr);
            }
        }
        stage_plot(&mut batch, dir, "radar_range_profile.csv", &csv)?;
    }
    commit(batch)
}

fn calibrate(
    corr_path: &Path,
    robust: Option<(f64, usize, u64)>,
    created_at: Option<String>,
    out: &Path,
    plot_dir: Option<&Path>,
) -> CliResult {
    let corrs = io::parse_correspondences(&read(corr_path)?).map_err(|e| format!("{}: {e}", corr_path.display()))?;
    let result = match robust {
        Some((threshold, iters, seed)) => solve_robust(&corrs, threshold, iters, seed),
        None => solve_dlt(&corrs),
    }
    .map_err(|e| e.to_string())?;
    let created_at = match created_at {
        Some(s) => s,
        None => creation_time()?,
    };

    let mut batch = OutputBatch::new();
    stage(&mut batch, out, &io::write_calibration(&CalibrationFile::from_result(&result, created_at)))?;
    if let Some(dir) = plot_dir {
        let errors = reprojection_errors(&result.matrix, &corrs).map_err(|e| e.to_string())?;
        let mut csv = String::from("index,error_px,inlier\n");
        for (i, (e, inlier)) in errors.iter().zip(&result.inlier_flags).enumerate() {
            let _ = writeln!(csv, "{i},{e},{}", u8::from(*inlier));
        }
        stage_plot(&mut batch, dir, "reprojection_errors.csv", &csv)?;
    }
    commit(batch)?;
    eprintln!(
        "rms reprojection error {:.4} px over {} inliers of {}",
        result.rms_reprojection_error,
        result.inlier_count(),
        corrs.len()
    );
    Ok(())
}

fn fuse(args: &FuseArgs, full: bool) -> CliResult {
    let calib = io::parse_calibration(&read(&args.calib)?).map_err(|e| format!("{}: {e}", args.calib.display()))?;
    let radar = io::parse_radar_stream(&read(&args.radar)?).map_err(|e| format!("{}: {e}", args.radar.display()))?;
    let detections =
        io::parse_detection_stream(&read(&args.detections)?).map_err(|e| format!("{}: {e}", args.detections.display()))?;
    let mut settings = match &args.config {
        Some(path) => io::parse_settings(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?,
        None => PipelineSettings::default(),
    };
    if let Some(path) = &args.models {
        settings.class_models = io::parse_class_models(&read(path)?).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    settings.tracking_enabled = full;
    settings.consistency_enabled = full;

    let cfg = PipelineConfig {
        settings,
        calibration: calib.matrix,
    };
    let output = pipeline::run(&cfg, &radar, &detections).map_err(|e| e.to_string())?;

    let mut batch = OutputBatch::new();
    stage(&mut batch, &args.out, &io::write_reports(&output.reports))?;
    if let Some(path) = &args.summary {
        let text = serde_json::to_string_pretty(&output.summary).map_err(|e| e.to_string())? + "\n";
        stage(&mut batch, path, &text)?;
    }
    if let Some(dir) = &args.plot_data {
        let mut csv = String::from("t_us,track_id,status,x_m,y_m,z_m,vx_mps,vy_mps,vz_mps\n");
        for r in &output.reports {
            for t in &r.tracks {
                let (p, v) = (&t.state.position, &t.state.velocity);
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{},{}",
                    r.t_us,
                    t.id,
                    status_name(t.status),
                    p.x,
                    p.y,
                    p.z,
                    v.x,
                    v.y,
                    v.z
                );
            }
        }
        stage_plot(&mut batch, dir, "track_positions.csv", &csv)?;
    }
    commit(batch)?;

    let s = &output.summary;
    eprintln!(
        "{} frames, {} detections ({} with radar), {} dropped detection frames, {} confirmed tracks, {} no-radar flags, {} size/range flags",
        s.frames,
        s.detections,
        s.fused_with_radar,
        s.dropped_detection_frames,
        s.distinct_confirmed_tracks,
        s.no_radar_return_flags,
        s.size_range_mismatch_flags
    );
    Ok(())
}

fn eval(reports_path: &Path, truth_path: &Path, out: &Path, plot_dir: Option<&Path>) -> CliResult {
    let reports = io::parse_reports(&read(reports_path)?).map_err(|e| format!("{}: {e}", reports_path.display()))?;
    let truth = io::parse_truth(&read(truth_path)?).map_err(|e| format!("{}: {e}", truth_path.display()))?;
    let metrics = pipeline::evaluate(&reports, &truth);

    let mut batch = OutputBatch::new();
    stage(&mut batch, out, &io::write_metrics(&metrics))?;
    if let Some(dir) = plot_dir {
        let mut csv = String::from("t_us,track_id,nearest_object_id,error_m\n");
        for r in &reports {
            let Some(frame) = truth
                .iter()
                .find(|f| f.t_us == r.t_us && f.stream == simulator::TruthStream::Detection)
            else {
                continue;
            };
            for t in r.tracks.iter().filter(|t| t.status == TrackStatus::Confirmed) {
                let p = t.state.position;
                let nearest = frame
                    .objects
                    .iter()
                    .filter(|o| !o.spoofed)
                    .map(|o| {
                        let d = ((o.position[0] - p.x).powi(2) + (o.position[1] - p.y).powi(2) + (o.position[2] - p.z).powi(2)).sqrt();
                        (o.id, d)
                    })
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((id, d)) = nearest {
                    let _ = writeln!(csv, "{},{},{},{}", r.t_us, t.id, id, d);
                }
            }
        }
        stage_plot(&mut batch, dir, "error_vs_time.csv", &csv)?;
    }
    commit(batch)?;

    let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    eprintln!(
        "spoof precision {} recall {}, identity consistency {}, position RMSE {} m",
        show(metrics.spoof_precision),
        show(metrics.spoof_recall),
        show(metrics.identity_consistency),
        show(metrics.position_rmse_m)
    );
    Ok(())
}

fn status_name(s: TrackStatus) -> &'static str {
    match s {
        TrackStatus::Tentative => "tentative",
        TrackStatus::Confirmed => "confirmed",
        TrackStatus::Lost => "lost",
    }
}

fn creation_time() -> Result<String, String> {
    let now = match std::env::var("SOURCE_DATE_EPOCH") {
        Ok(epoch) => {
            let secs: i64 = epoch
                .trim()
                .parse()
                .map_err(|_| format!("SOURCE_DATE_EPOCH `{epoch}` is not an integer"))?;
            chrono::DateTime::from_timestamp(secs, 0).ok_or_else(|| format!("SOURCE_DATE_EPOCH {secs} out of range"))?
        }
        Err(_) => chrono::Utc::now(),
    };
    Ok(now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true))
}

fn read(path: &Path) -> Result<String, String> {
    io::read_text(path).map_err(|e| e.to_string())
}

fn stage(batch: &mut OutputBatch, path: &Path, contents: &str) -> CliResult {
    batch.stage(path, contents).map_err(|e| e.to_string())
}

fn stage_plot(batch: &mut OutputBatch, dir: &Path, name: &str, contents: &str) -> CliResult {
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    stage(batch, &dir.join(name), contents)
}

fn commit(batch: OutputBatch) -> CliResult {
    batch.commit().map_err(|e| e.to_string())
}
