//! Command-line driver: data synthesis, training, insertion and evaluation.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use vins::dataio::{read_dataset, sample_placement, write_dataset, VideoClip};
use vins::evaluation::{
    detector_matches, insertion_ois, render_baseline, train_window_detector, write_report,
    Compositor, Detector, EvalSummary, GroundTruthDetector, SampleRecord,
};
use vins::inference::{
    plan_insertions, render_insertion, write_composite, CompositeResult, InsertionRequest,
};
use vins::models::checkpoint::load_bundle;
use vins::models::{ModelBundle, ModelConfig};
use vins::training::{load_checkpoint, save_checkpoint, train, Stage, TrainState};

pub use config::{desk_model, RunConfig};

/// Environment variable naming the output root when `--out` is not given.
pub const OUT_DIR_ENV: &str = "VINS_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "vins",
    about = "Insert tracked objects from one video into another"
)]
pub struct Cli {
    /// Seed for every random choice; overrides the seeds in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: $VINS_OUT_DIR, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic sprite dataset.
    SynthData,
    /// Train the single-frame stage (or an image-only baseline).
    TrainImage(TrainArgs),
    /// Train the video stage, optionally starting from an image checkpoint.
    TrainVideo(VideoArgs),
    /// Render one insertion with a trained model.
    Insert(InsertArgs),
    /// Object insertion score over held-out insertions.
    EvalOis(EvalArgs),
    /// Detector recall over held-out insertions.
    EvalRecall(RecallArgs),
    /// Render one insertion with a non-learned compositor.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Continue from a training checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VideoArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Image-stage checkpoint to initialize the shared networks from.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InsertArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct RendererArgs {
    /// Trained model checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Non-learned compositor: copy-paste or poisson.
    #[arg(long)]
    compositor: Option<Compositor>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    renderer: RendererArgs,
}

#[derive(Debug, Args)]
struct RecallArgs {
    #[command(flatten)]
    eval: EvalArgs,
    /// Echo the inserted regions instead of training a detector.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    compositor: Compositor,
}

struct RunContext {
    cfg: RunConfig,
    out: PathBuf,
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .try_init();
    match execute(cli) {
        Ok(summary) => {
            println!("{}", summary);
            0
        }
        Err(e) => {
            eprintln!("error: {:#}", e);
            1
        }
    }
}

fn execute(cli: Cli) -> anyhow::Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let out = cli
        .out
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ctx = RunContext { cfg, out };
    match cli.command {
        Command::SynthData => synth_data(&ctx),
        Command::TrainImage(a) => train_stage(&ctx, &a, None, Stage::Image),
        Command::TrainVideo(a) => train_stage(&ctx, &a.train, a.init.as_deref(), Stage::Video),
        Command::Insert(a) => insert(&ctx, &a),
        Command::EvalOis(a) => eval_ois(&ctx, &a),
        Command::EvalRecall(a) => eval_recall(&ctx, &a),
        Command::Baseline(a) => baseline(&ctx, &a),
    }
}

fn synth_data(ctx: &RunContext) -> anyhow::Result<String> {
    let clips = vins::dataio::generate_sprite_dataset(&ctx.cfg.synth)?;
    write_dataset(&clips, &ctx.out)?;
    Ok(format!(
        "synth-data: {} videos of {} frames ({}x{}) -> {}",
        clips.len(),
        ctx.cfg.synth.n_frames,
        ctx.cfg.synth.frame_height,
        ctx.cfg.synth.frame_width,
        ctx.out.display()
    ))
}

/// Training and held-out videos.
fn split(ctx: &RunContext, data: &Path) -> anyhow::Result<(Vec<VideoClip>, Vec<VideoClip>)> {
    let mut clips = read_dataset(data)?;
    let holdout = ctx.cfg.data.holdout;
    if holdout >= clips.len() {
        bail!(
            "data.holdout = {} leaves no training videos out of {}",
            holdout,
            clips.len()
        );
    }
    let test = clips.split_off(clips.len() - holdout);
    Ok((clips, test))
}

fn train_stage(
    ctx: &RunContext,
    args: &TrainArgs,
    init: Option<&Path>,
    stage: Stage,
) -> anyhow::Result<String> {
    let (train_clips, _) = split(ctx, &args.data)?;
    let tc = ctx.cfg.train_config();
    let model = ctx.cfg.model();
    let config = match stage {
        Stage::Image => ModelConfig {
            generator: model.generator.image_variant(),
            ..model
        },
        Stage::Video => model,
    };
    let mut state = match (&args.resume, init) {
        (Some(path), _) => load_checkpoint(path, Some(&config))?.0,
        (None, Some(image)) => {
            let img = load_bundle(image, None)?;
            let bundle = ModelBundle::from_image_bundle(&img, config.generator.clone(), tc.seed)?;
            TrainState::new(bundle, tc.seed)
        }
        (None, None) => TrainState::new(ModelBundle::new(config, tc.seed)?, tc.seed),
    };
    let (name, log_name) = match stage {
        Stage::Image => ("image.ckpt", "train_image.jsonl"),
        Stage::Video => ("video.ckpt", "train_video.jsonl"),
    };
    let log_path = ctx.out.join(log_name);
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(args.resume.is_some())
        .write(true)
        .truncate(args.resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let last = train(&mut state, &train_clips, stage, &tc, &mut log)?;
    log.flush()?;
    let ckpt = ctx.out.join(name);
    save_checkpoint(&state, &tc, &ckpt)?;
    let label = if stage == Stage::Image {
        "train-image"
    } else {
        "train-video"
    };
    Ok(match last {
        Some(r) => format!(
            "{}: {} at step {}, g {:.4}, d {:.4} -> {}",
            label,
            state.bundle.config.method.name(),
            state.step(),
            r.g.total,
            r.d.total,
            ckpt.display()
        ),
        None => format!(
            "{}: already at step {} -> {}",
            label,
            state.step(),
            ckpt.display()
        ),
    })
}

fn find<'a>(clips: &'a [VideoClip], name: &str) -> anyhow::Result<&'a VideoClip> {
    clips
        .iter()
        .find(|c| c.name == name)
        .with_context(|| format!("dataset has no video `{}`", name))
}

fn insertion_request(
    ctx: &RunContext,
    clips: &[VideoClip],
    patch: vins::dataio::PatchSpec,
) -> anyhow::Result<(usize, usize, InsertionRequest)> {
    let ic = &ctx.cfg.insert;
    let src = find(clips, &ic.source)?;
    let tgt = find(clips, &ic.target)?;
    let placement = match ic.placement {
        Some(p) => p,
        None => {
            let reference = tgt.median_object_height().with_context(|| {
                format!("video `{}` has no objects to size a placement by", tgt.name)
            })?;
            sample_placement(&tgt.frames, &tgt.roi, reference, patch, ctx.cfg.eval.seed)?
        }
    };
    let mut req = InsertionRequest::new(ic.object_id, placement, (ic.start, ic.end));
    req.static_placement = ic.static_placement;
    req.feather_px = ic.feather_px;
    req.allow_untrained = ic.allow_untrained;
    let index = |c: &VideoClip| {
        clips
            .iter()
            .position(|x| x.name == c.name)
            .expect("found above")
    };
    Ok((index(src), index(tgt), req))
}

fn insert(ctx: &RunContext, args: &InsertArgs) -> anyhow::Result<String> {
    let clips = read_dataset(&args.data)?;
    let bundle = load_bundle(&args.checkpoint, None)?;
    let (s, t, req) = insertion_request(ctx, &clips, bundle.config.patch())?;
    let res = render_insertion(&bundle, &clips[s], &clips[t].frames, &req)?;
    let dir = ctx.out.join("insert");
    write_composite(&res, &dir)?;
    Ok(summary_of_render("insert", &res, &dir))
}

fn baseline(ctx: &RunContext, args: &BaselineArgs) -> anyhow::Result<String> {
    let clips = read_dataset(&args.data)?;
    let patch = ctx.cfg.model().patch();
    let (s, t, req) = insertion_request(ctx, &clips, patch)?;
    let res = render_baseline(args.compositor, patch, &clips[s], &clips[t].frames, &req)?;
    let dir = ctx.out.join("baseline");
    write_composite(&res, &dir)?;
    Ok(summary_of_render("baseline", &res, &dir))
}

fn summary_of_render(label: &str, res: &CompositeResult, dir: &Path) -> String {
    format!(
        "{}: {} frames{} -> {}",
        label,
        res.video.len(),
        if res.truncated { " (truncated)" } else { "" },
        dir.display()
    )
}

/// Renders the planned held-out insertions; returns the method label too.
fn render_held_out(
    ctx: &RunContext,
    args: &EvalArgs,
) -> anyhow::Result<(String, Vec<VideoClip>, Vec<CompositeResult>)> {
    let (train_clips, test) = split(ctx, &args.data)?;
    let ec = &ctx.cfg.eval;
    let (label, bundle) = match (&args.renderer.checkpoint, args.renderer.compositor) {
        (Some(path), _) => {
            let b = load_bundle(path, None)?;
            (b.config.method.name().to_string(), Some(b))
        }
        (None, Some(c)) => (
            match c {
                Compositor::CopyPaste => "copy_paste".to_string(),
                Compositor::Poisson => "poisson".to_string(),
            },
            None,
        ),
        (None, None) => bail!("pass --checkpoint or --compositor"),
    };
    let patch = bundle
        .as_ref()
        .map(|b| b.config.patch())
        .unwrap_or_else(|| ctx.cfg.model().patch());
    let plans = plan_insertions(&test, ec.n_insertions, ec.frames, patch, ec.seed)?;
    let results = plans
        .iter()
        .map(|p| {
            let (src, tgt) = (&test[p.source], &test[p.target].frames);
            match (&bundle, args.renderer.compositor) {
                (Some(b), _) => render_insertion(b, src, tgt, &p.request),
                (None, Some(c)) => render_baseline(c, patch, src, tgt, &p.request),
                (None, None) => unreachable!("checked above"),
            }
        })
        .collect::<vins::Result<Vec<_>>>()?;
    Ok((label, train_clips, results))
}

fn records(
    results: &[CompositeResult],
    matched: Option<&[Vec<bool>]>,
) -> anyhow::Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for (i, r) in results.iter().enumerate() {
        for (k, rep) in insertion_ois(r)?.into_iter().enumerate() {
            let m = matched.map(|m| m[i][k]);
            out.push(SampleRecord::new(format!("{}/{}", i, k), rep, m));
        }
    }
    Ok(out)
}

fn write_records(path: &Path, recs: &[SampleRecord], summary: &EvalSummary) -> anyhow::Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_report(recs, summary, &mut f)?;
    Ok(())
}

fn eval_ois(ctx: &RunContext, args: &EvalArgs) -> anyhow::Result<String> {
    let (label, _, results) = render_held_out(ctx, args)?;
    let recs = records(&results, None)?;
    let summary = EvalSummary::from_records(&label, &recs);
    let path = ctx.out.join("ois_report.jsonl");
    write_records(&path, &recs, &summary)?;
    Ok(format!(
        "eval-ois: {} on {} frames: P {:.4} R {:.4} OIS {:.4} -> {}",
        label,
        summary.samples,
        summary.precision,
        summary.recall,
        summary.ois,
        path.display()
    ))
}

fn eval_recall(ctx: &RunContext, args: &RecallArgs) -> anyhow::Result<String> {
    let (label, train_clips, results) = render_held_out(ctx, &args.eval)?;
    let detector: Box<dyn Detector> = if args.oracle {
        Box::new(GroundTruthDetector::from_results(&results))
    } else {
        Box::new(train_window_detector(&train_clips, &ctx.cfg.detector)?)
    };
    let matched = detector_matches(&results, detector.as_ref(), ctx.cfg.eval.iou_threshold)?;
    let recs = records(&results, Some(&matched))?;
    let summary = EvalSummary::from_records(&label, &recs);
    let path = ctx.out.join("recall_report.jsonl");
    write_records(&path, &recs, &summary)?;
    Ok(format!(
        "eval-recall: {} on {} frames at IoU {}: recall {:.4} -> {}",
        label,
        summary.samples,
        ctx.cfg.eval.iou_threshold,
        summary.detector_recall.unwrap_or(0.0),
        path.display()
    ))
}
