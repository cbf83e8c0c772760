//! Command-line surface: composable single-step subcommands plus the
//! end-to-end cross-validation driver. Diagnostics go to stderr; file
//! and stdout output is machine-readable and deterministic for fixed
//! inputs and seeds.

use std::collections::BTreeSet;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use lnseg_core::cv::{run_cross_validation, CvConfig, ModelSpec, PtSelection};
use lnseg_core::eval::{evaluate_cohort, CohortItem, EvalOptions, PtChoice};
use lnseg_core::instances::{
    annotation_instances, cluster_ground_truth, connected_components, threshold, Connectivity,
};
use lnseg_core::phantom::{generate_phantom, synth_probability, Degradation, PhantomSpec};
use lnseg_core::pipeline::{
    ensemble_max_all, extract_slabs, preprocess, restore_original_space, stitch_slabs,
    PipelineMode, PreprocessConfig, SlabSpec,
};
use lnseg_core::station::{Laterality, Station};
use crate::bench::{benchmark_timing, StageStats, TimingReport};
use crate::manifest::{FsCohort, Manifest, PatientEntry};
use crate::report::{write_cv_report, write_cv_tables, write_report, ReportFormat};
use crate::sidecar::{
    instance_export, read_geometry_record, read_slab_set, write_annotation,
    write_geometry_record, write_json, write_slab_set,
};
use crate::{nifti, Result, ToolError};

const VERSION_LINE: &str = concat!(env!("CARGO_PKG_VERSION"), "\nformats: ");

#[derive(Parser)]
#[command(
    name = "lnseg",
    about = "Volumetric lymph-node segmentation pipeline and evaluation toolkit",
    version = env!("CARGO_PKG_VERSION"),
    disable_version_flag = true
)]
pub struct Cli {
    /// Print the toolkit and format-schema versions.
    #[arg(long, short = 'V', global = true)]
    version: bool,
    /// Worker threads for patient-level parallelism (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Resample, lung-crop, resize, and intensity-normalize a CT volume.
    Preprocess(PreprocessArgs),
    /// Decompose a preprocessed volume into overlapping z-slabs.
    Slab(SlabArgs),
    /// Fuse (externally predicted) slab probability maps back together.
    Stitch(StitchArgs),
    /// Pixel-wise maximum of two or more probability maps.
    Ensemble(EnsembleArgs),
    /// Extract labeled instances from a probability map or ground truth.
    Instances(InstancesArgs),
    /// Evaluate one model over a cohort manifest.
    Evaluate(EvaluateArgs),
    /// Patient-level k-fold cross-validation over a cohort manifest.
    Crossval(CrossvalArgs),
    /// Generate synthetic phantom patients with known ground truth.
    Phantom(PhantomArgs),
    /// Time the pipeline stages over one CT volume.
    Bench(BenchArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    ct: PathBuf,
    /// Binary lung mask sharing the CT geometry; without it a -320 HU
    /// threshold fallback locates the lungs.
    #[arg(long)]
    lung_mask: Option<PathBuf>,
    /// Working resolution: slab (256x192, depth kept) or fullvol
    /// (128x128x144).
    #[arg(long, value_parser = parse_mode, default_value = "fullvol")]
    mode: PipelineMode,
    #[arg(long)]
    out_volume: PathBuf,
    /// Geometry record needed later to restore predictions to the
    /// original space.
    #[arg(long)]
    out_record: PathBuf,
}

#[derive(Args)]
struct SlabArgs {
    #[arg(long)]
    volume: PathBuf,
    #[arg(long, default_value_t = 32)]
    slab_size: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct StitchArgs {
    /// slabs.json written by the slab subcommand.
    #[arg(long)]
    meta: PathBuf,
    /// Directory holding predicted slab volumes under the same file
    /// names (default: the metadata's directory).
    #[arg(long)]
    pred_dir: Option<PathBuf>,
    /// Geometry record from preprocess; when given, the stitched map is
    /// restored to the original patient space before writing.
    #[arg(long)]
    restore_record: Option<PathBuf>,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct EnsembleArgs {
    /// Probability maps to fuse (two or more).
    #[arg(required = true, num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Geometry record from preprocess; when given, the fused map is
    /// restored to the original patient space before writing.
    #[arg(long)]
    restore_record: Option<PathBuf>,
    #[arg(long, short = 'o')]
    out: PathBuf,
}

#[derive(Args)]
struct InstancesArgs {
    /// Probability map input (requires --pt).
    #[arg(long, conflicts_with_all = ["labels", "stations"])]
    prob: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    pt: f64,
    /// Ground-truth label volume (requires --stations).
    #[arg(long, requires = "stations")]
    labels: Option<PathBuf>,
    /// Station sidecar for --labels.
    #[arg(long)]
    stations: Option<PathBuf>,
    /// Merge touching ground-truth labels into clusters.
    #[arg(long)]
    cluster: bool,
    #[arg(long, default_value_t = 26, value_parser = parse_connectivity_arg)]
    connectivity: u8,
    #[arg(long)]
    out: PathBuf,
    /// Also write the clustered label volume.
    #[arg(long, requires = "cluster")]
    out_labels: Option<PathBuf>,
    /// Also write the clustered station sidecar.
    #[arg(long, requires = "cluster")]
    out_stations: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct EvalCommonArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 26, value_parser = parse_connectivity_arg)]
    connectivity: u8,
    /// Pairs with Dice at or below this value are rejected.
    #[arg(long, default_value_t = 0.0)]
    min_pair_dice: f64,
    /// Unmatched detections below this voxel count do not count as
    /// false positives.
    #[arg(long, default_value_t = 0)]
    fp_min_voxels: usize,
    /// Evaluate against raw labels instead of clustered ground truth.
    #[arg(long)]
    no_cluster_gt: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: EvalCommonArgs,
    /// Model configuration: a probability-map name from the manifest,
    /// or "a+b" to fuse several maps with the pixel-wise maximum.
    #[arg(long)]
    model: String,
    /// Fixed threshold in [0,1], or "sweep" for the ten-threshold sweep.
    #[arg(long, default_value = "sweep")]
    pt: String,
    #[arg(long)]
    out: PathBuf,
    /// Format of --out: json or csv.
    #[arg(long, default_value = "json")]
    format: String,
    /// Additional CSV report (one row per patient and stratum).
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    common: EvalCommonArgs,
    /// Model configurations, repeatable: "sw32" or "ens=sw32+fv".
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// "sweep" (per fold), "sweep-global", or a fixed threshold.
    #[arg(long, default_value = "sweep")]
    pt: String,
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-model fold/strata/station CSV tables.
    #[arg(long)]
    csv_dir: Option<PathBuf>,
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom spec JSON; see --template.
    #[arg(long, required_unless_present = "template")]
    spec: Option<PathBuf>,
    /// Write a starter spec to this path and exit.
    #[arg(long)]
    template: Option<PathBuf>,
    #[arg(long, required_unless_present = "template")]
    out: Option<PathBuf>,
    /// Patients to generate; above one, per-patient subdirectories and
    /// a manifest are written.
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Also synthesize a probability map per patient.
    #[arg(long)]
    prob: bool,
    /// Ground-truth labels dropped from the probability map.
    #[arg(long, value_delimiter = ',')]
    drop_labels: Vec<u16>,
    /// Erosion iterations applied to kept nodes.
    #[arg(long, default_value_t = 0)]
    erode: usize,
    /// False-positive blobs injected per patient.
    #[arg(long, default_value_t = 0)]
    fp_blobs: usize,
    #[arg(long, default_value_t = 4.0)]
    fp_blob_radius_mm: f64,
    /// Gaussian blur sigma in voxels (0 disables).
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// CT volume to time.
    #[arg(long, conflicts_with = "synthetic")]
    ct: Option<PathBuf>,
    /// Generate a synthetic CT of the given dims instead, e.g.
    /// 512x512x767.
    #[arg(long, value_parser = parse_dims)]
    synthetic: Option<[usize; 3]>,
    /// Spacing for --synthetic, e.g. 0.68x0.68x0.5.
    #[arg(long, value_parser = parse_spacing, default_value = "0.68x0.68x0.5")]
    spacing: [f64; 3],
    #[arg(long)]
    lung_mask: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 32)]
    slab_size: usize,
    #[arg(long, default_value_t = 8)]
    stride: usize,
    /// Also write the timing report as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> std::result::Result<PipelineMode, String> {
    match s {
        "slab" => Ok(PipelineMode::Slab),
        "fullvol" | "full-volume" | "fv" => Ok(PipelineMode::FullVolume),
        other => Err(format!("unknown mode {other:?}; expected slab or fullvol")),
    }
}

fn parse_connectivity_arg(s: &str) -> std::result::Result<u8, String> {
    let n: u8 = s.parse().map_err(|e| format!("{e}"))?;
    Connectivity::from_neighbor_count(n)
        .map(|_| n)
        .map_err(|e| e.to_string())
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split(['x', 'X', ',']).collect();
    if parts.len() != 3 {
        return Err(format!("expected three x-separated values, got {s:?}"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.trim().parse::<T>().map_err(|_| format!("bad value {p:?}"))?);
    }
    Ok([
        out.remove(0),
        out.remove(0),
        out.remove(0),
    ])
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    parse_triple(s)
}

fn parse_spacing(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_triple(s)
}

fn parse_pt_choice(s: &str) -> Result<PtChoice> {
    if s == "sweep" {
        return Ok(PtChoice::Sweep);
    }
    let pt: f64 = s
        .parse()
        .map_err(|_| ToolError::Invalid(format!("--pt expects sweep or a number, got {s:?}")))?;
    Ok(PtChoice::Fixed(pt))
}

fn parse_pt_selection(s: &str) -> Result<PtSelection> {
    match s {
        "sweep" => Ok(PtSelection::SweepPerFold),
        "sweep-global" => Ok(PtSelection::SweepGlobal),
        other => {
            let pt: f64 = other.parse().map_err(|_| {
                ToolError::Invalid(format!(
                    "--pt expects sweep, sweep-global, or a number, got {other:?}"
                ))
            })?;
            Ok(PtSelection::Fixed(pt))
        }
    }
}

/// "name" or "name=member1+member2".
fn parse_model_spec(s: &str) -> ModelSpec {
    match s.split_once('=') {
        Some((name, members)) => ModelSpec {
            name: name.trim().to_string(),
            members: members.split('+').map(|m| m.trim().to_string()).collect(),
        },
        None => {
            let members: Vec<String> = s.split('+').map(|m| m.trim().to_string()).collect();
            ModelSpec {
                name: s.trim().to_string(),
                members,
            }
        }
    }
}

pub fn run() -> Result<i32> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e)
            if matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            ) =>
        {
            print!("{e}");
            return Ok(0);
        }
        Err(e) => {
            eprint!("{e}");
            return Ok(1);
        }
    };
    if cli.version {
        println!("lnseg {}{}", VERSION_LINE, crate::FORMAT_VERSIONS);
        return Ok(0);
    }
    let Some(command) = cli.command else {
        eprintln!("no subcommand given; see lnseg --help");
        return Ok(1);
    };
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ToolError::Invalid("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| ToolError::Invalid(format!("thread pool: {e}")))?;
    }
    dispatch(command)?;
    Ok(0)
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Slab(args) => cmd_slab(args),
        Command::Stitch(args) => cmd_stitch(args),
        Command::Ensemble(args) => cmd_ensemble(args),
        Command::Instances(args) => cmd_instances(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Crossval(args) => cmd_crossval(args),
        Command::Phantom(args) => cmd_phantom(args),
        Command::Bench(args) => cmd_bench(args),
    }
}

fn cmd_preprocess(args: PreprocessArgs) -> Result<()> {
    let ct = nifti::read_volume(&args.ct)?;
    let mask = args.lung_mask.as_deref().map(nifti::read_volume).transpose()?;
    let cfg = match args.mode {
        PipelineMode::Slab => PreprocessConfig::slab(),
        PipelineMode::FullVolume => PreprocessConfig::full_volume(),
    };
    let (out, record) = preprocess(&ct, &cfg, mask.as_ref())?;
    nifti::write_volume(&out, &args.out_volume)?;
    write_geometry_record(&record, &args.out_record)?;
    eprintln!(
        "preprocessed {:?} -> {:?} ({:?})",
        ct.dims(),
        out.dims(),
        args.out_volume
    );
    Ok(())
}

fn cmd_slab(args: SlabArgs) -> Result<()> {
    let vol = nifti::read_volume(&args.volume)?;
    let spec = SlabSpec::new(args.slab_size, args.stride)?;
    let set = extract_slabs(&vol, &spec)?;
    write_slab_set(&set, &args.out_dir)?;
    eprintln!(
        "wrote {} slabs of {} slices (stride {}) to {:?}",
        set.slabs().len(),
        args.slab_size,
        args.stride,
        args.out_dir
    );
    Ok(())
}

fn cmd_stitch(args: StitchArgs) -> Result<()> {
    let set = read_slab_set(&args.meta, args.pred_dir.as_deref())?;
    let mut out = stitch_slabs(&set)?;
    if let Some(record_path) = &args.restore_record {
        let record = read_geometry_record(record_path)?;
        out = restore_original_space(&out, &record)?;
    }
    nifti::write_volume(&out, &args.out)?;
    eprintln!("stitched {} slabs -> {:?}", set.slabs().len(), args.out);
    Ok(())
}

fn cmd_ensemble(args: EnsembleArgs) -> Result<()> {
    let maps = args
        .inputs
        .iter()
        .map(|p| nifti::read_volume(p))
        .collect::<Result<Vec<_>>>()?;
    let mut fused = ensemble_max_all(&maps)?;
    if let Some(record_path) = &args.restore_record {
        let record = read_geometry_record(record_path)?;
        fused = restore_original_space(&fused, &record)?;
    }
    nifti::write_volume(&fused, &args.out)?;
    eprintln!("fused {} maps -> {:?}", maps.len(), args.out);
    Ok(())
}

fn cmd_instances(args: InstancesArgs) -> Result<()> {
    let conn = Connectivity::from_neighbor_count(args.connectivity)?;
    let set = if let Some(prob_path) = &args.prob {
        let prob = nifti::read_volume(prob_path)?;
        let bin = threshold(&prob, args.pt)?;
        connected_components(&bin, conn)?
    } else if let (Some(labels), Some(stations)) = (&args.labels, &args.stations) {
        let ann = crate::sidecar::read_annotation(labels, stations)?;
        if args.cluster {
            let (clustered, set) = cluster_ground_truth(&ann, conn)?;
            if let Some(out_labels) = &args.out_labels {
                let out_stations = args.out_stations.as_deref().ok_or_else(|| {
                    ToolError::Invalid("--out-labels requires --out-stations".into())
                })?;
                write_annotation(&clustered, out_labels, out_stations)?;
            }
            set
        } else {
            annotation_instances(&ann, conn)?
        }
    } else {
        return Err(ToolError::Invalid(
            "instances needs either --prob or --labels with --stations".into(),
        ));
    };
    write_json(&instance_export(&set), &args.out)?;
    eprintln!("{} instances -> {:?}", set.len(), args.out);
    Ok(())
}

fn eval_options(common: &EvalCommonArgs) -> Result<EvalOptions> {
    Ok(EvalOptions {
        connectivity: Connectivity::from_neighbor_count(common.connectivity)?,
        min_pair_dice: common.min_pair_dice,
        fp_min_voxels: common.fp_min_voxels,
    })
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cohort = FsCohort::open(&args.common.manifest)?;
    let opts = eval_options(&args.common)?;
    let model = parse_model_spec(&args.model);
    let pt = parse_pt_choice(&args.pt)?;
    let cluster = !args.common.no_cluster_gt;

    let ids: Vec<String> = cohort.manifest().patients.keys().cloned().collect();
    for id in &ids {
        cohort.require_roles(id, &model.members)?;
    }
    let items: Vec<CohortItem> = ids
        .par_iter()
        .map(|id| -> Result<CohortItem> {
            let ann = cohort.annotation(id)?;
            let gts = if cluster {
                cluster_ground_truth(&ann, opts.connectivity)?.1
            } else {
                annotation_instances(&ann, opts.connectivity)?
            };
            let maps = model
                .members
                .iter()
                .map(|m| {
                    use lnseg_core::cv::CohortProvider as _;
                    cohort.load_probability(id, m).map_err(ToolError::from)
                })
                .collect::<Result<Vec<_>>>()?;
            let prob = ensemble_max_all(&maps)?;
            Ok(CohortItem {
                patient_id: id.clone(),
                prob,
                gt_bin: ann.foreground(),
                gts,
            })
        })
        .collect::<Result<_>>()?;

    let report = evaluate_cohort(&items, pt, &opts)?;
    write_report(&report, &args.out, ReportFormat::parse(&args.format)?)?;
    if let Some(csv) = &args.csv {
        write_report(&report, csv, ReportFormat::Csv)?;
    }
    eprintln!(
        "evaluated {} patients at pt {} -> {:?}",
        report.patients.len(),
        report.pt,
        args.out
    );
    Ok(())
}

fn cmd_crossval(args: CrossvalArgs) -> Result<()> {
    let cohort = FsCohort::open(&args.common.manifest)?;
    let opts = eval_options(&args.common)?;
    let models: Vec<ModelSpec> = args.models.iter().map(|m| parse_model_spec(m)).collect();
    let cfg = CvConfig {
        folds: args.folds,
        seed: args.seed,
        connectivity: opts.connectivity,
        min_pair_dice: opts.min_pair_dice,
        fp_min_voxels: opts.fp_min_voxels,
        pt: parse_pt_selection(&args.pt)?,
        cluster_gt: !args.common.no_cluster_gt,
        models,
    };
    // Warm the probability-map cache in parallel; the harness itself
    // stays deterministic and fold-isolated.
    let member_names: BTreeSet<String> = cfg
        .models
        .iter()
        .flat_map(|m| m.members.iter().cloned())
        .collect();
    cohort.prefetch_probabilities(&member_names.into_iter().collect::<Vec<_>>())?;

    let report = run_cross_validation(&cohort, &cfg)?;
    write_cv_report(&report, &args.out)?;
    if let Some(dir) = &args.csv_dir {
        write_cv_tables(&report, dir)?;
    }
    eprintln!(
        "cross-validated {} models over {} folds -> {:?}",
        report.models.len(),
        report.folds,
        args.out
    );
    Ok(())
}

fn template_spec() -> PhantomSpec {
    let mut spec = PhantomSpec::thorax([96, 96, 80], [1.0; 3], 42);
    spec.noise_sigma_hu = 15.0;
    let stations = [Station::S2, Station::S4, Station::S7];
    for (i, st) in stations.into_iter().enumerate() {
        let mut set = BTreeSet::new();
        set.insert(st);
        spec.nodes.push(lnseg_core::phantom::NodeSpec {
            shape: lnseg_core::phantom::Ellipsoid {
                center_mm: [40.0 + 8.0 * i as f64, 48.0, 24.0 + 12.0 * i as f64],
                semi_axes_mm: [4.0, 3.5, 3.5],
            },
            hu: 40.0,
            stations: set,
            primary: st,
            laterality: Laterality::Unspecified,
        });
    }
    spec
}

fn cmd_phantom(args: PhantomArgs) -> Result<()> {
    if let Some(template) = &args.template {
        write_json(&template_spec(), template)?;
        eprintln!("wrote template spec to {template:?}");
        return Ok(());
    }
    let spec_path = args.spec.as_deref().expect("required unless template");
    let out_dir = args.out.as_deref().expect("required unless template");
    let base_spec: PhantomSpec = crate::sidecar::read_json(spec_path)?;
    if args.count == 0 {
        return Err(ToolError::Invalid("--count must be >= 1".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| ToolError::io(out_dir, e))?;

    let flat = args.count == 1;
    let mut manifest = Manifest {
        patients: Default::default(),
    };
    for i in 0..args.count {
        let patient = format!("p{i:03}");
        let dir = if flat {
            out_dir.to_path_buf()
        } else {
            out_dir.join(&patient)
        };
        std::fs::create_dir_all(&dir).map_err(|e| ToolError::io(&dir, e))?;
        let mut spec = base_spec.clone();
        spec.seed = base_spec.seed.wrapping_add(i as u64);
        let (ct, ann) = generate_phantom(&spec)?;
        nifti::write_volume(&ct, &dir.join("ct.nii.gz"))?;
        write_annotation(&ann, &dir.join("labels.nii.gz"), &dir.join("stations.json"))?;
        let rel = |file: &str| {
            if flat {
                file.to_string()
            } else {
                format!("{patient}/{file}")
            }
        };
        let mut entry = PatientEntry {
            ct: Some(rel("ct.nii.gz")),
            gt_labels: Some(rel("labels.nii.gz")),
            gt_stations: Some(rel("stations.json")),
            ..Default::default()
        };
        if args.prob {
            let q = Degradation {
                drop_labels: args.drop_labels.clone(),
                boundary_erosion_voxels: args.erode,
                fp_blobs: args.fp_blobs,
                fp_blob_radius_mm: args.fp_blob_radius_mm,
                blur_sigma_voxels: args.blur,
                seed: spec.seed.wrapping_add(0x5EED),
            };
            let prob = synth_probability(&ann, &q)?;
            nifti::write_volume(&prob, &dir.join("prob.nii.gz"))?;
            entry
                .prob_maps
                .insert("synthetic".to_string(), rel("prob.nii.gz"));
        }
        manifest.patients.insert(patient, entry);
    }
    manifest.write(&out_dir.join("manifest.json"))?;
    eprintln!("generated {} phantom patient(s) in {out_dir:?}", args.count);
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let spec = SlabSpec::new(args.slab_size, args.stride)?;
    let (ct, load_samples) = match (&args.ct, &args.synthetic) {
        (Some(path), None) => {
            let mut samples = Vec::with_capacity(args.repeats);
            let mut ct = None;
            for _ in 0..args.repeats.max(1) {
                let t = std::time::Instant::now();
                ct = Some(nifti::read_volume(path)?);
                samples.push(t.elapsed().as_secs_f64());
            }
            (ct.expect("read at least once"), samples)
        }
        (None, Some(dims)) => {
            let mut spec = PhantomSpec::thorax(*dims, args.spacing, 0xBE11C);
            spec.noise_sigma_hu = 0.0;
            let st = Station::S7;
            let mut set = BTreeSet::new();
            set.insert(st);
            let extent = [
                dims[0] as f64 * args.spacing[0],
                dims[1] as f64 * args.spacing[1],
                dims[2] as f64 * args.spacing[2],
            ];
            spec.nodes.push(lnseg_core::phantom::NodeSpec {
                shape: lnseg_core::phantom::Ellipsoid {
                    center_mm: [extent[0] / 2.0, extent[1] / 2.0, extent[2] / 2.0],
                    semi_axes_mm: [7.0, 6.5, 6.5],
                },
                hu: 40.0,
                stations: set,
                primary: st,
                laterality: Laterality::Unspecified,
            });
            eprintln!("generating synthetic CT {dims:?} @ {:?} mm", args.spacing);
            let (ct, _) = generate_phantom(&spec)?;
            (ct, vec![0.0; args.repeats.max(1)])
        }
        _ => {
            return Err(ToolError::Invalid(
                "bench needs exactly one of --ct or --synthetic".into(),
            ))
        }
    };
    let mask = args.lung_mask.as_deref().map(nifti::read_volume).transpose()?;
    let core_report = benchmark_timing(&ct, mask.as_ref(), &spec, args.repeats)?;

    // Fold the load stage into the report.
    let load_stats = lnseg_core::eval::mean_std(&load_samples).expect("repeats >= 1");
    let totals: Vec<f64> = load_samples
        .iter()
        .zip(core_report.stages[0].samples.iter().enumerate().map(|(i, _)| {
            core_report
                .stages
                .iter()
                .map(|s| s.samples[i])
                .sum::<f64>()
        }))
        .map(|(l, p)| l + p)
        .collect();
    let total = lnseg_core::eval::mean_std(&totals).expect("repeats >= 1");
    let mut stages = vec![StageStats {
        stage: "load".to_string(),
        mean_s: load_stats.mean,
        std_s: load_stats.std,
        samples: load_samples,
    }];
    stages.extend(core_report.stages);
    let report = TimingReport {
        repeats: args.repeats,
        stages,
        total_mean_s: total.mean,
        total_std_s: total.std,
    };

    println!("stage,mean_s,std_s,samples");
    for stage in &report.stages {
        println!(
            "{},{:.6},{:.6},{}",
            stage.stage,
            stage.mean_s,
            stage.std_s,
            stage.samples.len()
        );
    }
    println!("total,{:.6},{:.6},{}", report.total_mean_s, report.total_std_s, report.repeats);
    if let Some(out) = &args.out {
        write_json(&report, out)?;
    }
    Ok(())
}
