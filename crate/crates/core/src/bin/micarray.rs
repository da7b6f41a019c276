use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use micarray::acquisition::{stream_data_rate, write_capture, CHANNELS_PER_FPGA, PCM_RATE, PDM_RATE};
use micarray::analysis::PitchSeriesParams;
use micarray::config::{CsmMode, FarFieldSpec, GeometrySpec, OutputFormat, PipelineConfig, SubArraySpec};
use micarray::geometry::{ArrayFrame, DNW_LIKE_APERTURE};
use micarray::io;
use micarray::pipeline::{
    acquire, build_geometry, compute_csms, run_pipeline, select_subarrays, ArtifactWriter, InStage, StageError,
};
use micarray::spectral::BandType;
use micarray::synthesis::synthesize_timeseries;
use micarray::Error;

const SINGLE_MONOPOLE: &str = include_str!("../../configs/single_monopole.json");

#[derive(Parser)]
#[command(name = "micarray", version, about = "Modular MEMS microphone array simulation and analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the modular array layout.
    Geometry(GeometryArgs),
    /// Synthesize CSMs (and PCM time series in Welch mode) for a config.
    Simulate(RunArgs),
    /// Run synthesized signals through PDM encoding, packets and decimation.
    Acquire(AcquireArgs),
    /// Beamform a single sub-array (or one per frequency).
    Beamform(RunArgs),
    /// Pitch sub-array series → directivity surface.
    Directivity(RunArgs),
    /// Compare integrated spectra against virtual far-field microphones.
    Farfield(FarfieldArgs),
    /// Full run as described by the config.
    Pipeline(RunArgs),
}

#[derive(Args, Clone)]
struct Common {
    /// Output root; each run writes `<out>/<run>/<stage>/<artifact>`.
    #[arg(long, env = "MICARRAY_OUTPUT", default_value = "runs")]
    out: PathBuf,
    /// Run directory name (defaults to the config name or the command).
    #[arg(long)]
    run: Option<String>,
    /// Seed override for geometry and scene.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
    Bin,
}

#[derive(Clone, Copy, ValueEnum)]
enum Band {
    Narrowband,
    ThirdOctave,
    Octave,
}

#[derive(Clone, Copy, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    DnwLike,
    PitchSeries,
    FreqDependent,
}

#[derive(Args)]
struct GeometryArgs {
    #[command(flatten)]
    common: Common,
    /// Panel tiling as `<x>x<z>`.
    #[arg(long, default_value = "3x3")]
    panels: String,
    #[arg(long, default_value_t = 3.0)]
    center_x: f64,
    #[arg(long, default_value_t = -0.5)]
    center_z: f64,
    #[arg(long, default_value_t = 3.39)]
    plane_y: f64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Config file (JSON, or TOML by extension).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Bundled config name.
    #[arg(long, value_parser = ["single_monopole"])]
    preset: Option<String>,
    /// Comma-separated analysis frequencies (Hz).
    #[arg(long, value_delimiter = ',')]
    freqs: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    band: Option<Band>,
    /// Diagonal removal.
    #[arg(long, value_enum)]
    dr: Option<Toggle>,
    /// Integrate CLEAN-SC components.
    #[arg(long, conflicts_with = "conventional")]
    clean_sc: bool,
    /// Integrate conventional maps.
    #[arg(long)]
    conventional: bool,
    #[arg(long)]
    loop_gain: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    subarray: Option<Strategy>,
    /// Estimate CSMs with Welch's method from synthesized time series.
    #[arg(long)]
    welch: bool,
}

#[derive(Args)]
struct AcquireArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Packet sequence numbers to drop.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<u32>,
    /// Shuffle packet order with this seed before reassembly.
    #[arg(long)]
    shuffle_seed: Option<u64>,
    /// Record length (s).
    #[arg(long, default_value_t = 0.25)]
    duration: f64,
}

#[derive(Args)]
struct FarfieldArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Far-field microphone position `x,y,z` (repeatable).
    #[arg(long = "mic", value_parser = parse_point)]
    mics: Vec<[f64; 3]>,
}

fn parse_point(s: &str) -> Result<[f64; 3], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t}: {e}")))
        .collect::<Result<_, _>>()?;
    <[f64; 3]>::try_from(v).map_err(|_| "expected x,y,z".to_string())
}

fn fail(e: StageError) -> ExitCode {
    eprintln!("micarray: error in stage '{}': {}", e.stage, e.error);
    match e.error {
        Error::Config(_) => ExitCode::from(2),
        Error::Io(_) => ExitCode::from(1),
        _ => ExitCode::from(3),
    }
}

fn config_error(msg: String) -> StageError {
    StageError {
        stage: "config",
        error: Error::Config(msg),
    }
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig, StageError> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(p), _) => PipelineConfig::from_path(p).stage("config")?,
        (None, Some(_)) | (None, None) => PipelineConfig::from_json(SINGLE_MONOPOLE).stage("config")?,
    };
    let c = &args.common;
    if let Some(seed) = c.seed {
        cfg.scene.seed = seed;
        if let GeometrySpec::Generate { seed: s, .. } = &mut cfg.geometry {
            *s = seed;
        }
    }
    if let Some(f) = c.format {
        cfg.outputs.format = match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
            Format::Bin => OutputFormat::Bin,
        };
    }
    if let Some(f) = &args.freqs {
        cfg.frequencies = f.clone();
    }
    if let Some(b) = args.band {
        cfg.band = match b {
            Band::Narrowband => None,
            Band::ThirdOctave => Some(BandType::ThirdOctave),
            Band::Octave => Some(BandType::Octave),
        };
    }
    if let Some(d) = args.dr {
        cfg.beamforming.clean.diagonal_removal = matches!(d, Toggle::On);
    }
    if args.clean_sc {
        cfg.beamforming.clean_sc = true;
    }
    if args.conventional {
        cfg.beamforming.clean_sc = false;
    }
    if let Some(g) = args.loop_gain {
        cfg.beamforming.clean.loop_gain = g;
    }
    if let Some(m) = args.max_iter {
        cfg.beamforming.clean.max_iterations = m;
    }
    if args.welch {
        cfg.spectral.mode = CsmMode::Welch;
    }
    if let Some(s) = args.subarray {
        cfg.subarray = match s {
            Strategy::DnwLike => SubArraySpec::DnwLike {
                aperture: DNW_LIKE_APERTURE,
                center: None,
                epsilon: 0.1,
            },
            Strategy::PitchSeries => SubArraySpec::PitchSeries(PitchSeriesParams::default()),
            Strategy::FreqDependent => SubArraySpec::FreqDependent {
                center: None,
                d_ref: 5.5,
                f_ref: 1000.0,
                mics: 200,
                epsilon: 0.1,
            },
        };
    }
    cfg.validate().stage("config")?;
    Ok(cfg)
}

fn run_dir(common: &Common, default: &str) -> PathBuf {
    common.out.join(common.run.clone().unwrap_or_else(|| default.to_string()))
}

fn run_name(cfg: &PipelineConfig, command: &str) -> String {
    if cfg.name.is_empty() {
        command.to_string()
    } else {
        format!("{}_{command}", cfg.name)
    }
}

fn report(dir: &Path, warnings: &[String]) {
    for w in warnings {
        eprintln!("micarray: warning: {w}");
    }
    println!("{}", dir.join("manifest.json").display());
}

fn cmd_geometry(args: &GeometryArgs) -> Result<(), StageError> {
    let (px, pz) = args
        .panels
        .split_once(['x', 'X'])
        .and_then(|(a, b)| Some((a.trim().parse::<usize>().ok()?, b.trim().parse::<usize>().ok()?)))
        .ok_or_else(|| config_error(format!("--panels: expected <x>x<z>, got '{}'", args.panels)))?;
    if px == 0 || pz == 0 {
        return Err(config_error("--panels: counts must be at least 1".into()));
    }
    let spec = GeometrySpec::Generate {
        panels_x: px,
        panels_z: pz,
        seed: args.common.seed.unwrap_or(0),
        frame: Some(ArrayFrame {
            center_x: args.center_x,
            center_z: args.center_z,
            plane_y: args.plane_y,
        }),
    };
    let g = build_geometry(&spec).stage("geometry")?;
    let dir = run_dir(&args.common, "geometry");
    let mut out = ArtifactWriter::new(&dir).stage("output")?;
    match args.common.format.unwrap_or(Format::Json) {
        Format::Csv => out.write_with("geometry", "geometry.csv", |w| io::write_geometry_csv(w, &g)),
        _ => out.write_json("geometry", "geometry.json", &io::GeometryFile::from_geometry(&g)),
    }
    .stage("geometry")?;
    #[derive(Serialize)]
    struct Summary {
        sensors: usize,
        width: f64,
        height: f64,
    }
    let e = g.extent();
    let summary = Summary {
        sensors: g.len(),
        width: e.width(),
        height: e.height(),
    };
    out.write_json("geometry", "summary.json", &summary).stage("geometry")?;
    let hash = g.content_hash();
    out.finish("geometry", &spec, hash, Vec::new()).stage("output")?;
    println!("{} sensors, {:.3} m × {:.3} m", g.len(), e.width(), e.height());
    report(&dir, &[]);
    Ok(())
}

fn cmd_simulate(args: &RunArgs) -> Result<(), StageError> {
    let cfg = load_config(args)?;
    let dir = run_dir(&args.common, &run_name(&cfg, "simulate"));
    let mut out = ArtifactWriter::new(&dir).stage("output")?;
    let g = build_geometry(&cfg.geometry).stage("geometry")?;
    let subs = select_subarrays(&cfg, &g).stage("subarray")?;
    let mut warnings = Vec::new();
    let hash = g.content_hash();
    for (k, (restrict, sub)) in subs.iter().enumerate() {
        let freqs = restrict.map_or_else(|| cfg.frequencies.clone(), |f| vec![f]);
        let csms = compute_csms(&cfg, &cfg.scene, &sub.positions_vec3(), &freqs, &mut warnings).stage("simulate")?;
        let name = if subs.len() == 1 {
            "csm.bin".to_string()
        } else {
            format!("csm_{k:02}.bin")
        };
        out.write_with("simulate", &name, |w| io::write_csm(w, &csms, &hash))
            .stage("simulate")?;
    }
    if cfg.spectral.mode == CsmMode::Welch {
        if let Some((_, sub)) = subs.first() {
            let s = synthesize_timeseries(&cfg.scene, &sub.positions_vec3(), cfg.spectral.rate, cfg.spectral.duration)
                .stage("simulate")?;
            let fs = cfg.acquisition.full_scale;
            let pcm: Vec<Vec<i32>> = s
                .channels
                .iter()
                .map(|c| c.iter().map(|v| ((v / fs).clamp(-1.0, 1.0) * i32::MAX as f64).round() as i32).collect())
                .collect();
            let path = out.path("simulate", "pcm.wav").stage("output")?;
            io::write_pcm_wav(&path, &pcm, cfg.spectral.rate.round() as u32).stage("simulate")?;
            out.record(&path).stage("output")?;
        }
    }
    out.finish("simulate", &cfg, hash, warnings.clone()).stage("output")?;
    report(&dir, &warnings);
    Ok(())
}

fn cmd_acquire(args: &AcquireArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&args.run)?;
    cfg.acquisition.drop_packets = args.drop.clone();
    cfg.acquisition.shuffle_seed = args.shuffle_seed;
    let dir = run_dir(&args.run.common, &run_name(&cfg, "acquire"));
    let mut out = ArtifactWriter::new(&dir).stage("output")?;
    let g = build_geometry(&cfg.geometry).stage("geometry")?;
    let subs = select_subarrays(&cfg, &g).stage("subarray")?;
    let (_, sub) = subs
        .first()
        .ok_or_else(|| config_error("no sub-array selected".into()))?;
    let synth = synthesize_timeseries(&cfg.scene, &sub.positions_vec3(), PCM_RATE, args.duration).stage("simulate")?;
    let acq = acquire(&synth.channels, &cfg.acquisition).stage("acquisition")?;
    out.write_with("acquisition", "capture.siam", |w| write_capture(w, &acq.packets))
        .stage("acquisition")?;
    match cfg.outputs.format {
        OutputFormat::Bin => {
            let path = out.path("acquisition", "pcm.raw").stage("output")?;
            io::write_pcm_raw(&path, &acq.pcm, PCM_RATE, acq.group_delay).stage("acquisition")?;
            out.record(&path).stage("output")?;
            let mut side = path.into_os_string();
            side.push(".json");
            out.record(Path::new(&side)).stage("output")?;
        }
        _ => {
            let path = out.path("acquisition", "pcm.wav").stage("output")?;
            io::write_pcm_wav(&path, &acq.pcm, PCM_RATE as u32).stage("acquisition")?;
            out.record(&path).stage("output")?;
        }
    }
    #[derive(Serialize)]
    struct Gap {
        fpga_id: u16,
        first_sequence: u32,
        missing_packets: u32,
        sample_start: u64,
        sample_end: u64,
    }
    #[derive(Serialize)]
    struct Report {
        channels: usize,
        fpgas: usize,
        packets_received: usize,
        pdm_rate: f64,
        pcm_rate: f64,
        group_delay_samples: usize,
        clipped_samples: usize,
        data_rate_mbit_s_per_fpga: f64,
        gaps: Vec<Gap>,
    }
    let r = Report {
        channels: acq.pcm.len(),
        fpgas: acq.pcm.len().div_ceil(CHANNELS_PER_FPGA),
        packets_received: acq.packets.len(),
        pdm_rate: PDM_RATE,
        pcm_rate: PCM_RATE,
        group_delay_samples: acq.group_delay,
        clipped_samples: acq.clipped,
        data_rate_mbit_s_per_fpga: stream_data_rate(CHANNELS_PER_FPGA, PDM_RATE, 0.0),
        gaps: acq
            .gaps
            .iter()
            .map(|(f, g)| Gap {
                fpga_id: *f,
                first_sequence: g.first_sequence,
                missing_packets: g.missing_packets,
                sample_start: g.sample_start,
                sample_end: g.sample_end,
            })
            .collect(),
    };
    out.write_json("acquisition", "report.json", &r).stage("acquisition")?;
    let mut warnings = synth.warnings;
    if acq.clipped > 0 {
        warnings.push(format!("{} PDM input samples clipped", acq.clipped));
    }
    for g in &r.gaps {
        warnings.push(format!(
            "FPGA {} lost {} packet(s), PDM samples {}..{}",
            g.fpga_id, g.missing_packets, g.sample_start, g.sample_end
        ));
    }
    out.finish("acquire", &cfg, g.content_hash(), warnings.clone())
        .stage("output")?;
    report(&dir, &warnings);
    Ok(())
}

fn run_full(cfg: &PipelineConfig, dir: &Path) -> Result<(), StageError> {
    let summary = run_pipeline(cfg, dir)?;
    report(dir, &summary.manifest.warnings);
    Ok(())
}

fn cmd_beamform(args: &RunArgs) -> Result<(), StageError> {
    let cfg = load_config(args)?;
    if matches!(cfg.subarray, SubArraySpec::PitchSeries(_)) {
        return Err(config_error("beamform: use the directivity command for pitch series".into()));
    }
    run_full(&cfg, &run_dir(&args.common, &run_name(&cfg, "beamform")))
}

fn cmd_directivity(args: &RunArgs) -> Result<(), StageError> {
    let mut cfg = load_config(args)?;
    if !matches!(cfg.subarray, SubArraySpec::PitchSeries(_)) {
        cfg.subarray = SubArraySpec::PitchSeries(PitchSeriesParams::default());
    }
    run_full(&cfg, &run_dir(&args.common, &run_name(&cfg, "directivity")))
}

fn cmd_farfield(args: &FarfieldArgs) -> Result<(), StageError> {
    let mut cfg = load_config(&args.run)?;
    if !args.mics.is_empty() {
        cfg.farfield = Some(FarFieldSpec { mics: args.mics.clone() });
    }
    if cfg.farfield.is_none() {
        return Err(config_error("farfield: no microphones given (--mic x,y,z or config)".into()));
    }
    if matches!(cfg.subarray, SubArraySpec::PitchSeries(_)) {
        return Err(config_error("farfield: needs a single or frequency-dependent sub-array".into()));
    }
    run_full(&cfg, &run_dir(&args.run.common, &run_name(&cfg, "farfield")))
}

fn cmd_pipeline(args: &RunArgs) -> Result<(), StageError> {
    let cfg = load_config(args)?;
    run_full(&cfg, &run_dir(&args.common, &run_name(&cfg, "pipeline")))
}

fn jobs(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Geometry(a) => a.common.jobs,
        Command::Acquire(a) => a.run.common.jobs,
        Command::Farfield(a) => a.run.common.jobs,
        Command::Simulate(a) | Command::Beamform(a) | Command::Directivity(a) | Command::Pipeline(a) => a.common.jobs,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = jobs(&cli.command) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("micarray: cannot set worker count: {e}");
        }
    }
    let r = match &cli.command {
        Command::Geometry(a) => cmd_geometry(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Acquire(a) => cmd_acquire(a),
        Command::Beamform(a) => cmd_beamform(a),
        Command::Directivity(a) => cmd_directivity(a),
        Command::Farfield(a) => cmd_farfield(a),
        Command::Pipeline(a) => cmd_pipeline(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}
