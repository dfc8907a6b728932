//! `adoa`: build prototype databases, render scenes, estimate DOAs and run
//! the four-variant evaluation.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
//! failure.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use assisted_doa::audio::{read_wav, write_wav, WavFormat};
use assisted_doa::eval::{AggregateSpectrum, AlgorithmVariant, ExperimentConfig, FrameRecord, Pipeline};
use assisted_doa::geometry::{wrap_deg, ArrayGeometry, ScenePose};
use assisted_doa::sim::{
    build_prototype_db, measured_snr_db, mix_seed, parse_angles, render_default, NoiseConfig, PrototypeDb, Reverb,
    SceneConfig,
};
use assisted_doa::spectrum::{build_matched_pairs, write_csv_1d, write_csv_2d};
use assisted_doa::stft::{analyze_with, StftConfig};
use assisted_doa::track::{OracleSpp, SppGate, SppMode, TrackerConfig};
use assisted_doa::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "adoa", version, about = "Binaural DOA estimation assisted by an external microphone array")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an RTFDB1 prototype database for one array.
    BuildDb(BuildDbArgs),
    /// Render a scene to multichannel WAV files plus a truth sidecar.
    Simulate(SimulateArgs),
    /// Estimate per-frame DOAs from a multichannel WAV file.
    Estimate(EstimateArgs),
    /// Run the four-variant comparison over a set of scenes.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, default_value_t = 16_000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 32.0)]
    window_ms: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
}

impl GridArgs {
    fn config(&self) -> Result<StftConfig, Error> {
        StftConfig::new(self.sample_rate, self.window_ms, self.overlap)
    }
}

#[derive(Args)]
struct BuildDbArgs {
    /// Geometry JSON file, or `binaural` for the built-in behind-the-ear pair.
    #[arg(long)]
    geom: String,
    /// `start:step:stop` in degrees or a comma-separated list.
    #[arg(long, default_value = "-180:5:175", allow_hyphen_values = true)]
    angles: String,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Float32,
    Pcm16,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scene JSON; the built-in desk scene when omitted.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Overrides the speaker DOA of the scene.
    #[arg(long, allow_hyphen_values = true)]
    doa: Option<f64>,
    /// Overrides the SNR of the scene noise.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<f64>,
    #[arg(long, value_enum, default_value = "float32")]
    format: FormatArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SppArg {
    Blind,
    Oracle,
}

#[derive(Args)]
struct EstimateArgs {
    /// Mixture WAV, channels ordered H then E.
    #[arg(long)]
    wav: PathBuf,
    #[arg(long)]
    db_h: PathBuf,
    #[arg(long)]
    db_e: Option<PathBuf>,
    #[arg(long, default_value = "hh")]
    variant: String,
    /// Scene JSON supplying both array poses.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// `x,y,orientation_deg` of array H.
    #[arg(long, allow_hyphen_values = true)]
    pose_h: Option<String>,
    /// `x,y,orientation_deg` of array E.
    #[arg(long, allow_hyphen_values = true)]
    pose_e: Option<String>,
    #[arg(long, default_value_t = 2.0)]
    radius: f64,
    #[arg(long, default_value_t = 20)]
    pairs: usize,
    #[arg(long, value_enum, default_value = "blind")]
    spp: SppArg,
    /// Clean speech WAV for oracle gating.
    #[arg(long)]
    speech: Option<PathBuf>,
    /// Noise WAV for oracle gating.
    #[arg(long)]
    noise: Option<PathBuf>,
    #[arg(long, default_value_t = 32.0)]
    window_ms: f64,
    #[arg(long, default_value_t = 0.5)]
    overlap: f64,
    /// Also write per-frame spectra.
    #[arg(long)]
    dump_spectra: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Experiment JSON; the built-in desk experiment when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    /// Comma-separated subset of hh, heh, he2d, hematch.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    pairs: Option<usize>,
    /// Number of noise realizations per DOA.
    #[arg(long)]
    noise_seeds: Option<usize>,
    /// Speech duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Comma-separated DOA list in degrees.
    #[arg(long, allow_hyphen_values = true)]
    doas: Option<String>,
    /// Omit per-frame traces from the report.
    #[arg(long)]
    no_traces: bool,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io(_) | Error::Format(_) => 3,
            e if e.is_numerical() => 4,
            _ => 2,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self { code: 3, message: e.to_string() }
    }
}

fn config_err(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, Failure> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn out_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| Failure { code: 3, message: format!("{}: {e}", path.display()) })
}

fn load_geometry(spec: &str) -> Result<ArrayGeometry, Failure> {
    if spec == "binaural" {
        return Ok(ArrayGeometry::default_binaural());
    }
    let text = read_text(Path::new(spec))?;
    let g: ArrayGeometry = serde_json::from_str(&text).map_err(|e| config_err(format!("{spec}: {e}")))?;
    g.validate()?;
    Ok(g)
}

fn load_scene(path: Option<&Path>) -> Result<SceneConfig, Failure> {
    match path {
        None => Ok(SceneConfig::desk_default(0.0)),
        Some(p) => Ok(SceneConfig::from_json(&read_text(p)?)?),
    }
}

fn parse_pose(s: &str) -> Result<ScenePose, Failure> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| config_err(format!("pose '{s}': {e}")))?;
    match v.as_slice() {
        [x, y, o] if v.iter().all(|a| a.is_finite()) => Ok(ScenePose::new([*x, *y], *o)),
        _ => Err(config_err(format!("pose '{s}' must be x,y,orientation_deg"))),
    }
}

fn build_db(args: &BuildDbArgs) -> Result<(), Failure> {
    let geom = load_geometry(&args.geom)?;
    let angles = parse_angles(&args.angles)?;
    let db = build_prototype_db(&geom, &angles, &args.grid.config()?)?;
    db.save(&args.out)?;
    println!("I={} K={} M={} -> {}", db.num_angles(), db.num_bins(), db.num_mics(), args.out.display());
    Ok(())
}

#[derive(Serialize)]
struct TruthSidecar {
    theta_deg: f64,
    theta_e_deg: f64,
    seed: u64,
    sample_rate: u32,
    m_h: usize,
    m_e: usize,
    channel_order: Vec<String>,
    snr_db: Option<f64>,
    scene: SceneConfig,
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let mut scene = load_scene(args.scene.as_deref())?;
    if let Some(d) = args.doa {
        scene.speaker_doa_deg = d;
    }
    if let Some(snr) = args.snr {
        scene.noise.get_or_insert_with(|| NoiseConfig::new(snr, 0)).snr_db = snr;
    }
    scene.speech_seed = mix_seed(args.seed, 0x5EEC);
    if let Some(n) = scene.noise.as_mut() {
        n.seed = mix_seed(args.seed, 0x1000);
    }
    if let Reverb::Reverberant { seed, .. } = &mut scene.reverb {
        *seed = mix_seed(args.seed, 0x2000);
    }
    let r = render_default(&scene)?;
    out_dir(&args.out)?;
    let format = match args.format {
        FormatArg::Float32 => WavFormat::Float32,
        FormatArg::Pcm16 => WavFormat::Pcm16,
    };
    for (name, data) in [("mixture", &r.mixture), ("speech", &r.clean_speech), ("noise", &r.noise)] {
        write_wav(args.out.join(format!("{name}.wav")), data, r.sample_rate, format)?;
    }
    let channel_order = (0..r.m_h).map(|i| format!("H{i}")).chain((0..r.m_e).map(|i| format!("E{i}"))).collect();
    let truth = TruthSidecar {
        theta_deg: r.truth.theta_deg,
        theta_e_deg: r.truth.theta_e_deg,
        seed: args.seed,
        sample_rate: r.sample_rate,
        m_h: r.m_h,
        m_e: r.m_e,
        channel_order,
        snr_db: scene.noise.as_ref().map(|_| measured_snr_db(&r)),
        scene,
    };
    let mut w = create(&args.out.join("truth.json"))?;
    serde_json::to_writer_pretty(&mut w, &truth).map_err(|e| Failure { code: 3, message: e.to_string() })?;
    w.flush()?;
    println!("theta={} theta_E={:.3} channels={}", truth.theta_deg, truth.theta_e_deg, r.m_h + r.m_e);
    Ok(())
}

fn flags(f: &FrameRecord) -> &'static str {
    match f.estimate {
        None => "no_estimate",
        Some(e) if e.flat => "flat",
        Some(_) => "",
    }
}

fn estimate(args: &EstimateArgs) -> Result<(), Failure> {
    let variant: AlgorithmVariant = args.variant.parse()?;
    let wav = read_wav(&args.wav)?;
    let cfg = StftConfig::new(wav.sample_rate, args.window_ms, args.overlap)?;
    let db_h = PrototypeDb::load(&args.db_h)?;
    let db_e = args.db_e.as_deref().map(PrototypeDb::load).transpose()?;
    if variant.uses_external() && db_e.is_none() {
        return Err(config_err(format!("variant {} needs --db-e", variant.cli_name())));
    }
    let pairs = if variant == AlgorithmVariant::HeOverHeMatch {
        let scene = args.scene.as_deref().map(|p| load_scene(Some(p))).transpose()?;
        let pose = |flag: &Option<String>, from_scene: Option<ScenePose>| -> Result<Option<ScenePose>, Failure> {
            match flag {
                Some(s) => parse_pose(s).map(Some),
                None => Ok(from_scene),
            }
        };
        let pose_h = pose(&args.pose_h, scene.as_ref().map(|s| s.array_h.pose))?.unwrap_or_default();
        let pose_e = pose(&args.pose_e, scene.as_ref().map(|s| s.array_e.pose))?
            .ok_or_else(|| config_err("the matched variant needs --pose-e or --scene"))?;
        let e = db_e.as_ref().expect("checked");
        Some(build_matched_pairs(db_h.angles_deg(), e.angles_deg(), &pose_h, &pose_e, args.radius, args.pairs)?)
    } else {
        None
    };
    let pipeline = Pipeline::new(cfg, &db_h, db_e.as_ref(), pairs, TrackerConfig::standard())?.with_spectra(args.dump_spectra);
    let stft = analyze_with(&wav.channels, cfg)?;
    let m_h = db_h.num_mics();
    let (gate, oracle) = match args.spp {
        SppArg::Blind => (SppGate::blind(m_h), None),
        SppArg::Oracle => {
            let (Some(sp), Some(no)) = (&args.speech, &args.noise) else {
                return Err(config_err("oracle gating needs --speech and --noise"));
            };
            let clean = analyze_with(&read_wav(sp)?.channels, cfg)?;
            let noise = analyze_with(&read_wav(no)?.channels, cfg)?;
            (SppGate::new(SppMode::Oracle, 0.5, m_h)?, Some(OracleSpp::from_components(&clean, &noise, m_h)?))
        }
    };
    let out = pipeline.run(&stft, gate, oracle.as_ref(), &[variant])?;
    out_dir(&args.out)?;
    let mut w = create(&args.out.join("estimates.csv"))?;
    writeln!(w, "frame,time_s,theta_hat,theta_e_hat,peak_score,flags")?;
    for f in &out.traces[0].frames {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        let e = f.estimate;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f.frame,
            f.time_s,
            opt(e.map(|e| e.theta_deg)),
            opt(e.and_then(|e| e.theta_e_deg)),
            opt(e.map(|e| e.score)),
            flags(f)
        )?;
    }
    w.flush()?;
    if args.dump_spectra {
        let mut w = create(&args.out.join("spectra.csv"))?;
        let (one, two): (Vec<_>, Vec<_>) = out.spectra[0].iter().partition(|s| matches!(s, AggregateSpectrum::OneD(_)));
        let one: Vec<_> = one.into_iter().filter_map(|s| if let AggregateSpectrum::OneD(s) = s { Some(s.clone()) } else { None }).collect();
        let two: Vec<_> = two.into_iter().filter_map(|s| if let AggregateSpectrum::TwoD(s) = s { Some(s.clone()) } else { None }).collect();
        if two.is_empty() {
            write_csv_1d(&mut w, &one)?;
        } else {
            write_csv_2d(&mut w, &two)?;
        }
        w.flush()?;
    }
    if let Some(agg) = &out.aggregates[0] {
        let mut d = agg.pick_doa()?;
        if variant == AlgorithmVariant::HeOverHeMatch {
            d.theta_e_deg = pipeline.matched_theta_e(d.theta_deg);
        }
        match d.theta_e_deg {
            Some(te) => println!("utterance estimate: theta={} theta_E={}", d.theta_deg, wrap_deg(te)),
            None => println!("utterance estimate: theta={}", d.theta_deg),
        }
    } else {
        println!("no estimate-bearing frames");
    }
    Ok(())
}

fn evaluate(args: &EvaluateArgs) -> Result<(), Failure> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_json(&read_text(p)?)?,
        None => ExperimentConfig::desk_default(args.seed),
    };
    cfg.seed = args.seed;
    if let Some(v) = &args.variant {
        cfg.variants = v.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
    }
    if let Some(r) = args.radius {
        cfg.pair_radius_m = r;
    }
    if let Some(p) = args.pairs {
        cfg.pair_count = p;
    }
    if let Some(n) = args.noise_seeds {
        cfg.noise_seeds = n;
    }
    if let Some(d) = args.duration {
        cfg.scene.speech_duration_s = d;
    }
    if let Some(d) = &args.doas {
        cfg.doas_deg = d
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| config_err(format!("--doas: {e}")))?;
    }
    if args.no_traces {
        cfg.keep_traces = false;
    }
    let report = assisted_doa::run_experiment(&cfg)?;
    out_dir(&args.out)?;
    fs::write(args.out.join("report.json"), report.to_json()?)?;
    let mut w = create(&args.out.join("summary.csv"))?;
    report.write_summary_csv(&mut w)?;
    w.flush()?;
    if cfg.keep_traces {
        let mut w = create(&args.out.join("traces.csv"))?;
        report.write_traces_csv(&mut w)?;
        w.flush()?;
    }
    print!("{}", report.table());
    if report.metadata.failed_scenes > 0 {
        println!("{} scene(s) failed; see report.json", report.metadata.failed_scenes);
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::BuildDb(a) => build_db(a),
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
