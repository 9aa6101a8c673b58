//! Command-line front door: TOML experiment configs with dotted-key
//! overrides, subcommand orchestration (simulate sweeps, predictor training,
//! meta-training, fine-tuning, evaluation, overhead planning, trace
//! conversion), and versioned CSV export.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::abr::{
    load_measurements_csv, plan_overheads, ConfidenceModel, TimeModel,
};
use crate::error::{Error, Result};
use crate::geometry::{downsample_shape, prediction_metrics, FovSpec, TileGrid};
use crate::meta::{
    fine_tune, load_meta_checkpoint, make_saliency_tasks, meta_train_from,
    save_meta_checkpoint, AdaptableModel, MetaCheckpointInfo, MetaConfig, SaliencyNet,
    SaliencyNetConfig, SyntheticTaskFamily,
};
use crate::predictors::{lr_predict, ConvLstm, ConvLstmConfig};
use crate::sim::{
    aggregate_metrics, simulate_session, AbrChoice, BandwidthTrace, Predictor, SessionConfig,
};
use crate::synthetic::{chunk_windows, generate_session, SynthConfig};
use crate::tensor::{seeded_rng, RmsProp};

pub const SUMMARY_SCHEMA: &str = "vp360-summary/1";
pub const CURVE_SCHEMA: &str = "vp360-curve/1";
pub const METRICS_SCHEMA: &str = "vp360-metrics/1";
pub const PLAN_SCHEMA: &str = "vp360-plan/1";

// ── experiment configuration ─────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionToml {
    pub chunk_length: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub lambda: f64,
    pub fov_h: f64,
    pub fov_v: f64,
    pub sf: f64,
    pub ratio: usize,
    pub window_len: usize,
    pub p_vp: f64,
    pub bootstrap_mbps: f64,
    pub ladder: Vec<f64>,
}

impl Default for SessionToml {
    fn default() -> Self {
        let d = SessionConfig::default();
        SessionToml {
            chunk_length: d.chunk_length,
            grid_rows: 10,
            grid_cols: 20,
            lambda: d.lambda,
            fov_h: 90.0,
            fov_v: 90.0,
            sf: d.sf,
            ratio: d.ratio,
            window_len: d.window_len,
            p_vp: d.p_vp,
            bootstrap_mbps: d.bootstrap_mbps,
            ladder: d.ladder.rates().to_vec(),
        }
    }
}

impl SessionToml {
    pub fn to_session(&self, confidence: &ConfidenceModel) -> Result<SessionConfig> {
        Ok(SessionConfig {
            chunk_length: self.chunk_length,
            grid: TileGrid::new(self.grid_rows, self.grid_cols)?,
            ladder: crate::abr::BitrateLadder::new(self.ladder.clone())?,
            lambda: self.lambda,
            fov: FovSpec::new(self.fov_h, self.fov_v)?,
            sf: self.sf,
            ratio: self.ratio,
            window_len: self.window_len,
            p_vp: self.p_vp,
            confidence: confidence.clone(),
            bootstrap_mbps: self.bootstrap_mbps,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelToml {
    pub hidden_channels: usize,
    pub num_cells: usize,
    pub kernel: usize,
    pub se_reduction: usize,
    pub head_projection: bool,
}

impl Default for ModelToml {
    fn default() -> Self {
        let d = ConvLstmConfig::default();
        ModelToml {
            hidden_channels: d.hidden_channels,
            num_cells: d.num_cells,
            kernel: d.kernel,
            se_reduction: d.se_reduction,
            head_projection: d.head_projection,
        }
    }
}

impl ModelToml {
    /// Input shape always follows the session's (grid, ratio) downsampling.
    pub fn to_convlstm_config(&self, session: &SessionConfig) -> Result<ConvLstmConfig> {
        let (h, w) = downsample_shape(session.grid, session.ratio)?;
        Ok(ConvLstmConfig {
            input_h: h,
            input_w: w,
            hidden_channels: self.hidden_channels,
            num_cells: self.num_cells,
            kernel: self.kernel,
            se_reduction: self.se_reduction,
            window_len: session.window_len,
            head_projection: self.head_projection,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthToml {
    pub chunks: usize,
    pub sessions: usize,
    pub sample_rate: f64,
    pub blob_sigma: f64,
    pub turn_prob: f64,
    pub max_speed_deg: f64,
}

impl Default for SynthToml {
    fn default() -> Self {
        SynthToml {
            chunks: 30,
            sessions: 2,
            sample_rate: 8.0,
            blob_sigma: 2.0,
            turn_prob: 0.3,
            max_speed_deg: 40.0,
        }
    }
}

impl SynthToml {
    pub fn to_synth_config(&self, session: &SessionConfig) -> Result<SynthConfig> {
        let (h, w) = downsample_shape(session.grid, session.ratio)?;
        Ok(SynthConfig {
            chunks: self.chunks,
            chunk_length: session.chunk_length,
            sample_rate: self.sample_rate,
            map_h: h,
            map_w: w,
            blob_sigma: self.blob_sigma,
            turn_prob: self.turn_prob,
            max_speed_deg: self.max_speed_deg,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepToml {
    pub predictors: Vec<String>,
    pub abrs: Vec<String>,
    /// Bandwidth trace CSVs; empty = one synthetic constant trace.
    pub traces: Vec<PathBuf>,
    pub trace_scale: f64,
    /// Constant throughput of the synthetic trace, Mbps.
    pub bandwidth_mbps: f64,
}

impl Default for SweepToml {
    fn default() -> Self {
        SweepToml {
            predictors: vec!["lr".into()],
            abrs: vec!["cba".into()],
            traces: Vec::new(),
            trace_scale: 1.0,
            bandwidth_mbps: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToml {
    pub epochs: usize,
    pub learning_rate: f64,
    pub sessions: usize,
    pub holdout_sessions: usize,
}

impl Default for TrainToml {
    fn default() -> Self {
        TrainToml {
            epochs: 20,
            learning_rate: 1e-2,
            sessions: 3,
            holdout_sessions: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyToml {
    pub videos: usize,
    pub frames_per_video: usize,
    pub input_sigma: f64,
    pub noise: f64,
}

impl Default for FamilyToml {
    fn default() -> Self {
        let d = SyntheticTaskFamily::default();
        FamilyToml {
            videos: d.videos,
            frames_per_video: d.frames_per_video,
            input_sigma: d.input_sigma,
            noise: d.noise,
        }
    }
}

impl FamilyToml {
    pub fn to_family(&self, net: &SaliencyNetConfig, seed: u64) -> SyntheticTaskFamily {
        SyntheticTaskFamily {
            net_config: net.clone(),
            videos: self.videos,
            frames_per_video: self.frames_per_video,
            input_sigma: self.input_sigma,
            noise: self.noise,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneToml {
    pub alpha: f64,
    pub epochs: usize,
    /// Which task (video index) to adapt to.
    pub video: usize,
}

impl Default for FinetuneToml {
    fn default() -> Self {
        FinetuneToml {
            alpha: 0.05,
            epochs: 10,
            video: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalToml {
    pub sessions: usize,
    pub train_sessions: usize,
    pub train_epochs: usize,
}

impl Default for EvalToml {
    fn default() -> Self {
        EvalToml {
            sessions: 4,
            train_sessions: 3,
            train_epochs: 10,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanToml {
    pub sf_grid: Vec<f64>,
    pub sf_ref: f64,
    pub ratio_ref: f64,
}

impl Default for PlanToml {
    fn default() -> Self {
        PlanToml {
            sf_grid: (1..=16).map(|i| i as f64).collect(),
            sf_ref: 4.0,
            ratio_ref: 144.0,
        }
    }
}

/// Everything a run needs, with every field defaulted so an empty config
/// file (or none at all) is valid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Predictor checkpoint used by `simulate` for the convlstm predictor.
    pub checkpoint: Option<PathBuf>,
    pub session: SessionToml,
    pub confidence: ConfidenceModel,
    pub model: ModelToml,
    pub synth: SynthToml,
    pub sweep: SweepToml,
    pub train: TrainToml,
    pub meta: MetaConfig,
    pub saliency_net: SaliencyNetConfig,
    pub family: FamilyToml,
    pub finetune: FinetuneToml,
    pub eval: EvalToml,
    pub plan: PlanToml,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            output_dir: PathBuf::from("out"),
            checkpoint: None,
            session: SessionToml::default(),
            confidence: ConfidenceModel::default(),
            model: ModelToml::default(),
            synth: SynthToml::default(),
            sweep: SweepToml::default(),
            train: TrainToml::default(),
            meta: MetaConfig::default(),
            saliency_net: SaliencyNetConfig::default(),
            family: FamilyToml::default(),
            finetune: FinetuneToml::default(),
            eval: EvalToml::default(),
            plan: PlanToml::default(),
        }
    }
}

/// Apply one `dotted.key=value` override to a parsed TOML table. The value
/// is parsed as a TOML literal when possible, else taken as a string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{assignment}' is not key=value")))?;
    let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
        Ok(t) => t["v"].clone(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut cursor = table;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        cursor = cursor
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{part}' in '{key}' is not a table")))?;
    }
    cursor.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Read the config file (defaults when absent), apply overrides, deserialize.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut table: toml::Table = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            .parse()
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Config(e.to_string()))
}

pub fn parse_predictor_name(name: &str) -> Result<()> {
    match name {
        "lr" | "oracle" | "convlstm" => Ok(()),
        other => Err(Error::Config(format!(
            "unknown predictor '{other}' (expected lr, convlstm, or oracle)"
        ))),
    }
}

pub fn parse_abr_name(name: &str) -> Result<AbrChoice> {
    match name {
        "cba" => Ok(AbrChoice::Cba),
        "pba" => Ok(AbrChoice::Pba),
        other => Err(Error::Config(format!(
            "unknown abr '{other}' (expected cba or pba)"
        ))),
    }
}

// ── command-line surface ─────────────────────────────────────────────

#[derive(Parser, Debug)]
#[command(name = "vp360", about = "Tile-based 360-degree streaming toolkit")]
pub struct Cli {
    /// Experiment config (TOML); defaults are used when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted-key overrides, e.g. --set session.ratio=4
    #[arg(long = "set", global = true)]
    pub overrides: Vec<String>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the predictor x ABR x trace sweep and export session logs.
    Simulate,
    /// Train the ConvLSTM tile predictor on synthetic sessions.
    Train,
    /// Meta-train the saliency network on the synthetic task family.
    MetaTrain {
        /// Continue from a meta checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Adapt a meta-trained saliency network to one task.
    Finetune {
        /// Meta checkpoint to start from (default <output_dir>/meta.ck).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare predictors on seeded synthetic sessions.
    EvalPredictor {
        /// ConvLSTM checkpoint; a fresh model is trained when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit the time model from measurements and pick SF and ratio.
    Plan {
        /// CSV with header sf,time_ms.
        #[arg(long)]
        sf_csv: PathBuf,
        /// CSV with header ratio,time_ms.
        #[arg(long)]
        ratio_csv: PathBuf,
    },
    /// Normalize a bandwidth trace CSV to the t_s,mbps schema.
    ConvertTrace {
        input: PathBuf,
        output: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
    },
}

/// Exit code contract: 0 ok, 1 config error, 2 data error, 3 infeasible.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidArgument(_) | Error::ShapeMismatch(_) => 1,
        Error::Data(_) | Error::Io(_) => 2,
        Error::Infeasible(_) => 3,
    }
}

/// Parse arguments, run, and map errors to the exit-code contract.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref(), &cli.overrides)?;
    // Every run starts by materializing the effective config.
    println!(
        "# effective config\n{}",
        toml::to_string_pretty(&config).map_err(|e| Error::Config(e.to_string()))?
    );
    // convert-trace writes only to its explicit output path.
    if !matches!(cli.command, Command::ConvertTrace { .. }) {
        std::fs::create_dir_all(&config.output_dir)
            .map_err(|e| Error::Data(format!("{}: {e}", config.output_dir.display())))?;
    }
    match &cli.command {
        Command::Simulate => cmd_simulate(&config, cli.workers),
        Command::Train => cmd_train(&config),
        Command::MetaTrain { resume } => cmd_meta_train(&config, resume.as_deref()),
        Command::Finetune { checkpoint } => cmd_finetune(&config, checkpoint.as_deref()),
        Command::EvalPredictor { checkpoint } => cmd_eval_predictor(&config, checkpoint.as_deref()),
        Command::Plan { sf_csv, ratio_csv } => cmd_plan(&config, sf_csv, ratio_csv),
        Command::ConvertTrace {
            input,
            output,
            scale,
        } => cmd_convert_trace(input, output, *scale),
    }
}

// ── simulate ─────────────────────────────────────────────────────────

struct SummaryRow {
    predictor: String,
    abr: String,
    trace: String,
    avg_quality_level: f64,
    quality_level_change: f64,
    rebuffer_total_s: f64,
    bandwidth_total_mbit: f64,
    mean_accuracy: f64,
    mean_f1: f64,
    mean_objective: f64,
}

fn build_predictor(
    name: &str,
    config: &ExperimentConfig,
    session: &SessionConfig,
) -> Result<Predictor> {
    parse_predictor_name(name)?;
    Ok(match name {
        "lr" => Predictor::LinearRegression,
        "oracle" => Predictor::Oracle,
        _ => {
            let model = match &config.checkpoint {
                Some(path) => {
                    let m = ConvLstm::load(path)?;
                    let expect = config.model.to_convlstm_config(session)?;
                    if m.config().input_h != expect.input_h || m.config().input_w != expect.input_w
                    {
                        return Err(Error::Config(format!(
                            "checkpoint input {}x{} does not match the session's {}x{}",
                            m.config().input_h,
                            m.config().input_w,
                            expect.input_h,
                            expect.input_w
                        )));
                    }
                    m
                }
                None => ConvLstm::init(
                    config.model.to_convlstm_config(session)?,
                    session.grid,
                    config.seed,
                )?,
            };
            Predictor::ConvLstm(Box::new(model))
        }
    })
}

/// Deterministic worker pool: each item's result lands at its own index.
fn run_indexed<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let n = items.len();
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let threads = workers.clamp(1, n.max(1));
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("worker filled every slot"))
        .collect()
}

pub fn cmd_simulate(config: &ExperimentConfig, workers: usize) -> Result<()> {
    let session = config.session.to_session(&config.confidence)?;
    session.validate()?;
    let synth_cfg = config.synth.to_synth_config(&session)?;

    let traces: Vec<(String, BandwidthTrace)> = if config.sweep.traces.is_empty() {
        vec![(
            "synthetic".to_string(),
            BandwidthTrace::constant(config.sweep.bandwidth_mbps * config.sweep.trace_scale)?,
        )]
    } else {
        config
            .sweep
            .traces
            .iter()
            .map(|p| {
                let name = p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "trace".to_string());
                Ok((name, BandwidthTrace::from_csv(p, config.sweep.trace_scale)?))
            })
            .collect::<Result<_>>()?
    };

    let mut combos: Vec<(String, String, usize)> = Vec::new();
    for p in &config.sweep.predictors {
        parse_predictor_name(p)?;
        for a in &config.sweep.abrs {
            parse_abr_name(a)?;
            for t in 0..traces.len() {
                combos.push((p.clone(), a.clone(), t));
            }
        }
    }
    combos.sort_by(|x, y| (&x.0, &x.1, x.2).cmp(&(&y.0, &y.1, y.2)));
    if combos.is_empty() {
        return Err(Error::Config("sweep has no predictor/abr combinations".into()));
    }

    let sessions: Vec<_> = (0..config.synth.sessions.max(1))
        .map(|s| generate_session(&synth_cfg, config.seed.wrapping_add(s as u64)))
        .collect::<Result<_>>()?;

    let results: Vec<Result<SummaryRow>> = run_indexed(&combos, workers, |combo| {
        let (pred_name, abr_name, trace_idx) = combo;
        let predictor = build_predictor(pred_name, config, &session)?;
        let abr = parse_abr_name(abr_name)?;
        let (trace_name, trace) = &traces[*trace_idx];
        let mut sums = [0.0f64; 7];
        for (s_idx, synth_session) in sessions.iter().enumerate() {
            let log = simulate_session(
                &synth_session.head,
                &synth_session.saliency,
                trace,
                &predictor,
                abr,
                &session,
            )?;
            let file = config.output_dir.join(format!(
                "session_{pred_name}_{abr_name}_{trace_name}_{s_idx}.csv"
            ));
            log.export_csv(&file)?;
            let m = aggregate_metrics(&log)?;
            let mean_obj = log.records.iter().map(|r| r.objective).sum::<f64>()
                / log.records.len() as f64;
            for (acc, v) in sums.iter_mut().zip([
                m.avg_quality_level,
                m.quality_level_change,
                m.rebuffer_total_s,
                m.bandwidth_total_mbit,
                m.mean_accuracy,
                m.mean_f1,
                mean_obj,
            ]) {
                *acc += v;
            }
        }
        let n = sessions.len() as f64;
        Ok(SummaryRow {
            predictor: pred_name.clone(),
            abr: abr_name.clone(),
            trace: trace_name.clone(),
            avg_quality_level: sums[0] / n,
            quality_level_change: sums[1] / n,
            rebuffer_total_s: sums[2] / n,
            bandwidth_total_mbit: sums[3] / n,
            mean_accuracy: sums[4] / n,
            mean_f1: sums[5] / n,
            mean_objective: sums[6] / n,
        })
    });
    let rows: Vec<SummaryRow> = results.into_iter().collect::<Result<_>>()?;

    let mut summary = format!(
        "# {SUMMARY_SCHEMA}\npredictor,abr,trace,avg_quality_level,quality_level_change,\
         rebuffer_total_s,bandwidth_total_mbit,mean_accuracy,mean_f1,mean_objective\n"
    );
    let mut plot = format!("# {SUMMARY_SCHEMA}\nmetric,algorithm,trace,value\n");
    for r in &rows {
        summary.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            r.predictor,
            r.abr,
            r.trace,
            r.avg_quality_level,
            r.quality_level_change,
            r.rebuffer_total_s,
            r.bandwidth_total_mbit,
            r.mean_accuracy,
            r.mean_f1,
            r.mean_objective
        ));
        let algo = format!("{}+{}", r.predictor, r.abr);
        for (metric, value) in [
            ("avg_quality_level", r.avg_quality_level),
            ("quality_level_change", r.quality_level_change),
            ("rebuffer_total_s", r.rebuffer_total_s),
            ("bandwidth_total_mbit", r.bandwidth_total_mbit),
            ("mean_accuracy", r.mean_accuracy),
            ("mean_f1", r.mean_f1),
            ("mean_objective", r.mean_objective),
        ] {
            plot.push_str(&format!("{metric},{algo},{},{value:.6}\n", r.trace));
        }
    }
    write_text(&config.output_dir.join("summary.csv"), &summary)?;
    write_text(&config.output_dir.join("plotdata.csv"), &plot)?;
    println!("wrote {} summary rows to {}", rows.len(), config.output_dir.display());
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

pub fn cmd_train(config: &ExperimentConfig) -> Result<()> {
    let session = config.session.to_session(&config.confidence)?;
    let synth_cfg = config.synth.to_synth_config(&session)?;
    let model_cfg = config.model.to_convlstm_config(&session)?;

    let build = |seed: u64| -> Result<Vec<_>> {
        let s = generate_session(&synth_cfg, seed)?;
        chunk_windows(&s, &synth_cfg, session.grid, session.fov, session.window_len)
    };
    let mut train_set = Vec::new();
    for s in 0..config.train.sessions {
        train_set.extend(build(config.seed.wrapping_add(s as u64))?);
    }
    let mut holdout = Vec::new();
    for s in 0..config.train.holdout_sessions {
        holdout.extend(build(config.seed.wrapping_add(1000 + s as u64))?);
    }
    if train_set.is_empty() || holdout.is_empty() {
        return Err(Error::Data("empty training or holdout set".into()));
    }

    let mut model = ConvLstm::init(model_cfg, session.grid, config.seed)?;
    let mut opt = RmsProp::new(config.train.learning_rate, 0.9, 1e-8)?;
    let mut curve = format!("# {CURVE_SCHEMA}\nepoch,train_loss,query_loss\n");
    for epoch in 1..=config.train.epochs {
        let mut total = 0.0;
        for (window, truth) in &train_set {
            let (loss, grads) = model.loss_and_grads(window, truth)?;
            opt.step(model.params_mut(), &grads)?;
            total += loss;
        }
        let train_loss = total / train_set.len() as f64;
        let mut q = 0.0;
        for (window, truth) in &holdout {
            let (loss, _) = model.loss_and_grads(window, truth)?;
            q += loss;
        }
        let query_loss = q / holdout.len() as f64;
        curve.push_str(&format!("{epoch},{train_loss:.6},{query_loss:.6}\n"));
        println!("epoch {epoch}: train {train_loss:.4} holdout {query_loss:.4}");
    }
    let ck = config.output_dir.join("convlstm.ck");
    model.save(&ck)?;
    write_text(&config.output_dir.join("train_curve.csv"), &curve)?;
    println!("saved {}", ck.display());
    Ok(())
}

// ── meta-train / finetune ────────────────────────────────────────────

pub fn cmd_meta_train(config: &ExperimentConfig, resume: Option<&Path>) -> Result<()> {
    let net = SaliencyNet::new(config.saliency_net.clone())?;
    let family = config.family.to_family(&config.saliency_net, config.seed);
    let (theta, start_iter) = match resume {
        Some(path) => {
            let (params, info) = load_meta_checkpoint(path)?;
            if info.net != config.saliency_net {
                return Err(Error::Config(
                    "resume checkpoint topology differs from the configured net".into(),
                ));
            }
            (params, info.iterations_run)
        }
        None => (net.init_params(config.seed), 0),
    };
    let (theta, curve) =
        meta_train_from(&net, &family, &config.meta, config.seed, theta, start_iter)?;

    let mut csv = format!("# {CURVE_SCHEMA}\niteration,query_loss\n");
    for (i, loss) in curve.iter().enumerate() {
        csv.push_str(&format!("{},{loss:.6}\n", start_iter + i + 1));
    }
    write_text(&config.output_dir.join("meta_curve.csv"), &csv)?;
    let ck = config.output_dir.join("meta.ck");
    save_meta_checkpoint(
        &ck,
        &theta,
        &MetaCheckpointInfo {
            net: config.saliency_net.clone(),
            meta: config.meta.clone(),
            iterations_run: config.meta.meta_iterations,
        },
    )?;
    println!("saved {}", ck.display());
    Ok(())
}

pub fn cmd_finetune(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let default_ck = config.output_dir.join("meta.ck");
    let ck_path = checkpoint.unwrap_or(&default_ck);
    let (mut params, info) = load_meta_checkpoint(ck_path)?;
    let net = SaliencyNet::new(info.net.clone())?;
    let family = config.family.to_family(&info.net, config.seed);
    let mut rng = seeded_rng(config.seed.wrapping_add(0xF1E7));
    let tasks = make_saliency_tasks(&family, &mut rng)?;
    let task = &tasks[config.finetune.video % tasks.len()];

    let mut csv = format!("# {CURVE_SCHEMA}\nepoch,train_loss,query_loss\n");
    for epoch in 1..=config.finetune.epochs {
        let (next, curve) = fine_tune(
            &net,
            &params,
            &task.support,
            &task.query,
            config.finetune.alpha,
            1,
        )?;
        params = next;
        let train_loss = net.loss(&params, &task.support)?;
        csv.push_str(&format!("{epoch},{train_loss:.6},{:.6}\n", curve[1]));
    }
    write_text(&config.output_dir.join("finetune_curve.csv"), &csv)?;
    let out = config.output_dir.join("finetuned.ck");
    save_meta_checkpoint(
        &out,
        &params,
        &MetaCheckpointInfo {
            net: info.net,
            meta: info.meta,
            iterations_run: info.iterations_run,
        },
    )?;
    println!("saved {}", out.display());
    Ok(())
}

// ── predictor evaluation ─────────────────────────────────────────────

pub fn cmd_eval_predictor(config: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<()> {
    let session = config.session.to_session(&config.confidence)?;
    let synth_cfg = config.synth.to_synth_config(&session)?;
    let model_cfg = config.model.to_convlstm_config(&session)?;

    let model = match checkpoint {
        Some(path) => ConvLstm::load(path)?,
        None => {
            // No checkpoint: train a small model on separate seeded sessions.
            let mut train_set = Vec::new();
            for s in 0..config.eval.train_sessions {
                let sess = generate_session(&synth_cfg, config.seed.wrapping_add(5000 + s as u64))?;
                train_set.extend(chunk_windows(
                    &sess,
                    &synth_cfg,
                    session.grid,
                    session.fov,
                    session.window_len,
                )?);
            }
            let mut m = ConvLstm::init(model_cfg, session.grid, config.seed)?;
            crate::predictors::train_convlstm(
                &mut m,
                &train_set,
                &crate::predictors::TrainConfig {
                    epochs: config.eval.train_epochs,
                    learning_rate: config.train.learning_rate,
                    ..Default::default()
                },
            )?;
            m
        }
    };

    let mut csv = format!("# {METRICS_SCHEMA}\npredictor,session,accuracy,f1\n");
    let mut agg: std::collections::BTreeMap<&str, (f64, f64, usize)> = Default::default();
    for s_idx in 0..config.eval.sessions {
        let sess = generate_session(&synth_cfg, config.seed.wrapping_add(s_idx as u64))?;
        let windows = chunk_windows(
            &sess,
            &synth_cfg,
            session.grid,
            session.fov,
            session.window_len,
        )?;
        for name in ["lr", "convlstm"] {
            let (mut acc, mut f1, mut n) = (0.0, 0.0, 0usize);
            for (w_idx, (window, truth)) in windows.iter().enumerate() {
                let chunk = session.window_len + w_idx;
                let probs = match name {
                    "lr" => {
                        let lo = (chunk as f64 - 1.0) * session.chunk_length;
                        let hist: Vec<_> = sess
                            .head
                            .iter()
                            .filter(|s| s.t >= lo && s.t < chunk as f64 * session.chunk_length)
                            .cloned()
                            .collect();
                        let horizon = (chunk as f64 + 0.5) * session.chunk_length
                            - hist.last().map(|s| s.t).unwrap_or(0.0);
                        lr_predict(&hist, horizon, session.grid, session.fov)?
                    }
                    _ => model.predict(window)?,
                };
                let m = prediction_metrics(probs.values(), truth, session.p_vp)?;
                acc += m.accuracy;
                f1 += m.f1;
                n += 1;
            }
            let (a, f) = (acc / n as f64, f1 / n as f64);
            csv.push_str(&format!("{name},{s_idx},{a:.6},{f:.6}\n"));
            let e = agg.entry(name).or_insert((0.0, 0.0, 0));
            e.0 += a;
            e.1 += f;
            e.2 += 1;
        }
    }
    for (name, (a, f, n)) in agg {
        csv.push_str(&format!(
            "{name},aggregate,{:.6},{:.6}\n",
            a / n as f64,
            f / n as f64
        ));
    }
    write_text(&config.output_dir.join("metrics.csv"), &csv)?;
    println!("wrote {}", config.output_dir.join("metrics.csv").display());
    Ok(())
}

// ── plan / convert-trace ─────────────────────────────────────────────

fn load_time_points(path: &Path, expect_x: &str) -> Result<Vec<(f64, f64)>> {
    let (headers, rows) = load_measurements_csv(path)?;
    if headers[0] != expect_x || headers[1] != "time_ms" {
        return Err(Error::Data(format!(
            "{}: expected header {expect_x},time_ms, found {headers:?}",
            path.display()
        )));
    }
    // Milliseconds on disk, seconds in the model.
    Ok(rows.into_iter().map(|(x, ms)| (x, ms / 1000.0)).collect())
}

pub fn cmd_plan(config: &ExperimentConfig, sf_csv: &Path, ratio_csv: &Path) -> Result<()> {
    let sf_points = load_time_points(sf_csv, "sf")?;
    let ratio_points = load_time_points(ratio_csv, "ratio")?;
    let model = TimeModel::fit(
        &sf_points,
        &ratio_points,
        config.plan.sf_ref,
        config.plan.ratio_ref,
    )?;
    println!(
        "fitted time model: a={} c_r={:.6} d={:.8} b={:.6} (rms residual {:.2e})",
        model.a, model.c_r, model.d, model.b, model.residual
    );
    let plan = plan_overheads(
        &model,
        config.session.chunk_length,
        &config.plan.sf_grid,
        config.session.ratio,
    )?;
    let t = model.time(plan.sf, plan.ratio as f64);
    println!(
        "plan: sf={} ratio={} (predicted time {:.4}s < chunk {:.4}s)",
        plan.sf, plan.ratio, t, config.session.chunk_length
    );
    write_text(
        &config.output_dir.join("plan.csv"),
        &format!(
            "# {PLAN_SCHEMA}\nsf,ratio,predicted_time_s,chunk_length_s\n{},{},{:.6},{:.6}\n",
            plan.sf, plan.ratio, t, config.session.chunk_length
        ),
    )?;
    Ok(())
}

pub fn cmd_convert_trace(input: &Path, output: &Path, scale: f64) -> Result<()> {
    let trace = BandwidthTrace::from_csv(input, scale)?;
    let mut out = String::from("t_s,mbps\n");
    for &(t, v) in trace.samples() {
        out.push_str(&format!("{t},{v}\n"));
    }
    write_text(output, &out)?;
    println!("wrote {} samples to {}", trace.samples().len(), output.display());
    Ok(())
}

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
