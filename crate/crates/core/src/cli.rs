//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on a usage error, 1 on a runtime error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data_io::{self, SamplePair, SynthParams};
use crate::error::{invalid, Error, Result};
use crate::frequency::dwt2_haar;
use crate::metrics::{self, MetricReport};
use crate::model::{self, ModelConfig, Network, SpsaConfig};
use crate::scan::{scan_order, PolygonSpec, Variant};
use crate::tensor::{crop, reflect_pad, Tensor};

#[derive(Debug, Parser)]
#[command(name = "polymamba", version, about = "Polygon-scan vessel segmentation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the polygon scan permutation of an H×W grid.
    ScanOrder(ScanOrderArgs),
    /// Write the four Haar subbands of a tensor file.
    Dwt(DwtArgs),
    /// Run a checkpoint on an image.
    Forward(ForwardArgs),
    /// Train a model on synthetic vessels with SPSA and print the loss trace.
    TrainSpsa(TrainArgs),
    /// Print segmentation metrics of a prediction as CSV.
    Eval(EvalArgs),
    /// Train and evaluate one toy model per scan shape.
    AblateShape(AblateArgs),
}

/// Side count or shape name (`triangle`, `quadrilateral`, `pentagon`,
/// `hexagon`, `octagon`).
fn parse_sides(s: &str) -> std::result::Result<usize, String> {
    if let Ok(n) = s.parse::<usize>() {
        return Ok(n);
    }
    PolygonSpec::from_shape_name(s)
        .map(|p| p.n_sides)
        .ok_or_else(|| format!("expected a side count or shape name, found '{s}'"))
}

#[derive(Debug, Args)]
struct ScanOrderArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value = "5", value_parser = parse_sides)]
    sides: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long, default_value_t = 1.0)]
    scale_step: f64,
    #[arg(long, default_value = "rot0")]
    variant: Variant,
    /// Also write the header line and permutation to this file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a P6 heat map of visit rank.
    #[arg(long)]
    ppm: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DwtArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Subbands go to `<prefix>_ll.pmt`, `_lh`, `_hl` and `_hh`.
    #[arg(long)]
    out_prefix: String,
}

#[derive(Debug, Args)]
struct ForwardArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// P5 greymap or tensor file.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key=value` model config; the micro model when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    /// Seeds the data, the initialisation and the perturbations. Defaults to
    /// the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    images: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = SpsaConfig::default().step_size)]
    step_size: f64,
    #[arg(long, default_value_t = SpsaConfig::default().perturb_size)]
    perturb_size: f64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Field-of-view mask; pixels outside are ignored.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// Comma-separated shapes; `unet` adds the plain baseline.
    #[arg(long, value_delimiter = ',', default_value = "triangle,quadrilateral,pentagon,hexagon,octagon")]
    shapes: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 8)]
    train_images: usize,
    #[arg(long, default_value_t = 4)]
    test_images: usize,
    #[arg(long, default_value_t = 16)]
    size: usize,
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long)]
    no_psvss: bool,
    #[arg(long)]
    no_sfcam: bool,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match dispatch(cli.command, &mut out).and_then(|_| out.flush().map_err(Error::from)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut impl Write) -> Result<()> {
    match cmd {
        Command::ScanOrder(a) => scan_order_cmd(a, out),
        Command::Dwt(a) => dwt_cmd(a),
        Command::Forward(a) => forward_cmd(a),
        Command::TrainSpsa(a) => train_cmd(a, out),
        Command::Eval(a) => eval_cmd(a, out),
        Command::AblateShape(a) => ablate_cmd(a, out),
    }
}

fn scan_order_cmd(a: ScanOrderArgs, out: &mut impl Write) -> Result<()> {
    let spec = PolygonSpec {
        scale_step: a.scale_step,
        ..PolygonSpec::regular(a.sides).with_theta(a.theta)
    };
    let order = scan_order(a.height, a.width, &spec, a.variant)?;
    let text = order.to_text();
    // second line of the text form is the bare permutation
    writeln!(out, "{}", text.lines().nth(1).unwrap_or(""))?;
    if let Some(path) = a.out {
        fs::write(path, text)?;
    }
    if let Some(path) = a.ppm {
        data_io::write_ppm(path, &order.heatmap())?;
    }
    Ok(())
}

fn dwt_cmd(a: DwtArgs) -> Result<()> {
    let x = data_io::read_tensor(&a.input)?;
    let shape = x.shape().to_vec();
    let x = match shape[..] {
        [h, w] => x.reshape(&[1, h, w])?,
        [_, _, _] => x,
        _ => return invalid(format!("dwt needs an H×W or C×H×W tensor, got shape {shape:?}")),
    };
    let s = dwt2_haar(&x)?;
    for (name, band) in [("ll", s.ll), ("lh", s.lh), ("hl", s.hl), ("hh", s.hh)] {
        let band = if shape.len() == 2 {
            let (_, h, w) = band.dims3()?;
            band.reshape(&[h, w])?
        } else {
            band
        };
        data_io::write_tensor(format!("{}_{name}.pmt", a.out_prefix), &band)?;
    }
    Ok(())
}

/// Reads a tensor file or a P5 greymap, going by the magic bytes.
fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let t = if bytes.starts_with(data_io::TENSOR_MAGIC) {
        data_io::decode_tensor(&bytes)?
    } else {
        data_io::decode_pgm(&bytes)?
    };
    match *t.shape() {
        [h, w] => t.reshape(&[1, h, w]),
        _ => Ok(t),
    }
}

/// Reflect-pads to the network stride, runs it and crops back.
pub fn predict(net: &Network, image: &Tensor) -> Result<Tensor> {
    let (_, h, w) = image.dims3()?;
    let s = net.cfg.stride();
    let padded = reflect_pad(image, h.div_ceil(s) * s, w.div_ceil(s) * s)?;
    crop(&net.forward(&padded)?, h, w)
}

fn forward_cmd(a: ForwardArgs) -> Result<()> {
    let (cfg, store) = model::load_checkpoint(&a.checkpoint)?;
    let net = Network::from_store(&cfg, &store)?;
    let prob = predict(&net, &read_image(&a.input)?)?;
    data_io::write_tensor(&a.out, &prob)
}

fn load_config(path: Option<&Path>) -> Result<ModelConfig> {
    match path {
        Some(p) => fs::read_to_string(p)?.parse(),
        None => Ok(ModelConfig::micro()),
    }
}

fn synth_params(size: usize) -> SynthParams {
    SynthParams {
        size,
        ..SynthParams::small()
    }
}

fn train_cmd(a: TrainArgs, out: &mut impl Write) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if a.images == 0 {
        return invalid("--images must be at least 1");
    }
    let data = data_io::synth_dataset(cfg.seed, a.images, &synth_params(a.size))?;
    let spsa = SpsaConfig {
        steps: a.steps,
        step_size: a.step_size,
        perturb_size: a.perturb_size,
        seed: cfg.seed,
        ..SpsaConfig::default()
    };
    let (store, trace) = model::spsa_train(&data, &model::init_params(&cfg)?, &cfg, &spsa)?;
    writeln!(out, "step,loss")?;
    writeln!(out, "0,{:.8}", trace.initial)?;
    for (k, l) in trace.steps.iter().enumerate() {
        writeln!(out, "{},{l:.8}", k + 1)?;
    }
    writeln!(out, "final,{:.8}", trace.last)?;
    model::save_checkpoint(&a.out, &cfg, &store)
}

fn eval_cmd(a: EvalArgs, out: &mut impl Write) -> Result<()> {
    let pred = data_io::read_tensor(&a.pred)?;
    let gt = data_io::read_tensor(&a.gt)?;
    let fov = a.mask.as_deref().map(data_io::read_tensor).transpose()?;
    let report = metrics::evaluate(&pred, &gt, a.threshold, fov.as_ref())?;
    writeln!(out, "{}", MetricReport::CSV_HEADER)?;
    writeln!(out, "{}", report.to_csv_row())?;
    Ok(())
}

/// Stacks `1 × H × W` maps into one `N × H × W` tensor.
fn stack(maps: &[Tensor]) -> Result<Tensor> {
    let (_, h, w) = maps[0].dims3()?;
    let data: Vec<f64> = maps.iter().flat_map(|m| m.data().iter().copied()).collect();
    Tensor::from_vec(&[maps.len(), h, w], data)
}

/// Trains one model on `train` and scores it on `test`, pooling all test
/// pixels into a single confusion matrix and ROC curve.
pub fn train_and_score(
    cfg: &ModelConfig,
    spsa: &SpsaConfig,
    train: &[SamplePair],
    test: &[SamplePair],
    threshold: f64,
) -> Result<MetricReport> {
    if test.is_empty() {
        return invalid("ablation needs at least one test image");
    }
    let (store, _) = model::spsa_train(train, &model::init_params(cfg)?, cfg, spsa)?;
    let net = Network::from_store(cfg, &store)?;
    let preds = test.iter().map(|p| predict(&net, &p.image)).collect::<Result<Vec<_>>>()?;
    let masks: Vec<Tensor> = test.iter().map(|p| p.mask.clone()).collect();
    metrics::evaluate(&stack(&preds)?, &stack(&masks)?, threshold, None)
}

fn ablate_cmd(a: AblateArgs, out: &mut impl Write) -> Result<()> {
    let base = load_config(a.config.as_deref())?;
    let mut runs = Vec::with_capacity(a.shapes.len());
    for shape in &a.shapes {
        let shape = shape.trim();
        let mut cfg = ModelConfig { seed: a.seed, ..base };
        if shape == "unet" {
            cfg = cfg.baseline();
        } else {
            let sides = parse_sides(shape).map_err(Error::InvalidArgument)?;
            cfg.polygon.n_sides = sides;
            cfg.use_psvss &= !a.no_psvss;
            cfg.use_sfcam &= !a.no_sfcam;
        }
        cfg.validate()?;
        runs.push((shape.to_string(), cfg));
    }
    let params = synth_params(a.size);
    let train = data_io::synth_dataset(a.seed, a.train_images, &params)?;
    // disjoint seed range for the held-out images
    let test = data_io::synth_dataset(a.seed.wrapping_add(1 << 32), a.test_images, &params)?;
    let spsa = SpsaConfig {
        steps: a.steps,
        seed: a.seed,
        ..SpsaConfig::default()
    };
    writeln!(out, "Shape,{}", MetricReport::CSV_HEADER)?;
    for (name, cfg) in runs {
        let report = train_and_score(&cfg, &spsa, &train, &test, a.threshold)?;
        writeln!(out, "{name},{}", report.to_csv_row())?;
    }
    Ok(())
}
