use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{ArgAction, Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use shiftgen::format::{
    read_images, read_latents, write_images, write_latents, ImageFile, ImagePanelReader, LatentFile,
    IMAGE_MAGIC, LATENT_MAGIC,
};
use shiftgen::manifest::{content_hash, RunManifest};
use shiftgen::nn::{one_nn_distance_streaming, NnConfig, TrainSource, DEFAULT_BUDGET};
use shiftgen::robustness::Weighting;
use shiftgen::shift::ExtendTau;
use shiftgen::toy::{decode_batch, ToyDecoderConfig};
use shiftgen::{
    derive_targets, fit_robustness_slope, intensity_analytic, intensity_mc, run_experiment_with,
    sample_shifted_batch, Dataset, Error, EvalPoint, ExperimentConfig, Family, LabelRule, Metric,
    Result, ShiftSpec, XAxis,
};

#[derive(Parser)]
#[command(name = "shiftgen", version, about = "Controlled latent-space distribution shifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample shifted latent codes and write a CSLT file.
    GenLatents(GenLatentsArgs),
    /// Analytic and Monte Carlo shift intensity.
    Intensity(IntensityArgs),
    /// Mean 1-NN distance from a shifted set to a training set.
    NnDist(NnDistArgs),
    /// Robustness slope from a CSV of evaluation points.
    Slope(SlopeArgs),
    /// Render latent codes through the toy decoder into a CSIM file.
    ToyGen(ToyGenArgs),
    /// Run the toy robustness experiment end to end.
    ToyRun(ToyRunArgs),
    /// Check CSLT, CSIM and manifest files.
    Validate(ValidateArgs),
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenLatentsArgs {
    /// JSON file with defaults for any of these flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    /// Latent dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stream_id: Option<u64>,
    #[arg(long)]
    target_seed: Option<u64>,
    /// Labels cycle through this many classes.
    #[arg(long)]
    classes: Option<u16>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest path; defaults to `<out>.manifest.json`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntensityArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    /// θ of the shifted distribution.
    #[arg(long)]
    theta: Option<f64>,
    /// Radius of the shifted distribution.
    #[arg(long)]
    radius: Option<f64>,
    /// θ or R of the training distribution; 0 or 0.8 by default.
    #[arg(long)]
    train_param: Option<f64>,
    #[arg(long)]
    d: Option<usize>,
    /// Monte Carlo sample count.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    target_seed: Option<u64>,
    /// Extend interpolation convention: corrected or printed.
    #[arg(long)]
    tau: Option<String>,
    /// Also write the report here, with a manifest beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NnDistArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Training set, CSIM or CSLT.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Shifted set, same format and sample shape as the training set.
    #[arg(long)]
    shift: Option<PathBuf>,
    #[arg(long)]
    metric: Option<Metric>,
    /// Memory budget in bytes; larger CSIM training sets are streamed.
    #[arg(long)]
    budget: Option<usize>,
    /// CSV of shift_index, distance, argmin_train_index.
    #[arg(long)]
    per_point: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SlopeArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// CSV with columns shift_param, nn_distance, accuracy, n_test.
    #[arg(long)]
    points: Option<PathBuf>,
    /// shift_param or nn_distance.
    #[arg(long)]
    x_axis: Option<XAxis>,
    /// Accuracy on the unshifted test split; defaults to the accuracy at the
    /// smallest shift parameter.
    #[arg(long)]
    baseline: Option<f64>,
    /// unweighted or inverse_variance.
    #[arg(long)]
    weighting: Option<Weighting>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToyGenArgs {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Decode these latents instead of sampling.
    #[arg(long)]
    latents: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    stream_id: Option<u64>,
    #[arg(long)]
    target_seed: Option<u64>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ToyRunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Write every generated image set as CSIM under `<out>/images`.
    #[arg(long, action = ArgAction::SetTrue)]
    dump_images: bool,
    #[command(flatten)]
    overrides: ToyRunOverrides,
}

/// Top-level experiment keys that can be set from the command line.
#[derive(Args, Serialize)]
struct ToyRunOverrides {
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    train_family: Option<Family>,
    #[arg(long)]
    train_param: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    latent_seed: Option<u64>,
    #[arg(long)]
    target_seed: Option<u64>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    weighting: Option<Weighting>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(required = true)]
    paths: Vec<PathBuf>,
}

fn parse_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}: {e}", path.display()))
}

fn read_config(path: Option<&Path>) -> Result<serde_json::Map<String, Value>> {
    let Some(path) = path else {
        return Ok(serde_json::Map::new());
    };
    let text = fs::read_to_string(path)?;
    match serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))? {
        Value::Object(map) => Ok(map),
        _ => Err(Error::Config(format!("{}: expected a JSON object", path.display()))),
    }
}

/// Config-file keys overlaid with whichever flags were given.
fn merge<T: Serialize>(config: Option<&Path>, flags: &T) -> Result<Value> {
    let mut map = read_config(config)?;
    let Value::Object(given) = serde_json::to_value(flags).map_err(|e| Error::Config(e.to_string()))? else {
        unreachable!("flag structs serialize to objects");
    };
    for (k, v) in given {
        if !v.is_null() {
            map.insert(k, v);
        }
    }
    Ok(Value::Object(map))
}

fn resolve<T: Serialize + DeserializeOwned>(config: Option<&Path>, flags: &T) -> Result<T> {
    let merged = merge(config, flags)?;
    serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::InvalidArgument(format!("missing --{flag}")))
}

fn shift_param(family: Family, theta: Option<f64>, radius: Option<f64>) -> Result<f64> {
    match family {
        Family::Prior => Ok(0.0),
        Family::Extend | Family::Overlap => need(theta, "theta"),
        Family::Truncation => need(radius, "radius"),
    }
}

fn default_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// `file` relative to the manifest's directory when it lives there.
fn record_path(manifest: &Path, file: &Path) -> String {
    let dir = manifest.parent().unwrap_or(Path::new(""));
    file.strip_prefix(dir)
        .ok()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(file)
        .to_string_lossy()
        .into_owned()
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string(v).map_err(|e| Error::Config(e.to_string()))?);
    Ok(())
}

/// Writes the JSON result to `out` if given, then the manifest if there is
/// anywhere to put it (`--manifest`, else next to `out`).
fn write_json_output(
    out: Option<&Path>,
    manifest_path: Option<PathBuf>,
    mut manifest: RunManifest,
    value: &impl Serialize,
) -> Result<()> {
    let mpath = manifest_path.or_else(|| out.map(default_manifest));
    if let Some(out) = out {
        let text = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))? + "\n";
        fs::write(out, &text)?;
        let m = mpath.as_deref().expect("set when out is");
        manifest.record_file(&record_path(m, out), text.as_bytes());
    }
    match mpath {
        Some(m) => manifest.write(&m),
        None => Ok(()),
    }
}

fn gen_latents(args: GenLatentsArgs) -> Result<()> {
    let a = resolve(args.config.as_deref(), &args)?;
    let family = need(a.family, "family")?;
    let dim = need(a.d, "d")?;
    let n = need(a.n, "n")?;
    let out = need(a.out.clone(), "out")?;
    let (seed, stream_id, target_seed) = (a.seed.unwrap_or(0), a.stream_id.unwrap_or(0), a.target_seed.unwrap_or(0));
    let classes = a.classes.unwrap_or(10);
    if classes == 0 {
        return Err(Error::InvalidArgument("--classes must be positive".into()));
    }
    let param = shift_param(family, a.theta, a.radius)?;
    let targets = match family {
        Family::Extend | Family::Overlap => Some(derive_targets(target_seed, dim)?),
        _ => None,
    };
    let spec = ShiftSpec::from_family(family, param, dim, targets.as_ref())?;
    let batch = sample_shifted_batch(&spec, n, seed, stream_id, LabelRule::RoundRobin { classes })?;
    let bytes = write_latents(&out, &LatentFile::from_shifted(&batch))?;

    let mpath = a.manifest.clone().unwrap_or_else(|| default_manifest(&out));
    let mut manifest = RunManifest::new("gen-latents", json!({ "spec": spec, "args": a }))
        .seed("seed", seed)
        .seed("stream_id", stream_id)
        .seed("target_seed", target_seed);
    manifest.grid = vec![param];
    manifest.record_file(&record_path(&mpath, &out), &bytes);
    manifest.write(&mpath)?;
    print_json(&json!({
        "out": out,
        "n": n,
        "d": dim,
        "family": family,
        "param": param,
        "hash": content_hash(&bytes),
    }))
}

fn intensity(args: IntensityArgs) -> Result<()> {
    let a = resolve(args.config.as_deref(), &args)?;
    let family = need(a.family, "family")?;
    let dim = need(a.d, "d")?;
    let n = a.n.unwrap_or(1_000_000);
    let seed = a.seed.unwrap_or(0);
    let target_seed = a.target_seed.unwrap_or(0);
    let param = shift_param(family, a.theta, a.radius)?;
    let train_param = a.train_param.unwrap_or(match family {
        Family::Truncation => shiftgen::shift::TRUNCATION_TRAIN_RADIUS,
        _ => 0.0,
    });
    let tau = match a.tau.as_deref() {
        None | Some("corrected") => ExtendTau::Corrected,
        Some("printed") => ExtendTau::Printed,
        Some(other) => return Err(Error::InvalidArgument(format!("unknown tau convention '{other}'"))),
    };
    let targets = match family {
        Family::Extend | Family::Overlap => Some(derive_targets(target_seed, dim)?),
        _ => None,
    };
    let build = |p: f64| match (&targets, family) {
        (Some(t), Family::Extend) => ShiftSpec::extend_with(p, t.clone(), tau),
        _ => ShiftSpec::from_family(family, p, dim, targets.as_ref()),
    };
    let (train, shift) = (build(train_param)?, build(param)?);
    let mut report = intensity_mc(&train, &shift, n, seed)?;
    report.analytic = intensity_analytic(&train, &shift).ok();
    let manifest = RunManifest::new("intensity", json!(a))
        .seed("seed", seed)
        .seed("target_seed", target_seed);
    write_json_output(a.out.as_deref(), a.manifest.clone(), manifest, &report)?;
    print_json(&report)
}

enum Loaded {
    Latents(LatentFile),
    Images(ImageFile),
}

fn magic(path: &Path) -> Result<[u8; 4]> {
    let mut head = [0u8; 4];
    let mut f = fs::File::open(path)?;
    let got = f.read(&mut head)?;
    if got < 4 {
        head[got..].fill(0);
    }
    Ok(head)
}

fn load(path: &Path) -> Result<Loaded> {
    if magic(path)? == *LATENT_MAGIC {
        Ok(Loaded::Latents(read_latents(path)?))
    } else {
        Ok(Loaded::Images(read_images(path)?))
    }
}

fn to_dataset(l: Loaded) -> Result<Dataset> {
    match l {
        Loaded::Latents(f) => Dataset::flat(f.dim as usize, f.values, f.labels),
        Loaded::Images(f) => f.into_dataset(),
    }
}

fn nn_dist(args: NnDistArgs) -> Result<()> {
    let a = resolve(args.config.as_deref(), &args)?;
    let train_path = need(a.train.clone(), "train")?;
    let shift_path = need(a.shift.clone(), "shift")?;
    let metric = a.metric.unwrap_or_default();
    let budget = a.budget.unwrap_or(DEFAULT_BUDGET);
    let cfg = NnConfig {
        memory_budget: budget,
        ..NnConfig::default()
    };
    let shift = to_dataset(load(&shift_path)?)?;
    let train_bytes = fs::metadata(&train_path)?.len() as usize;
    let shift_bytes = shift.data().len() * 4;
    let stream = magic(&train_path)? == *IMAGE_MAGIC && train_bytes + shift_bytes > budget;
    let (result, n_train) = if stream {
        let mut reader = ImagePanelReader::open(&train_path)?;
        let n_train = reader.len();
        (one_nn_distance_streaming(&mut reader, None, &shift, metric, cfg)?, n_train)
    } else {
        let train = to_dataset(load(&train_path)?)?.with_norms();
        let n_train = train.len();
        let mut source = &train;
        (
            one_nn_distance_streaming(&mut source, train.norms(), &shift, metric, cfg)?,
            n_train,
        )
    };

    let mut manifest = RunManifest::new("nn-dist", json!(a));
    manifest.metric = Some(metric.to_string());
    let mpath = a
        .manifest
        .clone()
        .or_else(|| a.out.as_deref().or(a.per_point.as_deref()).map(default_manifest));
    if let (Some(pp), Some(mpath)) = (&a.per_point, &mpath) {
        let mut w = csv::Writer::from_path(pp).map_err(|e| parse_err(pp, e))?;
        w.write_record(["shift_index", "distance", "argmin_train_index"])
            .map_err(|e| parse_err(pp, e))?;
        for (j, (d, i)) in result.per_point.iter().zip(&result.argmin_indices).enumerate() {
            w.write_record([j.to_string(), d.to_string(), i.to_string()])
                .map_err(|e| parse_err(pp, e))?;
        }
        w.flush()?;
        drop(w);
        manifest.record_file(&record_path(mpath, pp), &fs::read(pp)?);
    }
    let summary = json!({
        "mean_distance": result.mean_distance,
        "metric": metric,
        "n_train": n_train,
        "n_shift": shift.len(),
        "streamed": stream,
    });
    write_json_output(a.out.as_deref(), mpath, manifest, &summary)?;
    print_json(&summary)
}

#[derive(Deserialize)]
struct PointRow {
    shift_param: f64,
    nn_distance: f64,
    accuracy: f64,
    n_test: usize,
}

fn read_points(path: &Path) -> Result<Vec<EvalPoint>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e))?;
    r.deserialize::<PointRow>()
        .map(|row| {
            let row = row.map_err(|e| parse_err(path, e))?;
            Ok(EvalPoint {
                shift_param: row.shift_param,
                nn_distance: row.nn_distance,
                accuracy: row.accuracy,
                n_test: row.n_test,
            })
        })
        .collect()
}

fn slope(args: SlopeArgs) -> Result<()> {
    let a = resolve(args.config.as_deref(), &args)?;
    let path = need(a.points.clone(), "points")?;
    let points = read_points(&path)?;
    let fit = fit_robustness_slope(
        &points,
        a.x_axis.unwrap_or(XAxis::ShiftParam),
        a.baseline,
        a.weighting.unwrap_or_default(),
    )?;
    let mut manifest = RunManifest::new("slope", json!(a));
    manifest.grid = points.iter().map(|p| p.shift_param).collect();
    write_json_output(a.out.as_deref(), a.manifest.clone(), manifest, &fit)?;
    print_json(&fit)
}

fn toy_gen(args: ToyGenArgs) -> Result<()> {
    let a = resolve(args.config.as_deref(), &args)?;
    let out = need(a.out.clone(), "out")?;
    let defaults = ToyDecoderConfig::default();
    let decoder = ToyDecoderConfig {
        height: a.height.unwrap_or(defaults.height),
        width: a.width.unwrap_or(defaults.width),
        ..defaults
    };
    let mut manifest = RunManifest::new("toy-gen", json!({ "args": a, "decoder": decoder }));
    let batch = if let Some(path) = &a.latents {
        let file = read_latents(path)?;
        manifest.record_file(&path.to_string_lossy(), &fs::read(path)?);
        manifest = manifest.seed("latent_seed", file.seed);
        file.to_batch()
    } else {
        let family = need(a.family, "family")?;
        let dim = decoder.latent_dim;
        let (seed, stream_id, target_seed) = (a.seed.unwrap_or(0), a.stream_id.unwrap_or(0), a.target_seed.unwrap_or(0));
        let param = shift_param(family, a.theta, a.radius)?;
        let targets = match family {
            Family::Extend | Family::Overlap => Some(derive_targets(target_seed, dim)?),
            _ => None,
        };
        let spec = ShiftSpec::from_family(family, param, dim, targets.as_ref())?;
        let classes = decoder.classes.len() as u16;
        manifest = manifest
            .seed("seed", seed)
            .seed("stream_id", stream_id)
            .seed("target_seed", target_seed);
        manifest.grid = vec![param];
        sample_shifted_batch(&spec, need(a.n, "n")?, seed, stream_id, LabelRule::RoundRobin { classes })?.batch
    };
    let images = decode_batch(&batch, &decoder)?;
    let (bytes, clamped) = write_images(&out, &ImageFile::from_dataset(&images)?)?;
    let mpath = a.manifest.clone().unwrap_or_else(|| default_manifest(&out));
    manifest.clamped_values = clamped as u64;
    manifest.record_file(&record_path(&mpath, &out), &bytes);
    manifest.write(&mpath)?;
    print_json(&json!({
        "out": out,
        "n": images.len(),
        "shape": images.shape(),
        "clamped_values": clamped,
        "hash": content_hash(&bytes),
    }))
}

#[derive(Serialize)]
struct PointCsvRow {
    shift_param: f64,
    nn_distance: f64,
    accuracy: f64,
    n_test: usize,
    delta_accuracy: f64,
    intensity: Option<f64>,
}

fn toy_run(args: ToyRunArgs) -> Result<()> {
    let merged = merge(args.config.as_deref(), &args.overrides)?;
    let cfg: ExperimentConfig = serde_json::from_value(merged).map_err(|e| Error::Config(e.to_string()))?;
    let dir = &args.out;
    fs::create_dir_all(dir)?;
    let image_dir = dir.join("images");
    if args.dump_images {
        fs::create_dir_all(&image_dir)?;
    }

    let mut dumped: Vec<(String, Vec<u8>)> = Vec::new();
    let mut clamped_total = 0u64;
    let report = run_experiment_with(&cfg, &mut |name, images| {
        if args.dump_images {
            let path = image_dir.join(format!("{name}.csim"));
            let (bytes, clamped) = write_images(&path, &ImageFile::from_dataset(images)?)?;
            clamped_total += clamped as u64;
            dumped.push((format!("images/{name}.csim"), bytes));
        }
        Ok(())
    })?;

    let points_path = dir.join("points.csv");
    let mut w = csv::Writer::from_path(&points_path).map_err(|e| parse_err(&points_path, e))?;
    for (p, intensity) in report.points.iter().zip(&report.intensities) {
        w.serialize(PointCsvRow {
            shift_param: p.shift_param,
            nn_distance: p.nn_distance,
            accuracy: p.accuracy,
            n_test: p.n_test,
            delta_accuracy: p.accuracy - report.baseline_accuracy,
            intensity: *intensity,
        })
        .map_err(|e| parse_err(&points_path, e))?;
    }
    w.flush()?;
    drop(w);

    let fits = json!({
        "train_spec": report.train_spec,
        "train_accuracy": report.train_accuracy,
        "baseline_accuracy": report.baseline_accuracy,
        "fit_shift_param": report.fit_shift_param,
        "fit_nn_distance": report.fit_nn_distance,
        "pearson_delta_nn": report.pearson_delta_nn,
    });
    let fits_text = serde_json::to_string_pretty(&fits).map_err(|e| Error::Config(e.to_string()))? + "\n";
    fs::write(dir.join("fits.json"), &fits_text)?;

    let mut manifest = report.manifest.clone();
    manifest.record_file("points.csv", &fs::read(&points_path)?);
    manifest.record_file("fits.json", fits_text.as_bytes());
    for (name, bytes) in &dumped {
        manifest.record_file(name, bytes);
    }
    manifest.clamped_values = clamped_total;
    manifest.write(&dir.join("manifest.json"))?;
    print_json(&json!({
        "out": dir,
        "baseline_accuracy": report.baseline_accuracy,
        "fit_shift_param": report.fit_shift_param,
        "fit_nn_distance": report.fit_nn_distance,
        "pearson_delta_nn": report.pearson_delta_nn,
    }))
}

/// Checks one file; manifests also have every recorded file re-hashed.
fn validate_one(path: &Path) -> Result<Value> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(LATENT_MAGIC) {
        let f = LatentFile::parse(&bytes)?;
        return Ok(json!({ "path": path, "kind": "cslt", "n": f.len(), "d": f.dim, "family": f.family, "param": f.param }));
    }
    if bytes.starts_with(IMAGE_MAGIC) || !bytes.trim_ascii_start().starts_with(b"{") {
        let f = ImageFile::parse(&bytes)?;
        return Ok(json!({ "path": path, "kind": "csim", "n": f.len(), "shape": [f.height, f.width, f.channels] }));
    }
    let manifest: RunManifest = serde_json::from_slice(&bytes).map_err(|e| parse_err(path, e))?;
    let dir = path.parent().unwrap_or(Path::new(""));
    for rec in &manifest.files {
        let file = dir.join(&rec.path);
        let data = fs::read(&file)?;
        let hash = content_hash(&data);
        if hash != rec.hash || data.len() as u64 != rec.bytes {
            return Err(Error::Parse(format!(
                "{}: hash {hash} does not match manifest entry {}",
                file.display(),
                rec.hash
            )));
        }
        if data.starts_with(LATENT_MAGIC) {
            LatentFile::parse(&data)?;
        } else if data.starts_with(IMAGE_MAGIC) {
            ImageFile::parse(&data)?;
        }
    }
    Ok(json!({ "path": path, "kind": "manifest", "command": manifest.command, "files": manifest.files.len() }))
}

fn validate(args: ValidateArgs) -> Result<()> {
    let files = args.paths.iter().map(|p| validate_one(p)).collect::<Result<Vec<_>>>()?;
    print_json(&json!({ "valid": true, "files": files }))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenLatents(a) => gen_latents(a),
        Command::Intensity(a) => intensity(a),
        Command::NnDist(a) => nn_dist(a),
        Command::Slope(a) => slope(a),
        Command::ToyGen(a) => toy_gen(a),
        Command::ToyRun(a) => toy_run(a),
        Command::Validate(a) => validate(a),
    }
}

fn diagnostic(kind: &str, code: u8, message: &str, offset: Option<usize>) {
    let mut v = json!({ "error": kind, "exit_code": code, "message": message });
    if let Some(o) = offset {
        v["offset"] = json!(o);
    }
    eprintln!("{v}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    ExitCode::SUCCESS
                }
                _ => {
                    let text = e.to_string();
                    let first = text.lines().next().unwrap_or("usage error");
                    diagnostic("usage", 1, first.trim_start_matches("error: "), None);
                    ExitCode::from(1)
                }
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code() as u8;
            let offset = match &e {
                Error::Format(f) => Some(f.offset),
                _ => None,
            };
            diagnostic(e.kind(), code, &e.to_string(), offset);
            ExitCode::from(code)
        }
    }
}
