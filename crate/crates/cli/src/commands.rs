use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use sser::engine::{
    read_representation, write_representation, EmissionPolicy, Engine, EngineConfig, EngineModel, RepresentationFile, ResetPolicy,
};
use sser::event_io::{generate_synthetic, read_events, slice_window, tensorize, write_events, EventFormat, EventSequence, Pattern, SceneConfig};
use sser::hwsim::{
    arrivals_at_rate, arrivals_from_timestamps, estimate_resources, schedule, trace_ns, verify_hazard_safety, Arrival, CycleReport,
    HazardCheck, HazardPolicy, PipelineConfig, ResourceEstimate,
};
use sser::quantize::{quantize_model, read_quantized_model, write_quantized_model, QuantScheme, QuantizedModel, ScaleMode, QUANT_VERSION};
use sser::rnn_core::{read_model, write_model, Autoencoder, CandidateBias, CellKind, EncoderModel, ModelFile, MODEL_MAGIC, MODEL_VERSION};
use sser::train::{
    ablation_sweep, evaluate, evaluate_quantized, heldout_windows, sample_windows, sweep_csv, train_encoder, write_adam_state, LossConfig,
    ModelSpec, QatConfig, SweepAxis, TrainConfig,
};

use crate::args::*;
use crate::manifest::{sha256_bytes, write_manifest, Stopwatch};
use crate::render::render_channels;
use crate::{Failure, OUT_DIR_ENV};

type CmdResult = Result<(), Failure>;

/// Relative output paths land under `$SSER_OUT_DIR` when it is set.
fn resolve_out(path: &Path) -> Result<PathBuf, Failure> {
    let p = match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if path.is_relative() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    };
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(p)
}

fn resolve_out_dir(dir: Option<&Path>) -> Result<PathBuf, Failure> {
    let d = match dir {
        Some(d) => resolve_out(&d.join("_"))?.parent().map(Path::to_path_buf).unwrap_or_default(),
        None => std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(".")),
    };
    std::fs::create_dir_all(&d)?;
    Ok(d)
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn load_events(path: &Path, sensor: &EventInput) -> Result<EventSequence, Failure> {
    let format = if is_csv(path) { EventFormat::Csv } else { EventFormat::EvtBin };
    let dims = sensor.w.zip(sensor.h);
    Ok(read_events(BufReader::new(File::open(path)?), format, dims)?)
}

fn window_us(ms: f64) -> Result<u64, Failure> {
    let us = (ms * 1000.0).round();
    if !(us >= 1.0 && us.is_finite()) {
        return Err(Failure::Config(format!("window must be at least 1 us, got {ms} ms")));
    }
    Ok(us as u64)
}

fn print_json<T: Serialize>(v: &T) -> CmdResult {
    println!("{}", serde_json::to_string_pretty(v).map_err(std::io::Error::other)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> CmdResult {
    std::fs::write(path, serde_json::to_vec_pretty(v).map_err(std::io::Error::other)?)?;
    Ok(())
}

enum LoadedModel {
    Float(ModelFile),
    Quantized(QuantizedModel),
}

fn load_model(path: &Path) -> Result<LoadedModel, Failure> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 5 || &bytes[..4] != MODEL_MAGIC {
        return Err(sser::Error::Format(format!("{} is not a model file", path.display())).into());
    }
    match bytes[4] {
        MODEL_VERSION => Ok(LoadedModel::Float(read_model(bytes.as_slice())?)),
        QUANT_VERSION => Ok(LoadedModel::Quantized(read_quantized_model(bytes.as_slice())?)),
        v => Err(sser::Error::Format(format!("unknown model version {v}")).into()),
    }
}

fn load_autoencoder(path: &Path) -> Result<Autoencoder, Failure> {
    match load_model(path)? {
        LoadedModel::Float(m) => Ok(m.into_autoencoder()?),
        LoadedModel::Quantized(_) => Err(Failure::Config("expected a float checkpoint, got a quantized model".into())),
    }
}

fn scene(a: &GenArgs) -> SceneConfig {
    let (w, h) = (a.w as f64, a.h as f64);
    let dur_s = a.dur_ms as f64 * 1e-3;
    let bar_width = (w / 8.0).max(2.0);
    let radius = (w.min(h) / 16.0).max(1.5);
    let bar = Pattern::Bar { vertical: true, start: -bar_width, speed: (w + 2.0 * bar_width) / dur_s, width: bar_width, softness: 1.0, contrast: 0.8 };
    let dots = Pattern::RandomDots { count: a.dots, max_speed: w / dur_s, radius, contrast: 0.8 };
    let mut cfg = SceneConfig::new(a.w, a.h, a.threshold, a.dur_ms * 1000, a.seed);
    cfg.step_us = a.step_us;
    cfg.threshold_jitter = a.jitter;
    match a.pattern {
        PatternArg::Bar => cfg.with_pattern(bar),
        PatternArg::Dot => cfg.with_pattern(Pattern::Dot { x0: -radius, y0: h / 2.0, vx: (w + 2.0 * radius) / dur_s, vy: 0.0, radius, contrast: 0.8 }),
        PatternArg::Dots => cfg.with_pattern(dots),
        PatternArg::Scene => cfg.with_pattern(bar).with_pattern(dots),
        PatternArg::Ramp => cfg.with_pattern(Pattern::PixelRamp { x: a.w / 2, y: a.h / 2, delta: 1.0 }),
    }
}

pub fn gen(a: &GenArgs) -> CmdResult {
    let clock = Stopwatch::start();
    let seq = generate_synthetic(&scene(a))?;
    let out = resolve_out(&a.out)?;
    let format = if is_csv(&out) { EventFormat::Csv } else { EventFormat::EvtBin };
    write_events(&seq, BufWriter::new(File::create(&out)?), format)?;
    let m = clock.finish("gen", a, vec![a.seed], &[], std::slice::from_ref(&out))?;
    write_manifest(&out, &m)?;
    print_json(&serde_json::json!({ "events": seq.len(), "path": out, "sha256": m.outputs[0].sha256 }))
}

fn train_config(a: &TrainArgs) -> Result<TrainConfig, Failure> {
    Ok(TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        weight_decay: a.wd,
        window_us: window_us(a.window.window_ms)?,
        crop: a.window.crop,
        z_cap: a.window.z_cap,
        samples_per_epoch: a.window.samples,
        seed: a.window.seed,
        quant: a.qat_bits.map(|b| QatConfig { weight_bits: b, act_bits: b }),
        loss: LossConfig { alpha: a.alpha, beta: a.beta },
    })
}

pub fn train(a: &TrainArgs) -> CmdResult {
    let clock = Stopwatch::start();
    let data = load_events(&a.data, &a.input)?;
    let cfg = train_config(a)?;
    cfg.validate()?;
    let spec = ModelSpec {
        kind: a.cell.into(),
        dims: a.dims.clone(),
        decoder_depth: a.decoder_depth,
        candidate_bias: if a.ungated_bias { CandidateBias::Ungated } else { CandidateBias::Gated },
        seed: a.window.seed,
    };
    let out = resolve_out(&a.out)?;
    let eval = if a.eval_samples > 0 { heldout_windows(&data, &cfg, a.eval_samples)? } else { Vec::new() };

    if let Some(axis) = a.sweep {
        let values = a.sweep_values.as_deref().unwrap_or_default();
        if eval.is_empty() {
            return Err(Failure::Config("a sweep needs --eval-samples > 0".into()));
        }
        let axis = match axis {
            SweepArg::Size => SweepAxis::OutputSize,
            SweepArg::Bits => SweepAxis::Bits,
        };
        let rows = ablation_sweep(&data, axis, values, &spec, &cfg, &eval)?;
        std::fs::write(&out, sweep_csv(&rows))?;
        let m = clock.finish("train", a, vec![a.window.seed], &[&a.data], std::slice::from_ref(&out))?;
        write_manifest(&out, &m)?;
        return print_json(&serde_json::json!({ "sweep": rows, "path": out }));
    }

    let outcome = train_encoder(&data, &spec, &cfg)?;
    write_model(&ModelFile::from(outcome.model.clone()), BufWriter::new(File::create(&out)?))?;
    let loss_csv = match &a.loss_csv {
        Some(p) => resolve_out(p)?,
        None => with_suffix(&out, ".loss.csv"),
    };
    let mut table = String::from("epoch,loss\n");
    for (e, l) in outcome.losses.iter().enumerate() {
        table.push_str(&format!("{},{}\n", e + 1, l));
    }
    std::fs::write(&loss_csv, table)?;
    let adam_path = with_suffix(&out, ".adam");
    write_adam_state(&outcome.adam, BufWriter::new(File::create(&adam_path)?))?;
    let heldout = if eval.is_empty() { None } else { Some(evaluate(&outcome.model, &eval, &cfg.loss)?) };
    let m = clock.finish("train", a, vec![a.window.seed], &[&a.data], &[out.clone(), loss_csv.clone(), adam_path])?;
    write_manifest(&out, &m)?;
    print_json(&serde_json::json!({
        "path": out,
        "loss_csv": loss_csv,
        "final_loss": outcome.losses.last(),
        "heldout_loss": heldout,
        "parameters": outcome.model.parameter_count(),
    }))
}

fn window_config(w: &WindowArgs) -> Result<TrainConfig, Failure> {
    Ok(TrainConfig {
        window_us: window_us(w.window_ms)?,
        crop: w.crop,
        z_cap: w.z_cap,
        samples_per_epoch: w.samples,
        seed: w.seed,
        ..TrainConfig::default()
    })
}

#[derive(Serialize)]
struct BitsRow {
    bits: u32,
    float_loss: f64,
    quantized_loss: f64,
    gap: f64,
}

pub fn quantize(a: &QuantizeArgs) -> CmdResult {
    let clock = Stopwatch::start();
    let model = load_autoencoder(&a.model)?;
    let data = load_events(&a.data, &a.input)?;
    let cfg = window_config(&a.window)?;
    let calib: Vec<_> = sample_windows(&data, &cfg, cfg.samples_per_epoch, cfg.seed)?.into_iter().map(|s| s.window).collect();
    let scheme_for = |bits: u32| QuantScheme {
        scale_mode: if a.power_of_two { ScaleMode::PowerOfTwo } else { ScaleMode::Arbitrary },
        ..QuantScheme::new(bits, a.act_bits.unwrap_or(bits))
    };
    let out = resolve_out(&a.out)?;
    let summary = if let [bits] = a.bits.0.as_slice() {
        let q = quantize_model(&model.encoder, &scheme_for(*bits), &calib)?;
        write_quantized_model(&q, BufWriter::new(File::create(&out)?))?;
        for w in &q.warnings {
            eprintln!("warning: {w}");
        }
        serde_json::json!({ "path": out, "scheme": q.scheme, "warnings": q.warnings, "calibration_windows": calib.len() })
    } else {
        let eval = heldout_windows(&data, &cfg, cfg.samples_per_epoch)?;
        let float_loss = evaluate(&model, &eval, &cfg.loss)?;
        let mut rows = Vec::new();
        let mut table = String::from("bits,float_loss,quantized_loss,gap\n");
        for &bits in &a.bits.0 {
            let q = quantize_model(&model.encoder, &scheme_for(bits), &calib)?;
            let quantized_loss = evaluate_quantized(&q, &model.decoder, &eval, &cfg.loss)?;
            let gap = quantized_loss - float_loss;
            table.push_str(&format!("{bits},{float_loss},{quantized_loss},{gap}\n"));
            rows.push(BitsRow { bits, float_loss, quantized_loss, gap });
        }
        std::fs::write(&out, table)?;
        serde_json::json!({ "path": out, "sweep": rows })
    };
    let m = clock.finish("quantize", a, vec![a.window.seed], &[&a.model, &a.data], std::slice::from_ref(&out))?;
    write_manifest(&out, &m)?;
    print_json(&summary)
}

pub fn encode(a: &EncodeArgs) -> CmdResult {
    let clock = Stopwatch::start();
    let seq = load_events(&a.input, &a.sensor)?;
    let model = match (load_model(&a.model)?, a.mode) {
        (LoadedModel::Float(m), None | Some(ModeArg::Float)) => EngineModel::Float(m.encoder),
        (LoadedModel::Quantized(q), None | Some(ModeArg::Quant)) => EngineModel::Quantized(q),
        (LoadedModel::Float(_), Some(ModeArg::Quant)) => {
            return Err(Failure::Config("--mode quant needs a quantized model (run `sser quantize`)".into()))
        }
        (LoadedModel::Quantized(_), Some(ModeArg::Float)) => return Err(Failure::Config("--mode float needs a float checkpoint".into())),
    };
    let mode = if matches!(model, EngineModel::Float(_)) { "float" } else { "quant" };
    let mut cfg = EngineConfig::new(model, seq.width(), seq.height(), window_us(a.window_ms)?);
    cfg.reset = match a.reset {
        ResetArg::Zero => ResetPolicy::ZeroEachWindow,
        ResetArg::Persist => ResetPolicy::Persist,
    };
    cfg.emission = match a.emit {
        EmitArg::Window => EmissionPolicy::OnWindowBoundary,
        EmitArg::Final => EmissionPolicy::OnDemand,
    };
    cfg.shards = a.shards;
    let mut engine = Engine::new(cfg)?;
    let emissions = engine.run_stream(&seq)?;
    let dir = resolve_out_dir(a.out_dir.as_deref())?;
    let mut paths = Vec::with_capacity(emissions.len());
    for (k, e) in &emissions {
        let path = dir.join(format!("win{k:06}.ssrp"));
        write_representation(&RepresentationFile::from_emission(e)?, BufWriter::new(File::create(&path)?))?;
        paths.push(path);
    }
    let m = clock.finish("encode", a, vec![], &[&a.input, &a.model], &paths)?;
    let digest = sha256_bytes(m.outputs.iter().map(|d| d.sha256.as_str()).collect::<Vec<_>>().join("\n").as_bytes());
    write_manifest(&dir, &m)?;
    let stats = engine.stats();
    print_json(&serde_json::json!({
        "mode": mode,
        "emissions": emissions.len(),
        "events": seq.len(),
        "stats": stats,
        "out_dir": dir,
        "digest": digest,
    }))
}

#[derive(Serialize)]
struct SimulationReport {
    #[serde(flatten)]
    cycles: CycleReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    hazard_check: Option<HazardCheck>,
    resources: ResourceEstimate,
    summary: String,
}

pub fn simulate(a: &SimulateArgs) -> CmdResult {
    let clock_hz = (a.clock_mhz * 1e6).round();
    if !(clock_hz >= 1.0 && clock_hz.is_finite()) {
        return Err(Failure::Config(format!("invalid clock {} MHz", a.clock_mhz)));
    }
    let kind: CellKind = a.cell.into();
    let mut dims = vec![2];
    dims.extend(&a.dims);
    let mut cfg = PipelineConfig::new(clock_hz as u64).with_depth(a.depth);
    cfg.hazard_window = a.hazard_window.unwrap_or(a.depth);
    cfg.kind = kind;
    cfg.layers = dims.windows(2).map(|p| (p[0], p[1])).collect();
    cfg.policy = match a.policy {
        PolicyArg::Stall => HazardPolicy::Stall,
        PolicyArg::Reject => HazardPolicy::Reject,
    };
    let (arrivals, hazard_check, sensor) = match &a.input {
        Some(path) => {
            let seq = load_events(path, &a.sensor)?;
            let arr = match a.rate {
                Some(r) if r > 0.0 && r.is_finite() => arrivals_at_rate(&seq, cfg.clock_hz, r),
                Some(r) => return Err(Failure::Config(format!("invalid rate {r}"))),
                None => arrivals_from_timestamps(&seq, cfg.clock_hz),
            };
            let check = verify_hazard_safety(&trace_ns(&seq), &cfg)?;
            (arr, Some(check), (seq.width(), seq.height()))
        }
        None => {
            let arr = (0..a.events)
                .map(|k| Arrival { pixel: if a.trace == TraceArg::Same { 0 } else { k as u32 }, cycle: k })
                .collect();
            (arr, None, (a.sensor_w, a.sensor_h))
        }
    };
    let mut cycles = schedule(&arrivals, &cfg)?;
    if !a.schedule {
        cycles.schedule.clear();
    }
    let resources = estimate_resources(&cfg.layers, kind, a.precision, sensor.0, sensor.1)?;
    let summary = cycles.summary();
    eprintln!("{summary}");
    let report = SimulationReport { cycles, hazard_check, resources, summary };
    match &a.out {
        Some(p) => {
            let clock = Stopwatch::start();
            let out = resolve_out(p)?;
            write_json(&out, &report)?;
            let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
            let m = clock.finish("simulate", a, vec![], &inputs, std::slice::from_ref(&out))?;
            write_manifest(&out, &m)?;
            let latency = serde_json::to_value(&report.cycles).map_err(std::io::Error::other)?["latency_ns"].take();
            print_json(&serde_json::json!({ "path": out, "latency_ns": latency, "sha256": m.outputs[0].sha256 }))
        }
        None => print_json(&report),
    }
}

#[derive(Serialize)]
struct BenchRun {
    mode: &'static str,
    workers: usize,
    events: usize,
    seconds: f64,
    events_per_s: f64,
    ns_per_event: f64,
    digest: String,
}

fn run_digest(model: &EngineModel, seq: &EventSequence, window: u64, shards: usize, repeat: usize) -> Result<(f64, String), Failure> {
    let mut best = f64::INFINITY;
    let mut digest = String::new();
    for _ in 0..repeat.max(1) {
        let mut cfg = EngineConfig::new(model.clone(), seq.width(), seq.height(), window);
        cfg.shards = shards;
        let mut engine = Engine::new(cfg)?;
        let t = Instant::now();
        let emissions = engine.run_stream(seq)?;
        best = best.min(t.elapsed().as_secs_f64());
        let mut bytes = Vec::new();
        for (_, e) in &emissions {
            write_representation(&RepresentationFile::from_emission(e)?, &mut bytes)?;
        }
        digest = sha256_bytes(&bytes);
    }
    Ok((best, digest))
}

pub fn bench(a: &BenchArgs) -> CmdResult {
    let clock = Stopwatch::start();
    let gen = GenArgs {
        pattern: PatternArg::Scene,
        w: a.w,
        h: a.h,
        dur_ms: a.dur_ms,
        seed: a.seed,
        threshold: 0.15,
        jitter: 0.0,
        dots: 4,
        step_us: 50,
        out: PathBuf::new(),
    };
    let seq = generate_synthetic(&scene(&gen))?;
    let encoder: EncoderModel = match &a.model {
        Some(p) => load_autoencoder(p)?.encoder,
        None => EncoderModel::random(a.cell.into(), &a.dims, CandidateBias::Gated, a.seed)?,
    };
    let window = window_us(a.window_ms)?;
    let mut models = vec![("float", EngineModel::Float(encoder.clone()))];
    if matches!(encoder.layers[0].kind, CellKind::Gru | CellKind::Mgu) {
        let t0 = seq.time_range().map_or(0, |r| r.0);
        let calib: Vec<_> = (0..8u64)
            .map(|k| tensorize(&slice_window(&seq, t0 + k * window, window), t0 + k * window, window, 100))
            .collect::<Result<_, _>>()?;
        models.push(("quant", EngineModel::Quantized(quantize_model(&encoder, &QuantScheme::new(a.bits, a.bits), &calib)?)));
    }
    let mut runs = Vec::new();
    let mut digests_match = true;
    for (mode, model) in &models {
        let mut first: Option<String> = None;
        for workers in [1, a.workers.max(1)] {
            let (secs, digest) = run_digest(model, &seq, window, workers, a.repeat)?;
            digests_match &= first.get_or_insert_with(|| digest.clone()) == &digest;
            let secs = secs.max(1e-9);
            runs.push(BenchRun {
                mode,
                workers,
                events: seq.len(),
                seconds: secs,
                events_per_s: seq.len() as f64 / secs,
                ns_per_event: secs * 1e9 / seq.len().max(1) as f64,
                digest,
            });
        }
    }
    let ns = |m: &str| runs.iter().filter(|r| r.mode == m).map(|r| r.ns_per_event).fold(f64::INFINITY, f64::min);
    let report = serde_json::json!({
        "sensor": [a.w, a.h],
        "events": seq.len(),
        "runs": runs,
        "digests_match": digests_match,
        // recorded, not asserted: depends on the machine
        "quant_not_slower": models.len() > 1 && ns("quant") <= ns("float"),
    });
    match &a.out {
        Some(p) => {
            let out = resolve_out(p)?;
            write_json(&out, &report)?;
            let m = clock.finish("bench", a, vec![a.seed], &[], std::slice::from_ref(&out))?;
            write_manifest(&out, &m)?;
            print_json(&serde_json::json!({ "path": out, "digests_match": digests_match }))
        }
        None => print_json(&report),
    }
}

pub fn render(a: &RenderArgs) -> CmdResult {
    let clock = Stopwatch::start();
    let file = read_representation(BufReader::new(File::open(&a.input)?))?;
    let dir = resolve_out_dir(a.out_dir.as_deref())?;
    let paths = render_channels(&file.to_real(), &dir, a.palette == PaletteArg::Diverging)?;
    let m = clock.finish("render", a, vec![], &[&a.input], &paths)?;
    write_manifest(&dir, &m)?;
    print_json(&serde_json::json!({ "channels": file.channels, "files": paths }))
}
