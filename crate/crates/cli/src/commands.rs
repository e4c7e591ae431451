use std::path::Path;
use std::sync::mpsc::sync_channel;

use evmlp::cost::{aggregate_sequence, analytic_macs, analytic_params, MacBreakdown, SequenceReport};
use evmlp::event::{event_map, init_cache, EventProcessor, FrameStats};
use evmlp::io::{decode_image, encode_rgb8_png, encode_weights, load_config, load_weights, overlay_rgb8, resize_bilinear, FrameSource};
use evmlp::model::top_k;
use evmlp::synth::SequenceSpec;
use evmlp::train::{run_gradcheck, separable_toy, train_toy, Dataset, TrainConfig};
use evmlp::{FeatureMap, Mode, Network, NetworkConfig};
use serde::{Deserialize, Serialize};

use crate::args::*;
use crate::output::Artifacts;
use crate::CliError;

type Result<T, E = CliError> = std::result::Result<T, E>;

const PREFETCH: usize = 4;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Classify(a) => classify(a),
        Command::Video(a) => video(a),
        Command::Sweep(a) => sweep(a),
        Command::Macs(a) => macs(a),
        Command::Eventmap(a) => eventmap(a),
        Command::Train(a) => train(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth(a),
    }
}

fn load_model(args: &ModelArgs) -> Result<(NetworkConfig, Network<f32>)> {
    let config = load_config(&args.config)?;
    let net = match &args.weights {
        Some(path) => load_weights(path, &config)?,
        None => Network::build(&config, args.init_seed)?,
    };
    Ok((config, net))
}

fn open_source(args: &FramesArgs) -> Result<FrameSource> {
    let source = match (&args.frames, &args.raw) {
        (Some(dir), None) => FrameSource::directory(dir)?,
        (None, Some(raw)) => {
            let (w, h) = (args.width.unwrap_or(0), args.height.unwrap_or(0));
            FrameSource::raw(raw, w, h)?
        }
        _ => return Err(CliError::Usage("give exactly one of --frames or --raw".into())),
    };
    if source.is_empty() {
        return Err(evmlp::Error::InvalidArgument("frame source contains no frames".into()).into());
    }
    Ok(source)
}

/// Decodes frames on a helper thread, a few ahead of the consumer.
fn for_each_frame(
    source: &FrameSource,
    side: usize,
    mut consume: impl FnMut(usize, FeatureMap<f32>) -> Result<()>,
) -> Result<()> {
    std::thread::scope(|scope| {
        let (tx, rx) = sync_channel(PREFETCH);
        scope.spawn(move || {
            for i in 0..source.len() {
                let frame = source.load_frame::<f32>(i, side);
                let failed = frame.is_err();
                if tx.send(frame).is_err() || failed {
                    break;
                }
            }
        });
        for (i, frame) in rx.into_iter().enumerate() {
            consume(i, frame?)?;
        }
        Ok(())
    })
}

fn run_frames(net: &Network<f32>, frames: &[FeatureMap<f32>], tau: f64) -> Result<Vec<FrameStats<f32>>> {
    let mut proc = EventProcessor::new(net, tau as f32)?;
    frames.iter().map(|f| Ok(proc.process(f)?)).collect()
}

fn read_ground_truth(path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| evmlp::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(SequenceReport::from_json_str(&text)
        .map_err(|e| evmlp::Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .top1())
}

fn classify(a: ClassifyArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let net: Network<f32> = load_weights(&a.weights, &config)?;
    let image = decode_image::<f32>(&a.image)?;
    let image = resize_bilinear(&image, config.input_side, config.input_side);
    let logits = net.forward(&image, Mode::Inference)?;
    println!("rank\tclass\tlogit");
    for (rank, (class, logit)) in top_k(&logits, a.topk as usize).into_iter().enumerate() {
        println!("{}\t{class}\t{logit}", rank + 1);
    }
    Ok(())
}

fn video(a: VideoArgs) -> Result<()> {
    let (config, net) = load_model(&a.model)?;
    let source = open_source(&a.source)?;
    let tau = if a.no_events { None } else { Some(a.tau) };
    let ground_truth = a.ground_truth.as_deref().map(read_ground_truth).transpose()?;

    let mut stats = Vec::with_capacity(source.len());
    let mut proc = EventProcessor::new(&net, a.tau as f32)?;
    for_each_frame(&source, config.input_side, |_, frame| {
        let s = match tau {
            None => init_cache(&net, &frame)?.1,
            Some(_) => proc.process(&frame)?,
        };
        stats.push(s);
        Ok(())
    })?;

    let baseline = analytic_macs(&config)?;
    let report = aggregate_sequence(config.id_or_default(), tau, &stats, &baseline, ground_truth.as_deref())?;
    let mut out = Artifacts::default();
    out.add(&a.report, report.to_json_pretty());
    out.commit()?;

    println!("frames            {}", report.frames);
    println!("tau               {}", tau.map_or("none (full recompute)".into(), |t| t.to_string()));
    println!("init MACs         {}", report.init_macs);
    println!("mean MACs/frame   {:.1}", report.mean_macs_per_frame);
    println!("baseline MACs     {}", report.baseline_macs_per_frame);
    println!("reduction         {:.4}", report.reduction);
    if let Some(m) = report.match_rate {
        println!("match rate        {m:.4}");
    }
    println!("report            {}", a.report.display());
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tau: f64,
    pub mean_macs: f64,
    pub reduction: f64,
    pub match_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config_id: String,
    pub baseline_macs_per_frame: u64,
    pub ground_truth_tau: f64,
    pub rows: Vec<SweepRow>,
    pub runs: Vec<SequenceReport>,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut csv = String::from("tau,mean_macs,reduction,match_rate\n");
    for r in rows {
        csv.push_str(&format!("{},{},{},{}\n", r.tau, r.mean_macs, r.reduction, r.match_rate));
    }
    csv
}

fn sweep(a: SweepArgs) -> Result<()> {
    let (config, net) = load_model(&a.model)?;
    let source = open_source(&a.source)?;
    let mut frames = Vec::with_capacity(source.len());
    for_each_frame(&source, config.input_side, |_, f| {
        frames.push(f);
        Ok(())
    })?;
    let baseline = analytic_macs(&config)?;
    let id = config.id_or_default();

    let truth_stats = run_frames(&net, &frames, 0.0)?;
    let truth: Vec<usize> = truth_stats.iter().map(|s| s.top1()).collect();
    let mut runs = Vec::with_capacity(a.taus.len());
    for &tau in &a.taus {
        let stats = if tau == 0.0 {
            truth_stats.clone()
        } else {
            run_frames(&net, &frames, tau)?
        };
        runs.push(aggregate_sequence(id, Some(tau), &stats, &baseline, Some(&truth))?);
    }
    let rows: Vec<SweepRow> = runs
        .iter()
        .map(|r| SweepRow {
            tau: r.tau.unwrap_or(0.0),
            mean_macs: r.mean_macs_per_frame,
            reduction: r.reduction,
            match_rate: r.match_rate.unwrap_or(1.0),
        })
        .collect();

    let mut out = Artifacts::default();
    out.add(&a.csv, sweep_csv(&rows));
    if let Some(path) = &a.report {
        let combined = SweepReport {
            config_id: id.to_string(),
            baseline_macs_per_frame: baseline.total,
            ground_truth_tau: 0.0,
            rows: rows.clone(),
            runs,
        };
        out.add(path, serde_json::to_string_pretty(&combined).expect("serializable"));
    }
    out.commit()?;

    println!("{:>8}  {:>16}  {:>10}  {:>10}", "tau", "mean MACs/frame", "reduction", "match");
    for r in &rows {
        println!("{:>8}  {:>16.1}  {:>10.4}  {:>10.4}", r.tau, r.mean_macs, r.reduction, r.match_rate);
    }
    Ok(())
}

#[derive(Serialize)]
struct MacsJson<'a> {
    config_id: &'a str,
    macs: &'a MacBreakdown,
    params_per_stage: &'a [u64],
    params_head: u64,
    params_total: u64,
}

fn macs(a: MacsArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let breakdown = analytic_macs(&config)?;
    let params = analytic_params(&config)?;
    println!("{:>6}  {:>8}  {:>14}  {:>14}  {:>16}  {:>12}", "stage", "patches", "mixer MACs", "bneck MACs", "MACs", "params");
    for (l, (s, p)) in breakdown.stages.iter().zip(&params.per_stage).enumerate() {
        println!(
            "{:>6}  {:>8}  {:>14}  {:>14}  {:>16}  {:>12}",
            l + 1,
            s.patches,
            s.mixer_macs,
            s.bottleneck_macs,
            s.total,
            p
        );
    }
    println!("{:>6}  {:>8}  {:>14}  {:>14}  {:>16}  {:>12}", "head", 1, "", "", breakdown.head_macs, params.head);
    println!("{:>6}  {:>8}  {:>14}  {:>14}  {:>16}  {:>12}", "total", "", "", "", breakdown.total, params.total);
    println!("total MACs  {:.4e}", breakdown.total as f64);
    println!("params      {:.4e}", params.total as f64);
    if let Some(path) = &a.json {
        let doc = MacsJson {
            config_id: config.id_or_default(),
            macs: &breakdown,
            params_per_stage: &params.per_stage,
            params_head: params.head,
            params_total: params.total,
        };
        let mut out = Artifacts::default();
        out.add(path, serde_json::to_string_pretty(&doc).expect("serializable"));
        out.commit()?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventmapPair {
    pub index: usize,
    pub bright_patches: usize,
    /// `[row, col]` of every event patch.
    pub bright: Vec<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventmapRun {
    pub tau: f64,
    pub pairs: Vec<EventmapPair>,
}

fn eventmap(a: EventmapArgs) -> Result<()> {
    if a.patch == 0 {
        return Err(CliError::Usage("--patch must be >= 1".into()));
    }
    let source = FrameSource::directory(&a.frames)?;
    if source.len() < 2 {
        return Err(evmlp::Error::InvalidArgument(format!(
            "eventmap needs at least 2 frames, found {}",
            source.len()
        ))
        .into());
    }
    let frames: Vec<FeatureMap<f32>> = (0..source.len())
        .map(|i| source.load_native(i))
        .collect::<evmlp::Result<_>>()?;
    for (i, f) in frames.iter().enumerate() {
        if f.shape() != frames[0].shape() {
            return Err(evmlp::Error::ShapeMismatch {
                context: "eventmap frames",
                expected: format!("{:?}", frames[0].shape()),
                actual: format!("{:?} in {}", f.shape(), source.label(i)),
            }
            .into());
        }
    }

    let mut out = Artifacts::default();
    let mut runs = Vec::with_capacity(a.tau.len());
    for &tau in &a.tau {
        let dir = a.out.join(format!("tau_{tau}"));
        let mut pairs = Vec::with_capacity(frames.len() - 1);
        for (i, w) in frames.windows(2).enumerate() {
            let events = event_map(&w[1], &w[0], tau as f32, a.patch)?;
            let mut bright = Vec::new();
            for r in 0..events.height() {
                for c in 0..events.width() {
                    if events.get(r, c, 0) != 0.0 {
                        bright.push([r, c]);
                    }
                }
            }
            let pixels = overlay_rgb8(&w[1], &events)?;
            out.add(dir.join(format!("pair_{i:05}.png")), encode_rgb8_png(w[1].width(), w[1].height(), pixels)?);
            pairs.push(EventmapPair {
                index: i,
                bright_patches: bright.len(),
                bright,
            });
        }
        println!(
            "tau {tau}: {} bright patches over {} pairs",
            pairs.iter().map(|p| p.bright_patches).sum::<usize>(),
            pairs.len()
        );
        runs.push(EventmapRun { tau, pairs });
    }
    out.add(a.out.join("summary.json"), serde_json::to_string_pretty(&runs).expect("serializable"));
    out.commit()?;
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let data: Dataset<f64> = match &a.dataset {
        Some(dir) => Dataset::from_directory(dir, config.input_side)?,
        None => separable_toy(&config, a.toy_per_class, a.seed)?,
    };
    let train_config = TrainConfig {
        lr: a.lr,
        warmup_epochs: a.warmup_epochs,
        epochs: a.epochs,
        momentum: a.momentum,
        weight_decay: a.weight_decay,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    let mut net = Network::<f64>::build(&config, a.seed)?;
    let log = train_toy(&mut net, &data, &train_config)?;
    let mut lines = String::new();
    for record in &log {
        let line = serde_json::to_string(record).expect("serializable");
        println!("{line}");
        lines.push_str(&line);
        lines.push('\n');
    }
    let mut out = Artifacts::default();
    out.add(&a.out_weights, encode_weights(&net));
    if let Some(path) = &a.log {
        out.add(path, lines);
    }
    out.commit()?;
    match log.last() {
        Some(r) => println!("final accuracy {:.4} after {} epochs", r.accuracy, log.len()),
        None => println!("no epochs run; weights are the initialization"),
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let config = load_config(&a.config)?;
    let report = run_gradcheck(&config, a.seed)?;
    println!("{:<12}  {:>8}  {:>14}  {}", "layer", "checked", "max rel error", "status");
    for e in &report.entries {
        let status = if e.passed { "ok" } else { "FAIL" };
        println!("{:<12}  {:>8}  {:>14.3e}  {status}", e.layer, e.checked, e.max_rel_error);
    }
    if !report.passed() {
        return Err(CliError::Invariant(format!(
            "gradient check above threshold {:e}",
            report.threshold
        )));
    }
    if let Some(path) = &a.report {
        let mut out = Artifacts::default();
        out.add(path, serde_json::to_string_pretty(&report).expect("serializable"));
        out.commit()?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SequenceSpec {
        kind: a.kind,
        side: a.side,
        channels: 3,
        frames: a.frames,
        seed: a.seed,
        magnitude: a.magnitude,
    };
    let frames: Vec<FeatureMap<f32>> = spec.generate()?;
    let mut out = Artifacts::default();
    let all = FeatureMap::from_fn(1, 1, 1, |_, _, _| 1.0f32);
    for (i, f) in frames.iter().enumerate() {
        let pixels = overlay_rgb8(f, &all)?;
        out.add(a.out.join(format!("frame_{i:05}.png")), encode_rgb8_png(f.width(), f.height(), pixels)?);
    }
    out.commit()?;
    println!("wrote {} frames to {}", frames.len(), a.out.display());
    Ok(())
}
