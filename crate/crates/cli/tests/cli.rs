use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evmlp::cost::SequenceReport;
use evmlp::io::{decode_image, encode_weights, load_weights};
use evmlp::synth::{SequenceKind, SequenceSpec};
use evmlp::{FeatureMap, Mode, Network, NetworkConfig, StageConfig};
use evmlp_cli::{EventmapRun, SweepReport};
use tempfile::TempDir;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evmlp")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_config() -> NetworkConfig {
    NetworkConfig {
        id: Some("small".into()),
        input_side: 32,
        input_channels: 3,
        num_classes: 6,
        stages: vec![
            StageConfig::new(4, 2.0, 8, 1, 0.0),
            StageConfig::new(2, 2.0, 12, 1, 0.0),
            StageConfig::new(2, 2.0, 12, 1, 0.0),
            StageConfig::new(2, 2.0, 16, 1, 0.1),
        ],
        layer_norm_eps: 1e-5,
        normalization: None,
    }
}

fn write_config(dir: &Path, config: &NetworkConfig) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, config.to_json_pretty()).unwrap();
    path
}

fn write_frames(dir: &Path, name: &str, kind: SequenceKind, frames: usize, seed: u64) -> PathBuf {
    let out = dir.join(name);
    let seq: Vec<FeatureMap<f32>> = SequenceSpec::new(kind, 32, frames, seed).generate().unwrap();
    evmlp::synth::write_png_sequence(&seq, &out).unwrap();
    out
}

fn read_report(path: &Path) -> SequenceReport {
    SequenceReport::from_json_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &small_config());
    Fixture { dir, config }
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["video", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["bogus"])), 1);
    assert_eq!(code(&run(&["macs"])), 1);
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Static, 2, 0);
    let out = run(&["video", "--config", s(&f.config), "--frames", s(&frames), "--tau", "-0.1", "--report", "r.json"]);
    assert_eq!(code(&out), 1);
    let out = run(&["--threads", "0", "macs", "--config", s(&f.config)]);
    assert_eq!(code(&out), 1);
}

#[test]
fn macs_degenerate_config_matches_hand_formula() {
    let dir = tempfile::tempdir().unwrap();
    let config = NetworkConfig {
        id: None,
        input_side: 4,
        input_channels: 2,
        num_classes: 2,
        stages: vec![StageConfig::new(4, 1.0, 3, 0, 0.0)],
        layer_norm_eps: 1e-5,
        normalization: None,
    };
    let path = write_config(dir.path(), &config);
    let json = dir.path().join("m.json");
    assert_eq!(code(&run(&["macs", "--config", s(&path), "--json", s(&json)])), 0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    // one patch of 4*4*2 inputs into 3 outputs, then a 3 -> 2 head
    assert_eq!(doc["macs"]["total"], 4 * 4 * 2 * 3 + 3 * 2);
    assert_eq!(doc["params_total"], (32 * 3 + 3) + (3 * 2 + 2));
}

#[test]
fn macs_table1_head_params() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("m.json");
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/evmlp-t1.json");
    let out = run(&["macs", "--config", s(&config), "--json", s(&json)]);
    assert_eq!(code(&out), 0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(doc["params_head"], 513_000);
    assert_eq!(doc["macs"]["head_macs"], 512_000);
    assert_eq!(doc["macs"]["stages"][0]["total"], 177_405_952u64);
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let mut config = small_config();
    config.stages[0].dropout = 1.0;
    std::fs::write(&path, config.to_json_pretty()).unwrap();
    let out = run(&["macs", "--config", s(&path)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dropout"));
}

#[test]
fn static_sequence_tau_zero_saves_everything() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Static, 5, 1);
    let r0 = f.path("r0.json");
    assert_eq!(code(&run(&["video", "--config", s(&f.config), "--frames", s(&frames), "--report", s(&r0)])), 0);
    let r1 = f.path("r1.json");
    let out = run(&[
        "video", "--config", s(&f.config), "--frames", s(&frames), "--tau", "0", "--report", s(&r1),
        "--ground-truth", s(&r0),
    ]);
    assert_eq!(code(&out), 0);
    let report = read_report(&r1);
    assert_eq!(report.reduction, 1.0);
    assert_eq!(report.mean_macs_per_frame, 0.0);
    assert_eq!(report.match_rate, Some(1.0));
    assert_eq!(report.tau, Some(0.0));
}

#[test]
fn tau_zero_matches_no_events_baseline() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Perturbed, 8, 2);
    let (ev, base) = (f.path("ev.json"), f.path("base.json"));
    let common = ["--config", s(&f.config), "--init-seed", "4", "--frames", s(&frames)];
    assert_eq!(code(&run(&[&["video"], &common[..], &["--tau", "0", "--report", s(&ev)]].concat())), 0);
    assert_eq!(code(&run(&[&["video"], &common[..], &["--no-events", "--report", s(&base)]].concat())), 0);
    let (ev, base) = (read_report(&ev), read_report(&base));
    assert_eq!(base.tau, None);
    assert_eq!(base.reduction, 0.0);
    assert!(ev.reduction >= 0.0);
    for (a, b) in ev.per_frame.iter().zip(&base.per_frame) {
        assert_eq!(a.top1, b.top1);
        assert_eq!(a.logits_digest, b.logits_digest);
    }
}

#[test]
fn raw_stream_matches_png_directory() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Perturbed, 4, 3);
    let mut raw = Vec::new();
    for i in 0..4 {
        let img = image::open(frames.join(format!("frame_{i:05}.png"))).unwrap().to_rgb8();
        raw.extend_from_slice(img.as_raw());
    }
    let raw_path = f.path("stream.rgb");
    std::fs::write(&raw_path, &raw).unwrap();
    let (a, b) = (f.path("a.json"), f.path("b.json"));
    assert_eq!(code(&run(&["video", "--config", s(&f.config), "--frames", s(&frames), "--tau", "0.05", "--report", s(&a)])), 0);
    let out = run(&[
        "video", "--config", s(&f.config), "--raw", s(&raw_path), "--width", "32", "--height", "32", "--tau", "0.05",
        "--report", s(&b),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_report(&a), read_report(&b));

    std::fs::write(&raw_path, &raw[..raw.len() - 1]).unwrap();
    let c = f.path("c.json");
    let out = run(&[
        "video", "--config", s(&f.config), "--raw", s(&raw_path), "--width", "32", "--height", "32", "--report", s(&c),
    ]);
    assert_eq!(code(&out), 2);
    assert!(!c.exists());
}

#[test]
fn empty_or_corrupt_frames_exit_two_without_report() {
    let f = fixture();
    let empty = f.path("empty");
    std::fs::create_dir(&empty).unwrap();
    let report = f.path("r.json");
    assert_eq!(code(&run(&["video", "--config", s(&f.config), "--frames", s(&empty), "--report", s(&report)])), 2);
    assert!(!report.exists());

    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Static, 3, 0);
    std::fs::write(frames.join("frame_00001.png"), b"not a png").unwrap();
    let out = run(&["video", "--config", s(&f.config), "--frames", s(&frames), "--report", s(&report)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("frame_00001.png"));
    assert!(!report.exists());
}

#[test]
fn ground_truth_length_mismatch_exits_two() {
    let f = fixture();
    let short = write_frames(f.dir.path(), "short", SequenceKind::Static, 2, 0);
    let long = write_frames(f.dir.path(), "long", SequenceKind::Static, 3, 0);
    let gt = f.path("gt.json");
    assert_eq!(code(&run(&["video", "--config", s(&f.config), "--frames", s(&short), "--report", s(&gt)])), 0);
    let r = f.path("r.json");
    let out = run(&["video", "--config", s(&f.config), "--frames", s(&long), "--report", s(&r), "--ground-truth", s(&gt)]);
    assert_eq!(code(&out), 2);
    assert!(!r.exists());
}

#[test]
fn sweep_single_zero_tau() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Perturbed, 6, 5);
    let (csv, json, video) = (f.path("s.csv"), f.path("s.json"), f.path("v.json"));
    let out = run(&[
        "sweep", "--config", s(&f.config), "--frames", s(&frames), "--taus", "0", "--csv", s(&csv), "--report", s(&json),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(code(&run(&["video", "--config", s(&f.config), "--frames", s(&frames), "--report", s(&video)])), 0);
    let sweep: SweepReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(sweep.rows.len(), 1);
    assert_eq!(sweep.rows[0].match_rate, 1.0);
    assert_eq!(sweep.rows[0].reduction, read_report(&video).reduction);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert_eq!(text.lines().next().unwrap(), "tau,mean_macs,reduction,match_rate");
}

#[test]
fn sweep_static_camera_saves_at_least_as_much_as_moving() {
    let f = fixture();
    let stationary = write_frames(f.dir.path(), "st", SequenceKind::Stationary, 6, 6);
    let moving = write_frames(f.dir.path(), "mv", SequenceKind::Moving, 6, 6);
    let mut rows = Vec::new();
    for dir in [&stationary, &moving] {
        let json = f.path("s.json");
        let out = run(&[
            "sweep", "--config", s(&f.config), "--frames", s(dir), "--taus", "0,0.05,0.1,0.15", "--csv", s(&f.path("s.csv")),
            "--report", s(&json),
        ]);
        assert_eq!(code(&out), 0);
        let sweep: SweepReport = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert!(sweep.rows.windows(2).all(|w| w[1].mean_macs <= w[0].mean_macs));
        rows.push(sweep.rows);
    }
    for (st, mv) in rows[0].iter().zip(&rows[1]) {
        assert!(st.reduction >= mv.reduction, "tau {}: {} < {}", st.tau, st.reduction, mv.reduction);
    }
}

#[test]
fn eventmap_identical_pair_is_fully_dark() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Static, 2, 7);
    let out_dir = f.path("em");
    assert_eq!(code(&run(&["eventmap", "--frames", s(&frames), "--tau", "0,0.01,0.05", "--patch", "4", "--out", s(&out_dir)])), 0);
    let runs: Vec<EventmapRun> = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(runs.len(), 3);
    let frame = decode_image::<f32>(&frames.join("frame_00001.png")).unwrap();
    for r in &runs {
        assert_eq!(r.pairs[0].bright_patches, 0);
        let overlay = image::open(out_dir.join(format!("tau_{}/pair_00000.png", r.tau))).unwrap().to_rgb8();
        for (i, px) in overlay.as_raw().iter().enumerate() {
            assert_eq!(*px, evmlp::io::to_u8(frame.data()[i] as f64 * evmlp::io::DARKEN_FACTOR));
        }
    }
}

#[test]
fn eventmap_needs_two_frames() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Static, 1, 0);
    let out_dir = f.path("em");
    assert_eq!(code(&run(&["eventmap", "--frames", s(&frames), "--out", s(&out_dir)])), 2);
    assert!(!out_dir.exists());
}

#[test]
fn eventmap_rejects_non_dividing_patch() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Perturbed, 2, 0);
    assert_eq!(code(&run(&["eventmap", "--frames", s(&frames), "--patch", "7", "--out", s(&f.path("em"))])), 2);
}

#[test]
fn classify_topk_and_mismatch() {
    let f = fixture();
    let config = small_config();
    let net = Network::<f32>::build(&config, 9).unwrap();
    let weights = f.path("w.bin");
    std::fs::write(&weights, encode_weights(&net)).unwrap();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Perturbed, 1, 4);
    let image = frames.join("frame_00000.png");

    let out = run(&["classify", "--config", s(&f.config), "--weights", s(&weights), "--image", s(&image)]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 6);

    let out = run(&["classify", "--config", s(&f.config), "--weights", s(&weights), "--image", s(&image), "--topk", "1"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    let frame = decode_image::<f32>(&image).unwrap();
    let logits = net.forward(&frame, Mode::Inference).unwrap();
    assert_eq!(row[1].parse::<usize>().unwrap(), evmlp::model::argmax(&logits));

    let mut other = config.clone();
    other.stages[1].out_dim = 10;
    let other_path = f.path("other.json");
    std::fs::write(&other_path, other.to_json_pretty()).unwrap();
    let out = run(&["classify", "--config", s(&other_path), "--weights", s(&weights), "--image", s(&image)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage2.mixer.weight"));
}

#[test]
fn train_zero_epochs_saves_initialization() {
    let f = fixture();
    let tiny = write_config(&f.path(""), &NetworkConfig::tiny());
    let weights = f.path("w.bin");
    let out = run(&["train", "--config", s(&tiny), "--epochs", "0", "--seed", "5", "--out-weights", s(&weights)]);
    assert_eq!(code(&out), 0);
    let init = Network::<f64>::build(&NetworkConfig::tiny(), 5).unwrap();
    assert_eq!(std::fs::read(&weights).unwrap(), encode_weights(&init));
    let loaded: Network<f32> = load_weights(&weights, &NetworkConfig::tiny()).unwrap();
    assert_eq!(loaded, init.cast::<f32>());
}

#[test]
fn train_logs_and_divergence() {
    let f = fixture();
    let tiny = write_config(&f.path(""), &NetworkConfig::tiny());
    let (weights, log) = (f.path("w.bin"), f.path("log.jsonl"));
    let out = run(&["train", "--config", s(&tiny), "--epochs", "4", "--out-weights", s(&weights), "--log", s(&log)]);
    assert_eq!(code(&out), 0);
    let records: Vec<evmlp::train::EpochRecord> =
        std::fs::read_to_string(&log).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.iter().map(|r| r.epoch).collect::<Vec<_>>(), [0, 1, 2, 3]);

    let bad = f.path("bad.bin");
    let out = run(&["train", "--config", s(&tiny), "--epochs", "3", "--lr", "1e300", "--out-weights", s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
    assert!(!bad.exists());
}

#[test]
fn gradcheck_tiny_passes() {
    let f = fixture();
    let tiny = write_config(&f.path(""), &NetworkConfig::tiny());
    let out = run(&["gradcheck", "--config", s(&tiny), "--seed", "0"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    for layer in ["dense", "gelu", "layernorm", "bottleneck", "dropout", "network"] {
        assert!(text.contains(layer));
    }
}

#[test]
fn thread_count_from_environment() {
    let f = fixture();
    let frames = write_frames(f.dir.path(), "fr", SequenceKind::Perturbed, 4, 8);
    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let report = f.path(&format!("r{threads}.json"));
        let out = Command::new(env!("CARGO_BIN_EXE_evmlp"))
            .env("EVMLP_THREADS", threads)
            .args(["video", "--config", s(&f.config), "--frames", s(&frames), "--tau", "0.02", "--report", s(&report)])
            .output()
            .unwrap();
        assert_eq!(code(&out), 0);
        reports.push(std::fs::read(&report).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn synth_writes_frames() {
    let f = fixture();
    let out_dir = f.path("syn");
    let out = run(&["synth", "--kind", "moving", "--side", "16", "--frames", "3", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_dir(&out_dir).unwrap().count(), 3);
    assert_eq!(code(&run(&["synth", "--kind", "nope", "--out", s(&out_dir)])), 1);
}
