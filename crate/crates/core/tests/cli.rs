use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use errvfi::io::{read_report_json, write_flo, write_image, write_mask, Metric, ReportRegion};
use errvfi::metrics::{analyze_at, MetricConfig};
use errvfi::synth::{self, generate_corpus, write_scene};
use errvfi::types::{FlowField, Frame, Region, TimeStep};

fn errvfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_errvfi")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes one corpus scene and returns its directory.
fn scene_dir(root: &Path, index: usize) -> (PathBuf, synth::SceneData) {
    let (_, data) = generate_corpus(index + 1, 2024).unwrap().pop().unwrap();
    let dir = root.join("scene");
    write_scene(&dir, &data).unwrap();
    (dir, data)
}

fn input_args(dir: &Path) -> Vec<String> {
    [
        ("--frame0", synth::FRAME0_FILE),
        ("--frame1", synth::FRAME1_FILE),
        ("--flow-fwd", synth::FLOW_FWD_FILE),
        ("--flow-bwd", synth::FLOW_BWD_FILE),
    ]
    .iter()
    .flat_map(|(flag, file)| [flag.to_string(), dir.join(file).to_string_lossy().into_owned()])
    .collect()
}

fn run_with(sub: &str, dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec![sub.to_string()];
    args.extend(input_args(dir));
    args.extend(extra.iter().map(|a| a.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    errvfi(&refs)
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn segment_masks_match_library_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, d) = scene_dir(tmp.path(), 4);
    let out = tmp.path().join("out");
    let o = run_with("segment", &dir, &["--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let a = analyze_at(&d.frame0, &d.frame1, &d.flow_fwd, &d.flow_bwd, TimeStep::default(), &MetricConfig::default())
        .unwrap();
    for r in Region::ALL {
        assert_eq!(fs::read(out.join(format!("mask_{r}.pgm"))).unwrap(), write_mask(a.masks.get(r)));
    }
    for name in ["e_ms", "e_mv", "e_pc", "e_tot"] {
        assert!(out.join(format!("{name}.pgm")).exists());
    }
    let records = read_report_json(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let tau = records.iter().find(|r| r.metric == Metric::TauMid).unwrap();
    assert_eq!(tau.value, a.masks.tau_mid());
    let counts: f64 = records.iter().filter(|r| r.metric == Metric::PixelCount).map(|r| r.value).sum();
    assert_eq!(counts, 64.0 * 64.0);
    assert!(out.join("report.csv").exists());
}

#[test]
fn missing_backward_flow_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 0);
    let o = errvfi(&[
        "segment",
        "--frame0",
        s(&dir.join(synth::FRAME0_FILE)),
        "--frame1",
        s(&dir.join(synth::FRAME1_FILE)),
        "--flow-fwd",
        s(&dir.join(synth::FLOW_FWD_FILE)),
        "--out",
        s(&tmp.path().join("out")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert!(o.stdout.is_empty());
}

#[test]
fn invalid_time_step_and_unknown_refiner_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 0);
    let out = tmp.path().join("out");
    assert_eq!(run_with("segment", &dir, &["--t", "1.5", "--out", s(&out)]).status.code(), Some(2));
    let o = run_with("interpolate", &dir, &["--flow-refiner", "no-such", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn bad_inputs_are_processing_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 0);
    fs::write(dir.join(synth::FLOW_BWD_FILE), b"not a flow file").unwrap();
    let o = run_with("segment", &dir, &["--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("flow_bwd.flo"));

    fs::write(dir.join(synth::FLOW_BWD_FILE), write_flo(&FlowField::zeros(8, 8).unwrap())).unwrap();
    let o = run_with("segment", &dir, &["--out", s(&tmp.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lenient_flag_accepts_unknown_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 0);
    let mut bytes = fs::read(dir.join(synth::FLOW_FWD_FILE)).unwrap();
    bytes[12..16].copy_from_slice(&1e10f32.to_le_bytes());
    fs::write(dir.join(synth::FLOW_FWD_FILE), bytes).unwrap();
    let out = tmp.path().join("out");
    assert_eq!(run_with("segment", &dir, &["--out", s(&out)]).status.code(), Some(1));
    assert_eq!(run_with("segment", &dir, &["--lenient-flo", "--out", s(&out)]).status.code(), Some(0));
}

fn static_pair(root: &Path) -> (PathBuf, Frame) {
    let dir = root.join("static");
    fs::create_dir_all(&dir).unwrap();
    let frame = Frame::from_fn(20, 24, 3, |y, x, c| ((y * 7 + x * 3 + c * 40) % 256) as f64 / 255.0).unwrap();
    let zero = FlowField::zeros(20, 24).unwrap();
    fs::write(dir.join(synth::FRAME0_FILE), write_image(&frame)).unwrap();
    fs::write(dir.join(synth::FRAME1_FILE), write_image(&frame)).unwrap();
    fs::write(dir.join(synth::FLOW_FWD_FILE), write_flo(&zero)).unwrap();
    fs::write(dir.join(synth::FLOW_BWD_FILE), write_flo(&zero)).unwrap();
    (dir, frame)
}

#[test]
fn static_input_gives_all_mid_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = static_pair(tmp.path());
    let out = tmp.path().join("out");
    assert_eq!(run_with("segment", &dir, &["--out", s(&out)]).status.code(), Some(0));
    let mid = fs::read(out.join("mask_mid.pgm")).unwrap();
    let header = b"P5\n24 20\n255\n".len();
    assert!(mid[header..].iter().all(|&b| b == 255));
    let high = fs::read(out.join("mask_high.pgm")).unwrap();
    assert!(high[header..].iter().all(|&b| b == 0));
}

#[test]
fn static_input_interpolates_to_itself() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, frame) = static_pair(tmp.path());
    let out = tmp.path().join("out");
    let o = run_with("interpolate", &dir, &["--t", "0.5", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("frame_t.ppm")).unwrap(), write_image(&frame));
}

#[test]
fn interpolate_is_reproducible_and_dumps_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 7);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = run_with(
            "interpolate",
            &dir,
            &[
                "--flow-refiner",
                "flow-median",
                "--pixel-refiner",
                "pixel-gaussian",
                "--trace",
                "--gt",
                s(&dir.join(synth::FRAME_MID_FILE)),
                "--out",
                s(out),
            ],
        );
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    let names: Vec<String> = ta.iter().map(|(p, _)| p.to_string_lossy().into_owned()).collect();
    for expected in [
        "frame_t.ppm",
        "report.csv",
        "report.json",
        "trace/mask_high.pgm",
        "trace/stage_1_high/flow_0t.flo",
        "trace/stage_2_mid/frame.ppm",
        "trace/stage_3_low/visibility.pgm",
        "trace/post/stage_3_low.ppm",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected} in {names:?}");
    }
}

#[test]
fn interpolate_with_exact_flow_meets_corpus_bound() {
    // Lowest per-scene PSNR of the identity pipeline on the default corpus is 23.14 dB.
    const CORPUS_BOUND_DB: f64 = 23.0;
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 2);
    let out = tmp.path().join("out");
    let o = run_with(
        "interpolate",
        &dir,
        &["--gt", s(&dir.join(synth::FRAME_MID_FILE)), "--report", "json", "--out", s(&out)],
    );
    assert_eq!(o.status.code(), Some(0));
    assert!(!out.join("report.csv").exists());
    let records = read_report_json(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let full = records
        .iter()
        .find(|r| r.region == ReportRegion::Full && r.metric == Metric::Psnr)
        .unwrap();
    assert!(full.value >= CORPUS_BOUND_DB, "{}", full.value);
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 1);
    let seg = tmp.path().join("seg");
    assert_eq!(run_with("segment", &dir, &["--out", s(&seg)]).status.code(), Some(0));
    let gt = dir.join(synth::FRAME_MID_FILE);
    for extra in [vec!["--masks", s(&seg)], input_args(&dir).iter().map(String::as_str).collect()] {
        let out = tmp.path().join("eval");
        let mut args = vec!["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&out)];
        args.extend(extra);
        let o = errvfi(&args);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        let records = read_report_json(&fs::read(out.join("report.json")).unwrap()).unwrap();
        let psnrs: Vec<f64> = records.iter().filter(|r| r.metric == Metric::Psnr).map(|r| r.value).collect();
        assert!(!psnrs.is_empty() && psnrs.iter().all(|&v| v == 99.0));
        let counts: f64 = records
            .iter()
            .filter(|r| r.metric == Metric::PixelCount && r.region != ReportRegion::Full)
            .map(|r| r.value)
            .sum();
        assert_eq!(counts, 64.0 * 64.0);
    }
}

#[test]
fn eval_without_masks_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = scene_dir(tmp.path(), 1);
    let gt = dir.join(synth::FRAME_MID_FILE);
    let o = errvfi(&["eval", "--pred", s(&gt), "--gt", s(&gt), "--out", s(&tmp.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corpus_eval_orders_regions() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus");
    let o = errvfi(&["gen-scene", "--count", "100", "--seed", "2024", "--out", s(&corpus)]);
    assert_eq!(o.status.code(), Some(0));
    let out = tmp.path().join("eval");
    let o = errvfi(&["eval", "--corpus", s(&corpus), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_report_json(&fs::read(out.join("report.json")).unwrap()).unwrap();
    let mean = |region| {
        records
            .iter()
            .find(|r| r.scene == "corpus-mean" && r.region == region && r.metric == Metric::Mse)
            .unwrap()
            .value
    };
    let (h, m, l) = (mean(ReportRegion::High), mean(ReportRegion::Mid), mean(ReportRegion::Low));
    assert!(h >= m && m >= l, "{h} {m} {l}");
}

#[test]
fn gen_scene_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(errvfi(&["gen-scene", "--count", "1", "--seed", "7", "--out", s(out)]).status.code(), Some(0));
    }
    assert_eq!(tree(&a), tree(&b));
    let manifest = synth::read_manifest(&a).unwrap();
    assert_eq!(manifest.scenes.len(), 1);
    assert_eq!(manifest.count, 1);
    assert_eq!(errvfi(&["gen-scene", "--count", "0", "--out", s(&a)]).status.code(), Some(2));
}
