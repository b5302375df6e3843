use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use multisite_resp::cube_io::CubeReader;

/// 30 s scene on a slow waveform: 0.1 m bins, 39 Hz slow time, 24 MB cubes.
const SMALL: &str = "\
chirp_duration_s = 800e-6
chirps_per_frame = 32
adc_sample_rate_hz = 100e3
duration_s = 30
radar.1.x_m = 0.5
radar.2.x_m = 1.5
target.1.x_m = 0.8
target.1.y_m = 1.0
target.1.breath_hz = 0.35
target.2.x_m = 1.1
target.2.y_m = 1.0
target.2.breath_hz = 0.4
";

fn msresp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msresp"))
        .args(args)
        .output()
        .expect("spawn msresp")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x != "msrc"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn help_documents_defaults_and_exit_codes() {
    let out = msresp(&["--help"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for needle in ["bandwidth_hz [1.5e9]", "gamma_th [0.3]", "cfar.pfa [1e-3]", "6 evaluation id mismatch"] {
        assert!(text.contains(needle), "missing {needle}");
    }
    let out = msresp(&["run", "--help"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max_lag_s [5]"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(code(&msresp(&[])), 1);
    assert_eq!(code(&msresp(&["frobnicate"])), 1);
    assert_eq!(code(&msresp(&["simulate", "--config", "x.cfg"])), 1);
}

#[test]
fn config_and_io_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let out = out.to_str().unwrap();
    let bad = write(tmp.path(), "bad.cfg", &format!("{SMALL}bandwidth_hz = -1\n"));
    let r = msresp(&["simulate", "--config", &bad, "--out", out]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("bandwidth"));

    let dup = write(tmp.path(), "dup.cfg", &format!("{SMALL}radar.1.x_m = 0.4\n"));
    let r = msresp(&["simulate", "--config", &dup, "--out", out]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("lines 5 and 13"));

    let missing = tmp.path().join("absent.cfg");
    assert_eq!(code(&msresp(&["simulate", "--config", missing.to_str().unwrap(), "--out", out])), 3);

    let good = write(tmp.path(), "good.cfg", SMALL);
    let blocker = write(tmp.path(), "blocker", "");
    let unwritable = format!("{blocker}/sub");
    assert_eq!(code(&msresp(&["simulate", "--config", &good, "--out", &unwritable])), 3);
    assert_eq!(code(&msresp(&["process", "--in", out, "--config", &good, "--out", out])), 3);
}

#[test]
fn simulate_then_process_matches_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "scene.cfg", SMALL);
    let cubes = tmp.path().join("cubes");
    let processed = tmp.path().join("processed");
    let (run_a, run_b) = (tmp.path().join("run_a"), tmp.path().join("run_b"));

    let r = msresp(&["simulate", "--config", &cfg, "--out", cubes.to_str().unwrap()]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for id in [1, 2] {
        let reader = CubeReader::open(&cubes.join(format!("radar_{id}.msrc"))).unwrap();
        let h = reader.header();
        assert_eq!((h.radar_id, h.waveform.f_start, h.waveform.bandwidth), (id, 60e9, 1.5e9));
        assert_eq!(h.waveform.chirp_duration, 800e-6);
    }

    let r = msresp(&[
        "process",
        "--in",
        cubes.to_str().unwrap(),
        "--config",
        &cfg,
        "--out",
        processed.to_str().unwrap(),
        "--emit-intermediates",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8_lossy(&r.stdout);
    assert!(stdout.contains("target 1:") && stdout.contains("target 2:"), "{stdout}");

    for dir in [&run_a, &run_b] {
        let r = msresp(&["run", "--config", &cfg, "--out", dir.to_str().unwrap(), "--emit-intermediates"]);
        assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    }
    let a = dir_contents(&run_a);
    assert_eq!(a, dir_contents(&run_b), "reruns differ");
    let summary = |dir: &Path| fs::read_to_string(dir.join("summary.csv")).unwrap();
    assert_eq!(summary(&run_a), summary(&processed));
    assert!(a.iter().any(|(n, _)| n == "pairs.csv"));
    assert!(a.iter().any(|(n, _)| n == "spectrum_target_2.csv"));

    let text = summary(&run_a);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2, "{text}");
    for (row, (x, y, bpm)) in rows.iter().zip([(0.78, 0.96, 21.0), (1.12, 1.03, 24.0)]) {
        let f: Vec<f64> = row.split(',').map(|v| v.parse().unwrap()).collect();
        assert!((f[3] - x).abs() < 0.015 && (f[4] - y).abs() < 0.015, "{row}");
        assert!((f[1] - bpm).abs() <= 2.0, "{row}");
    }

    // A summary evaluated against itself.
    let s = run_a.join("summary.csv");
    let r = msresp(&["eval", "--estimates", s.to_str().unwrap(), "--reference", s.to_str().unwrap()]);
    assert_eq!(code(&r), 0);
    assert!(String::from_utf8_lossy(&r.stdout).contains("rmse_bpm = 0\n"));
}

#[test]
fn noise_only_scene_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    let text: String = SMALL
        .lines()
        .filter(|l| !l.starts_with("target."))
        .map(|l| format!("{l}\n"))
        .collect::<String>()
        + "noise_snr_db = 0\n";
    let cfg = write(tmp.path(), "noise.cfg", &text);
    let r = msresp(&["run", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(code(&r), 4, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn eval_examples() {
    let tmp = tempfile::tempdir().unwrap();
    let est = write(
        tmp.path(),
        "est.csv",
        "target_id,rate_bpm\n1,12.7\n2,15.8\n3,13.9\n4,17.4\n5,13.8\n6,12.6\n7,13.6\n8,13.6\n",
    );
    let reference = write(
        tmp.path(),
        "ref.csv",
        "target_id,rate_bpm\n1,12.2\n2,15.0\n3,13.0\n4,17.1\n5,14.5\n6,13.0\n7,14.1\n8,12.9\n",
    );
    let r = msresp(&["eval", "--estimates", &est, "--reference", &reference]);
    assert_eq!(code(&r), 0);
    let out = String::from_utf8_lossy(&r.stdout);
    let rmse: f64 = out.lines().last().unwrap().trim_start_matches("rmse_bpm = ").parse().unwrap();
    assert!((rmse - 0.66).abs() <= 0.05, "{out}");
    assert!(out.contains("1,12.7,12.2,0.5"), "{out}");

    let other = write(tmp.path(), "other.csv", "target_id,rate_bpm\n1,12.2\n9,15.0\n");
    assert_eq!(code(&msresp(&["eval", "--estimates", &est, "--reference", &other])), 6);
    let broken = write(tmp.path(), "broken.csv", "id,rate\n1,2\n");
    assert_eq!(code(&msresp(&["eval", "--estimates", &broken, "--reference", &other])), 3);
}
