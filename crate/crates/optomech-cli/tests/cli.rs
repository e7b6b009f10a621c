use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/cantilever.toml")
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_optomech"))
        .env_remove("OPTOMECH_CONFIG")
        .env_remove("OPTOMECH_GRID")
        .env_remove("OPTOMECH_BAND")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn condition_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config();
    let out = run(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "--grid",
            "10,1e6,4096",
            "condition",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&dir.path().join("condition.json"));
    let state = &report["state"];
    assert!(state["physical"].as_bool().unwrap());
    assert!(state["eig_min"].as_f64().unwrap() <= state["v_qq"].as_f64().unwrap());
    assert!(state["v_qq"].as_f64().unwrap() < report["prior"]["v_qq"].as_f64().unwrap());
    for file in ["conditional_spectra.csv", "h_q.csv", "h_p.csv"] {
        assert!(dir.path().join(file).exists(), "{file}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let cfg = config();
    let outputs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = run(
                dir.path(),
                &[
                    "--config",
                    cfg.to_str().unwrap(),
                    "--grid",
                    "10,1e6,2048",
                    "--seed",
                    "3",
                    "mc",
                    "--samples",
                    "100",
                    "--sigma",
                    "0.01",
                ],
            );
            assert!(
                out.status.success(),
                "{}",
                String::from_utf8_lossy(&out.stderr)
            );
            std::fs::read(dir.path().join("mc.json")).unwrap()
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn missing_parameter_is_reported_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(config()).unwrap();
    let trimmed: String = text
        .lines()
        .filter(|l| !l.starts_with("mass"))
        .map(|l| format!("{l}\n"))
        .collect();
    let path = dir.path().join("no_mass.toml");
    std::fs::write(&path, trimmed).unwrap();
    let out = run(
        dir.path(),
        &["--config", path.to_str().unwrap(), "condition"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"], "InvalidConfig");
    assert_eq!(err["field"], "mass");
}

#[test]
fn calibrate_finds_the_flat_floor() {
    let dir = tempfile::tempdir().unwrap();
    let level: f64 = 2.1951e-6;
    let mut csv = String::from("freq_hz,psd\n");
    for i in 0..20000 {
        let psd = if i % 25 == 0 {
            100.0 * level * level
        } else {
            level * level
        };
        csv.push_str(&format!("{},{:e}\n", 3.0e5 + 35.0 * i as f64, psd));
    }
    let measured = dir.path().join("volts.csv");
    std::fs::write(&measured, csv).unwrap();
    let cfg = config();
    let out = run(
        dir.path(),
        &[
            "--config",
            cfg.to_str().unwrap(),
            "calibrate",
            "--measured",
            measured.to_str().unwrap(),
            "--floor",
            "1.7341e-18",
            "--fit-band",
            "3e5,1e6",
            "--bins",
            "200",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report = json(&dir.path().join("calibration.json"));
    let factor = report["calibration"]["factor"].as_f64().unwrap();
    assert!(
        (factor / (1.7341e-18 / level) - 1.0).abs() < 1e-12,
        "{report}"
    );
}
