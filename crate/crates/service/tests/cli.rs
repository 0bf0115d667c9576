use std::process::Command;

fn driftscope() -> Command {
    Command::new(env!("CARGO_BIN_EXE_driftscope"))
}

#[test]
fn synth_run_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let ok = driftscope()
        .args(["synth", "--out-dir"])
        .arg(&data)
        .args(["--sources", "2", "--dims", "3", "--records", "1500", "--switch", "700", "--lag", "1=200"])
        .status()
        .unwrap();
    assert!(ok.success());
    for f in ["data.csv", "manifest.json", "config.toml"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let bundle = dir.path().join("bundle.json");
    let out = driftscope()
        .args(["run", "--config"])
        .arg(data.join("config.toml"))
        .arg("--out")
        .arg(&bundle)
        .args(["--window", "300", "--window-mode", "sliding"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&bundle).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed["settings"]["window"], 300);
    assert_eq!(parsed["settings"]["window_mode"], "sliding");

    for what in ["snapshots", "events", "consistency", "trajectories"] {
        let out = driftscope().args(["export", "--bundle"]).arg(&bundle).args(["--what", what]).output().unwrap();
        assert!(out.status.success(), "{what}");
        let text = String::from_utf8(out.stdout).unwrap();
        match what {
            "snapshots" | "events" => assert!(text.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok())),
            _ => assert!(serde_json::from_str::<serde_json::Value>(&text).is_ok()),
        }
    }
    let snapshot_lines = driftscope().args(["export", "--bundle"]).arg(&bundle).args(["--what", "snapshots"]).output().unwrap().stdout;
    assert_eq!(String::from_utf8(snapshot_lines).unwrap().lines().count(), 2 * 15);
}

#[test]
fn run_reports_a_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "manifest = \"m.json\"\nwindw = 3\n").unwrap();
    let out = driftscope().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}
