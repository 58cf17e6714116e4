use std::path::Path;
use std::process::{Command, Output};

fn cascade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cascade")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cascade(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn err(args: &[&str]) -> String {
    let out = cascade(args);
    assert!(!out.status.success(), "{args:?} should fail");
    String::from_utf8(out.stderr).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let r = rows(csv);
    let i = r[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    r[1..].iter().map(|row| row[i].clone()).collect()
}

#[test]
fn sweep_writes_one_row_per_q() {
    let csv = ok(&[
        "sweep",
        "--variant",
        "original",
        "--n",
        "10000",
        "--q",
        "0.01:0.11:0.005",
        "--frames",
        "20",
        "--seed",
        "7",
    ]);
    let f = column(&csv, "f_ec");
    assert_eq!(f.len(), 21);
    assert!(f.iter().all(|v| v.parse::<f64>().unwrap() > 1.0));
    assert_eq!(
        rows(&csv)[0].join(","),
        "variant,n,p_init,q,frames,mean_m,mean_rounds,fer,fer_ci_high,ber,f_ec,beta,leak_ec,eta_ec"
    );
}

#[test]
fn identical_invocations_give_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, workers: &str| {
        let path = dir.path().join(name);
        let p = path.to_str().unwrap();
        ok(&[
            "sweep",
            "--variant",
            "opt4",
            "--n",
            "2000",
            "--q",
            "0.02,0.06",
            "--frames",
            "200",
            "--seed",
            "3",
            "--workers",
            workers,
            "-o",
            p,
        ]);
        std::fs::read(&path).unwrap()
    };
    let a = run("a.csv", "1");
    assert_eq!(a, run("b.csv", "1"));
    assert_eq!(a, run("c.csv", "4"));
}

#[test]
fn provenance_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.csv");
    ok(&[
        "run",
        "--variant",
        "opt7",
        "--n",
        "4096",
        "--q",
        "0.03",
        "--frames",
        "10",
        "--seed",
        "9",
        "-o",
        out.to_str().unwrap(),
    ]);
    let meta: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.csv.meta.json")).unwrap()).unwrap();
    assert_eq!(meta["version"], env!("CARGO_PKG_VERSION"));
    assert!(meta["generator"].as_str().unwrap().contains("pcg64"));
    let exp = &meta["experiments"][0];
    assert_eq!(exp["master_seed"], 9);
    assert_eq!(exp["schedules"][0]["schedule"]["k"][0], 64);
}

#[test]
fn compare_orders_variants() {
    let csv = ok(&[
        "compare",
        "--variants",
        "original,mod1,opt3",
        "--q",
        "0.02",
        "--n",
        "10000",
        "--frames",
        "1000",
        "--seed",
        "1",
    ]);
    let names = column(&csv, "variant");
    assert_eq!(names, ["original", "mod1", "opt3"]);
    let f: Vec<f64> = column(&csv, "f_ec").iter().map(|v| v.parse().unwrap()).collect();
    assert!(f[2] < f[0], "opt3 {} vs original {}", f[2], f[0]);
}

#[test]
fn rateless_keeps_estimate_fixed() {
    let csv = ok(&[
        "rateless",
        "--variant",
        "original",
        "--p-init",
        "0.02",
        "--q",
        "0.01:0.04:0.01",
        "--n",
        "5000",
        "--frames",
        "20",
    ]);
    assert!(column(&csv, "p_init").iter().all(|p| p == "0.02"));
    assert_eq!(column(&csv, "q"), ["0.01", "0.02", "0.03", "0.04"]);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.json");
    std::fs::write(&cfg, r#"{"frames_per_point": 7, "variant": "opt3"}"#).unwrap();
    let csv = ok(&["run", "--q", "0.03", "--n", "3000", "--frames", "100", "--config", cfg.to_str().unwrap()]);
    assert_eq!(column(&csv, "frames"), ["7"]);
    assert_eq!(column(&csv, "variant"), ["opt3"]);
}

#[test]
fn custom_schedule_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let s = cascade_core::BlockSchedule::custom(1024, vec![16, 64, 512]).unwrap().with_reuse(true);
    std::fs::write(&path, s.to_json().unwrap()).unwrap();
    let csv = ok(&[
        "run",
        "--variant",
        "custom",
        "--schedule",
        path.to_str().unwrap(),
        "--n",
        "1024",
        "--q",
        "0.04",
        "--frames",
        "30",
    ]);
    assert_eq!(column(&csv, "variant"), ["custom"]);
    let e = err(&["run", "--variant", "custom", "--n", "1024", "--q", "0.04", "--frames", "3"]);
    assert!(e.contains("custom"), "{e}");
}

#[test]
fn configuration_errors_are_distinct() {
    let unknown = err(&["run", "--variant", "cascade9", "--q", "0.02", "--frames", "1"]);
    assert!(unknown.contains("unknown variant `cascade9`"), "{unknown}");
    let too_big = err(&["run", "--variant", "original", "--n", "100", "--q", "0.001", "--frames", "1"]);
    assert!(too_big.contains("exceeds frame length"), "{too_big}");
    let bad_path = err(&["run", "--q", "0.02", "--n", "1000", "--frames", "1", "-o", "/nonexistent-dir/x.csv"]);
    assert!(bad_path.contains("cannot write output file"), "{bad_path}");
    let grid = err(&["sweep", "--q", "0.05:0.01:0.01", "--frames", "1"]);
    assert!(grid.contains("bad grid"), "{grid}");
    assert_ne!(unknown, too_big);
    assert_ne!(too_big, bad_path);
}

#[test]
fn transcript_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.log");
    ok(&[
        "run",
        "--variant",
        "opt5",
        "--n",
        "2000",
        "--q",
        "0.05",
        "--frames",
        "2",
        "--transcript",
        t.to_str().unwrap(),
    ]);
    let summary = ok(&["replay", "--transcript", t.to_str().unwrap()]);
    assert!(summary.contains("consistent"));

    let text = std::fs::read_to_string(&t).unwrap();
    let tampered: String = text
        .lines()
        .map(|l| if l.starts_with("END") { l.replace("m=", "m=9") } else { l.to_string() })
        .collect::<Vec<_>>()
        .join("\n");
    let bad = dir.path().join("bad.log");
    std::fs::write(&bad, tampered).unwrap();
    let e = err(&["replay", "--transcript", bad.to_str().unwrap()]);
    assert!(e.contains("inconsistent"), "{e}");
    assert!(err(&["replay", "--transcript", "/no/such/file"]).contains("cannot read transcript"));
}

#[test]
fn optimize_modes() {
    let csv = ok(&[
        "optimize",
        "--mode",
        "pow2",
        "--q",
        "0.05",
        "--n",
        "1024",
        "--frames",
        "20",
        "--exponents",
        "3,4",
        "--exponents",
        "6,7",
    ]);
    assert_eq!(rows(&csv)[0].join(","), "candidate,eta_ec,stderr,frames");
    assert_eq!(rows(&csv).len(), 5);
    let eta: Vec<f64> = column(&csv, "eta_ec").iter().map(|v| v.parse().unwrap()).collect();
    assert!(eta.windows(2).all(|w| w[0] <= w[1]));

    let csv = ok(&["optimize", "--q", "0.05", "--n", "1024", "--frames", "10", "--budget", "9"]);
    assert!(rows(&csv).len() <= 10);
    assert!(err(&["optimize", "--mode", "grid", "--q", "0.05", "--frames", "1"]).contains("unknown optimize mode"));
}

#[test]
fn help_lists_subcommands() {
    let help = ok(&["--help"]);
    for sub in ["run", "sweep", "rateless", "optimize", "compare", "replay"] {
        assert!(help.contains(sub), "{sub}");
    }
    assert!(Path::new(env!("CARGO_BIN_EXE_cascade")).exists());
}
