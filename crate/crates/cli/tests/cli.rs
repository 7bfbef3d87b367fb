use std::process::{Command, Output};

fn dqcsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dqcsim"))
        .args(args)
        .env_remove("DQCSIM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn build_code_reports_parameters() {
    let o = dqcsim(&["build-code", "--code", "bb l=12 m=6 a=x3+y+y2 b=x+x2+y3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("n=144 k=12"));
    let o = dqcsim(&["build-code", "--code", "sc d=11"]);
    assert!(stdout(&o).contains("n=121 k=1"));
    assert!(stdout(&o).contains("css=ok"));
    let o = dqcsim(&["build-code", "--code", "sc d=11", "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(v["report"]["n"], 121);
}

#[test]
fn exit_codes() {
    assert_eq!(dqcsim(&["build-code", "--code", "sc d=4"]).status.code(), Some(2));
    assert_eq!(dqcsim(&["build-code", "--code", "nonsense"]).status.code(), Some(2));
    assert_eq!(
        dqcsim(&["build-code", "--code", "sc5", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(dqcsim(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(dqcsim(&["run", "--code", "sc5", "--shots", "0"]).status.code(), Some(1));
    let help = dqcsim(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    let run_help = stdout(&dqcsim(&["run", "--help"]));
    for flag in [
        "--code",
        "--circuit",
        "--p",
        "--ebit-ratio",
        "--ebit-p",
        "--shots",
        "--seed",
        "--workers",
        "--out",
        "--format",
    ] {
        assert!(run_help.contains(flag), "missing {flag}");
    }
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("absent.dem");
    let o = dqcsim(&[
        "decode",
        "--dem",
        missing.to_str().unwrap(),
        "--batch",
        missing.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn emit_prints_census() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("c.txt");
    let o = dqcsim(&[
        "emit",
        "--code",
        "bb54",
        "--circuit",
        "nonlocal-cnot",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout(&o).contains("census 1q=162 2q=4644 M=864"), "{}", stdout(&o));
    let o = dqcsim(&[
        "emit",
        "--code",
        "sc d=11",
        "--circuit",
        "teleport",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(stdout(&o).contains("census 1q=847 2q=8723 M=2764"));

    let o = dqcsim(&["emit", "--code", "sc d=3", "--p", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    for line in text
        .lines()
        .filter(|l| l.contains("ERROR(") || l.starts_with("DEPOLARIZE"))
    {
        let p: f64 = line.split(['(', ')']).nth(1).unwrap().parse().unwrap();
        assert_eq!(p, 0.0, "{line}");
    }
}

#[test]
fn run_is_reproducible_and_worker_invariant() {
    let args = [
        "run",
        "--code",
        "sc d=3",
        "--p",
        "0.01",
        "--ebit-ratio",
        "1",
        "--shots",
        "10000",
        "--bp-iters",
        "30",
        "--seed",
        "4",
    ];
    let a = dqcsim(&args);
    assert_eq!(a.status.code(), Some(0));
    let text = stdout(&a);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("code,circuit,p,p_ebit,shots,fails,ler,ler_lo,ler_hi,seed")
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[4], "10000");
    assert!(row[5].parse::<u64>().unwrap() > 0);
    let b = dqcsim(&args);
    assert_eq!(a.stdout, b.stdout);
    let mut one = args.to_vec();
    one.extend(["--workers", "1"]);
    assert_eq!(dqcsim(&one).stdout, a.stdout);
    let json = dqcsim(&[&args[..], &["--format", "json"]].concat());
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert_eq!(v[0]["shots"], 10000);
}

#[test]
fn sweep_reports_errors_in_row() {
    let o = dqcsim(&[
        "sweep", "--code", "sc d=3", "--code", "sc d=4", "--p", "0", "--shots", "100",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("sc d=3,nonlocal-cnot,0,0,100,0,0,"));
    assert!(rows[1].contains("error:"));
}

#[test]
fn sample_dem_decode_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let dem = tmp.path().join("m.dem");
    let batch = tmp.path().join("b.bin");
    let flags = tmp.path().join("flags.txt");
    let common = ["--code", "sc d=3", "--p", "0.005"];
    let o = dqcsim(&[&["dem"][..], &common, &["--out", dem.to_str().unwrap()]].concat());
    assert!(stdout(&o).contains("rows=64"));
    let o = dqcsim(
        &[
            &["sample"][..],
            &common,
            &["--shots", "2000", "--out", batch.to_str().unwrap()],
        ]
        .concat(),
    );
    assert_eq!(o.status.code(), Some(0));
    let o = dqcsim(&[
        "decode",
        "--dem",
        dem.to_str().unwrap(),
        "--batch",
        batch.to_str().unwrap(),
        "--bp-iters",
        "30",
        "--out",
        flags.to_str().unwrap(),
    ]);
    let summary = stdout(&o);
    assert!(summary.starts_with("shots=2000 fails="), "{summary}");
    let fails: usize = summary.trim().rsplit('=').next().unwrap().parse().unwrap();
    let flagged = std::fs::read_to_string(&flags)
        .unwrap()
        .lines()
        .filter(|l| *l == "1")
        .count();
    assert_eq!(fails, flagged);
}

#[test]
fn distance_witness_is_verified() {
    let o = dqcsim(&["distance", "--code", "sc d=3", "--circuit", "teleport"]);
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert!(text.contains("verified=true"));
    assert!(text.contains("weight=3"), "{text}");
}
