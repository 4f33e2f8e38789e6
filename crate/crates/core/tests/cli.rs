use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cma_plan::domain::Domain;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join(name)
}

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cma-plan"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("CMA_PLAN_THREADS", t),
        None => cmd.env_remove("CMA_PLAN_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn deliver() -> String {
    fixture("fixtures/deliver.json").display().to_string()
}

fn rover() -> String {
    fixture("fixtures/rover.json").display().to_string()
}

#[test]
fn project_matches_golden_file() {
    let d = deliver();
    let out = run(
        &[
            "project", "--domain", &d, "--world", "pre", "--plan", "twice",
        ],
        None,
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let golden = std::fs::read_to_string(fixture("golden/deliver_project.json")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), golden);
}

#[test]
fn check_output_is_byte_identical_across_runs_and_thread_counts() {
    let r = rover();
    let args = [
        "check",
        "--domain",
        &r,
        "--world",
        "start",
        "--plan",
        "mission",
        "--samples",
        "50",
        "--seed",
        "11",
    ];
    let first = run(&args, Some("1"));
    assert_eq!(
        first.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    for threads in [Some("1"), Some("4"), None] {
        let again = run(&args, threads);
        assert_eq!(again.stdout, first.stdout, "threads {threads:?}");
    }
    let text = String::from_utf8(first.stdout).unwrap();
    assert!(text.contains("\"schemaVersion\": 1"));
    assert!(text.contains("\"samples\": 900"));
    assert!(text.contains("\"passes\": 900"));
}

#[test]
fn exit_codes() {
    let d = deliver();
    let overlap = fixture("fixtures/deliver_overlap.json")
        .display()
        .to_string();
    assert_eq!(
        run(&["validate", "--domain", &d], None).status.code(),
        Some(0)
    );
    let bad = run(
        &["validate", "--domain", &overlap, "--format", "json"],
        None,
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8(bad.stdout).unwrap().contains("overlap"));
    // Sampling needs an explicit seed.
    assert_eq!(
        run(
            &["check", "--domain", &d, "--world", "pre", "--plan", "twice"],
            None
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        run(
            &["project", "--domain", &d, "--world", "nope", "--plan", "twice"],
            None
        )
        .status
        .code(),
        Some(2)
    );
    assert_eq!(
        run(
            &[
                "project",
                "--domain",
                "/nonexistent.json",
                "--world",
                "pre",
                "--plan",
                "twice"
            ],
            None
        )
        .status
        .code(),
        Some(2)
    );

    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{\"space\": [").unwrap();
    let out = run(&["validate", "--domain", broken.to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn soundness_failure_exits_with_three() {
    // The projector is sound, so a failing verdict needs an injected fault:
    // collapsing the coin's intervals to their lower ends loses mass.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("coin.json");
    std::fs::write(
        &path,
        r#"{
        "space": {"attributes": [{"name": "x", "min": 0, "max": 1}]},
        "effects": {"up": {"table": [[1], [1]]}, "stay": {"table": [[0], [1]]}},
        "actions": {
            "coin": {"branches": [
                {"condition": "true", "interval": [0.3, 0.7], "effect": "up"},
                {"condition": "true", "interval": [0.3, 0.7], "effect": "stay"}
            ]}
        },
        "worlds": {"w": {"states": [0]}},
        "plans": {"p": ["coin"]}
    }"#,
    )
    .unwrap();
    let p = path.to_str().unwrap();
    assert_eq!(
        run(
            &[
                "check",
                "--domain",
                p,
                "--world",
                "w",
                "--plan",
                "p",
                "--seed",
                "1",
                "--samples",
                "20"
            ],
            None
        )
        .status
        .code(),
        Some(0)
    );
    let out = run(
        &[
            "check",
            "--domain",
            p,
            "--world",
            "w",
            "--plan",
            "p",
            "--seed",
            "1",
            "--samples",
            "20",
            "--inject-fault",
            "collapse-effect-intervals",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    let neg = run(
        &[
            "check", "--domain", p, "--world", "w", "--plan", "p", "--seed", "1", "--tol=-1",
        ],
        None,
    );
    assert_eq!(neg.status.code(), Some(2));
    assert!(String::from_utf8(out.stdout)
        .unwrap()
        .contains("firstFailure"));
}

#[test]
fn out_flag_and_formats() {
    let d = deliver();
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("eu.json");
    let out = run(
        &[
            "eu",
            "--domain",
            &d,
            "--world",
            "pre",
            "--utility",
            "tons",
            "--out",
            target.to_str().unwrap(),
        ],
        None,
    );
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&target).unwrap()).unwrap();
    assert_eq!(v["lo"].as_f64(), Some(0.0));
    assert_eq!(v["hi"].as_f64(), Some(0.0));

    let dot = run(
        &[
            "export-dot",
            "--domain",
            &d,
            "--world",
            "pre",
            "--plan",
            "twice",
        ],
        None,
    );
    let dot = String::from_utf8(dot.stdout).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dot.contains("[0.6, 0.8]") || dot.contains("0.6"));

    let inst = run(
        &[
            "instantiate",
            "--domain",
            &rover(),
            "--hierarchy",
            "survey",
            "--format",
            "text",
        ],
        None,
    );
    let lines: Vec<String> = String::from_utf8(inst.stdout)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    assert_eq!(lines.len(), 18);
    assert_eq!(lines[0], "A D F");

    let abs = run(
        &["abstract", "--domain", &rover(), "--hierarchy", "survey"],
        None,
    );
    assert!(abs.status.success());
    let v: serde_json::Value = serde_json::from_slice(&abs.stdout).unwrap();
    for node in ["P", "N", "M", "DE", "L", "K"] {
        assert!(v["nodes"][node].is_object(), "missing {node}");
    }
}

#[test]
fn fixtures_round_trip() {
    for name in [
        "fixtures/deliver.json",
        "fixtures/rover.json",
        "fixtures/deliver_overlap.json",
    ] {
        let d = Domain::parse(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap();
        let text = d.to_json().unwrap();
        let again = Domain::parse(&text).unwrap();
        assert_eq!(d.file, again.file, "{name}");
        assert_eq!(d.actions, again.actions, "{name}");
        assert_eq!(d.worlds, again.worlds, "{name}");
        assert_eq!(again.to_json().unwrap(), text, "{name}");
    }
}
