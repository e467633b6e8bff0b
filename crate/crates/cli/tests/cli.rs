use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SHORT_SIM: &str = "[sim]\nduration = 400.0\ndispatch_window = 300.0\ntotal_vehicles = 134\n";

fn roundabout(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_roundabout"))
        .args(args)
        .output()
        .unwrap()
}

fn default_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml")
}

fn scenario(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("scenario.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

#[test]
fn validate_reports_derived_quantities() {
    let out = roundabout(&["validate", default_scenario().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    for needle in [
        "28.271",
        "39.507",
        "4.500",
        "100.000 m",
        "[320, 332)",
        "[420, 432)",
    ] {
        assert!(stdout.contains(needle), "missing {needle} in\n{stdout}");
    }
}

#[test]
fn shipped_scenario_spells_out_the_defaults() {
    let shipped = std::fs::read_to_string(default_scenario()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let empty = scenario(dir.path(), "");
    let a = roundabout(&["validate", default_scenario().to_str().unwrap()]);
    let b = roundabout(&["validate", empty.to_str().unwrap()]);
    let strip = |o: &Output| {
        text(&o.stdout)
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    for section in [
        "[geometry]",
        "[limits]",
        "[driver]",
        "[sim]",
        "[sweep]",
        "[control]",
        "[fuel]",
    ] {
        assert!(shipped.contains(section), "{section}");
    }
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("[limits]\nv_min = 0.0\n", "L/v_min"),
        ("[sweep]\nmpr = [0.0, 1.3]\n", "range"),
        ("[geometry]\nentry_zone_length = 30.0\n", "approach_length"),
        ("[geometry]\nperimeter = 200.0\nradius = 3.0\n", "line 3"),
        ("[sim\nstep = 0.05\n", "line 1"),
    ];
    for (body, needle) in cases {
        let path = scenario(dir.path(), body);
        let out = roundabout(&["validate", path.to_str().unwrap()]);
        assert_eq!(out.status.code(), Some(2), "{body}");
        let stderr = text(&out.stderr);
        assert!(stderr.contains(needle), "{body}: {stderr}");
    }
    let missing = dir.path().join("nope.toml");
    let out = roundabout(&["validate", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_rejects_bad_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario(dir.path(), SHORT_SIM);
    let out_dir = dir.path().join("out");
    let p = path.to_str().unwrap();
    let o = out_dir.to_str().unwrap();
    for extra in [&["--mpr", "1.5"][..], &["--seeds", "1,1"], &["--jobs", "0"]] {
        let mut args = vec!["run", p, "--out", o];
        args.extend_from_slice(extra);
        let out = roundabout(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{extra:?}: {}",
            text(&out.stderr)
        );
    }
}

#[test]
fn restricted_run_writes_one_directory() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario(dir.path(), SHORT_SIM);
    let out_dir = dir.path().join("out");
    let out = roundabout(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mpr",
        "1.0",
        "--seeds",
        "42",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    assert!(text(&out.stdout).contains("MPR %"));
    let runs: Vec<_> = std::fs::read_dir(out_dir.join("mpr_100"))
        .unwrap()
        .collect();
    assert_eq!(runs.len(), 1);
    for f in [
        "trajectories.csv",
        "events.csv",
        "vehicles.csv",
        "queue.csv",
        "moe.csv",
    ] {
        assert!(out_dir.join("mpr_100/seed_42").join(f).is_file(), "{f}");
    }
    assert!(out_dir.join("summary.csv").is_file());
    assert!(out_dir.join("moe_timeseries.csv").is_file());
}

#[test]
fn sweep_table_and_repeatability() {
    let dir = tempfile::tempdir().unwrap();
    let path = scenario(
        dir.path(),
        &format!("{SHORT_SIM}[sweep]\nmpr = [0.0, 1.0]\nseeds = [1, 2]\n"),
    );
    let run_into = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = roundabout(&[
            "run",
            path.to_str().unwrap(),
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
        (out_dir, text(&out.stdout))
    };
    let (a, table) = run_into("a");
    let (b, _) = run_into("b");
    let rows: Vec<&str> = table
        .lines()
        .filter(|l| l.trim_start().starts_with("100"))
        .collect();
    assert_eq!(rows.len(), 1, "{table}");
    for f in [
        "summary.csv",
        "moe_timeseries.csv",
        "mpr_0/seed_2/trajectories.csv",
        "mpr_100/seed_1/events.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(f)).unwrap(),
            std::fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn invariant_violations_exit_with_3_and_keep_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    // CAVs too weak to track their plans collide in the merging zone.
    let path = scenario(
        dir.path(),
        &format!("[limits]\nu_min = -0.3\nu_max = 0.3\n{SHORT_SIM}"),
    );
    let out_dir = dir.path().join("out");
    let out = roundabout(&[
        "run",
        path.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "--mpr",
        "1",
        "--seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
    let stderr = text(&out.stderr);
    assert!(stderr.contains("lateral exclusion"), "{stderr}");
    assert!(out_dir.join("mpr_100/seed_1/events.csv").is_file());
}
