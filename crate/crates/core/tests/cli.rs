use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use carbonledger::ledger::{read_ledger, ExperimentRecord, RunStatus};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_carbonledger"));
    for v in [
        "CARBONLEDGER_EVENTS",
        "CARBONLEDGER_LEDGER",
        "CARBONLEDGER_REGISTRY",
        "CARBONLEDGER_TRACE_DIR",
    ] {
        c.env_remove(v);
    }
    c
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("data")
        .join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn replay_run(ledger: &Path, label: &str) -> Output {
    let events = data("three_epochs.events");
    bin()
        .args([
            "run",
            "--label",
            label,
            "--interval-ms",
            "10000",
            "--max-epochs",
            "3",
        ])
        .arg("--probe")
        .arg(format!(
            "replay:{}#2",
            data("constant_250w_1h.csv").display()
        ))
        .arg("--ledger")
        .arg(ledger)
        .arg("--")
        .args([
            "sh",
            "-c",
            &format!("cat '{}' > \"$CARBONLEDGER_EVENTS\"", events.display()),
        ])
        .output()
        .unwrap()
}

fn strip_ids(mut r: ExperimentRecord) -> ExperimentRecord {
    r.experiment_id.clear();
    r.started_at = chrono::DateTime::UNIX_EPOCH;
    r
}

#[test]
fn replay_run_appends_expected_record() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("ledger.jsonl");
    let o = replay_run(&ledger, "fixture");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fixture"), "{}", stdout(&o));

    let recs = read_ledger(&ledger).unwrap();
    assert_eq!(recs.len(), 1);
    let r = &recs[0];
    assert!((r.energy_kwh - 0.775).abs() < 1e-6, "{}", r.energy_kwh);
    assert!((r.co2e_kg - 0.2945).abs() < 1e-4, "{}", r.co2e_kg);
    assert_eq!(r.epochs_completed, 3);
    assert_eq!(r.status, RunStatus::Completed);
    assert_eq!(r.exit_code, Some(0));
    assert!(r.quality_notes.is_empty(), "{:?}", r.quality_notes);

    let o = replay_run(&ledger, "fixture");
    assert!(o.status.success());
    let recs = read_ledger(&ledger).unwrap();
    assert_eq!(recs.len(), 2);
    assert_ne!(recs[0].experiment_id, recs[1].experiment_id);
    assert_eq!(strip_ids(recs[0].clone()), strip_ids(recs[1].clone()));
}

#[test]
fn child_exit_code_propagates() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("l.jsonl");
    let o = bin()
        .args([
            "run",
            "--probe",
            "stub:100",
            "--interval-ms",
            "20",
            "--ledger",
        ])
        .arg(&ledger)
        .args(["--", "sh", "-c", "exit 7"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(7), "{}", stderr(&o));
    let recs = read_ledger(&ledger).unwrap();
    assert_eq!(recs[0].status, RunStatus::Aborted);
    assert_eq!(recs[0].exit_code, Some(7));
}

#[test]
fn unspawnable_command_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--probe", "stub:100", "--ledger"])
        .arg(dir.path().join("l.jsonl"))
        .args(["--", "/no/such/program"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn wrapped_workload_reports_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("l.jsonl");
    let o = bin()
        .args([
            "run",
            "--label",
            "kg",
            "--probe",
            "stub:250#2",
            "--interval-ms",
            "20",
            "--max-epochs",
            "4",
            "--ledger",
        ])
        .arg(&ledger)
        .arg("--")
        .arg(env!("CARGO_BIN_EXE_carbonledger"))
        .args([
            "workload",
            "--max-epochs",
            "4",
            "--losses",
            "1,0.9,0.8,0.7",
            "--work-rounds",
            "200",
            "--triples",
        ])
        .arg(data("triples.tsv"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let r = &read_ledger(&ledger).unwrap()[0];
    assert_eq!(r.epochs_completed, 4);
    let closed = 1.55 * r.duration_hours * 2.0 * 250.0 / 1000.0;
    assert!(
        (r.energy_kwh - closed).abs() <= 0.05 * closed + 1e-9,
        "{} vs {closed}",
        r.energy_kwh
    );
    assert!(
        stderr(&o).contains("forecast after 1 epoch"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn workload_without_event_path_is_usage_error() {
    let o = bin()
        .args(["workload", "--triples"])
        .arg(data("triples.tsv"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_formats_and_env_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let ledger = dir.path().join("l.jsonl");
    assert!(replay_run(&ledger, "a-run").status.success());
    assert!(replay_run(&ledger, "b-run").status.success());

    let o = bin()
        .args(["report"])
        .env("CARBONLEDGER_LEDGER", &ledger)
        .output()
        .unwrap();
    assert!(o.status.success());
    let text = stdout(&o);
    assert_eq!(carbonledger::ledger::parse_table(&text).len(), 2, "{text}");

    let o = bin()
        .args(["report", "--format", "json", "--label", "b-"])
        .arg("--ledger")
        .arg(&ledger)
        .output()
        .unwrap();
    let recs = carbonledger::ledger::parse_report_json(&stdout(&o)).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].label, "b-run");

    let o = bin()
        .args(["report", "--compare", "a-run"])
        .arg("--ledger")
        .arg(&ledger)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let o = bin()
        .args(["report", "--compare", "zzz"])
        .arg("--ledger")
        .arg(&ledger)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn predict_and_regions() {
    let o = bin()
        .args(["predict", "--epoch-kwh", "0.27", "--epochs", "13"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(stdout(&o).contains("3.51 kWh"));

    let o = bin()
        .arg("regions")
        .env("CARBONLEDGER_REGISTRY", data("registry.csv"))
        .output()
        .unwrap();
    let out = stdout(&o);
    let regions: Vec<&str> = out.lines().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(regions, ["DE", "DE-TABLE", "FR", "PL", "SE"]);

    let o = bin()
        .args([
            "predict",
            "--epoch-kwh",
            "1",
            "--epochs",
            "2",
            "--region",
            "SE",
        ])
        .env("CARBONLEDGER_REGISTRY", data("registry.csv"))
        .output()
        .unwrap();
    assert!(
        stdout(&o).contains("predicted CO2e: 0.090 kg"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(
        bin().arg("frobnicate").output().unwrap().status.code(),
        Some(2)
    );
    assert_eq!(
        bin()
            .args(["run", "--probe", "stub:1"])
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        bin()
            .args(["report", "--ledger", "/no/such/ledger"])
            .output()
            .unwrap()
            .status
            .code()
            .map(|c| c != 0),
        Some(true)
    );
}
