use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use epinit_cli::incidence::{ingest_incidence, write_incidence, CountySeries};

fn epinit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_epinit"))
        .args(args)
        .output()
        .unwrap()
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_incidence_file(dir: &Path) -> PathBuf {
    let out = run_dir(&epinit(&[
        "--out-dir",
        dir.to_str().unwrap(),
        "simulate",
        "--source",
        "ctmc",
        "--realizations",
        "2",
        "--seed",
        "11",
    ]));
    let text = std::fs::read_to_string(out.join("incidence.csv"))
        .unwrap()
        .replace("realization-0", "Skåne")
        .replace("realization-1", "Stockholm");
    let path = dir.join("incidence.csv");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn estimate_single_county_writes_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let data = write_incidence_file(tmp.path());
    let out = epinit(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "estimate",
        "--method",
        "rts",
        "--data",
        data.to_str().unwrap(),
        "--county",
        "Skåne",
        "--m",
        "30",
    ]);
    let dir = run_dir(&out);
    let csv = std::fs::read_to_string(dir.join("estimates.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "county,method,I,E,A,I_c,phi,converged,iterations");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("Skåne,RTS,"));
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command = estimate\n") && manifest.contains("m = 30\n"));
    assert!(manifest.contains("version = "));
}

#[test]
fn runs_land_under_command_and_timestamp() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_epinit"))
        .env("EPINIT_OUT", tmp.path())
        .args(["study", "--realizations", "4"])
        .output()
        .unwrap();
    let dir = run_dir(&out);
    assert_eq!(dir.parent().unwrap(), tmp.path().join("study"));
    let stamp = dir.file_name().unwrap().to_str().unwrap();
    assert_eq!(stamp.len(), "20200101T000000Z".len(), "{stamp}");
    for f in ["manifest.txt", "kde.csv", "summary.csv", "failures.csv"] {
        assert!(dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn errors_exit_nonzero_with_module_prefix() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_str().unwrap();

    let out = epinit(&["study", "--no-such-flag"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("--no-such-flag"));

    let out = epinit(&[
        "--out-dir",
        root,
        "study",
        "--config",
        "/nonexistent/cfg.txt",
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("config"), "{}", stderr(&out));

    let out = epinit(&["--out-dir", root, "study", "--m", "50"]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("k_min <= m <= d"), "{}", stderr(&out));

    let bad = tmp.path().join("bad.csv");
    std::fs::write(
        &bad,
        "date,county,cumulative_cases\n2020-03-01,Skåne,5\n2020-03-02,Skåne,3\n",
    )
    .unwrap();
    let out = epinit(&[
        "--out-dir",
        root,
        "estimate",
        "--data",
        bad.to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(
        err.contains("incidence") && err.contains("Skåne") && err.contains("2020-03-02"),
        "{err}"
    );
    assert!(
        !tmp.path()
            .join("estimate")
            .read_dir()
            .unwrap()
            .any(|_| true),
        "failed run left output behind"
    );
}

#[test]
fn config_file_and_flags_layer() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.txt");
    std::fs::write(
        &cfg,
        "# small run\nrealizations = 3\nseed = 9\nsource = lti\n",
    )
    .unwrap();
    let out = epinit(&[
        "--out-dir",
        tmp.path().to_str().unwrap(),
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "10",
    ]);
    let manifest = std::fs::read_to_string(run_dir(&out).join("manifest.txt")).unwrap();
    assert!(manifest.contains("realizations = 3\n"));
    assert!(manifest.contains("seed = 10\n"));
}

#[test]
fn incidence_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let series = vec![
        CountySeries {
            county: "Skåne".into(),
            start: chrono::NaiveDate::from_ymd_opt(2020, 3, 6).unwrap(),
            cases: vec![3, 3, 8, 15, 15, 22],
        },
        CountySeries {
            county: "Västra Götaland".into(),
            start: chrono::NaiveDate::from_ymd_opt(2020, 3, 6).unwrap(),
            cases: vec![0, 1, 1, 4, 9, 13],
        },
    ];
    let path = tmp.path().join("inc.csv");
    write_incidence(std::fs::File::create(&path).unwrap(), &series).unwrap();
    assert_eq!(ingest_incidence(&path, None).unwrap(), series);
}
