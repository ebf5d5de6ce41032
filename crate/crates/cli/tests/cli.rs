use std::fs;
use std::path::Path;
use std::process::Command;

fn imutube(args: &[&str], cwd: &Path) -> i32 {
    let out = Command::new(env!("CARGO_BIN_EXE_imutube"))
        .args(args)
        .args(["--log-level", "error"])
        .current_dir(cwd)
        .output()
        .unwrap();
    out.status.code().unwrap()
}

fn generate(cwd: &Path) {
    let code = imutube(
        &[
            "synth-gen",
            "--subjects",
            "3",
            "--duration",
            "6",
            "--out",
            "data",
        ],
        cwd,
    );
    assert_eq!(code, 0);
}

#[test]
fn full_workflow_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    assert!(d.join("data/manifest.json").exists());
    assert_eq!(
        imutube(
            &["run", "--manifest", "data/manifest.json", "--out", "run"],
            d
        ),
        0
    );
    assert!(d.join("run/provenance.json").exists());
    assert_eq!(
        imutube(
            &[
                "distmap-fit",
                "--virtual",
                "run/virtual",
                "--real",
                "data/real",
                "--out",
                "maps"
            ],
            d
        ),
        0
    );
    assert_eq!(
        imutube(
            &[
                "distmap-apply",
                "--map",
                "maps/map.json",
                "--input",
                "run/virtual",
                "--out",
                "mapped"
            ],
            d
        ),
        0
    );
    let n_virtual = fs::read_dir(d.join("run/virtual")).unwrap().count();
    assert_eq!(fs::read_dir(d.join("mapped")).unwrap().count(), n_virtual);
    assert_eq!(
        imutube(
            &[
                "report",
                "--real",
                "data/real",
                "--virtual",
                "run/virtual",
                "--out",
                "rep"
            ],
            d
        ),
        0
    );
    for p in ["R2R", "V2R", "Mix2R"] {
        assert!(d.join(format!("rep/{p}.json")).exists());
        assert!(d.join(format!("rep/{p}_confusion.csv")).exists());
    }
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    generate(d);
    for out in ["a", "b"] {
        assert_eq!(
            imutube(
                &["run", "--manifest", "data/manifest.json", "--out", out],
                d
            ),
            0
        );
        let virt = format!("{out}/virtual");
        assert_eq!(
            imutube(
                &[
                    "evaluate",
                    "--real",
                    "data/real",
                    "--virtual",
                    &virt,
                    "--protocol",
                    "mix2r",
                    "--out",
                    out
                ],
                d
            ),
            0
        );
    }
    let mut names: Vec<_> = fs::read_dir(d.join("a/virtual"))
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(!names.is_empty());
    for n in names {
        assert_eq!(
            fs::read(d.join("a/virtual").join(&n)).unwrap(),
            fs::read(d.join("b/virtual").join(&n)).unwrap(),
            "{n:?}"
        );
    }
    assert_eq!(
        fs::read(d.join("a/Mix2R.json")).unwrap(),
        fs::read(d.join("b/Mix2R.json")).unwrap()
    );
}

#[test]
fn configuration_errors_exit_with_1() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.json"), r#"{"version":1,"bogus":true}"#).unwrap();
    assert_eq!(
        imutube(&["--config", "bad.json", "run", "--manifest", "m.json"], d),
        1
    );
    assert_eq!(imutube(&["no-such-command"], d), 1);
    assert_eq!(
        imutube(&["synth-gen", "--scenarios", "swim", "--out", "x"], d),
        1
    );
    fs::write(
        d.join("zero_budget.json"),
        r#"{"version":1,"eval":{"map_budget_s":0.0}}"#,
    )
    .unwrap();
    generate(d);
    assert_eq!(
        imutube(
            &[
                "--config",
                "zero_budget.json",
                "evaluate",
                "--real",
                "data/real",
                "--virtual",
                "data/real",
                "--protocol",
                "V2R"
            ],
            d
        ),
        1
    );
}

#[test]
fn data_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(imutube(&["run", "--manifest", "missing.json"], d), 2);
    fs::create_dir(d.join("empty")).unwrap();
    assert_eq!(
        imutube(&["report", "--real", "empty", "--virtual", "empty"], d),
        2
    );
}

#[test]
fn failed_clip_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let code = imutube(
        &[
            "synth-gen",
            "--subjects",
            "1",
            "--scenarios",
            "still,walk",
            "--duration",
            "2",
            "--render-frames",
            "--out",
            "data",
        ],
        d,
    );
    assert_eq!(code, 0);
    let mut dmaps: Vec<_> = walk(&d.join("data"))
        .into_iter()
        .filter(|p| p.extension().is_some_and(|x| x == "dmap"))
        .collect();
    dmaps.sort();
    assert!(!dmaps.is_empty());
    fs::write(&dmaps[3], b"not a depth map").unwrap();
    assert_eq!(
        imutube(
            &["run", "--manifest", "data/manifest.json", "--out", "out"],
            d
        ),
        3
    );
    let provenance = fs::read_to_string(d.join("out/provenance.json")).unwrap();
    assert!(provenance.contains("failed"));
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
