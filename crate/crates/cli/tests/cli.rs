use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .canonicalize()
        .unwrap()
}

fn aedes(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aedes"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn run(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![
        cmd,
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    aedes(&args)
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn assert_ok(o: &Output) {
    assert_eq!(code(o), 0, "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

/// Writes a config into `dir` whose data paths point at the shipped examples.
fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    let data = configs().join("data");
    std::fs::write(&path, body.replace("@DATA", data.to_str().unwrap())).unwrap();
    path
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn simulate_writes_a_trajectory() {
    let out = tempfile::tempdir().unwrap();
    assert_ok(&run(
        "simulate",
        &configs().join("simulate.toml"),
        out.path(),
        &["--seed", "1"],
    ));
    let csv = out.path().join("trajectory.csv");
    assert_eq!(lines(&csv), 366 + 1);
}

#[test]
fn oracle_check_passes_and_fails_on_tolerance() {
    let out = tempfile::tempdir().unwrap();
    let o = run(
        "oracle-check",
        &configs().join("oracle_check.toml"),
        out.path(),
        &[],
    );
    assert_ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("agreement within"));
    assert_eq!(lines(&out.path().join("oracle_check.csv")), 202);

    let cfg = write_config(
        out.path(),
        "strict.toml",
        "temperature = 25.0\nj = 5\nhorizon_days = 60\ntolerance = 1e-14\n[capacity]\nconstant = 500.0\n",
    );
    assert_eq!(code(&run("oracle-check", &cfg, out.path(), &[])), 3);
}

#[test]
fn fit_bites_and_traps() {
    let out = tempfile::tempdir().unwrap();
    assert_ok(&run(
        "fit-bites",
        &configs().join("fit_bites.toml"),
        out.path(),
        &[],
    ));
    let text = std::fs::read_to_string(out.path().join("bites_fit.toml")).unwrap();
    assert!(text.contains("mu = ") && text.contains("n = 61"));

    assert_ok(&run(
        "fit-traps",
        &configs().join("fit_traps.toml"),
        out.path(),
        &["--seed", "3"],
    ));
    assert!(out.path().join("trap_fit.toml").exists());
    assert_eq!(lines(&out.path().join("trap_curve.csv")), 101);
}

#[test]
fn fit_capacity_small_run() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(
        out.path(),
        "cap.toml",
        "pairs = \"@DATA/capacity_pairs.csv\"\n[fit]\nchains = 2\niterations = 400\nburn_in = 200\n",
    );
    assert_ok(&run("fit-capacity", &cfg, out.path(), &["--threads", "2"]));
    for f in ["capacity_model.toml", "mu_curve.csv", "diagnostics.csv"] {
        assert!(out.path().join(f).exists(), "{f}");
    }
    assert_eq!(lines(&out.path().join("diagnostics.csv")), 12);
}

#[test]
fn fit_pf_small_run_is_seed_deterministic() {
    let out = tempfile::tempdir().unwrap();
    let cfg = write_config(
        out.path(),
        "pf.toml",
        "cases = \"@DATA/cases.csv\"\nclimate = \"@DATA/climate.csv\"\nj = 2\n\
         [epi]\nn_humans = 10000.0\n[pf]\nparticles = 40\nburn_in_days = 100\n",
    );
    let a = out.path().join("a");
    let b = out.path().join("b");
    assert_ok(&run("fit-pf", &cfg, &a, &["--seed", "9"]));
    assert_ok(&run("fit-pf", &cfg, &b, &["--seed", "9"]));
    let pa = std::fs::read(a.join("posterior.csv")).unwrap();
    assert_eq!(pa, std::fs::read(b.join("posterior.csv")).unwrap());
    assert_eq!(lines(&a.join("posterior.csv")), 53);
}

#[test]
fn train_risk_then_riskmap_with_the_trained_model() {
    let out = tempfile::tempdir().unwrap();
    let o = run(
        "train-risk",
        &configs().join("train_risk.toml"),
        out.path(),
        &[],
    );
    assert_ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("accuracy"));
    let model = out.path().join("risk_model.toml");
    assert!(model.exists());

    let cfg = write_config(
        out.path(),
        "map.toml",
        &format!(
            "grid = \"@DATA/grid.csv\"\nj = 3\nrisk_model = \"{}\"\nburn_in_days = 200\n",
            model.display()
        ),
    );
    let one = out.path().join("one");
    let two = out.path().join("two");
    assert_ok(&run("riskmap", &cfg, &one, &["--threads", "1"]));
    assert_ok(&run("riskmap", &cfg, &two, &["--threads", "2"]));
    let mut names: Vec<_> = std::fs::read_dir(&one)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 365);
    for n in &names {
        assert_eq!(
            std::fs::read(one.join(n)).unwrap(),
            std::fs::read(two.join(n)).unwrap()
        );
    }
}

#[test]
fn validation_errors_exit_with_2() {
    let out = tempfile::tempdir().unwrap();
    assert_eq!(
        code(&run(
            "simulate",
            &out.path().join("missing.toml"),
            out.path(),
            &[]
        )),
        2
    );

    let typo = write_config(
        out.path(),
        "typo.toml",
        "values = \"@DATA/bites.csv\"\nvalue = 1\n",
    );
    assert_eq!(code(&run("fit-bites", &typo, out.path(), &[])), 2);

    let bad_data = out.path().join("neg.csv");
    std::fs::write(&bad_data, "n_bites\n0.5\n-1.0\n").unwrap();
    let cfg = write_config(
        out.path(),
        "neg.toml",
        &format!("values = \"{}\"\n", bad_data.display()),
    );
    assert_eq!(code(&run("fit-bites", &cfg, out.path(), &[])), 2);

    let map = configs().join("riskmap.toml");
    assert_eq!(
        code(&run("riskmap", &map, out.path(), &["--threads", "0"])),
        2
    );
    assert_eq!(code(&aedes(&["simulate"])), 2);
    assert_eq!(code(&aedes(&["no-such-command"])), 2);
    assert_eq!(code(&aedes(&["--help"])), 0);
}
