use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scratch(tag: &str) -> PathBuf {
    let d = std::env::temp_dir().join(format!("ratetip-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ratetip")).arg("--out").arg(out).args(args).output().expect("spawn ratetip")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Data rows (header dropped) parsed as floats; empty cells become NaN.
fn rows(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let data = lines
        .map(|l| l.split(',').map(|c| if c.is_empty() { f64::NAN } else { c.parse().unwrap() }).collect())
        .collect();
    (header, data)
}

#[test]
fn branches_match_closed_form() {
    for zeta in [0.1f64, 1.1] {
        let dir = scratch(&format!("branches-{zeta}"));
        let o = run(&dir, &["branches", "--zeta", &zeta.to_string()]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let (header, data) = rows(&dir.join("branches.csv"));
        assert_eq!(header, ["tau", "lambda", "Xs", "Xu", "gap", "dxf_s", "dxf_u"]);
        for row in data.iter().step_by(97) {
            let lam = std::f64::consts::FRAC_2_PI * row[0].atan();
            assert!((row[1] - lam).abs() < 1e-12);
            assert!((row[2] - (lam + zeta.sqrt())).abs() < 1e-9);
            assert!((row[3] - (lam - zeta.sqrt())).abs() < 1e-9);
            assert!((row[4] - 2.0 * zeta.sqrt()).abs() < 1e-9);
        }
    }
}

#[test]
fn bad_zeta_is_a_usage_error() {
    let o = run(&scratch("zeta"), &["branches", "--zeta", "-0.5"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("frozen system has no equilibria"));
    let o = run(&scratch("zeta0"), &["branches", "--zeta", "0"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn series_columns_and_limits() {
    let dir = scratch("series");
    let o = run(&dir, &["series", "--order", "3", "--no-fit"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let (header, data) = rows(&dir.join("series_stable.csv"));
    assert_eq!(header, ["tau", "a_0", "a_1", "a_2", "a_3"]);
    let mid = data.iter().find(|r| r[0] == 0.0).expect("tau = 0 node");
    assert!((mid[2] + 1.006584).abs() < 1e-6, "a_1(0) = {}", mid[2]);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("series.json")).unwrap()).unwrap();
    assert_eq!(doc["stable"]["sup_norms"].as_array().unwrap().len(), 4);
    assert!(doc["stable"]["validity_radius"].as_f64().unwrap() > 0.0);

    let dir1 = scratch("series1");
    assert_eq!(code(&run(&dir1, &["series", "--order", "1", "--no-fit"])), 0);
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir1.join("series.json")).unwrap()).unwrap();
    let rbar = doc["stable"]["validity_radius"].as_f64().unwrap();
    assert!((rbar - std::f64::consts::PI * 0.1).abs() < 1e-2 * rbar, "{rbar}");

    let dir0 = scratch("series0");
    assert_eq!(code(&run(&dir0, &["series", "--order", "0", "--no-fit"])), 0);
    let (header, data) = rows(&dir0.join("series_stable.csv"));
    assert_eq!(header, ["tau", "a_0"]);
    let (_, branches) = {
        assert_eq!(code(&run(&dir0, &["branches"])), 0);
        rows(&dir0.join("branches.csv"))
    };
    for (a, b) in data.iter().zip(&branches) {
        assert_eq!(a[1], b[2]);
    }

    let o = run(&scratch("series6"), &["series", "--order", "6"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("too high"));
}

#[test]
fn series_json_carries_error_fit() {
    let dir = scratch("series-fit");
    let o = run(&dir, &["series", "--order", "1", "--zeta", "1.1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("series.json")).unwrap()).unwrap();
    let slope = doc["stable"]["error_fit"]["slope"].as_f64().unwrap();
    assert!((1.7..=2.3).contains(&slope), "{slope}");
    assert!(doc["unstable"]["error_fit"]["c_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn tip_reports_and_preconditions() {
    let dir = scratch("tip");
    let o = run(&dir, &["tip", "--zeta", "0.1", "--order", "1", "--epsilon", "0.2", "--tau", "30", "--r-range", "0.05:5"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("tip.json")).unwrap()).unwrap();
    assert_eq!(doc["classification"], "visible_tipping");
    let b = doc["bracket"].as_array().unwrap();
    let (lo, hi) = (b[0].as_f64().unwrap(), b[1].as_f64().unwrap());
    assert!(lo < 0.2804 && hi > 0.2803, "[{lo}, {hi}]");
    let (header, data) = rows(&dir.join("discriminants.csv"));
    assert_eq!(header, ["r", "tau", "d_out", "d_in", "flags"]);
    assert!(data.len() > 40);

    let dir = scratch("tip-wide");
    let o = run(&dir, &["tip", "--zeta", "1.1", "--r-range", "0.05:2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.join("tip.json")).unwrap()).unwrap();
    assert_eq!(doc["classification"], "end_point_tracking");

    let o = run(&scratch("tip-eps"), &["tip", "--epsilon", "0.35"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("epsilon < d_0/2"), "{}", stderr(&o));
}

#[test]
fn tip_not_tracking_at_left_end_is_math_error() {
    let o = run(&scratch("tip-left"), &["tip", "--zeta", "0.1", "--r-range", "0.5:5"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn config_file_precedence() {
    let dir = scratch("config");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("run.cfg");
    std::fs::write(&cfg, "# run settings\nzeta = 1.1\norder = 2\n").unwrap();
    let cfg_s = cfg.to_str().unwrap();

    assert_eq!(code(&run(&dir, &["--config", cfg_s, "series", "--no-fit"])), 0);
    let (header, data) = rows(&dir.join("series_stable.csv"));
    assert_eq!(header.len(), 4);
    let mid = data.iter().find(|r| r[0] == 0.0).unwrap();
    assert!((mid[1] - 1.1f64.sqrt()).abs() < 1e-9);

    assert_eq!(code(&run(&dir, &["--config", cfg_s, "series", "--no-fit", "--zeta", "0.1", "--order", "1"])), 0);
    let (header, data) = rows(&dir.join("series_stable.csv"));
    assert_eq!(header.len(), 3);
    let mid = data.iter().find(|r| r[0] == 0.0).unwrap();
    assert!((mid[1] - 0.1f64.sqrt()).abs() < 1e-9);

    std::fs::write(&cfg, "zeta: 1.1\n").unwrap();
    assert_eq!(code(&run(&dir, &["--config", cfg_s, "branches"])), 1);
}

#[test]
fn usage_errors() {
    let dir = scratch("usage");
    let o = run(&dir, &["figure", "9"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("unknown figure"));
    assert_eq!(code(&run(&dir, &["frobnicate"])), 1);
    assert_eq!(code(&run(&dir, &["pullback"])), 1);
    assert_eq!(code(&run(&dir, &["--model", "cubic", "branches"])), 1);
    assert_eq!(code(&run(&dir, &["--tol", "-1", "branches"])), 1);
    assert_eq!(code(&run(&dir, &["tip", "--r-range", "2:1"])), 1);
    assert_eq!(code(&run(&dir, &["--help"])), 0);
}

#[test]
fn pullback_reports_escape_as_empty_cells() {
    let dir = scratch("pullback");
    let o = run(&dir, &["pullback", "--r", "0.5", "--window", "-10:10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(dir.join("pullback.csv")).unwrap();
    assert!(text.contains("# escape_x_minus: 2.89"));
    let (_, data) = rows(&dir.join("pullback.csv"));
    assert!(data.first().unwrap()[1].is_finite());
    assert!(data.last().unwrap()[1].is_nan());
    assert!(data.first().unwrap()[2].is_nan());
    assert!(data.last().unwrap()[2].is_finite());
}

#[test]
fn model_file_and_validate() {
    let dir = scratch("modelfile");
    std::fs::create_dir_all(&dir).unwrap();
    let model = dir.join("m.txt");
    std::fs::write(&model, "name: shifted\nf: -1 * x^2 + 2 * x * lambda - 1 * lambda^2 + 0.1\nramp: tanh\nrange: -1, 1\n").unwrap();
    let o = run(&dir, &["--model-file", model.to_str().unwrap(), "--seed", "3", "validate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let first = std::fs::read(dir.join("validate.json")).unwrap();
    assert_eq!(code(&run(&dir, &["--model-file", model.to_str().unwrap(), "--seed", "3", "validate"])), 0);
    assert_eq!(first, std::fs::read(dir.join("validate.json")).unwrap());
    let doc: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(doc["passed"], true);
    assert_eq!(doc["jet_checks"].as_array().unwrap().len(), 64);

    std::fs::write(&model, "f: -1 * x^2 + 0.1\nramp: spline\n").unwrap();
    assert_eq!(code(&run(&dir, &["--model-file", model.to_str().unwrap(), "branches"])), 1);
}

#[test]
fn fold_is_a_math_error() {
    let dir = scratch("fold");
    std::fs::create_dir_all(&dir).unwrap();
    let model = dir.join("fold.txt");
    // equilibria x = ±sqrt(0.1 − λ) collide when λ reaches 0.1
    std::fs::write(&model, "f: -1 * x^2 + 0.1 - 1 * lambda\nramp: arctan\nrange: -1, 1\n").unwrap();
    let o = run(&dir, &["--model-file", model.to_str().unwrap(), "branches"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn figure_determinism_and_columns() {
    let (a, b) = (scratch("fig-a"), scratch("fig-b"));
    for d in [&a, &b] {
        let o = run(d, &["--seed", "5", "figure", "2"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for p in ["figure2_a.csv", "figure2_b.csv"] {
        assert_eq!(std::fs::read(a.join(p)).unwrap(), std::fs::read(b.join(p)).unwrap());
    }
    let (header, data) = rows(&a.join("figure2_a.csv"));
    assert_eq!(header, ["t", "x_minus", "x_plus", "Xs", "Xu", "S1s", "S2s", "S3s", "S1u", "S2u", "S3u"]);
    assert_eq!(data.first().unwrap()[0], -8.0);
    assert_eq!(data.last().unwrap()[0], 8.0);
    assert!(data.iter().all(|r| r[1] - r[2] > 1.0));
}
