use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "L = 4\nK = 3\nN = 2\nf = 1\nmc_realizations = 40\nn_drops = 3\nseed = 5\n";

fn cellfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cellfree"))
        .args(args)
        .output()
        .expect("spawn cellfree")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn validate_accepts_shipped_configs() {
    let examples = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples");
    for name in ["desk", "fig3", "fig4", "combiners", "convergence"] {
        let path = examples.join(format!("{name}.cfg"));
        let out = cellfree(&["validate", "--config", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    for bad in [
        "K = 0\n",
        "mc_realizations = 0\n",
        "nonsense = 1\n",
        "L = four\n",
        "tau_c = 2\nK = 8\nf = 1\n",
    ] {
        let cfg = write_config(dir.path(), bad);
        let out = cellfree(&["validate", "--config", &cfg]);
        assert_eq!(out.status.code(), Some(1), "{bad:?}");
        assert!(!out.stderr.is_empty());
    }
    let out = cellfree(&["run", "--config", "/definitely/not/here.cfg"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn run_writes_expected_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), TINY);
    let out_dir = dir.path().join("out");
    let out = cellfree(&["run", "--config", &cfg, "--output", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drop"));

    let cdf = fs::read_to_string(out_dir.join("cdf.csv")).unwrap();
    let mut lines = cdf.lines();
    assert_eq!(lines.next(), Some("scheme,combiner,min_se_sorted,cdf"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // 2 schemes x 2 combiners x 3 drops
    assert_eq!(rows.len(), 12);
    for group in rows.chunks(3) {
        let se: Vec<f64> = group.iter().map(|r| r[2].parse().unwrap()).collect();
        assert!(se.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(group[2][3], "1");
    }

    let conv = fs::read_to_string(out_dir.join("convergence_lmmse.csv")).unwrap();
    assert!(conv.starts_with("drop_index,iteration,min_se_exact,t_approx\n"));
    assert!(conv.lines().count() > 3);
    assert!(out_dir.join("convergence_mr.csv").exists());
    assert!(out_dir.join("drops.csv").exists());
}

#[test]
fn flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{TINY}schemes = fixed_power\ncombiners = mr\n"));
    let run = |extra: &[&str], out: &str| {
        let out_dir = dir.path().join(out);
        let mut args = vec![
            "run",
            "--config",
            &cfg,
            "--quiet",
            "--output",
            out_dir.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        let res = cellfree(&args);
        assert!(res.status.success());
        assert!(res.stderr.is_empty(), "{}", String::from_utf8_lossy(&res.stderr));
        fs::read_to_string(out_dir.join("cdf.csv")).unwrap()
    };
    let base = run(&[], "a");
    assert_eq!(base.lines().count(), 4);
    assert_eq!(run(&["--drops", "5"], "b").lines().count(), 6);
    assert_ne!(run(&["--seed", "6"], "c"), base);
    assert_eq!(run(&["--seed", "5"], "d"), base);
    // no proposed scheme, so no convergence file
    assert!(!dir.path().join("a/convergence_mr.csv").exists());
}
