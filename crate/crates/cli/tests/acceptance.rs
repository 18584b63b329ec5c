//! CLI acceptance: reproducibility of reports across parallelism degrees.
//! Prints one `ACCEPTANCE 10 (...): PASS/FAIL` line (run with `--nocapture`).

use std::path::PathBuf;
use std::process::Command;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mpx")
}

fn model(name: &str) -> String {
    format!("{}/../../models/{name}", env!("CARGO_MANIFEST_DIR"))
}

fn tmp(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn run_to_file(args: &[&str], out: &PathBuf) -> Vec<u8> {
    let status = Command::new(bin())
        .args(args)
        .arg("--output")
        .arg(out)
        .status()
        .expect("spawn mpx");
    assert!(status.success(), "mpx {args:?} exited with {status}");
    std::fs::read(out).expect("read report")
}

#[test]
fn acceptance_10_reproducibility_across_parallelism() {
    let mut failures = Vec::new();
    let cases: Vec<(&str, Vec<String>)> = vec![
        (
            "gamma_both",
            vec![
                "gamma".into(),
                model("finite2x2.json"),
                "--method".into(),
                "both".into(),
                "--n".into(),
                "2000".into(),
                "--replicas".into(),
                "40".into(),
                "--samples".into(),
                "500".into(),
            ],
        ),
        (
            "sigma",
            vec![
                "sigma".into(),
                model("d1_gaussian.json"),
                "--gamma".into(),
                "0".into(),
                "--n".into(),
                "1024".into(),
                "--replicas".into(),
                "200".into(),
            ],
        ),
        (
            "mlp",
            vec![
                "mlp".into(),
                model("example1.json"),
                "--horizon".into(),
                "8".into(),
                "--trials".into(),
                "400".into(),
            ],
        ),
        (
            "couple",
            vec![
                "couple".into(),
                model("example1.json"),
                "--samples".into(),
                "64".into(),
            ],
        ),
    ];
    for (name, args) in &cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let p1 = tmp(&format!("{name}_p1.json"));
        let p8 = tmp(&format!("{name}_p8.json"));
        let rerun = tmp(&format!("{name}_p1_rerun.json"));
        let mut a1 = args.clone();
        a1.extend(["--parallel", "1"]);
        let mut a8 = args.clone();
        a8.extend(["--parallel", "8"]);
        let b1 = run_to_file(&a1, &p1);
        let b8 = run_to_file(&a8, &p8);
        let b1r = run_to_file(&a1, &rerun);
        if b1 != b8 {
            failures.push(format!("{name}: --parallel 1 vs 8 reports differ"));
        }
        if b1 != b1r {
            failures.push(format!("{name}: rerun with identical config differs"));
        }
    }
    if failures.is_empty() {
        println!("ACCEPTANCE 10 (byte-identical reports across parallelism): PASS");
    } else {
        println!(
            "ACCEPTANCE 10 (byte-identical reports across parallelism): FAIL - {}",
            failures.join("; ")
        );
        panic!("acceptance criterion 10 failed: {}", failures.join("; "));
    }
}
