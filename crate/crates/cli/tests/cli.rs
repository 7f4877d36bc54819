use std::path::Path;
use std::process::{Command, Output};

fn isochr(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_isochr"))
        .current_dir(dir)
        .args(args)
        .env("RUST_BACKTRACE", "0")
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "isochr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_compress_extract_verify() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    isochr(d, &["gen", "--kind", "sphere", "--dims", "24,20,16", "--radius", "6", "--out", "s.raw"]);
    assert_eq!(std::fs::metadata(d.join("s.raw")).unwrap().len(), 24 * 20 * 16 * 4);

    let plan = stdout(&isochr(d, &["plan", "--in", "s.raw", "--dims", "24,20,16", "--block-size", "8", "--isovalues", "-2,0"]));
    assert!(plan.contains("blocks         18"), "{plan}");

    isochr(d, &["compress", "--in", "s.raw", "--dims", "24,20,16", "--isovalues", "-2,0", "--block-size", "8", "--out", "s.chr"]);
    let inspect = stdout(&isochr(d, &["inspect", "s.chr"]));
    assert!(inspect.contains("f32 ingested, f32 stored"), "{inspect}");

    isochr(d, &["extract", "--chr", "s.chr", "--isovalue", "0", "--drop-pruned", "--out", "m.obj", "--report", "r.json"]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("r.json")).unwrap()).unwrap();
    assert!(report["triangles"].as_u64().unwrap() > 0);
    assert!(std::fs::read_to_string(d.join("m.obj")).unwrap().lines().any(|l| l.starts_with("f ")));

    let verify = stdout(&isochr(d, &["verify", "--orig", "s.raw", "--chr", "s.chr", "--isovalue", "0"]));
    assert!(verify.contains("preserved_fraction 1.000000"), "{verify}");
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    isochr(d, &["gen", "--kind", "random", "--dims", "16,16,16", "--seed", "4", "--dtype", "f64", "--out", "r.raw"]);
    let table = stdout(&isochr(
        d,
        &[
            "bench", "--in", "r.raw", "--dtype", "f64", "--dims", "16,16,16", "--isovalues", "0",
            "--block-sizes", "8", "--accuracies", "1,0.8", "--amortize-compress", "--out", "b.json",
        ],
    ));
    assert!(table.contains("compression amortized"));
    let rows: Vec<serde_json::Value> = serde_json::from_slice(&std::fs::read(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    for row in &rows {
        assert_eq!(row["compress_s"].as_f64(), Some(0.0));
        assert_eq!(row["total_s"], row["total_amortized_s"]);
    }
}

#[test]
fn rejects_bad_dims() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_isochr"))
        .current_dir(dir.path())
        .args(["gen", "--kind", "sphere", "--dims", "4,4", "--out", "x.raw"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("NX,NY,NZ"));
}
