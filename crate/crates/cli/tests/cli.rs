use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rffdistill"))
}

fn run(args: &[&str]) -> Output {
    bin()
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn rffdistill")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn bounds_prints_closed_form_values() {
    let o = run(&["bounds", "--loss", "0", "--lambda", "1e-5"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("bound_vs_labels 1.2e-4"), "{text}");
    assert!(text.contains("bound_vs_optimal 8e-5"), "{text}");
}

#[test]
fn gen_clusters_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for f in [&a, &b] {
        let o = run(&[
            "gen-clusters",
            "--n",
            "4",
            "--sigma",
            "0.1",
            "--seed",
            "7",
            "--out",
            p(f),
        ]);
        assert!(o.status.success());
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 5);
}

#[test]
fn construct_on_generated_field_writes_m_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("grf.csv");
    let out = dir.path().join("s.csv");
    assert!(
        run(&["gen-grf", "--n", "80", "--sigma", "1", "--seed", "2", "--out", p(&data)])
            .status
            .success()
    );
    let o = run(&[
        "distill-construct",
        "--data",
        p(&data),
        "--lambda",
        "1e-3",
        "--s-phi",
        "12",
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "x0,x1,y,alpha");
    assert_eq!(text.lines().count(), 1 + 13);
    assert!(stdout(&o).contains("m 13"));

    let opt = dir.path().join("o.csv");
    let o = run(&[
        "distill-opt",
        "--data",
        p(&data),
        "--init",
        p(&out),
        "--lambda",
        "1e-3",
        "--iters",
        "30",
        "--out",
        p(&opt),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&opt).unwrap().lines().count(), 14);
}

#[test]
fn sweep_csv_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (name, threads) in [("a.csv", "1"), ("b.csv", "3")] {
        let out = dir.path().join(name);
        let o = bin()
            .args([
                "grf", "--sigma", "0.5,1", "--n", "60", "--lambda", "1e-3", "--seeds", "0,1", "--iters", "10", "--out",
            ])
            .arg(&out)
            .env("RAYON_NUM_THREADS", threads)
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(&out).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let text = String::from_utf8(outputs.remove(0)).unwrap();
    assert!(text.starts_with("experiment,grid_param,seed,n,d_eff,s_phi,compression,r,"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn exit_codes_by_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    // usage: clap rejects a missing flag; the library rejects odd n
    assert_eq!(run(&["bounds", "--loss", "1"]).status.code(), Some(2));
    assert_eq!(
        run(&["gen-clusters", "--n", "5", "--sigma", "1", "--out", p(&out)])
            .status
            .code(),
        Some(2)
    );
    // data: unreadable input
    let missing = dir.path().join("missing.csv");
    assert_eq!(
        run(&[
            "distill-construct",
            "--data",
            p(&missing),
            "--lambda",
            "1",
            "--out",
            p(&out)
        ])
        .status
        .code(),
        Some(3)
    );
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, [0u8, 0, 8, 1, 0, 0, 0, 0]).unwrap();
    assert_eq!(
        run(&[
            "mnist",
            "--mnist-images",
            p(&bad),
            "--mnist-labels",
            p(&bad),
            "--out",
            p(&out)
        ])
        .status
        .code(),
        Some(3)
    );
    // numerical: labels large enough to overflow the loss
    let big = dir.path().join("big.csv");
    std::fs::write(&big, "x0,x1,y\n0,0,1e200\n1,0,-1e200\n0,1,1e200\n").unwrap();
    assert_eq!(
        run(&[
            "distill-opt",
            "--data",
            p(&big),
            "--m",
            "2",
            "--lambda",
            "1e-3",
            "--iters",
            "5",
            "--out",
            p(&out)
        ])
        .status
        .code(),
        Some(4)
    );
}
