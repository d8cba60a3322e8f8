use std::path::Path;
use std::process::{Command, Output};

use polycentroid::model::{read_constraints, read_distribution};
use polycentroid::sampler::segment_centroid;
use polycentroid::ConstraintSet;
use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polycentroid"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_constraints(dir: &Path, name: &str, n: usize, rows: &str) -> String {
    let path = dir.join(name);
    std::fs::write(
        &path,
        format!(r#"{{"n_states": {n}, "constraints": {rows}}}"#),
    )
    .unwrap();
    path.to_str().unwrap().to_string()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_writes_constraint_files() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("f.json");
    let args = [
        "gen",
        "--n",
        "16",
        "--c",
        "1",
        "--sigma",
        "1",
        "--seed",
        "7",
        "--out",
        p(&f),
    ];
    assert_eq!(code(&args), 0);
    let cs = read_constraints(&f).unwrap();
    assert_eq!((cs.n_states(), cs.n_constraints()), (16, 1));
    let first = std::fs::read(&f).unwrap();
    assert_eq!(code(&args), 0);
    assert_eq!(std::fs::read(&f).unwrap(), first);
    assert_eq!(read_json(&f)["manifest"]["parameters"]["seed"], 7);

    let empty = dir.path().join("empty.json");
    let args = [
        "gen",
        "--n",
        "4",
        "--c",
        "0",
        "--sigma",
        "1",
        "--seed",
        "1",
        "--out",
        p(&empty),
    ];
    assert_eq!(code(&args), 0);
    assert_eq!(read_constraints(&empty).unwrap().n_constraints(), 0);

    let bad = dir.path().join("bad.json");
    let args = [
        "gen",
        "--n",
        "3",
        "--c",
        "5",
        "--sigma",
        "1",
        "--seed",
        "1",
        "--out",
        p(&bad),
    ];
    assert_eq!(code(&args), 2);
    assert!(!bad.exists());
}

#[test]
fn usage_and_io_exit_codes() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["frobnicate"]), 2);
    assert_eq!(
        code(&["solve", "--method", "c7", "--in", "x", "--out", "y"]),
        2
    );
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = dir.path().join("p.csv");
    assert_eq!(
        code(&[
            "solve",
            "--method",
            "c1",
            "--in",
            p(&missing),
            "--out",
            p(&out)
        ]),
        1
    );
    let unwritable = dir.path().join("no/such/dir/f.json");
    let args = [
        "gen",
        "--n",
        "4",
        "--c",
        "1",
        "--sigma",
        "1",
        "--seed",
        "1",
        "--out",
        p(&unwritable),
    ];
    assert_eq!(code(&args), 1);
}

#[test]
fn solve_uniform_and_singular() {
    let dir = tempfile::tempdir().unwrap();
    let empty = write_constraints(dir.path(), "c0.json", 4, "[]");
    let out = dir.path().join("p.csv");
    assert_eq!(
        code(&["solve", "--method", "c1", "--in", &empty, "--out", p(&out)]),
        0
    );
    assert_eq!(read_distribution(&out).unwrap(), vec![0.25; 4]);
    let meta = read_json(&dir.path().join("p.csv.meta.json"));
    assert_eq!(meta["command"], "solve");
    assert!(meta["result"]["saddle"]["iterations"].is_u64());

    let ones = write_constraints(dir.path(), "ones.json", 3, "[[1, 1, 1]]");
    let res = run(&[
        "solve",
        "--method",
        "maxent",
        "--in",
        &ones,
        "--out",
        p(&out),
    ]);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("SingularJacobian"));
}

#[test]
fn solve_c2_beats_c1_on_segment() {
    let dir = tempfile::tempdir().unwrap();
    let seg = write_constraints(dir.path(), "seg.json", 3, "[[2, 1, 0.5]]");
    let c1 = dir.path().join("c1.csv");
    let c2 = dir.path().join("c2.csv");
    assert_eq!(
        code(&["solve", "--method", "c1", "--in", &seg, "--out", p(&c1)]),
        0
    );
    assert_eq!(
        code(&["solve", "--method", "c2", "--in", &seg, "--out", p(&c2)]),
        0
    );
    let exact =
        segment_centroid(&ConstraintSet::new(3, vec![vec![2.0, 1.0, 0.5]]).unwrap()).unwrap();
    let max_rel = |v: &[f64]| {
        v.iter()
            .zip(exact.values())
            .map(|(a, e)| (a - e).abs() / e)
            .fold(0.0f64, f64::max)
    };
    let (e1, e2) = (
        max_rel(&read_distribution(&c1).unwrap()),
        max_rel(&read_distribution(&c2).unwrap()),
    );
    assert!(e2 < e1, "c2 {e2} vs c1 {e1}");
    let meta = read_json(&dir.path().join("c2.csv.meta.json"));
    assert_eq!(
        meta["result"]["second_order_constraint_residuals"]
            .as_array()
            .unwrap()
            .len(),
        2
    );

    let lead = dir.path().join("lead.csv");
    assert_eq!(
        code(&[
            "solve",
            "--method",
            "leading",
            "--in",
            &seg,
            "--out",
            p(&lead)
        ]),
        0
    );
    assert_eq!(read_distribution(&lead).unwrap().len(), 3);
}

#[test]
fn sample_is_deterministic_and_reports_infeasibility() {
    let dir = tempfile::tempdir().unwrap();
    let seg = write_constraints(dir.path(), "seg.json", 3, "[[2, 1, 0.5]]");
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    for out in [&a, &b] {
        let args = [
            "sample",
            "--in",
            &seg,
            "--steps",
            "2e5",
            "--seed",
            "3",
            "--chains",
            "2",
            "--out",
            p(out),
        ];
        assert_eq!(code(&args), 0);
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let stats = read_json(&a);
    assert_eq!(stats["n_chains"], 2);
    assert_eq!(stats["mean"].as_array().unwrap().len(), 3);
    assert_eq!(stats["manifest"]["parameters"]["steps"], 200_000);

    let infeasible = write_constraints(dir.path(), "inf.json", 3, "[[2, 3, 4]]");
    let args = [
        "sample",
        "--in",
        &infeasible,
        "--steps",
        "20000",
        "--seed",
        "1",
        "--out",
        p(&a),
    ];
    let res = run(&args);
    assert_eq!(res.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&res.stderr).contains("NoInteriorPoint"));
}

#[test]
fn compare_reports() {
    let dir = tempfile::tempdir().unwrap();
    let x = dir.path().join("x.csv");
    let y = dir.path().join("y.csv");
    let z = dir.path().join("z.csv");
    std::fs::write(&x, "index,value\n0,0.25\n1,0.75\n").unwrap();
    std::fs::write(&y, "index,value\n0,0.5\n1,0.5\n").unwrap();
    std::fs::write(&z, "index,value\n0,0.2\n1,0.3\n2,0.5\n").unwrap();
    let out = dir.path().join("r.json");
    assert_eq!(
        code(&["compare", "--a", p(&x), "--b", p(&x), "--out", p(&out)]),
        0
    );
    let r = read_json(&out);
    assert_eq!(r["l2_gap"], 0.0);
    assert_eq!(r["linf_gap"], 0.0);
    assert_eq!(
        code(&["compare", "--a", p(&x), "--b", p(&y), "--out", p(&out)]),
        0
    );
    assert_eq!(read_json(&out)["linf_gap"], 0.25);
    assert_eq!(
        code(&["compare", "--a", p(&x), "--b", p(&z), "--out", p(&out)]),
        2
    );
}

#[test]
fn experiment_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("exp");
    let args = [
        "experiment",
        "--steps",
        "100",
        "--burn-in",
        "1000",
        "--out",
        p(&out),
    ];
    assert_eq!(code(&args), 2);
    let args = ["experiment", "--steps", "2e5", "--out", p(&out)];
    assert_eq!(code(&args), 0);
    let table = std::fs::read_to_string(out.join("table.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "index,p_c_sampled,p_c1,p_c2,p_me,width,rel_err_c1,rel_err_c2"
    );
    assert_eq!(lines.len(), 17);
    for name in ["constraints.json", "geometry.json", "manifest.json"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let manifest = read_json(&out.join("manifest.json"));
    assert_eq!(manifest["seeds"]["experiment"], 7);
    assert_eq!(read_json(&out.join("geometry.json"))["regime"], "strong");
}
