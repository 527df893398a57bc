//! End-to-end runs of the `smssvd` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use smssvd_core::io::read_table;
use smssvd_core::Rng;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smssvd"))
        .args(args)
        .arg("--quiet")
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_small(dir: &Path) -> PathBuf {
    let path = dir.join("x.tsv");
    fs::write(
        &path,
        "gene\ts1\ts2\ts3\ts4\n\
         g1\t1.0\t2.0\t3.0\t4.0\n\
         g2\t2.0\t4.1\t6.0\t8.2\n\
         g3\t-1.0\t0.5\t0.0\t2.0\n\
         g4\t0.3\t0.1\t-0.7\t0.2\n\
         g5\t5.0\t1.0\t0.0\t-1.0\n",
    )
    .unwrap();
    path
}

fn synth_small(root: &Path, name: &str) -> PathBuf {
    let out = root.join(name);
    let o = run(&[
        "synth", "--P", "200", "--L", "12", "--N", "20", "--K", "2", "--sigma", "0.05", "--seed", "3", "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn decompose_writes_consistent_shapes() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_small(tmp.path());
    let out = tmp.path().join("dec");
    let o = run(&["decompose", s(&input), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let u = read_table(&out.join("U.tsv")).unwrap();
    let v = read_table(&out.join("V.tsv")).unwrap();
    assert_eq!(u.values.nrows(), 5);
    assert_eq!(v.values.nrows(), 4);
    assert_eq!(u.values.ncols(), v.values.ncols());
    assert_eq!(u.row_ids[0], "g1");
    let blocks: serde_json::Value = serde_json::from_slice(&fs::read(out.join("blocks.json")).unwrap()).unwrap();
    assert_eq!(blocks["total_d"].as_u64().unwrap() as usize, u.values.ncols());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["timestamps"]["started_unix"], 1_700_000_000);
}

#[test]
fn malformed_cell_is_an_input_error_with_location() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("bad.tsv");
    fs::write(&input, "id\ta\tb\nr1\t1\t2\nr2\t3\toops\n").unwrap();
    let o = run(&["decompose", s(&input), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("row 3, column 3"), "{}", stderr(&o));
}

#[test]
fn zero_matrix_is_empty_decomposition() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("z.tsv");
    fs::write(&input, "id\ta\tb\nr1\t0\t0\nr2\t0\t0\n").unwrap();
    let o = run(&["decompose", s(&input), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn bad_flags_exit_with_input_code() {
    let o = run(&["decompose"]);
    assert_eq!(code(&o), 2);
    let o = run(&["--help"]);
    assert_eq!(code(&o), 0);
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let input = write_small(tmp.path());
    let out = tmp.path().join("dec");
    let read_all = |dir: &Path| {
        let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
            })
            .collect();
        v.sort();
        v
    };
    assert_eq!(code(&run(&["decompose", s(&input), "--seed", "9", "--out", s(&out)])), 0);
    let first = read_all(&out);
    fs::remove_dir_all(&out).unwrap();
    assert_eq!(code(&run(&["decompose", s(&input), "--seed", "9", "--out", s(&out)])), 0);
    assert_eq!(first, read_all(&out));
}

#[test]
fn biplot_preset_has_two_signals() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let o = run(&["synth", "--preset", "biplot-noise-all", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let x = read_table(&out.join("X.tsv")).unwrap();
    assert_eq!(x.values.shape(), (5000, 32));
    assert!(out.join("Y_1.tsv").exists() && out.join("Y_2.tsv").exists());
    assert!(!out.join("Y_3.tsv").exists());
}

#[test]
fn from_spec_regenerates_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth_small(tmp.path(), "a");
    let b = tmp.path().join("b");
    let o = run(&["synth", "--from-spec", s(&a.join("spec.json")), "--out", s(&b)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["X.tsv", "Y_1.tsv", "Y_2.tsv", "spec.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn infeasible_spec_names_the_constraint() {
    let tmp = tempfile::tempdir().unwrap();
    // K·d = 24 rank-1 terms cannot fit in N = 10 samples
    let o = run(&[
        "synth", "--P", "500", "--L", "10", "--N", "10", "--K", "8", "--d", "3", "--out",
        s(&tmp.path().join("o")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("N"), "{}", stderr(&o));
}

#[test]
fn compare_reports_every_method_and_signal() {
    let tmp = tempfile::tempdir().unwrap();
    let truth = synth_small(tmp.path(), "t");
    let out = tmp.path().join("c");
    let o = run(&["compare", s(&truth), "--methods", "svd,smssvd,spc:c=2,8,r0.36", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(out.join("compare.tsv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "method\tsignal\terr\tstrength\tflagged");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 5 * 2);
    for m in ["svd", "smssvd", "spc:c=2", "spc:c=8"] {
        assert_eq!(rows.iter().filter(|r| r.split('\t').next() == Some(m)).count(), 2, "{m}");
    }
}

#[test]
fn compare_without_truth_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = run(&["compare", s(&tmp.path().join("nope")), "--out", s(&tmp.path().join("c"))]);
    assert_eq!(code(&o), 2);
}

fn write_clusters(dir: &Path) -> (PathBuf, PathBuf) {
    let mut rng = Rng::new(4);
    let mut coords = String::from("sample\tc1\tc2\tc3\n");
    let mut labels = String::from("sample\tlabel\n");
    for (k, (a, b)) in [(0.0, 0.0), (5.0, 0.0), (2.5, 4.0)].iter().enumerate() {
        for i in 0..25 {
            let id = format!("s{k}_{i}");
            coords += &format!(
                "{id}\t{:?}\t{:?}\t{:?}\n",
                a + rng.gaussian(),
                b + rng.gaussian(),
                rng.gaussian()
            );
            labels += &format!("{id}\tclass{k}\n");
        }
    }
    let (c, l) = (dir.join("coords.tsv"), dir.join("labels.tsv"));
    fs::write(&c, coords).unwrap();
    fs::write(&l, labels).unwrap();
    (c, l)
}

fn aic_rows(dir: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(dir.join("aic.tsv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(str::to_owned).collect())
        .collect()
}

#[test]
fn aic_picks_the_separating_dimension() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, l) = write_clusters(tmp.path());
    let out = tmp.path().join("a");
    let o = run(&["aic", "--coords", s(&c), "--labels", s(&l), "--dims", "3", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = aic_rows(&out);
    assert_eq!(rows.len(), 3);
    let aic = |r: &Vec<String>| r[4].parse::<f64>().unwrap();
    let best = rows.iter().min_by(|a, b| aic(a).total_cmp(&aic(b))).unwrap();
    assert_eq!(best[0], "2");
}

#[test]
fn aic_single_class_has_zero_loglik() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, _) = write_clusters(tmp.path());
    let l = tmp.path().join("one.tsv");
    let ids: String = fs::read_to_string(&c)
        .unwrap()
        .lines()
        .skip(1)
        .map(|r| format!("{}\tall\n", r.split('\t').next().unwrap()))
        .collect();
    fs::write(&l, format!("sample\tlabel\n{ids}")).unwrap();
    let out = tmp.path().join("a");
    assert_eq!(code(&run(&["aic", "--coords", s(&c), "--labels", s(&l), "--dims", "2", "--out", s(&out)])), 0);
    for r in aic_rows(&out) {
        let k: f64 = r[3].parse().unwrap();
        assert_eq!(r[4].parse::<f64>().unwrap(), 2.0 * k);
    }
}

#[test]
fn aic_rejects_bad_dims_and_unknown_ids() {
    let tmp = tempfile::tempdir().unwrap();
    let (c, l) = write_clusters(tmp.path());
    let o = run(&["aic", "--coords", s(&c), "--labels", s(&l), "--dims", "4", "--out", s(&tmp.path().join("a"))]);
    assert_eq!(code(&o), 2);
    let bad = tmp.path().join("bad.tsv");
    let mut text = fs::read_to_string(&l).unwrap();
    text += "ghost\tclass0\n";
    fs::write(&bad, text).unwrap();
    let o = run(&["aic", "--coords", s(&c), "--labels", s(&bad), "--dims", "2", "--out", s(&tmp.path().join("b"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}
