use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gccd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gccd"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn peaks_text(peaks: impl IntoIterator<Item = usize>) -> String {
    peaks.into_iter().map(|p| format!("{p}\n")).collect()
}

const TWO_STATE: &str = "state B\nstate R\nedge B R up gap=1 penalty=1\nedge R B down gap=1 penalty=1\n";

#[test]
fn synth_default_writes_two_files() {
    let tmp = TempDir::new().unwrap();
    let out = gccd(tmp.path(), &["synth", "--out", "data"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("data"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["synth0.ann", "synth0.txt"]);
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let tmp = TempDir::new().unwrap();
    for dir in ["a", "b"] {
        let out = gccd(tmp.path(), &["synth", "--seed", "7", "--noise-sd", "0.05", "--out", dir]);
        assert_eq!(code(&out), 0);
    }
    for f in ["synth7.txt", "synth7.ann"] {
        assert_eq!(
            fs::read(tmp.path().join("a").join(f)).unwrap(),
            fs::read(tmp.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn synth_rejects_zero_beats() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&gccd(tmp.path(), &["synth", "--beats", "0"])), 1);
}

#[test]
fn detect_recovers_noiseless_synthetic_beats() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(code(&gccd(dir, &["synth", "--emit-graph", "--out", "data"])), 0);
    let out = gccd(dir, &["detect", "data/synth0.txt", "--graph", "data/synth0.graph", "--out", "det"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let found = fs::read_to_string(dir.join("det/synth0.peaks")).unwrap();
    let truth = fs::read_to_string(dir.join("data/synth0.ann")).unwrap();
    assert_eq!(found.lines().count(), 3);
    assert_eq!(found, truth);
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("det/synth0.segments.json")).unwrap()).unwrap();
    assert!(sidecar["segments"].as_array().unwrap().len() > 3);

    let out = gccd(dir, &["eval", "--detected", "det", "--reference", "data"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let total = stdout(&out).lines().last().unwrap().to_string();
    assert_eq!(total.split_whitespace().collect::<Vec<_>>(), ["Total", "3", "3", "0", "0", "100", "100", "0"]);
}

#[test]
fn detect_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gccd(dir, &["synth", "--noise-sd", "0.05", "--seed", "3", "--emit-graph", "--out", "data"]);
    for out in ["x", "y"] {
        let r = gccd(dir, &["detect", "data/synth3.txt", "--graph", "data/synth3.graph", "--out", out]);
        assert_eq!(code(&r), 0);
    }
    for f in ["synth3.peaks", "synth3.segments.json"] {
        assert_eq!(fs::read(dir.join("x").join(f)).unwrap(), fs::read(dir.join("y").join(f)).unwrap());
    }
}

#[test]
fn detect_on_flat_input_with_large_gap_is_empty() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "flat.txt", &"0.0\n".repeat(10));
    write(dir, "g.graph", TWO_STATE);
    let out = gccd(dir, &["detect", "flat.txt", "--graph", "g.graph", "--gap", "5", "--out", "o"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(dir.join("o/flat.peaks")).unwrap(), "");
}

#[test]
fn detect_needs_an_r_state() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "s.txt", "0\n1\n");
    write(dir, "g.graph", "state A\n");
    assert_eq!(code(&gccd(dir, &["detect", "s.txt", "--graph", "g.graph", "--out", "o"])), 1);
}

#[test]
fn detect_runs_a_manifest_batch() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gccd(dir, &["synth", "--seed", "1", "--emit-graph", "--out", "data"]);
    gccd(dir, &["synth", "--seed", "2", "--beats", "4", "--emit-graph", "--out", "data"]);
    write(
        dir,
        "data/records.manifest",
        "# record graph\nsynth1.txt synth1.graph\nsynth2.txt synth2.graph\n",
    );
    let out = gccd(dir, &["detect", "--manifest", "data/records.manifest", "--out", "det"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = gccd(dir, &["eval", "--detected", "det", "--reference", "data", "--format", "json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 2);
    assert_eq!(report["total"]["tp"], 7);
    assert_eq!(report["total"]["fp"], 0);
}

#[test]
fn segment_writes_a_document() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "s.txt", "0\n0\n0\n10\n10\n10\n");
    write(dir, "g.graph", TWO_STATE);
    let out = gccd(dir, &["segment", "s.txt", "--graph", "g.graph", "--format", "json", "--out", "seg.json"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("seg.json")).unwrap()).unwrap();
    assert_eq!(doc["total_cost"], 1.0);
    assert_eq!(doc["segments"][1]["state"], "R");
    assert_eq!(doc["segments"][1]["start"], 4);

    let out = gccd(dir, &["segment", "s.txt", "--graph", "g.graph", "--per-sample"]);
    assert_eq!(stdout(&out), "0\n0\n0\n10\n10\n10\n");
}

#[test]
fn segment_accepts_csv_and_templates() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "s.csv", "'sample #','MLII'\n0,0\n1,0\n2,1\n3,1\n4,0\n5,0\n");
    let out = gccd(dir, &["segment", "s.csv", "--template", "R", "--penalty", "0.1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(stdout(&out).contains("3\t4\tR\t1"));
}

#[test]
fn exit_codes_are_stable() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "s.txt", "1\n2\n");
    let out = gccd(dir, &["segment", "s.txt", "--graph", "missing.graph"]);
    assert_eq!(code(&out), 3);

    write(dir, "bad.graph", "state B\nedge B X up gap=1 penalty=1\n");
    let out = gccd(dir, &["segment", "s.txt", "--graph", "bad.graph"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));

    write(dir, "chain.graph", "state B\nstate R\nedge B R up gap=0 penalty=0\nstart B\nend R\n");
    write(dir, "one.txt", "1\n");
    assert_eq!(code(&gccd(dir, &["segment", "one.txt", "--graph", "chain.graph"])), 2);

    write(dir, "junk.txt", "1\nabc\n");
    let out = gccd(dir, &["segment", "junk.txt", "--template", "R"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"));

    assert_eq!(code(&gccd(dir, &["segment", "s.txt"])), 1);
    assert_eq!(code(&gccd(dir, &["no-such-command"])), 1);
    assert_eq!(code(&gccd(dir, &["segment", "s.txt", "--template", "R", "--penalty", "-1"])), 1);
    assert_eq!(code(&gccd(dir, &["--help"])), 0);
}

#[test]
fn eval_prints_truncated_metrics() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::create_dir_all(dir.join("det")).unwrap();
    fs::create_dir_all(dir.join("ref")).unwrap();
    // 106: 2027 reference beats, the last five missed.
    let refs: Vec<usize> = (1..=2027).map(|k| 300 * k).collect();
    write(dir, "ref/106.ann", &peaks_text(refs.iter().copied()));
    write(dir, "det/106.peaks", &peaks_text(refs[..2022].iter().map(|p| p + 10)));
    // 108: 1765 beats all found, plus two extra detections.
    let refs: Vec<usize> = (1..=1765).map(|k| 300 * k).collect();
    write(dir, "ref/108.ann", &peaks_text(refs.iter().copied()));
    let mut det: Vec<usize> = refs.iter().map(|p| p - 4).collect();
    det.extend([300 * 1766, 300 * 1767]);
    write(dir, "det/108.peaks", &peaks_text(det));

    let out = gccd(dir, &["eval", "--detected", "det", "--reference", "ref"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split_whitespace().collect()).collect();
    assert_eq!(rows[0], ["106", "2027", "2022", "0", "5", "99.75", "100", "0.24"]);
    assert_eq!(rows[1], ["108", "1765", "1765", "2", "0", "100", "99.88", "0.11"]);
    assert_eq!(rows[2][0], "Total");
}

#[test]
fn eval_edge_cases() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "r.ann", "100\n400\n");
    write(dir, "same.peaks", "100\n400\n");
    write(dir, "empty.peaks", "");
    let out = gccd(dir, &["eval", "--detected", "same.peaks", "--reference", "r.ann"]);
    let row: Vec<String> = stdout(&out).lines().nth(1).unwrap().split_whitespace().map(String::from).collect();
    assert_eq!(row[5..], ["100", "100", "0"]);
    let out = gccd(dir, &["eval", "--detected", "empty.peaks", "--reference", "r.ann"]);
    let row: Vec<String> = stdout(&out).lines().nth(1).unwrap().split_whitespace().map(String::from).collect();
    assert_eq!(row[5..], ["0", "—", "100"]);

    fs::create_dir_all(dir.join("d")).unwrap();
    fs::create_dir_all(dir.join("r")).unwrap();
    write(dir, "d/1.peaks", "5\n");
    write(dir, "r/2.ann", "5\n");
    assert_eq!(code(&gccd(dir, &["eval", "--detected", "d", "--reference", "r"])), 1);

    write(dir, "unsorted.peaks", "9\n3\n");
    assert_eq!(code(&gccd(dir, &["eval", "--detected", "unsorted.peaks", "--reference", "r.ann"])), 1);
}

#[test]
fn graph_validate_reports_problems() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "ok.graph", TWO_STATE);
    let out = gccd(dir, &["graph", "validate", "ok.graph"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("2 states, 2 edges"));

    write(dir, "island.graph", "state B\nstate R\nstate X\nedge B R up gap=1 penalty=1\nstart B\nend R\n");
    let out = gccd(dir, &["graph", "validate", "island.graph"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("warning"));

    write(dir, "bad.graph", "state B\nedge B B sideways gap=1 penalty=1\n");
    let out = gccd(dir, &["graph", "validate", "bad.graph"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("line 2"));
}

#[test]
fn graph_template_round_trips_through_validate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let out = gccd(dir, &["graph", "template", "--waves", "PQRST", "--gap", "0.2", "--penalty", "2"]);
    assert_eq!(code(&out), 0);
    write(dir, "t.graph", &stdout(&out));
    let out = gccd(dir, &["graph", "validate", "t.graph"]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("8 states, 8 edges"));
}

#[test]
fn shipped_graphs_are_valid() {
    let graphs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../graphs");
    for entry in fs::read_dir(&graphs).unwrap() {
        let path = entry.unwrap().path();
        let out = gccd(&graphs, &["graph", "validate", path.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}: {}", path.display(), stderr(&out));
        assert!(!stdout(&out).contains("warning"), "{}", stdout(&out));
    }
}

#[test]
fn oracle_subcommand_is_hidden_but_works() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    write(dir, "s.txt", "0\n0\n0\n10\n10\n10\n");
    write(dir, "g.graph", TWO_STATE);
    let help = stdout(&gccd(dir, &["--help"]));
    assert!(!help.contains("oracle"));
    let out = gccd(dir, &["oracle", "s.txt", "--graph", "g.graph"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let v: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    let cost = v["cost"].as_f64().unwrap();
    assert!((cost - 1.0).abs() <= v["grid_bound"].as_f64().unwrap());
}
