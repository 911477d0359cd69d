use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mjae_core::molgraph::{parse_jsonl, to_jsonl};
use mjae_core::toy;

const TINY: &str = "\
model.hidden = 8
model.rounds = 1
model.gcn_layers = 1
model.heads = 2
model.time_dim = 4
model.proj_dim = 4
model.rbf = 4
training.epochs = 2
training.batch_size = 4
sampling.steps = 20
";

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let s = Self { dir: tempfile::tempdir().unwrap() };
        std::fs::write(s.path("tiny.cfg"), TINY).unwrap();
        std::fs::write(s.path("corpus.jsonl"), to_jsonl(&toy::corpus()[..8])).unwrap();
        s
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_mjae"))
            .current_dir(self.dir.path())
            .env_remove("MJAE_CONFIG")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.path(name)).unwrap()
    }
}

fn manifest(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn ingest_reports_bad_lines_and_is_idempotent() {
    let s = Sandbox::new();
    let mut lines: Vec<String> = toy::corpus()[..10].iter().map(|g| g.to_record_line()).collect();
    lines.insert(3, "{not json".into());
    lines.insert(7, r#"{"atoms": [{"el": "Xx", "q": 0, "xyz": [0, 0, 0]}], "bonds": []}"#.into());
    std::fs::write(s.path("raw.jsonl"), lines.join("\n")).unwrap();

    let out = s.run(&["ingest", "raw.jsonl", "clean.jsonl"]);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("raw.jsonl:4:") && stderr.contains("raw.jsonl:8:"), "{stderr}");
    assert!(String::from_utf8_lossy(&out.stdout).contains("ingested 10 molecules, rejected 2"));
    assert_eq!(parse_jsonl(&s.read("clean.jsonl")).0.len(), 10);

    s.ok(&["ingest", "clean.jsonl", "again.jsonl"]);
    assert_eq!(std::fs::read(s.path("clean.jsonl")).unwrap(), std::fs::read(s.path("again.jsonl")).unwrap());

    let m = manifest(&s.path("clean.jsonl.manifest.json"));
    assert_eq!(m["command"], "ingest");
    assert_eq!(m["inputs"][0]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn ingest_errors() {
    let s = Sandbox::new();
    std::fs::write(s.path("empty.jsonl"), "\n\n").unwrap();
    let out = s.run(&["ingest", "empty.jsonl", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no records"));
    std::fs::write(s.path("bad.jsonl"), "{\n[]\n").unwrap();
    assert_eq!(s.run(&["ingest", "bad.jsonl", "x.jsonl"]).status.code(), Some(1));
    assert_eq!(s.run(&["ingest", "missing.jsonl", "x.jsonl"]).status.code(), Some(2));
    assert!(!s.path("x.jsonl").exists());
}

#[test]
fn pretrain_is_seed_deterministic_and_writes_manifest() {
    let s = Sandbox::new();
    let base = ["--config", "tiny.cfg", "--seed", "7", "--threads", "1", "pretrain", "--data", "corpus.jsonl"];
    s.ok(&[&base[..], &["--out", "a.ckpt"]].concat());
    s.ok(&[&base[..], &["--out", "b.ckpt"]].concat());
    let (la, lb) = (s.read("a.ckpt.loss.jsonl"), s.read("b.ckpt.loss.jsonl"));
    assert_eq!(la, lb);
    assert_eq!(la.lines().count(), 2);
    assert_eq!(std::fs::read(s.path("a.ckpt")).unwrap(), std::fs::read(s.path("b.ckpt")).unwrap());

    let m = manifest(&s.path("a.ckpt.manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["config"]["training.threads"], "1");
    assert_eq!(m["config"]["model.hidden"], "8");
    let hashed: Vec<&str> = m["inputs"].as_array().unwrap().iter().map(|i| i["path"].as_str().unwrap()).collect();
    assert_eq!(hashed, ["corpus.jsonl", "tiny.cfg"]);
    assert_eq!(m["outputs"][1], "a.ckpt.loss.jsonl");
}

#[test]
fn lambda2_zero_is_reconstruction_only() {
    let s = Sandbox::new();
    s.ok(&["--config", "tiny.cfg", "pretrain", "--data", "corpus.jsonl", "--lambda2", "0", "--out", "r.ckpt"]);
    for line in s.read("r.ckpt.loss.jsonl").lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["l_co"], 0.0);
        assert_eq!(v["total"], v["l_sc"]);
    }
}

#[test]
fn usage_errors_exit_2() {
    let s = Sandbox::new();
    assert_eq!(s.run(&["pretrain", "--data", "nowhere.jsonl"]).status.code(), Some(2));
    assert_eq!(s.run(&["pretrain"]).status.code(), Some(2));
    assert_eq!(s.run(&["--set", "training.nope=1", "selftest"]).status.code(), Some(2));
    assert_eq!(s.run(&["--set", "training.lr=-1", "pretrain", "--data", "corpus.jsonl"]).status.code(), Some(2));
    assert_eq!(s.run(&["sample", "--checkpoint", "none.ckpt"]).status.code(), Some(2));
    assert_eq!(s.run(&["eval"]).status.code(), Some(2));
}

#[test]
fn config_comes_from_env() {
    let s = Sandbox::new();
    std::fs::write(s.path("one.cfg"), format!("{TINY}training.epochs = 1\n")).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mjae"))
        .current_dir(s.dir.path())
        .env("MJAE_CONFIG", "one.cfg")
        .args(["pretrain", "--data", "corpus.jsonl", "--out", "e.ckpt"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(s.read("e.ckpt.loss.jsonl").lines().count(), 1);
    // flags override the file
    s.ok(&["--config", "one.cfg", "--set", "training.epochs=3", "pretrain", "--data", "corpus.jsonl", "--out", "f.ckpt"]);
    assert_eq!(s.read("f.ckpt.loss.jsonl").lines().count(), 3);
}

#[test]
fn sample_eval_and_probe() {
    let s = Sandbox::new();
    s.ok(&["--config", "tiny.cfg", "pretrain", "--data", "corpus.jsonl", "--out", "m.ckpt"]);
    let sample = |out: &str| {
        s.ok(&["--config", "tiny.cfg", "--seed", "3", "sample", "--checkpoint", "m.ckpt", "-n", "4", "--atoms", "5", "--lambda", "0", "--out", out]);
    };
    sample("s1.jsonl");
    sample("s2.jsonl");
    assert_eq!(s.read("s1.jsonl"), s.read("s2.jsonl"));
    let graphs = parse_jsonl(&s.read("s1.jsonl")).0;
    assert_eq!(graphs.len(), 4);
    assert!(graphs.iter().all(|g| g.n() == 5));

    let table = s.ok(&["eval", "--samples", "corpus.jsonl", "--reference", "corpus.jsonl", "--out", "self.json"]);
    assert!(table.contains("AtomTV    0.0000"), "{table}");
    let report: serde_json::Value = serde_json::from_str(&s.read("self.json")).unwrap();
    assert_eq!(report["bond_tv"], 0.0);
    assert_eq!(report["count"], 8);

    let probe = s.ok(&["--config", "tiny.cfg", "eval", "--probe", "--checkpoint", "m.ckpt", "--probe-seeds", "2"]);
    assert!(probe.contains("pretrained") && probe.contains("random-init"), "{probe}");
    let r: serde_json::Value = serde_json::from_str(&s.read("eval.json")).unwrap();
    assert_eq!(r["pretrained_per_seed"].as_array().unwrap().len(), 2);

    s.ok(&["--config", "tiny.cfg", "probe", "--checkpoint", "m.ckpt", "--probe-set", "corpus.jsonl", "--probe-seeds", "1"]);
    assert!(s.path("probe.json.manifest.json").exists());
}

#[test]
fn selftest_passes() {
    let s = Sandbox::new();
    let out = s.ok(&["selftest"]);
    assert_eq!(out.lines().filter(|l| l.starts_with("[PASS]")).count(), 4, "{out}");
    assert!(s.path("selftest.json.manifest.json").exists());
}
