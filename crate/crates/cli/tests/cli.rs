use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &str = r#"
k = 2
[pretrain]
hidden = [16]
iterations = 150
batch_size = 32
[pretrain.gate]
n_per_cell = 4
ddim_steps = 5
min_concept_accuracy = 0.0
min_context_accuracy = 0.0
min_excess_loss_reduction = 0.0
loss_probe_size = 64
[unlearn]
iterations = 12
ddim_steps = 5
replay_per_condition = 2
[eval]
n_per_cell = 6
ddim_steps = 5
"#;

struct Sandbox {
    dir: TempDir,
}

impl Sandbox {
    fn new(extra: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("exp.toml"), format!("{TINY}{extra}")).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn cullab(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cullab"))
            .current_dir(self.dir.path())
            .env_remove("CULLAB_OUT")
            .args(args)
            .output()
            .unwrap()
    }

    /// Runs a verb against `exp.toml` with output in `out`.
    fn verb(&self, verb: &str, out: &str, extra: &[&str]) -> Output {
        let mut args = vec![verb, "--config", "exp.toml", "--out", out];
        args.extend(extra);
        self.cullab(&args)
    }

    fn ok(&self, verb: &str, out: &str, extra: &[&str]) {
        let o = self.verb(verb, out, extra);
        assert_eq!(o.status.code(), Some(0), "{verb}: {}", String::from_utf8_lossy(&o.stderr));
    }

    fn read(&self, rel: &str) -> String {
        std::fs::read_to_string(self.path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Every file under `root`, relative path and contents, sorted.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn pretrain_is_byte_reproducible() {
    let s = Sandbox::new("");
    s.ok("pretrain", "a", &[]);
    s.ok("pretrain", "b", &[]);
    assert_eq!(s.read("a/base/checkpoint-000.toml"), s.read("b/base/checkpoint-000.toml"));
    assert_eq!(s.read("a/base/base_report.json"), s.read("b/base/base_report.json"));
    // Re-running into the same directory rewrites identical bytes.
    s.ok("pretrain", "a", &[]);
}

#[test]
fn gate_failure_exits_3_and_keeps_the_report() {
    let s = Sandbox::new("");
    std::fs::write(s.path("strict.toml"), TINY.replace("min_concept_accuracy = 0.0", "min_concept_accuracy = 0.99")).unwrap();
    let o = s.cullab(&["pretrain", "--config", "strict.toml", "--out", "out"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("min concept accuracy"), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_str(&s.read("out/base/base_report.json")).unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 48);
}

#[test]
fn missing_universe_file_is_a_usage_error_naming_the_path() {
    let s = Sandbox::new("[universe]\nfile = \"no/such/world.toml\"\n");
    let o = s.verb("pretrain", "out", &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no/such/world.toml"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_2() {
    let s = Sandbox::new("");
    assert_eq!(s.verb("run", "empty", &[]).status.code(), Some(2), "run before pretrain");
    assert_eq!(s.cullab(&["eval", "nowhere"]).status.code(), Some(2));
    assert_eq!(s.cullab(&["report", "nowhere"]).status.code(), Some(2));
    assert_eq!(s.cullab(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(s.cullab(&["pretrain", "--config", "absent.toml"]).status.code(), Some(2));
    std::fs::write(s.path("typo.toml"), "seeed = 3").unwrap();
    assert_eq!(s.cullab(&["pretrain", "--config", "typo.toml"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_4_with_partial_artifacts() {
    let s = Sandbox::new("[[step_overrides]]\nstep = 2\nlr = 1e12\niterations = 40\n");
    s.ok("pretrain", "out", &[]);
    let o = s.verb("run", "out", &[]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(s.path("out/run/checkpoint-001.toml").exists());
    assert!(!s.path("out/run/checkpoint-002.toml").exists());
    assert!(!s.path("out/run/loss.csv").exists());
}

#[test]
fn run_writes_k_checkpoints_and_one_loss_row_per_iteration() {
    let s = Sandbox::new("");
    s.ok("pretrain", "out", &["--k", "3"]);
    s.ok("run", "out", &["--k", "3"]);
    for step in 0..=3 {
        assert!(s.path(&format!("out/run/checkpoint-{step:03}.toml")).exists());
    }
    assert!(!s.path("out/run/checkpoint-004.toml").exists());
    let loss = s.read("out/run/loss.csv");
    let mut lines = loss.lines();
    assert_eq!(lines.next(), Some("step,iteration,unlearn,retain,reg,total"));
    assert_eq!(lines.count(), 12 * 3);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let s = Sandbox::new("");
    s.ok("pretrain", "out", &[]);
    s.ok("run", "out", &[]);
    let before = tree(&s.path("out/run"));
    // Simulate an interruption after step 1.
    for f in ["checkpoint-002.toml", "loss-step-002.csv", "loss.csv"] {
        std::fs::remove_file(s.path("out/run").join(f)).unwrap();
    }
    s.ok("run", "out", &[]);
    assert_eq!(tree(&s.path("out/run")), before);
}

#[test]
fn settled_artifacts_are_never_overwritten() {
    let s = Sandbox::new("");
    s.ok("pretrain", "out", &[]);
    let o = s.verb("pretrain", "out", &["--seed", "5"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("refusing to overwrite"), "{}", stderr(&o));
}

#[test]
fn ablation_eval_and_report() {
    let s = Sandbox::new("");
    s.ok("pretrain", "out", &[]);
    s.ok("ablate", "out", &[]);
    let names = [
        "unlearn-only",
        "unlearn-retain",
        "unlearn-reg",
        "full",
        "null-mapping",
        "adaptive-mapping",
        "timesteps-60",
        "timesteps-120",
        "timesteps-160",
        "timesteps-200",
    ];
    let dirs: Vec<String> =
        std::fs::read_dir(s.path("out/ablate")).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).map(|e| e.file_name().into_string().unwrap()).collect();
    assert_eq!(dirs.len(), 10);
    let base = s.read("out/base/checkpoint-000.toml");
    for n in names {
        assert_eq!(s.read(&format!("out/ablate/{n}/checkpoint-000.toml")), base, "{n}");
    }
    let hashes: Vec<String> = names
        .iter()
        .map(|n| {
            let m: serde_json::Value = serde_json::from_str(&s.read(&format!("out/ablate/{n}/metrics.json"))).unwrap();
            m["params_hashes"][0].as_str().unwrap().to_string()
        })
        .collect();
    assert!(hashes.windows(2).all(|w| w[0] == w[1]));

    let cmp = s.read("out/ablate/comparison.csv");
    assert_eq!(cmp.lines().next().unwrap(), "variant,step,concept,UA,CAS,RRA,GRA,FRECHET,D_STEP,D_CUM,SLACK,error");
    assert_eq!(cmp.lines().count(), 11);

    // Evaluating again reproduces the files byte for byte.
    let metrics = s.read("out/ablate/full/metrics.csv");
    let o = s.cullab(&["eval", "out/ablate/full"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8(o.stdout).unwrap(), metrics);
    assert_eq!(s.read("out/ablate/full/metrics.csv"), metrics);

    let loss_dirs: Vec<String> = names[..6].iter().map(|n| format!("out/ablate/{n}")).collect();
    let mut args = vec!["report", "--out", "out"];
    args.extend(loss_dirs.iter().map(String::as_str));
    let o = s.cullab(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report = String::from_utf8(o.stdout).unwrap();
    assert_eq!(report.lines().count(), 7);
    assert!(report.starts_with("run,step,concept,UA,CAS,RRA,GRA,FRECHET,D_STEP,D_CUM,SLACK,MEAN_UA,REVIVALS\n"));
    assert_eq!(s.read("out/report.csv"), report);

    let o = s.verb("ablate", "out", &["--variant", "no-such-variant"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unlearn-only"));
    s.ok("ablate", "out", &["--variant", "full"]);
}

#[test]
fn eval_requires_every_checkpoint() {
    let s = Sandbox::new("");
    s.ok("pretrain", "out", &[]);
    s.ok("run", "out", &[]);
    std::fs::remove_file(s.path("out/run/checkpoint-002.toml")).unwrap();
    let o = s.cullab(&["eval", "out/run"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn whole_pipeline_is_byte_reproducible() {
    let s = Sandbox::new("");
    for out in ["x", "y"] {
        s.ok("pretrain", out, &[]);
        s.ok("run", out, &[]);
        assert_eq!(s.cullab(&["eval", &format!("{out}/run")]).status.code(), Some(0));
        s.ok("ablate", out, &[]);
    }
    let strip = |t: Vec<(PathBuf, Vec<u8>)>| -> Vec<(PathBuf, Vec<u8>)> {
        t.into_iter().filter(|(p, _)| p != Path::new("timing.log")).collect()
    };
    let (x, y) = (strip(tree(&s.path("x"))), strip(tree(&s.path("y"))));
    assert!(x.len() > 100);
    assert_eq!(x, y);
}

#[test]
fn schema_flag_and_output_env() {
    let s = Sandbox::new("");
    let o = s.cullab(&["--print-schema"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("[unlearn.weights]"));

    let o = Command::new(env!("CARGO_BIN_EXE_cullab"))
        .current_dir(s.dir.path())
        .env("CULLAB_OUT", "from-env")
        .args(["pretrain", "--config", "exp.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(s.path("from-env/base/checkpoint-000.toml").exists());
}
