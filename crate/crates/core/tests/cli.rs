use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use krdistill::cli::{build_spec, Command as Cmd};

const TINY: &str = "\
[benchmark]
classes = 4
dim = 6
n_max = 120
rho = 10
eval_per_class = 20
[train]
epochs = 2
teacher_epochs = 2
teacher_hidden = 16, 8
student_hidden = 8, 4
ideal_steps = 200
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_krdistill"));
    c.env_remove("KRD_SEED").env_remove("KRD_OUT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.conf");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn ablate_table_shape_and_report_rebuild() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let out = tmp.path().join("ab");
    let o = run(&["ablate", "--config", s(&conf), "--out", s(&out), "--seed", "1,2,3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("report.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "variant,seed,overall,head,medium,tail");
    assert_eq!(lines.len(), 1 + 15 + 5);
    let variants: Vec<&str> = lines[1..16].iter().map(|l| l.split(',').next().unwrap()).collect();
    let expect: Vec<&str> = ["ce", "vkd", "rrd", "lrd", "krd"]
        .iter()
        .flat_map(|v| std::iter::repeat_n(*v, 3))
        .collect();
    assert_eq!(variants, expect);
    for (l, v) in lines[16..].iter().zip(["ce", "vkd", "rrd", "lrd", "krd"]) {
        assert!(l.starts_with(&format!("{v},mean,")));
    }
    for f in ["config.json", "student.krdnet", "metrics.json", "result.json"] {
        assert!(out.join("runs/seed-2/krd").join(f).exists(), "{f}");
    }
    assert!(out.join("runs/seed-2/krd/projector.krdnet").exists());
    assert!(out.join("runs/seed-2/teacher.krdnet").exists());

    std::fs::remove_file(out.join("report.csv")).unwrap();
    let o = run(&["report", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("report.csv")).unwrap(), table);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), table);

    let o = run(&["report", "--out", s(&out), "--per-class"]);
    assert!(o.status.success());
    let wide = String::from_utf8(o.stdout).unwrap();
    assert!(wide.starts_with("variant,seed,overall,head,medium,tail,class0,class1,class2,class3\n"));
}

#[test]
fn reruns_are_byte_identical_and_parallel_safe() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, par) in [(&a, "1"), (&b, "2")] {
        let o = run(&["ablate", "--config", s(&conf), "--out", s(dir), "--seed", "4,5", "--parallel", par]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(
        std::fs::read(a.join("report.csv")).unwrap(),
        std::fs::read(b.join("report.csv")).unwrap()
    );
    for seed in [4, 5] {
        for v in ["ce", "vkd", "rrd", "lrd", "krd"] {
            let rel = format!("runs/seed-{seed}/{v}/metrics.json");
            assert_eq!(std::fs::read(a.join(&rel)).unwrap(), std::fs::read(b.join(&rel)).unwrap(), "{rel}");
        }
    }
}

#[test]
fn beta_sweep_counts_runs_and_flags_default() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let out = tmp.path().join("sw");
    let o = run(&[
        "sweep", "--config", s(&conf), "--out", s(&out), "--seed", "1,2,3", "--param", "beta",
        "--values", "1,5,10,20", "--parallel", "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut runs = 0;
    for v in ["1", "5", "10", "20"] {
        for seed in 1..=3 {
            runs += out.join(format!("runs/beta-{v}/seed-{seed}/result.json")).exists() as usize;
        }
    }
    assert_eq!(runs, 12);
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "param,value,overall,head,medium,tail,runs,default");
    assert_eq!(lines.len(), 5);
    let flagged: Vec<&str> = lines[1..]
        .iter()
        .filter(|l| l.ends_with(",true"))
        .map(|l| l.split(',').nth(1).unwrap())
        .collect();
    assert_eq!(flagged, ["10"]);
    assert!(lines[1..].iter().all(|l| l.split(',').nth(6) == Some("3")));

    std::fs::remove_file(out.join("sweep.csv")).unwrap();
    assert!(run(&["report", "--out", s(&out)]).status.success());
    assert_eq!(std::fs::read_to_string(out.join("sweep.csv")).unwrap(), table);
}

#[test]
fn tau_sweep_flags_two() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let out = tmp.path().join("tau");
    let o = run(&["sweep", "--config", s(&conf), "--out", s(&out), "--param", "tau", "--values", "1,2,4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("tau,2,") && l.ends_with(",true")));
}

#[test]
fn alpha_sweep_out_of_range_rejected_before_running() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("al");
    let o = run(&["sweep", "--out", s(&out), "--param", "alpha", "--values", "0.5,1.0"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.join("runs").exists());
    assert_eq!(stderr(&o).trim().lines().count(), 1);
}

#[test]
fn unknown_sweep_parameter_lists_allowed() {
    let o = run(&["sweep", "--param", "gamma", "--values", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("beta, alpha, tau, projector_layers"));
}

#[test]
fn config_errors_cite_key_and_line() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("bad.conf");
    std::fs::write(&conf, "[loss]\nbeta = fast\n").unwrap();
    let o = run(&["distill", "--config", s(&conf)]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("line 2") && e.contains("beta"), "{e}");
    assert_eq!(e.trim().lines().count(), 1);

    std::fs::write(&conf, "gamma = 3\n").unwrap();
    let o = run(&["distill", "--config", s(&conf)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("gamma"));
}

#[test]
fn flags_only_with_empty_config() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("empty.conf");
    std::fs::write(&conf, "").unwrap();
    let args = [
        "krdistill", "distill", "--config", s(&conf), "--data", s(tmp.path()), "--out", "o", "--seed", "3",
        "--beta", "5", "--alpha", "0.7", "--tau", "3", "--rho", "50", "--classes", "6", "--dim", "8",
        "--epochs", "4", "--variant", "lrd_only", "--parallel", "2",
    ];
    let spec = build_spec(args, |_| None).unwrap();
    assert_eq!(spec.command, Cmd::Distill);
    assert_eq!(spec.seeds, vec![3]);
    assert_eq!(spec.train.loss.beta, 5.0);
    assert_eq!(spec.train.loss.alpha, 0.7);
    assert_eq!(spec.train.loss.tau, 3.0);
    assert_eq!(spec.benchmark.rho, 50.0);
    assert_eq!(spec.benchmark.classes, 6);
    assert_eq!(spec.benchmark.dim, 8);
    assert_eq!(spec.train.epochs, 4);
    assert_eq!(spec.parallel, 2);
    spec.validate().unwrap();
}

#[test]
fn precedence_flags_over_env_over_file() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("c.conf");
    std::fs::write(&conf, "seed = 1\nout = from-file\n").unwrap();
    let env = |k: &str| match k {
        "KRD_SEED" => Some("2".to_string()),
        "KRD_OUT" => Some("from-env".to_string()),
        _ => None,
    };
    let spec = build_spec(["krdistill", "ablate", "--config", s(&conf)], env).unwrap();
    assert_eq!(spec.seeds, vec![2]);
    assert_eq!(spec.out, PathBuf::from("from-env"));
    let spec = build_spec(["krdistill", "ablate", "--config", s(&conf), "--seed", "3", "--out", "x"], env).unwrap();
    assert_eq!(spec.seeds, vec![3]);
    assert_eq!(spec.out, PathBuf::from("x"));
    let spec = build_spec(["krdistill", "ablate", "--config", s(&conf)], |_| None).unwrap();
    assert_eq!(spec.seeds, vec![1]);
}

#[test]
fn env_seed_reaches_the_binary() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let out = tmp.path().join("env");
    let o = bin()
        .args(["pretrain", "--config", s(&conf)])
        .env("KRD_SEED", "9")
        .env("KRD_OUT", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("runs/seed-9/teacher.krdnet").exists());
}

#[test]
fn pipeline_gen_pretrain_distill_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    let o = run(&["gen-data", "--config", s(&conf), "--out", s(&data), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(data.join("train.csv").exists() && data.join("eval.csv").exists());

    let t = tmp.path().join("t");
    let o = run(&["pretrain", "--config", s(&conf), "--data", s(&data), "--out", s(&t), "--seed", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let teacher = t.join("runs/seed-2/teacher.krdnet");
    assert!(teacher.exists());

    let d = tmp.path().join("d");
    let o = run(&[
        "distill", "--config", s(&conf), "--data", s(&data), "--teacher", s(&teacher), "--out", s(&d),
        "--seed", "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let student = d.join("runs/seed-2/krd/student.krdnet");
    assert!(student.exists());
    assert!(d.join("runs/seed-2/krd/ideal_means.txt").exists());

    let e = tmp.path().join("e");
    let o = run(&["evaluate", "--data", s(&data), "--model", s(&student), "--out", s(&e)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(e.join("evaluation.json")).unwrap()).unwrap();
    assert!(m["overall_top1"].as_f64().unwrap() >= 0.0);
}

#[test]
fn data_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.csv");
    std::fs::write(&bad, "label,f0\n0,1.0\n1,oops\n").unwrap();
    let o = run(&["pretrain", "--data", s(&bad), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));
}

#[test]
fn divergence_exits_three() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("hot.conf");
    std::fs::write(&conf, format!("{TINY}base_lr = 1e12\n")).unwrap();
    let o = run(&["pretrain", "--config", s(&conf), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("batch"), "{}", stderr(&o));
}

#[test]
fn missing_input_path_is_rejected() {
    let o = run(&["distill", "--teacher", "/nonexistent/t.krdnet"]);
    assert_eq!(o.status.code(), Some(1));
    let o = run(&["distill", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn failed_batch_leaves_partial_marker() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("hot.conf");
    std::fs::write(&conf, format!("{TINY}base_lr = 1e12\n")).unwrap();
    let out = tmp.path().join("o");
    let o = run(&["ablate", "--config", s(&conf), "--out", s(&out), "--seed", "1,2"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(out.join("PARTIAL").exists());
    assert!(!out.join("report.csv").exists());

    let o = run(&["ablate", "--config", s(&tiny_config(tmp.path())), "--out", s(&out), "--seed", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!out.join("PARTIAL").exists());
}
