//! Command implementations and report tables.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Command, RunSpec, SweepParam, SweepSpec};
use crate::data::{class_counts, LabeledDataset};
use crate::error::{KrdError, Result};
use crate::nets::FeedForwardNet;
use crate::trainer::{
    evaluate, pretrain_teacher, train_student, ExperimentResult, Metrics, StudentRun, TrainConfig,
    Variant,
};

pub const REPORT_FILE: &str = "report.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const SWEEP_MANIFEST: &str = "sweep.json";
pub const PARTIAL_MARKER: &str = "PARTIAL";

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, contents).map_err(|e| KrdError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| KrdError::io(dir, e))
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| KrdError::io(path, e))
}

pub fn run(spec: &RunSpec) -> Result<()> {
    spec.validate()?;
    create_dir(&spec.out)?;
    match spec.command {
        Command::GenData => gen_data(spec),
        Command::Pretrain => pretrain(spec),
        Command::Distill => distill(spec),
        Command::Evaluate => evaluate_model(spec),
        Command::Ablate => ablate(spec),
        Command::Sweep => sweep(spec),
        Command::Report => report(spec).map(|t| print!("{t}")),
    }
}

/// Train and eval splits for `seed`: from `--data` when given (a directory
/// holding `train.csv` and `eval.csv`, or one CSV used for both), otherwise
/// the synthetic benchmark.
pub fn load_data(spec: &RunSpec, seed: u64) -> Result<(LabeledDataset, LabeledDataset)> {
    match &spec.data {
        Some(p) if p.is_dir() => {
            let eval = LabeledDataset::load(&p.join("eval.csv"), None)?;
            let train = LabeledDataset::load(&p.join("train.csv"), Some(eval.classes()))?;
            Ok((train, eval))
        }
        Some(p) => {
            let d = LabeledDataset::load(p, None)?;
            Ok((d.clone(), d))
        }
        None => {
            let b = spec.benchmark.generate(seed)?;
            Ok((b.train, b.eval))
        }
    }
}

fn seeded(config: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..config.clone()
    }
}

/// Loads `--teacher` or pretrains one into `dir/teacher.krdnet`.
fn obtain_teacher(spec: &RunSpec, seed: u64, train: &LabeledDataset, dir: &Path) -> Result<FeedForwardNet> {
    if let Some(p) = &spec.teacher {
        return FeedForwardNet::load(p);
    }
    let t = pretrain_teacher(&seeded(&spec.train, seed), train)?;
    create_dir(dir)?;
    t.save(&dir.join("teacher.krdnet"))?;
    Ok(t)
}

fn gen_data(spec: &RunSpec) -> Result<()> {
    let many = spec.seeds.len() > 1;
    for &seed in &spec.seeds {
        let dir = if many {
            spec.out.join(format!("seed-{seed}"))
        } else {
            spec.out.clone()
        };
        let b = spec.benchmark.generate(seed)?;
        create_dir(&dir)?;
        b.train.save(&dir.join("train.csv"))?;
        b.eval.save(&dir.join("eval.csv"))?;
        write(&dir.join("benchmark.json"), &serde_json::to_string_pretty(&spec.benchmark)?)?;
        println!(
            "seed {seed}: {} train / {} eval rows -> {}",
            b.train.len(),
            b.eval.len(),
            dir.display()
        );
    }
    Ok(())
}

fn pretrain(spec: &RunSpec) -> Result<()> {
    for &seed in &spec.seeds {
        let dir = spec.out.join("runs").join(format!("seed-{seed}"));
        let (train, eval) = load_data(spec, seed)?;
        let config = seeded(&spec.train, seed);
        let t = pretrain_teacher(&config, &train)?;
        create_dir(&dir)?;
        t.save(&dir.join("teacher.krdnet"))?;
        let m = evaluate(&t, &eval, &class_counts(&train)?, &config.group_rule)?;
        write(&dir.join("config.json"), &serde_json::to_string_pretty(&config)?)?;
        write(&dir.join("teacher_metrics.json"), &serde_json::to_string_pretty(&m)?)?;
        println!("seed {seed} teacher {}", summary(&m));
    }
    Ok(())
}

fn summary(m: &Metrics) -> String {
    format!(
        "overall {:.4} head {} medium {} tail {}",
        m.overall_top1,
        opt(m.head_top1),
        opt(m.medium_top1),
        opt(m.tail_top1)
    )
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Writes a run directory: config, models, deterministic metrics and the
/// full result.
pub fn write_run(dir: &Path, run: &StudentRun) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("config.json"), &serde_json::to_string_pretty(&run.result.config)?)?;
    run.student.save(&dir.join("student.krdnet"))?;
    if let Some(p) = &run.projector {
        p.net.save(&dir.join("projector.krdnet"))?;
    }
    if let Some(m) = &run.ideal_means {
        m.save(&dir.join("ideal_means.txt"))?;
    }
    write(&dir.join("metrics.json"), &run.result.metrics_json()?)?;
    write(&dir.join("result.json"), &run.result.to_json()?)
}

fn run_dir(out: &Path, seed: u64, variant: Variant) -> PathBuf {
    out.join("runs").join(format!("seed-{seed}")).join(variant.short_name())
}

fn distill(spec: &RunSpec) -> Result<()> {
    let variant = spec.train.variant;
    for &seed in &spec.seeds {
        let (train, eval) = load_data(spec, seed)?;
        let seed_dir = spec.out.join("runs").join(format!("seed-{seed}"));
        let teacher = if variant.uses_teacher() {
            Some(obtain_teacher(spec, seed, &train, &seed_dir)?)
        } else {
            None
        };
        let run = train_student(&seeded(&spec.train, seed), teacher.as_ref(), &train, &eval)?;
        write_run(&run_dir(&spec.out, seed, variant), &run)?;
        println!("seed {seed} {variant} {}", summary(&run.result.metrics));
    }
    Ok(())
}

fn evaluate_model(spec: &RunSpec) -> Result<()> {
    let path = spec.model.as_ref().or(spec.teacher.as_ref()).ok_or_else(|| KrdError::Config {
        key: "model".into(),
        line: None,
        message: "evaluate needs --model or --teacher".into(),
    })?;
    let net = FeedForwardNet::load(path)?;
    let seed = spec.seeds[0];
    let (train, eval) = load_data(spec, seed)?;
    let m = evaluate(&net, &eval, &class_counts(&train)?, &spec.train.group_rule)?;
    let json = serde_json::to_string_pretty(&m)?;
    write(&spec.out.join("evaluation.json"), &json)?;
    println!("{} {}", path.display(), summary(&m));
    Ok(())
}

fn pool(parallel: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| KrdError::invalid(format!("thread pool: {e}")))
}

/// Runs `jobs` on the configured pool; on failure leaves a marker naming the
/// first error in job order.
fn dispatch<J: Sync, T: Send>(
    spec: &RunSpec,
    jobs: &[J],
    f: impl Fn(&J) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let marker = spec.out.join(PARTIAL_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| KrdError::io(&marker, e))?;
    }
    let results: Vec<Result<T>> = pool(spec.parallel)?.install(|| jobs.par_iter().map(&f).collect());
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                write(&marker, &format!("incomplete: {e}\n"))?;
                return Err(e);
            }
        }
    }
    Ok(out)
}

fn ablate(spec: &RunSpec) -> Result<()> {
    dispatch(spec, &spec.seeds, |&seed| {
        let (train, eval) = load_data(spec, seed)?;
        let seed_dir = spec.out.join("runs").join(format!("seed-{seed}"));
        let teacher = obtain_teacher(spec, seed, &train, &seed_dir)?;
        for v in Variant::ALL {
            let config = TrainConfig {
                variant: v,
                ..seeded(&spec.train, seed)
            };
            let run = train_student(&config, Some(&teacher), &train, &eval)?;
            write_run(&run_dir(&spec.out, seed, v), &run)?;
            println!("seed {seed} {v} {}", summary(&run.result.metrics));
        }
        Ok(())
    })?;
    let table = report(spec)?;
    print!("{table}");
    Ok(())
}

fn value_dir(param: SweepParam, v: f64) -> String {
    format!("{param}-{v}")
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepManifest {
    sweep: SweepSpec,
    seeds: Vec<u64>,
}

fn sweep(spec: &RunSpec) -> Result<()> {
    let sw = spec.sweep()?;
    let manifest = SweepManifest {
        sweep: sw.clone(),
        seeds: spec.seeds.clone(),
    };
    write(&spec.out.join(SWEEP_MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    // teachers first, one per seed, shared by every value
    let teachers = dispatch(spec, &spec.seeds, |&seed| {
        let (train, _) = load_data(spec, seed)?;
        let dir = spec.out.join("teachers").join(format!("seed-{seed}"));
        obtain_teacher(spec, seed, &train, &dir)
    })?;
    let jobs: Vec<(f64, usize)> = sw
        .values
        .iter()
        .flat_map(|&v| (0..spec.seeds.len()).map(move |i| (v, i)))
        .collect();
    dispatch(spec, &jobs, |&(v, i)| {
        let seed = spec.seeds[i];
        let (train, eval) = load_data(spec, seed)?;
        let mut config = seeded(&spec.train, seed);
        sw.param.apply(&mut config, v);
        let run = train_student(&config, Some(&teachers[i]), &train, &eval)?;
        let dir = spec
            .out
            .join("runs")
            .join(value_dir(sw.param, v))
            .join(format!("seed-{seed}"));
        write_run(&dir, &run)?;
        println!("{}={v} seed {seed} {}", sw.param, summary(&run.result.metrics));
        Ok(())
    })?;
    let table = report(spec)?;
    print!("{table}");
    Ok(())
}

fn load_result(dir: &Path) -> Result<ExperimentResult> {
    ExperimentResult::from_json(&read(&dir.join("result.json"))?)
}

fn mean_of(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.collect::<Option<Vec<f64>>>()?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn metric_cells(rows: &[&Metrics], per_class: bool) -> String {
    let mut s = String::new();
    let overall = mean_of(rows.iter().map(|m| Some(m.overall_top1)));
    let head = mean_of(rows.iter().map(|m| m.head_top1));
    let medium = mean_of(rows.iter().map(|m| m.medium_top1));
    let tail = mean_of(rows.iter().map(|m| m.tail_top1));
    let _ = write!(s, "{},{},{},{}", opt(overall), opt(head), opt(medium), opt(tail));
    if per_class {
        let classes = rows.first().map_or(0, |m| m.per_class_top1.len());
        for c in 0..classes {
            let v = mean_of(rows.iter().map(|m| m.per_class_top1.get(c).copied()));
            let _ = write!(s, ",{}", opt(v));
        }
    }
    s
}

fn header(first: &str, second: &str, classes: Option<usize>) -> String {
    let mut h = format!("{first},{second},overall,head,medium,tail");
    for c in 0..classes.unwrap_or(0) {
        let _ = write!(h, ",class{c}");
    }
    h.push('\n');
    h
}

/// Variant-by-seed table with one mean row per variant, in report order.
pub fn ablation_table(results: &[ExperimentResult], per_class: bool) -> String {
    let classes = per_class.then(|| results.first().map_or(0, |r| r.metrics.per_class_top1.len()));
    let mut out = header("variant", "seed", classes);
    let mut sorted: Vec<&ExperimentResult> = results.iter().collect();
    let rank = |v: Variant| Variant::ALL.iter().position(|&x| x == v).unwrap_or(usize::MAX);
    sorted.sort_by_key(|r| (rank(r.variant), r.seed));
    for r in &sorted {
        let _ = writeln!(out, "{},{},{}", r.variant, r.seed, metric_cells(&[&r.metrics], per_class));
    }
    for v in Variant::ALL {
        let rows: Vec<&Metrics> = sorted.iter().filter(|r| r.variant == v).map(|r| &r.metrics).collect();
        if !rows.is_empty() {
            let _ = writeln!(out, "{v},mean,{}", metric_cells(&rows, per_class));
        }
    }
    out
}

fn ablation_results(out: &Path) -> Result<Vec<ExperimentResult>> {
    let runs = out.join("runs");
    let mut results = Vec::new();
    let mut seeds: Vec<PathBuf> = list_dirs(&runs)?;
    seeds.sort();
    for s in seeds {
        for v in Variant::ALL {
            let dir = s.join(v.short_name());
            if dir.join("result.json").exists() {
                results.push(load_result(&dir)?);
            }
        }
    }
    if results.is_empty() {
        return Err(KrdError::invalid(format!("no stored runs under {}", runs.display())));
    }
    Ok(results)
}

fn list_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| KrdError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry.map_err(|e| KrdError::io(dir, e))?.path();
        if p.is_dir() {
            out.push(p);
        }
    }
    Ok(out)
}

fn sweep_table(out: &Path, manifest: &SweepManifest, per_class: bool) -> Result<String> {
    let sw = &manifest.sweep;
    let mut all = Vec::new();
    for &v in &sw.values {
        let mut rows = Vec::new();
        for &seed in &manifest.seeds {
            let dir = out
                .join("runs")
                .join(value_dir(sw.param, v))
                .join(format!("seed-{seed}"));
            rows.push(load_result(&dir)?);
        }
        all.push((v, rows));
    }
    let classes = per_class.then(|| {
        all.first()
            .and_then(|(_, r)| r.first())
            .map_or(0, |r| r.metrics.per_class_top1.len())
    });
    let mut h = header("param", "value", classes);
    h.insert_str(h.len() - 1, ",runs,default");
    let mut s = h;
    let default = sw.param.default_value();
    for (v, rows) in &all {
        let m: Vec<&Metrics> = rows.iter().map(|r| &r.metrics).collect();
        let _ = writeln!(
            s,
            "{},{v},{},{},{}",
            sw.param,
            metric_cells(&m, per_class),
            rows.len(),
            *v == default
        );
    }
    Ok(s)
}

/// Rebuilds the report table from stored run directories and writes it
/// next to them. Sweeps get `sweep.csv`, everything else `report.csv`.
pub fn report(spec: &RunSpec) -> Result<String> {
    let manifest_path = spec.out.join(SWEEP_MANIFEST);
    if manifest_path.exists() {
        let manifest: SweepManifest = serde_json::from_str(&read(&manifest_path)?)?;
        let table = sweep_table(&spec.out, &manifest, spec.per_class)?;
        write(&spec.out.join(SWEEP_FILE), &table)?;
        Ok(table)
    } else {
        let table = ablation_table(&ablation_results(&spec.out)?, spec.per_class);
        write(&spec.out.join(REPORT_FILE), &table)?;
        Ok(table)
    }
}
