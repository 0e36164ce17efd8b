//! Criteria that need trained models.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use promptmr::config::{ReconConfig, Task, TaskSet};
use promptmr::dataset::{eval_mask, simulate_split, LoadedCase, Split};
use promptmr::report::{read_csv, ZERO_FILLED};
use promptmr::train::{train_stage1, LoopConfig, Stage1Data};
use promptmr_core::metrics::{ssim_with, MetricReport, MetricRow, SsimParams};
use promptmr_core::physics::apply_mask;
use promptmr_core::unrolled::{ModelFamily, Stage1};

use crate::common::mean;
use crate::probe::Lda;
use crate::Outcome;

pub fn desk_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.yaml")
}

fn desk_config() -> ReconConfig {
    let text = std::fs::read_to_string(desk_config_path()).expect("desk config");
    ReconConfig::from_yaml(&text).expect("desk config parses")
}

/// Outputs of one full command-line run.
pub struct DeskRun {
    pub secs: f64,
    pub report: MetricReport,
    pub prompts_train: Vec<(Vec<f64>, bool)>,
    pub prompts_test: Vec<(Vec<f64>, bool)>,
}

fn cli(dir: &Path, extra: &[&str], sub: &[&str]) -> Result<(), String> {
    let d = dir.display();
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_promptmr"));
    cmd.arg("--config")
        .arg(desk_config_path())
        .args(["--override", &format!("checkpoint_dir={d}/runs")])
        .args(["--override", &format!("output_dir={d}/out")]);
    for o in extra {
        cmd.args(["--override", o]);
    }
    let status = cmd
        .args(sub)
        .env("PROMPTMR_DATA_DIR", dir.join("data"))
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    if status.success() {
        Ok(())
    } else {
        Err(format!("`promptmr {}` exited with {status}", sub.join(" ")))
    }
}

/// Finest-level prompt weights with a temporal/contrast label.
fn read_prompts(path: &Path) -> Result<Vec<(Vec<f64>, bool)>, String> {
    let mut r = csv::Reader::from_path(path).map_err(|e| e.to_string())?;
    let headers = r.headers().map_err(|e| e.to_string())?.clone();
    let col = |n: &str| headers.iter().position(|h| h == n).ok_or(format!("missing column {n}"));
    let (task, level) = (col("task")?, col("level")?);
    let ws: Vec<usize> = headers.iter().enumerate().filter(|(_, h)| h.starts_with('w')).map(|(i, _)| i).collect();
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        if &rec[level] != "0" {
            continue;
        }
        let w = ws
            .iter()
            .filter(|&&i| !rec[i].is_empty())
            .map(|&i| rec[i].parse::<f64>().map_err(|e| e.to_string()))
            .collect::<Result<Vec<_>, _>>()?;
        out.push((w, &rec[task] == "temporal"));
    }
    Ok(out)
}

/// simulate → train stage 1 → train stage 2 → reconstruct → evaluate, then
/// prompt export on the train and test splits.
pub fn desk_run(dir: &Path) -> Result<DeskRun, String> {
    let t0 = Instant::now();
    for sub in [&["simulate"][..], &["train-stage1"], &["train-stage2"], &["reconstruct"], &["evaluate"]] {
        cli(dir, &[], sub)?;
    }
    let secs = t0.elapsed().as_secs_f64();
    let report = read_csv(&dir.join("out/report.csv")).map_err(|e| e.to_string())?;
    let mut prompts = Vec::new();
    for split in ["train", "test"] {
        let out = dir.join(format!("prompts_{split}"));
        let o1 = format!("export.split={split}");
        let o2 = format!("output_dir={}", out.display());
        cli(dir, &[&o1, &o2], &["export-prompts"])?;
        prompts.push(read_prompts(&out.join("prompts.csv"))?);
    }
    let prompts_test = prompts.pop().unwrap();
    let prompts_train = prompts.pop().unwrap();
    Ok(DeskRun { secs, report, prompts_train, prompts_test })
}

pub fn prompt_probe(run: &DeskRun) -> (bool, String) {
    let split = |rows: &[(Vec<f64>, bool)]| -> (Vec<Vec<f64>>, Vec<bool>) {
        (rows.iter().map(|r| r.0.clone()).collect(), rows.iter().map(|r| r.1).collect())
    };
    let (xtr, ytr) = split(&run.prompts_train);
    let (xte, yte) = split(&run.prompts_test);
    if xtr.is_empty() || xte.is_empty() || !ytr.contains(&true) || !ytr.contains(&false) {
        return (false, "no prompt rows for both task types".into());
    }
    let lda = Lda::fit(&xtr, &ytr);
    let (a_tr, a_te) = (lda.accuracy(&xtr, &ytr), lda.accuracy(&xte, &yte));
    (
        a_te > 0.8,
        format!(
            "LDA probe on finest-level weights (last cascade, x10): train {a_tr:.3} ({} rows), held-out test {a_te:.3} ({} rows) (> 0.80)",
            xtr.len(),
            xte.len()
        ),
    )
}

fn rows<'a>(r: &'a MetricReport, stage: &'a str, accel: Option<usize>) -> impl Iterator<Item = &'a MetricRow> + 'a {
    r.rows.iter().filter(move |x| x.stage == stage && accel.is_none_or(|a| x.accel == a))
}

pub fn two_stage(run: &DeskRun) -> Outcome {
    let r = &run.report;
    let m = |stage: &str, f: fn(&MetricRow) -> f64| mean(&rows(r, stage, None).map(f).collect::<Vec<_>>());
    let n1 = rows(r, "stage1", None).count();
    let n2 = rows(r, "stage2", None).count();
    if n1 == 0 || n1 != n2 {
        return Outcome::new(false, format!("report has {n1} stage-1 and {n2} stage-2 rows"));
    }
    let (p1, p2) = (m("stage1", |x| x.psnr), m("stage2", |x| x.psnr));
    let (e1, e2) = (m("stage1", |x| x.nmse), m("stage2", |x| x.nmse));
    Outcome::new(
        p2 - p1 >= -0.05 && e2 < e1,
        format!(
            "held-out test, {n1} case/accel pairs: PSNR {p1:.3} -> {p2:.3} dB (delta {:+.3}, >= -0.05), NMSE {e1:.4e} -> {e2:.4e}",
            p2 - p1
        ),
    )
}

pub fn quality_floor(run: &DeskRun) -> Outcome {
    let r = &run.report;
    let s1: Vec<f64> = rows(r, "stage1", Some(4)).map(|x| x.ssim).collect();
    let zf: Vec<f64> = r.rows.iter().filter(|x| x.model == ZERO_FILLED && x.accel == 4).map(|x| x.ssim).collect();
    if s1.is_empty() || zf.is_empty() {
        return Outcome::new(false, "no x4 rows in the report".into());
    }
    let (a, z) = (mean(&s1), mean(&zf));
    let mut per_task = Vec::new();
    for t in Task::ALL {
        let v: Vec<f64> = rows(r, "stage1", Some(4)).filter(|x| x.task == t.as_str()).map(|x| x.ssim).collect();
        per_task.push(format!("{} {:.4}", t.as_str(), mean(&v)));
    }
    Outcome::new(
        a > 0.90 && a - z > 0.05 && run.secs < 7200.0,
        format!(
            "x4 stage-1 SSIM {a:.4} (> 0.90; {}) vs zero-filled {z:.4} (margin {:.4} > 0.05); simulate->train->evaluate {:.0} s (< 7200 s)",
            per_task.join(", "),
            a - z,
            run.secs
        ),
    )
}

/// Mean full-sequence SSIM per task over validation cases and accelerations.
fn train_and_score(cfg: &ReconConfig, seed: u64) -> Result<(BTreeMap<Task, f64>, usize), String> {
    let e = |x: promptmr::AppError| x.to_string();
    let keep = |v: Vec<LoadedCase>| -> Vec<LoadedCase> { v.into_iter().filter(|c| cfg.task.includes(c.task)).collect() };
    let train = keep(simulate_split(seed, &cfg.data, Split::Train).map_err(e)?);
    let val = keep(simulate_split(seed, &cfg.data, Split::Val).map_err(e)?);
    let mc = cfg.stage1.unrolled().map_err(e)?;
    let n_params = promptmr::config::param_count(&mc).map_err(e)?;
    let lc = LoopConfig::from_config(cfg, &cfg.train_stage1, train.len());
    let data = Stage1Data {
        train: &train,
        val: val.iter().collect(),
        accelerations: cfg.accelerations.clone(),
        mask: cfg.mask,
        val_frame_stride: cfg.train_stage1.val_frame_stride,
    };
    let run = train_stage1(&mc, &lc, &data, seed, None, None, None).map_err(e)?;
    let store = run.outcome.best.unwrap_or(run.outcome.state.params);
    let s1 = Stage1 { model: &run.model, store: &store };
    let mut by_task: BTreeMap<Task, Vec<f64>> = BTreeMap::new();
    for c in &val {
        let ky = c.record.kspace.dims()[2];
        for &acc in &cfg.accelerations {
            let mask = eval_mask(&cfg.mask, ky, acc, &c.name).map_err(e)?;
            let y = apply_mask(&c.record.kspace, &mask).map_err(|x| x.to_string())?;
            let img = s1.reconstruct(&y, &mask).map_err(|x| x.to_string())?;
            let s = ssim_with(&img, &c.record.target, c.record.target.max(), SsimParams::default())
                .map_err(|x| x.to_string())?;
            by_task.entry(c.task).or_default().push(s);
        }
    }
    Ok((by_task.into_iter().map(|(t, v)| (t, mean(&v))).collect(), n_params))
}

const SEEDS: [u64; 3] = [0, 1, 2];

pub fn adjacency() -> Outcome {
    let mut base = desk_config();
    base.task = TaskSet::Temporal;
    base.accelerations = vec![10];
    base.data.noise_std = 0.02;
    base.data.cases.val = 4;
    base.train_stage1.epochs = 6;
    let mut diffs = Vec::new();
    let mut parts = Vec::new();
    for seed in SEEDS {
        let mut s = [0.0; 2];
        for a in [0, 1] {
            let mut cfg = base.clone();
            cfg.stage1.adjacency = a;
            match train_and_score(&cfg, seed) {
                Ok((m, _)) => s[a] = m[&Task::Temporal],
                Err(err) => return Outcome::new(false, err),
            }
        }
        diffs.push(s[1] - s[0]);
        parts.push(format!("seed {seed}: a=0 {:.4}, a=1 {:.4}", s[0], s[1]));
    }
    let d = mean(&diffs);
    Outcome::new(
        d > 0.0,
        format!("temporal x10 val SSIM, {}; paired mean gain {d:+.4} (> 0)", parts.join("; ")),
    )
}

pub fn prompts_vs_baseline() -> Outcome {
    let base = desk_config();
    let mut sums: BTreeMap<(usize, Task), Vec<f64>> = BTreeMap::new();
    let mut counts = [0usize; 2];
    for seed in SEEDS {
        for (i, fam) in [ModelFamily::Promptmr, ModelFamily::BaselineCaunet].into_iter().enumerate() {
            let mut cfg = base.clone();
            cfg.stage1.model_family = fam;
            match train_and_score(&cfg, seed) {
                Ok((m, n)) => {
                    counts[i] = n;
                    for (t, v) in m {
                        sums.entry((i, t)).or_default().push(v);
                    }
                }
                Err(err) => return Outcome::new(false, err),
            }
        }
    }
    let gap = (counts[1] as f64 - counts[0] as f64).abs() / counts[0] as f64;
    let mut ok = gap <= 0.10;
    let mut parts = Vec::new();
    for t in Task::ALL {
        let p = mean(&sums[&(0, t)]);
        let b = mean(&sums[&(1, t)]);
        ok &= p >= b;
        parts.push(format!("{} promptmr {p:.4} vs baseline {b:.4}", t.as_str()));
    }
    Outcome::new(
        ok,
        format!(
            "all-in-one val SSIM over 3 seeds: {}; params {} vs {} ({:.1}% apart, <= 10%)",
            parts.join(", "),
            counts[0],
            counts[1],
            100.0 * gap
        ),
    )
}
