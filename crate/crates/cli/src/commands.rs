use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use handkd_core::camera::Intrinsics;
use handkd_core::data::{make_dataset, DataConfig, Dataset};
use handkd_core::hand::{make_synthetic_rig, HandRig};
use handkd_core::losses::{KdConfig, KdMode};
use handkd_core::metrics::{bench, evaluate, Clock, MetricsReport};
use handkd_core::nets::{Model, StudentSize};
use handkd_core::train::{
    default_grid, distill, run_cell, teacher_eval_outputs, train_teacher, CellResult, SweepCell, SweepOptions, SweepRow,
    TeacherCache,
};
use serde::Serialize;

use crate::cli::*;
use crate::config::{self, TrainFile};
use crate::error::{CliError, Result};
use crate::grid;
use crate::io::{self, StdClock};
use crate::manifest::{manifest_path, RunManifest};
use crate::report;

pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_GAMMA: f64 = 6.0;

fn options<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn load_inputs(data: &Path, rig: &Path) -> Result<(Dataset, HandRig)> {
    let rig_v = io::load_rig(rig)?;
    let ds = io::load_dataset(data)?;
    ds.check_rig(&rig_v).map_err(|e| CliError::Data(format!("{}: {e}; pass the rig the dataset was generated from", data.display())))?;
    Ok((ds, rig_v))
}

fn check_thresholds(t: &[f64]) -> Result<()> {
    if t.is_empty() || t.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(CliError::Usage(format!("thresholds must be positive millimetre values, got {t:?}")));
    }
    Ok(())
}

fn load_frozen(path: &Path) -> Result<Model> {
    let (mut m, _) = io::load_model(path)?;
    m.freeze();
    Ok(m)
}

pub fn gen_rig(args: &GenRigArgs) -> Result<()> {
    let out = io::out_path(&args.out, "rig.hkdr");
    let rig = make_synthetic_rig(args.seed, args.vertices).map_err(|e| CliError::Usage(format!("{e}; choose a larger --vertices")))?;
    io::save_rig(&out, &rig)?;
    let mut m = RunManifest::new("gen-rig", options(args), Some(args.seed));
    m.output("rig", &out)?;
    m.save(&manifest_path(&out))?;
    println!("wrote {} ({} vertices, {} joints)", out.display(), rig.num_vertices(), rig.num_joints());
    Ok(())
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let out = io::out_path(&args.out, "data.hkdd");
    let rig = io::load_rig(&args.rig)?;
    let cfg = DataConfig {
        n_train: args.n,
        n_eval: args.n_eval,
        seed: args.seed,
        frac_2d_only: args.frac_2d_only,
        sigma: args.sigma,
        noise_std: args.noise_std,
        intrinsics: Intrinsics {
            focal: args.focal,
            image_h: args.image_size,
            image_w: args.image_size,
        },
    };
    cfg.validate()?;
    let ds = make_dataset(&cfg, &rig)?;
    io::save_dataset(&out, &ds)?;
    let mut m = RunManifest::new("gen-data", options(args), Some(args.seed));
    m.input("rig", &args.rig)?;
    m.output("data", &out)?;
    m.save(&manifest_path(&out))?;
    println!(
        "wrote {} ({} train, of which {} 2D-only; {} eval)",
        out.display(),
        ds.train().len(),
        cfg.num_2d_only(),
        ds.eval().len()
    );
    Ok(())
}

fn summary(log: &handkd_core::train::TrainLog) -> String {
    let Some(last) = log.last() else {
        return String::new();
    };
    let mut s = format!("epoch {}: loss {:.4}", last.epoch, last.loss_total);
    if let Some((j, v)) = last.eval {
        let _ = write!(s, ", eval PA-MPJPE {j:.2} mm, PA-MPVPE {v:.2} mm");
    }
    s
}

pub fn train_teacher_cmd(args: &TrainTeacherArgs) -> Result<()> {
    let out = io::out_path(&args.out, "teacher.hkdm");
    let file = TrainFile::load(args.train.config.as_deref())?;
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let cfg = config::train_config(&file, &args.train, seed);
    let (data, rig) = load_inputs(&args.data, &args.rig)?;
    let net = config::fit_input(config::teacher_net(&file, seed), &data);
    let clock = StdClock::new();
    let (mut model, log) = train_teacher(&data, &rig, &net, &cfg, &clock)?;
    model.freeze();
    let log_path = io::sibling(&out, "log.csv");
    io::save_model(&out, &model)?;
    io::write_bytes(&log_path, log.to_csv().as_bytes())?;

    let mut m = RunManifest::new("train-teacher", options(args), Some(seed));
    m.resolved("train", config::describe(&cfg));
    m.resolved("net", config::describe_net(&net));
    m.input("data", &args.data)?;
    m.input("rig", &args.rig)?;
    if let Some(c) = &args.train.config {
        m.input("config", c)?;
    }
    m.output("model", &out)?;
    m.output("log", &log_path)?;
    m.save(&manifest_path(&out))?;
    println!("wrote {} ({} parameters) and {}", out.display(), model.param_count().total(), log_path.display());
    println!("{}", summary(&log));
    Ok(())
}

/// Resolves distillation weights, warning about flags the mode ignores.
pub fn resolve_kd(mode: KdMode, lambda: Option<f64>, gamma: Option<f64>) -> (KdConfig, Vec<String>) {
    let mut warnings = Vec::new();
    if mode == KdMode::None {
        if let Some(l) = lambda {
            warnings.push(format!("--lambda-kd {l} is ignored with --mode none; training the baseline"));
        }
    }
    if !mode.uses_feature() {
        if let Some(g) = gamma {
            warnings.push(format!("--gamma-fd {g} is ignored with --mode {}", mode.name()));
        }
    }
    let cell = SweepCell {
        mode,
        lambda_kd: lambda.unwrap_or(DEFAULT_LAMBDA),
        gamma_fd: gamma.unwrap_or(DEFAULT_GAMMA),
        size: StudentSize::Small,
        seed: 0,
    };
    (cell.kd(), warnings)
}

pub fn distill_cmd(args: &DistillArgs) -> Result<()> {
    let out = io::out_path(&args.out, "student.hkdm");
    let mode = KdMode::parse(&args.mode).ok_or_else(|| CliError::Usage(format!("unknown mode `{}`", args.mode)))?;
    let size = StudentSize::parse(&args.student_size).ok_or_else(|| CliError::Usage(format!("unknown size `{}`", args.student_size)))?;
    let (kd, warnings) = resolve_kd(mode, args.lambda_kd, args.gamma_fd);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let file = TrainFile::load(args.train.config.as_deref())?;
    let cfg = handkd_core::train::TrainConfig {
        kd,
        ..config::train_config(&file, &args.train, args.seed)
    };
    cfg.validate()?;
    let (data, rig) = load_inputs(&args.data, &args.rig)?;
    let teacher = load_frozen(&args.teacher)?;
    let net = config::fit_input(size.config(args.seed), &data);
    let clock = StdClock::new();
    let result = distill(&teacher, &net, &cfg, &data, &rig, &clock)?;
    let log_path = io::sibling(&out, "log.csv");
    io::save_model(&out, &result.student)?;
    io::write_bytes(&log_path, result.log.to_csv().as_bytes())?;

    let mut m = RunManifest::new("distill", options(args), Some(args.seed));
    m.resolved("train", config::describe(&cfg));
    m.resolved("net", config::describe_net(&net));
    m.input("teacher", &args.teacher)?;
    m.input("data", &args.data)?;
    m.input("rig", &args.rig)?;
    if let Some(c) = &args.train.config {
        m.input("config", c)?;
    }
    m.output("model", &out)?;
    m.output("log", &log_path)?;
    m.save(&manifest_path(&out))?;
    println!(
        "wrote {} ({} student, mode {}, {} parameters) and {}",
        out.display(),
        size.name(),
        mode.name(),
        result.student.param_count().total(),
        log_path.display()
    );
    println!("{}", summary(&result.log));
    Ok(())
}

fn metrics_csv(name: &str, r: &MetricsReport) -> String {
    let mut header = String::from("model,n_samples,j_err,v_err");
    let mut row = format!("{name},{},{},{}", r.n_samples, r.j_err, r.v_err);
    for (t, f) in &r.f_at {
        let _ = write!(header, ",f@{t}");
        let _ = write!(row, ",{f}");
    }
    header += ",params_trainable,params_frozen\n";
    let _ = writeln!(row, ",{},{}", r.params.trainable, r.params.frozen);
    header + &row
}

pub fn metrics_block(name: &str, r: &MetricsReport) -> String {
    let mut s = format!("model      {name}\nsamples    {}\nPA-MPJPE   {:.3} mm\nPA-MPVPE   {:.3} mm\n", r.n_samples, r.j_err, r.v_err);
    for (t, f) in &r.f_at {
        let _ = writeln!(s, "{:<10} {f:.4}", format!("F@{t}"));
    }
    let _ = writeln!(s, "params     {} ({} trainable)", r.params.total(), r.params.trainable);
    s
}

pub fn eval_cmd(args: &EvalArgs) -> Result<()> {
    check_thresholds(&args.thresholds)?;
    let out = io::out_path(&args.out, "metrics.csv");
    let (data, rig) = load_inputs(&args.data, &args.rig)?;
    let (model, _) = io::load_model(&args.model)?;
    let report = evaluate(&model, data.eval(), &rig, &args.thresholds)?;
    if !report.is_finite() {
        return Err(CliError::Numerical(format!("{}: metrics are not finite", args.model.display())));
    }
    let name = args.model.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
    io::write_bytes(&out, metrics_csv(&name, &report).as_bytes())?;
    let mut m = RunManifest::new("eval", options(args), None);
    m.input("model", &args.model)?;
    m.input("data", &args.data)?;
    m.input("rig", &args.rig)?;
    m.output("metrics", &out)?;
    m.save(&manifest_path(&out))?;
    print!("{}", metrics_block(&name, &report));
    Ok(())
}

pub fn bench_cmd(args: &BenchArgs) -> Result<()> {
    if args.iters == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    let rig = io::load_rig(&args.rig)?;
    let clock = StdClock::new();
    let mut rows = Vec::new();
    for path in &args.model {
        let (model, _) = io::load_model(path)?;
        let (h, w) = model.config().input_size;
        let intr = Intrinsics {
            focal: args.focal,
            image_h: h,
            image_w: w,
        };
        let r = bench(&model, &rig, &intr, args.warmup, args.iters, &clock)?;
        rows.push((path.display().to_string(), r));
    }
    let mut text = format!("{:<32} {:>12} {:>12} {:>12} {:>10}\n", "model", "params", "trainable", "forward/s", "ms");
    let mut csv = String::from("model,params_total,params_trainable,throughput,ms_per_forward,iters\n");
    let base = rows[0].1;
    for (name, r) in &rows {
        let ms = 1e3 / r.throughput;
        let _ = writeln!(text, "{name:<32} {:>12} {:>12} {:>12.1} {ms:>10.3}", r.params.total(), r.params.trainable, r.throughput);
        let _ = writeln!(csv, "{name},{},{},{},{ms},{}", r.params.total(), r.params.trainable, r.throughput, r.iters);
    }
    for (name, r) in rows.iter().skip(1) {
        let _ = writeln!(
            text,
            "{name}: {:.1}% of the parameters of {}, {:.2}× its throughput",
            100.0 * r.params.total() as f64 / base.params.total() as f64,
            rows[0].0,
            r.throughput / base.throughput
        );
    }
    print!("{text}");
    if let Some(out) = &args.out {
        io::write_bytes(out, csv.as_bytes())?;
        let mut m = RunManifest::new("bench", options(args), None);
        for (i, p) in args.model.iter().enumerate() {
            m.input(&format!("model.{i}"), p)?;
        }
        m.input("rig", &args.rig)?;
        m.output("bench", out)?;
        m.save(&manifest_path(out))?;
    }
    Ok(())
}

/// A finished cell and its wall time in seconds.
type CellSlot = (std::result::Result<CellResult, String>, f64);

fn cell_label(i: usize, c: &SweepCell) -> String {
    format!("{i:03}-{}-l{}-g{}-{}-s{}", c.mode.name(), c.lambda_kd, c.gamma_fd, c.size.name(), c.seed)
}

pub fn sweep_cmd(args: &SweepArgs) -> Result<()> {
    check_thresholds(&args.thresholds)?;
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let out_dir = args.out_dir.clone().unwrap_or_else(|| io::default_out_dir().join("sweep"));
    let cells = match &args.grid_file {
        Some(p) => grid::parse_grid(&io::read_text(p)?).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?,
        None => default_grid(),
    };
    let file = TrainFile::load(args.train.config.as_deref())?;
    let base = config::train_config(&file, &args.train, 0);
    base.validate()?;
    let (data, rig) = load_inputs(&args.data, &args.rig)?;
    let teacher = load_frozen(&args.teacher)?;

    let cache = TeacherCache::build(&teacher, data.train(), &rig)?;
    let teacher_eval = teacher_eval_outputs(&teacher, &data, &rig)?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CellSlot>>> = Mutex::new(vec![None; cells.len()]);
    let worker = || loop {
        let clock = StdClock::new();
        let opts = SweepOptions {
            base,
            thresholds: &args.thresholds,
            bench: (args.bench_iters > 0).then_some((&clock as &dyn Clock, 2, args.bench_iters)),
        };
        let i = next.fetch_add(1, Ordering::Relaxed);
        let Some(cell) = cells.get(i) else { break };
        let start = clock.seconds();
        let result = run_cell(cell, &cache, &teacher_eval, &data, &rig, &opts, &clock).map_err(|e| e.to_string());
        let secs = clock.seconds() - start;
        match &result {
            Ok(r) => eprintln!("[{}/{}] {}: PA-MPJPE {:.2} mm ({secs:.1} s)", i + 1, cells.len(), cell_label(i, cell), r.metrics.j_err),
            Err(e) => eprintln!("[{}/{}] {}: failed: {e}", i + 1, cells.len(), cell_label(i, cell)),
        }
        slots.lock().unwrap_or_else(|p| p.into_inner())[i] = Some((result, secs));
    };
    std::thread::scope(|s| {
        for _ in 1..args.jobs.min(cells.len()) {
            s.spawn(worker);
        }
        worker();
    });
    let done: Vec<_> = slots.into_inner().unwrap_or_else(|p| p.into_inner()).into_iter().flatten().collect();
    let rows: Vec<SweepRow> = cells.iter().zip(&done).map(|(c, (r, _))| SweepRow { cell: *c, result: r.clone() }).collect();

    let cells_dir = out_dir.join("cells");
    let mut m = RunManifest::new("sweep", options(args), None);
    m.resolved("train", config::describe(&base));
    m.input("data", &args.data)?;
    m.input("rig", &args.rig)?;
    m.input("teacher", &args.teacher)?;
    if let Some(p) = &args.grid_file {
        m.input("grid", p)?;
    }
    if let Some(c) = &args.train.config {
        m.input("config", c)?;
    }
    let grid_path = out_dir.join("grid.txt");
    io::write_bytes(&grid_path, grid::format_grid(&cells).as_bytes())?;
    m.output("grid", &grid_path)?;
    let mut timing = String::from("cell,seconds,throughput\n");
    for (i, (row, (_, secs))) in rows.iter().zip(&done).enumerate() {
        let label = cell_label(i, &row.cell);
        let tp = row.result.as_ref().ok().and_then(|r| r.metrics.throughput).map_or_else(String::new, |t| t.to_string());
        let _ = writeln!(timing, "{label},{secs},{tp}");
        if let Ok(r) = &row.result {
            let p = cells_dir.join(format!("{label}.log.csv"));
            io::write_bytes(&p, r.log.to_csv().as_bytes())?;
        }
    }
    let results_text = report::results_csv(&rows, &args.thresholds).map_err(CliError::Data)?;
    let results_path = out_dir.join(report::RESULTS_FILE);
    io::write_bytes(&results_path, results_text.as_bytes())?;
    m.output("results", &results_path)?;
    let parsed = report::parse_results(&results_text).map_err(CliError::Data)?;
    let md_path = out_dir.join("report.md");
    io::write_bytes(&md_path, report::render_markdown(&parsed).as_bytes())?;
    m.output("report", &md_path)?;
    io::write_bytes(&out_dir.join("timing.csv"), timing.as_bytes())?;
    m.save(&out_dir.join("manifest.json"))?;

    let failed = rows.iter().filter(|r| r.result.is_err()).count();
    println!("wrote {} ({} cells, {failed} failed)", out_dir.display(), rows.len());
    if failed == rows.len() {
        return Err(CliError::Numerical(format!("every sweep cell failed; see {}", results_path.display())));
    }
    Ok(())
}

pub fn report_cmd(args: &ReportArgs) -> Result<()> {
    let path = args.sweep_dir.join(report::RESULTS_FILE);
    let results = report::parse_results(&io::read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let text = match args.format {
        ReportFormat::Md => report::render_markdown(&results),
        ReportFormat::Csv => report::render_csv(&results).map_err(CliError::Data)?,
    };
    match &args.out {
        Some(out) => {
            io::write_bytes(out, text.as_bytes())?;
            let mut m = RunManifest::new("report", options(args), None);
            m.input("results", &path)?;
            m.output("report", out)?;
            m.save(&manifest_path(out))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn none_mode_warns_about_lambda() {
        let (kd, w) = resolve_kd(KdMode::None, Some(0.5), None);
        assert_eq!(kd, KdConfig::none());
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("ignored"));
        let (kd, w) = resolve_kd(KdMode::Output, None, Some(6.0));
        assert_eq!((kd.lambda_kd, kd.gamma_fd), (DEFAULT_LAMBDA, 0.0));
        assert_eq!(w.len(), 1);
        let (kd, w) = resolve_kd(KdMode::Combined, Some(0.8), Some(12.0));
        assert_eq!((kd.lambda_kd, kd.gamma_fd), (0.8, 12.0));
        assert!(w.is_empty());
    }
}
