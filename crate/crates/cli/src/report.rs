//! Sweep result files and the tables built from them.

use std::collections::BTreeMap;

use handkd_core::losses::KdMode;
use handkd_core::nets::StudentSize;
use handkd_core::train::SweepRow;

pub const RESULTS_FILE: &str = "results.csv";

const FIXED: [&str; 6] = ["mode", "lambda_kd", "gamma_fd", "student_size", "seed", "status"];

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub j_err: f64,
    pub v_err: f64,
    /// One value per threshold, in threshold order.
    pub f: Vec<f64>,
    pub teacher_gap: f64,
    pub params_trainable: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub mode: KdMode,
    pub lambda_kd: f64,
    pub gamma_fd: f64,
    pub size: StudentSize,
    pub seed: u64,
    pub outcome: Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Results {
    pub thresholds: Vec<f64>,
    pub rows: Vec<ResultRow>,
}

fn csv_err(e: csv::Error) -> String {
    e.to_string()
}

/// Serializes sweep rows. Everything written is deterministic for a given
/// grid and inputs; timing goes elsewhere.
pub fn results_csv(rows: &[SweepRow], thresholds: &[f64]) -> Result<String, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(["j_err", "v_err"].map(String::from));
    header.extend(thresholds.iter().map(|t| format!("f@{t}")));
    header.extend(["teacher_gap", "params_trainable", "message"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for row in rows {
        let c = &row.cell;
        let mut rec = vec![
            c.mode.name().to_string(),
            c.lambda_kd.to_string(),
            c.gamma_fd.to_string(),
            c.size.name().to_string(),
            c.seed.to_string(),
        ];
        match &row.result {
            Ok(r) => {
                rec.push("ok".into());
                rec.push(r.metrics.j_err.to_string());
                rec.push(r.metrics.v_err.to_string());
                for &t in thresholds {
                    rec.push(r.metrics.f_score_at(t).map_or_else(String::new, |f| f.to_string()));
                }
                rec.push(r.teacher_gap.to_string());
                rec.push(r.metrics.params.trainable.to_string());
                rec.push(String::new());
            }
            Err(msg) => {
                rec.push("error".into());
                rec.extend(std::iter::repeat_n(String::new(), 2 + thresholds.len() + 2));
                rec.push(msg.clone());
            }
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

pub fn parse_results(text: &str) -> Result<Results, String> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| format!("missing column `{name}`"));
    for name in FIXED {
        col(name)?;
    }
    let thresholds: Vec<(f64, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.strip_prefix("f@").and_then(|t| t.parse().ok()).map(|t| (t, i)))
        .collect();
    let (j, v, gap, params, msg) = (col("j_err")?, col("v_err")?, col("teacher_gap")?, col("params_trainable")?, col("message")?);
    let mut rows = Vec::new();
    for (n, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = n + 2;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let num = |i: usize| {
            get(i)
                .parse::<f64>()
                .map_err(|_| format!("line {line}: column `{}` is not a number: `{}`", &header[i], get(i)))
        };
        let mode = KdMode::parse(get(0)).ok_or_else(|| format!("line {line}: unknown mode `{}`", get(0)))?;
        let size = StudentSize::parse(get(3)).ok_or_else(|| format!("line {line}: unknown student size `{}`", get(3)))?;
        let seed = get(4).parse().map_err(|_| format!("line {line}: bad seed `{}`", get(4)))?;
        let outcome = match get(5) {
            "ok" => Ok(CellMetrics {
                j_err: num(j)?,
                v_err: num(v)?,
                f: thresholds.iter().map(|&(_, i)| num(i)).collect::<Result<_, _>>()?,
                teacher_gap: num(gap)?,
                params_trainable: get(params).parse().map_err(|_| format!("line {line}: bad parameter count"))?,
            }),
            "error" => Err(get(msg).to_string()),
            other => return Err(format!("line {line}: unknown status `{other}`")),
        };
        rows.push(ResultRow {
            mode,
            lambda_kd: num(1)?,
            gamma_fd: num(2)?,
            size,
            seed,
            outcome,
        });
    }
    Ok(Results {
        thresholds: thresholds.into_iter().map(|(t, _)| t).collect(),
        rows,
    })
}

/// Seed-averaged metrics for one `(mode, λ, γ, size)` configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mode: KdMode,
    pub lambda_kd: f64,
    pub gamma_fd: f64,
    pub size: StudentSize,
    pub seeds: Vec<u64>,
    pub j_err: f64,
    pub v_err: f64,
    pub f: Vec<f64>,
    pub teacher_gap: f64,
}

fn mode_rank(m: KdMode) -> usize {
    KdMode::ALL.iter().position(|&x| x == m).unwrap_or(usize::MAX)
}

fn size_rank(s: StudentSize) -> usize {
    match s {
        StudentSize::Small => 0,
        StudentSize::Large => 1,
    }
}

/// Groups successful rows and averages over seeds. Output order is
/// `(mode, λ, γ, size)` and sums run in seed order, so shuffling the
/// input rows cannot change a single bit of the result.
pub fn aggregate(results: &Results) -> Vec<Aggregate> {
    type Key = (usize, u64, u64, usize);
    let mut groups: BTreeMap<Key, Vec<&ResultRow>> = BTreeMap::new();
    for row in results.rows.iter().filter(|r| r.outcome.is_ok()) {
        let key = (mode_rank(row.mode), row.lambda_kd.to_bits(), row.gamma_fd.to_bits(), size_rank(row.size));
        groups.entry(key).or_default().push(row);
    }
    let mut out: Vec<Aggregate> = groups
        .into_values()
        .map(|mut rows| {
            rows.sort_by_key(|r| r.seed);
            let ms: Vec<&CellMetrics> = rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let n = ms.len() as f64;
            let mean = |f: &dyn Fn(&CellMetrics) -> f64| ms.iter().map(|m| f(m)).sum::<f64>() / n;
            Aggregate {
                mode: rows[0].mode,
                lambda_kd: rows[0].lambda_kd,
                gamma_fd: rows[0].gamma_fd,
                size: rows[0].size,
                seeds: rows.iter().map(|r| r.seed).collect(),
                j_err: mean(&|m| m.j_err),
                v_err: mean(&|m| m.v_err),
                f: (0..results.thresholds.len()).map(|i| mean(&|m| m.f[i])).collect(),
                teacher_gap: mean(&|m| m.teacher_gap),
            }
        })
        .collect();
    // Bit order only matches numeric order for non-negative values.
    out.sort_by(|a, b| {
        (mode_rank(a.mode), a.lambda_kd, a.gamma_fd, size_rank(a.size))
            .partial_cmp(&(mode_rank(b.mode), b.lambda_kd, b.gamma_fd, size_rank(b.size)))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    out
}

fn caption(mode: KdMode) -> &'static str {
    match mode {
        KdMode::None => "Baseline students (no distillation)",
        KdMode::Output => "Output-level distillation",
        KdMode::Feature => "Feature-level distillation",
        KdMode::Combined => "Output- and feature-level distillation combined",
    }
}

fn weight(mode: KdMode, uses: bool, x: f64) -> String {
    if mode == KdMode::None || !uses {
        "-".into()
    } else {
        x.to_string()
    }
}

pub fn render_markdown(results: &Results) -> String {
    let aggs = aggregate(results);
    let mut s = String::from("# Distillation sweep\n");
    let failed = results.rows.iter().filter(|r| r.outcome.is_err()).count();
    if failed > 0 {
        s += &format!("\n{failed} cell(s) failed and are left out; see {RESULTS_FILE}.\n");
    }
    let f_cols: String = results.thresholds.iter().map(|t| format!(" F@{t} ↑ |")).collect();
    let f_rule: String = results.thresholds.iter().map(|_| " ---: |").collect();
    for mode in KdMode::ALL {
        let rows: Vec<&Aggregate> = aggs.iter().filter(|a| a.mode == mode).collect();
        if rows.is_empty() {
            continue;
        }
        let seeds = rows.iter().map(|a| a.seeds.len()).max().unwrap_or(0);
        s += &format!("\n## {}\n\nMean over up to {seeds} seed(s); errors in mm after Procrustes alignment.\n\n", caption(mode));
        s += &format!("| Backbone-cfg | λ_KD | γ_FD | J_err ↓ | V_err ↓ |{f_cols}\n");
        s += &format!("| --- | ---: | ---: | ---: | ---: |{f_rule}\n");
        for a in rows {
            let f: String = a.f.iter().map(|x| format!(" {x:.3} |")).collect();
            s += &format!(
                "| {} | {} | {} | {:.2} | {:.2} |{f}\n",
                a.size.name(),
                weight(mode, true, a.lambda_kd),
                weight(mode, mode.uses_feature(), a.gamma_fd),
                a.j_err,
                a.v_err
            );
        }
    }
    s
}

pub fn render_csv(results: &Results) -> Result<String, String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["mode", "Backbone-cfg", "lambda_KD", "gamma_FD", "J_err", "V_err"].map(String::from).to_vec();
    header.extend(results.thresholds.iter().map(|t| format!("F@{t}")));
    header.extend(["teacher_gap", "seeds"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for a in aggregate(results) {
        let mut rec = vec![
            a.mode.name().to_string(),
            a.size.name().to_string(),
            a.lambda_kd.to_string(),
            a.gamma_fd.to_string(),
            a.j_err.to_string(),
            a.v_err.to_string(),
        ];
        rec.extend(a.f.iter().map(|x| x.to_string()));
        rec.push(a.teacher_gap.to_string());
        rec.push(a.seeds.len().to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| e.to_string())?;
    String::from_utf8(bytes).map_err(|e| e.to_string())
}
