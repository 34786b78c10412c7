//! Sweep grid files: one cell per line, `mode lambda gamma student_size seed`,
//! with `#` starting a comment.

use handkd_core::losses::KdMode;
use handkd_core::nets::StudentSize;
use handkd_core::train::SweepCell;

pub fn parse_grid(text: &str) -> Result<Vec<SweepCell>, String> {
    let mut cells = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let at = |msg: String| format!("line {}: {msg}", i + 1);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [mode, lambda, gamma, size, seed] = fields[..] else {
            return Err(at(format!(
                "expected `mode lambda gamma student_size seed`, found {} fields",
                fields.len()
            )));
        };
        let mode = KdMode::parse(mode).ok_or_else(|| at(format!("unknown mode `{mode}` (none, output, feature, combined)")))?;
        let number = |name: &str, s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x >= 0.0)
                .ok_or_else(|| at(format!("{name} must be a non-negative number, found `{s}`")))
        };
        let lambda_kd = number("lambda", lambda)?;
        let gamma_fd = number("gamma", gamma)?;
        let size = StudentSize::parse(size).ok_or_else(|| at(format!("unknown student size `{size}` (small, large)")))?;
        let seed = seed.parse().map_err(|_| at(format!("seed must be an unsigned integer, found `{seed}`")))?;
        cells.push(SweepCell {
            mode,
            lambda_kd,
            gamma_fd,
            size,
            seed,
        });
    }
    if cells.is_empty() {
        return Err("grid has no cells".into());
    }
    Ok(cells)
}

pub fn format_grid(cells: &[SweepCell]) -> String {
    let mut s = String::from("# mode lambda gamma student_size seed\n");
    for c in cells {
        s += &format!("{} {} {} {} {}\n", c.mode.name(), c.lambda_kd, c.gamma_fd, c.size.name(), c.seed);
    }
    s
}
