//! CSV ingestion and the machine-readable outputs of the CLI.
//!
//! Output files start with one `#` comment line carrying the seed and the
//! config digest. Floats are written in shortest round-trip form, so files
//! read back bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{Dataset, Uncertainty, UncertaintyMode};
use crate::posterior::{SurfaceDraws, SurfaceSummary};
use crate::sampler::moves::MoveKind;
use crate::sampler::{AcceptanceStats, ChainOutput};
use crate::simulation::{MetricAggregate, MetricsReport, ReplicateResult};

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stamp {
    pub seed: u64,
    pub config_sha256: String,
}

impl Stamp {
    /// The `#` comment line that opens every output file.
    pub fn line(&self) -> String {
        format!(
            "# seed={} config_sha256={}\n",
            self.seed, self.config_sha256
        )
    }
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path)
        .map_err(|e| Error::Parse(format!("cannot open {}: {e}", path.display())))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn parse_cell(path: &Path, row: usize, col: &str, raw: &str) -> Result<f64> {
    if raw.is_empty() {
        return Err(Error::Parse(format!(
            "{}: missing value at row {row}, column '{col}'",
            path.display()
        )));
    }
    raw.parse().map_err(|_| {
        Error::Parse(format!(
            "{}: non-numeric value '{raw}' at row {row}, column '{col}'",
            path.display()
        ))
    })
}

/// Positions of the exposure columns `x_1..x_T`, in time order.
fn exposure_columns(path: &Path, header: &csv::StringRecord) -> Result<Vec<usize>> {
    let mut cols: Vec<(usize, usize)> = header
        .iter()
        .enumerate()
        .filter_map(|(pos, name)| {
            name.strip_prefix("x_")
                .and_then(|s| s.parse::<usize>().ok())
                .map(|t| (t, pos))
        })
        .collect();
    if cols.is_empty() {
        return Err(Error::Parse(format!(
            "{}: no exposure columns x_1..x_T",
            path.display()
        )));
    }
    cols.sort();
    if cols.iter().enumerate().any(|(k, (t, _))| *t != k + 1) {
        let found: Vec<String> = cols.iter().map(|(t, _)| format!("x_{t}")).collect();
        return Err(Error::Parse(format!(
            "{}: non-contiguous exposure columns ({})",
            path.display(),
            found.join(", ")
        )));
    }
    Ok(cols.into_iter().map(|(_, pos)| pos).collect())
}

/// Read an `n × T` block with columns `x_1..x_T`.
fn read_exposure_block(path: &Path, n: usize, n_times: usize) -> Result<Vec<f64>> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    let cols = exposure_columns(path, &header)?;
    if cols.len() != n_times {
        return Err(Error::Parse(format!(
            "{}: has {} exposure columns, data has {n_times}",
            path.display(),
            cols.len()
        )));
    }
    let mut out = Vec::with_capacity(n * n_times);
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for &c in &cols {
            out.push(parse_cell(
                path,
                r + 1,
                &header[c],
                rec.get(c).unwrap_or(""),
            )?);
        }
        rows += 1;
    }
    if rows != n {
        return Err(Error::Parse(format!(
            "{}: has {rows} rows, data has {n}",
            path.display()
        )));
    }
    Ok(out)
}

fn companion(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Load a dataset: column `y`, exposure columns `x_1..x_T`, and every
/// other column as a covariate (an intercept column is prepended).
///
/// Uncertainty modes read `<path>.se.csv` (per-cell standard errors) or
/// every `<path>.draws/<k>.csv` (exposure realisations, in numeric order).
pub fn load_dataset(path: &Path, mode: UncertaintyMode) -> Result<Dataset> {
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers()?.clone();
    let y_col = header
        .iter()
        .position(|h| h == "y")
        .ok_or_else(|| Error::Parse(format!("{}: missing column 'y'", path.display())))?;
    let x_cols = exposure_columns(path, &header)?;
    let z_cols: Vec<usize> = (0..header.len())
        .filter(|c| *c != y_col && !x_cols.contains(c))
        .collect();
    let n_times = x_cols.len();
    let p = z_cols.len() + 1;

    let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let row = r + 1;
        let cell = |c: usize| parse_cell(path, row, &header[c], rec.get(c).unwrap_or(""));
        y.push(cell(y_col)?);
        for &c in &x_cols {
            x.push(cell(c)?);
        }
        z.push(1.0);
        for &c in &z_cols {
            z.push(cell(c)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    let data = Dataset::from_flat(y, x, n_times, z, p)?;

    match mode {
        UncertaintyMode::None => Ok(data),
        UncertaintyMode::PerCellSe => {
            let se_path = companion(path, ".se.csv");
            let se = read_exposure_block(&se_path, n, n_times)?;
            if let Some(k) = se.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::Parse(format!(
                    "{}: standard error {} at row {}, column 'x_{}' must be > 0",
                    se_path.display(),
                    se[k],
                    k / n_times + 1,
                    k % n_times + 1
                )));
            }
            data.with_uncertainty(Uncertainty::StdErrors(se))
        }
        UncertaintyMode::EmpiricalCdf => {
            let dir = companion(path, ".draws");
            let mut files: Vec<(u64, PathBuf)> = fs::read_dir(&dir)
                .map_err(|e| Error::Parse(format!("cannot read {}: {e}", dir.display())))?
                .filter_map(|entry| {
                    let p = entry.ok()?.path();
                    let k = p
                        .file_name()?
                        .to_str()?
                        .strip_suffix(".csv")?
                        .parse::<u64>()
                        .ok()?;
                    Some((k, p))
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Parse(format!(
                    "{}: no exposure draw files <k>.csv",
                    dir.display()
                )));
            }
            let draws = files
                .iter()
                .map(|(_, p)| read_exposure_block(p, n, n_times))
                .collect::<Result<Vec<_>>>()?;
            data.with_uncertainty(Uncertainty::Draws(draws))
        }
    }
}

/// Write a dataset in the layout [`load_dataset`] reads. The intercept
/// column is dropped.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut s = String::from("y");
    for t in 1..=data.n_times() {
        write!(s, ",x_{t}").unwrap();
    }
    for k in 1..data.n_covariates() {
        write!(s, ",z_{k}").unwrap();
    }
    s.push('\n');
    for i in 0..data.n() {
        write!(s, "{}", data.y()[i]).unwrap();
        for v in data.exposure_row(i) {
            write!(s, ",{v}").unwrap();
        }
        for v in &data.covariate_row(i)[1..] {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_draws(path: &Path, stamp: &Stamp, draws: &SurfaceDraws) -> Result<()> {
    let mut s = stamp.line();
    writeln!(s, "# x0={}", draws.x0).unwrap();
    s.push_str("draw,t,x_grid,value\n");
    for d in 0..draws.n_draws() {
        for t in 1..=draws.n_times {
            for (k, x) in draws.grid_x.iter().enumerate() {
                writeln!(s, "{},{t},{x},{}", d + 1, draws.at(d, t, k)).unwrap();
            }
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// Read a long-format draws file written by [`write_draws`].
pub fn read_draws(path: &Path) -> Result<SurfaceDraws> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Parse(format!("cannot read {}: {e}", path.display())))?;
    let bad = |msg: String| Error::Parse(format!("{}: {msg}", path.display()));
    let x0 = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.trim_start_matches('#').trim().strip_prefix("x0="))
        .map_or(Ok(f64::NAN), |v| {
            v.parse::<f64>().map_err(|_| bad(format!("bad x0 '{v}'")))
        })?;

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    let expected = ["draw", "t", "x_grid", "value"];
    if header.iter().ne(expected.iter().copied()) {
        return Err(bad(format!("expected header {}", expected.join(","))));
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let row = r + 1;
        let get = |c: usize| parse_cell(path, row, expected[c], rec.get(c).unwrap_or(""));
        let (d, t, x, v) = (get(0)?, get(1)?, get(2)?, get(3)?);
        if d < 1.0 || d.fract() != 0.0 || t < 1.0 || t.fract() != 0.0 {
            return Err(bad(format!(
                "row {row}: draw and t must be positive integers"
            )));
        }
        rows.push((d as usize, t as usize, x, v));
    }
    if rows.is_empty() {
        return Err(bad("no draws".into()));
    }
    let mut grid_x: Vec<f64> = rows.iter().map(|r| r.2).collect();
    grid_x.sort_by(f64::total_cmp);
    grid_x.dedup();
    let n_times = rows.iter().map(|r| r.1).max().unwrap_or(0);
    let n_draws = rows.iter().map(|r| r.0).max().unwrap_or(0);
    let cells = grid_x.len() * n_times;
    if rows.len() != n_draws * cells {
        return Err(bad(format!(
            "expected {} rows for {n_draws} draws × {n_times} times × {} grid values, found {}",
            n_draws * cells,
            grid_x.len(),
            rows.len()
        )));
    }
    let mut values = vec![f64::NAN; n_draws * cells];
    let mut seen = vec![false; n_draws * cells];
    for (row, &(d, t, x, v)) in rows.iter().enumerate() {
        let k = grid_x
            .binary_search_by(|g| g.total_cmp(&x))
            .expect("value is in grid");
        let idx = (d - 1) * cells + (t - 1) * grid_x.len() + k;
        if std::mem::replace(&mut seen[idx], true) {
            return Err(bad(format!(
                "row {}: duplicate entry for draw {d}, t {t}, x {x}",
                row + 1
            )));
        }
        values[idx] = v;
    }
    let mut draws = SurfaceDraws::new(grid_x, n_times, x0);
    for d in 0..n_draws {
        draws.push(&values[d * cells..(d + 1) * cells]);
    }
    Ok(draws)
}

pub fn write_summary(path: &Path, stamp: &Stamp, summary: &SurfaceSummary) -> Result<()> {
    let pct = format!("{}", (summary.level * 100.0 * 1e6).round() / 1e6);
    let mut s = stamp.line();
    writeln!(s, "t,x_grid,mean,lo{pct},hi{pct}").unwrap();
    for t in 1..=summary.n_times {
        for (k, x) in summary.grid_x.iter().enumerate() {
            let c = summary.index(t, k);
            writeln!(
                s,
                "{t},{x},{},{},{}",
                summary.mean[c], summary.lo[c], summary.hi[c]
            )
            .unwrap();
        }
    }
    fs::write(path, s)?;
    Ok(())
}

/// One row per week with a 0/1 flag.
pub fn write_windows(path: &Path, stamp: &Stamp, n_times: usize, windows: &[usize]) -> Result<()> {
    let mut s = stamp.line();
    s.push_str("week,flagged\n");
    for t in 1..=n_times {
        writeln!(s, "{t},{}", u8::from(windows.contains(&t))).unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn write_params(path: &Path, stamp: &Stamp, out: &ChainOutput) -> Result<()> {
    let p = out.gamma.first().map_or(0, Vec::len);
    let mut s = stamp.line();
    s.push_str("draw,sigma2,omega2");
    for k in 1..=p {
        write!(s, ",gamma_{k}").unwrap();
    }
    s.push('\n');
    for d in 0..out.n_draws() {
        write!(s, "{},{},{}", d + 1, out.sigma2[d], out.omega2[d]).unwrap();
        for g in &out.gamma[d] {
            write!(s, ",{g}").unwrap();
        }
        s.push('\n');
    }
    fs::write(path, s)?;
    Ok(())
}

/// `key=value` run record: seed, digest, config echo and acceptance rates.
pub fn write_meta(
    path: &Path,
    stamp: &Stamp,
    config_echo: &str,
    acceptance: &AcceptanceStats,
    n_draws: usize,
) -> Result<()> {
    let mut s = String::new();
    writeln!(s, "seed={}", stamp.seed).unwrap();
    writeln!(s, "config_sha256={}", stamp.config_sha256).unwrap();
    writeln!(s, "version={}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(s, "retained_draws={n_draws}").unwrap();
    for kind in MoveKind::ALL {
        let i = kind.index();
        writeln!(
            s,
            "acceptance_{}={} ({}/{})",
            kind.name(),
            acceptance.rate(kind),
            acceptance.accepted[i],
            acceptance.proposed[i]
        )
        .unwrap();
    }
    for line in config_echo.lines() {
        writeln!(s, "config.{line}").unwrap();
    }
    fs::write(path, s)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Per-replicate metric rows followed by one aggregate row holding means
/// (in the metric columns) and standard errors (in the `_se` columns).
pub fn write_metrics(
    path: &Path,
    stamp: &Stamp,
    results: &[(usize, u64, Result<ReplicateResult>)],
    aggregate: &[MetricAggregate; 8],
) -> Result<()> {
    let fields = MetricsReport::FIELDS;
    let mut s = stamp.line();
    s.push_str("replicate,seed,status,windows");
    for f in fields {
        write!(s, ",{f}").unwrap();
    }
    for f in fields {
        write!(s, ",{f}_se").unwrap();
    }
    s.push_str(",error\n");
    let blanks = ",".repeat(fields.len());
    for (r, seed, res) in results {
        match res {
            Ok(rep) => {
                let weeks: Vec<String> = rep.windows.iter().map(|w| w.to_string()).collect();
                write!(s, "{r},{seed},ok,{}", weeks.join(" ")).unwrap();
                for v in rep.metrics.values() {
                    write!(s, ",{}", opt(v)).unwrap();
                }
                writeln!(s, "{blanks},").unwrap();
            }
            Err(e) => {
                let msg = e.to_string().replace(['"', '\n', ','], " ");
                writeln!(s, "{r},{seed},failed,{blanks}{blanks},{msg}").unwrap();
            }
        }
    }
    s.push_str("aggregate,,,");
    for a in aggregate {
        write!(s, ",{}", opt(a.mean)).unwrap();
    }
    for a in aggregate {
        write!(s, ",{}", opt(a.se)).unwrap();
    }
    s.push_str(",\n");
    fs::write(path, s)?;
    Ok(())
}
