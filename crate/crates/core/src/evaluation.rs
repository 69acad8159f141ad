//! Scoring of estimator submissions against ground truth.
//!
//! Coverage uses closed intervals, `lower ≤ truth ≤ upper`, so a
//! zero-width interval sitting exactly on the truth counts as covering.
//!
//! Submission layout mirrors the challenge tree:
//!
//! ```text
//! <sub>/<family>/<bits>/<r>.att.csv    att,att_lower,att_upper   (1 row)
//! <sub>/<family>/<bits>/<r>.cate.csv   cate,cate_lower,cate_upper (n rows, optional)
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::csvio::{self, fmt_f64};
use crate::dgp::ErrorFamily;
use crate::engine::{self, DgpCode, GroundTruth, SettingBits, GROUND_TRUTH_FILE};
use crate::error::{Error, Result};

pub const ATT_HEADER: [&str; 3] = ["att", "att_lower", "att_upper"];
pub const CATE_HEADER: [&str; 3] = ["cate", "cate_lower", "cate_upper"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttEstimate {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
}

impl AttEstimate {
    pub fn new(point: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(lower <= upper) {
            return Err(Error::InvertedInterval { lower, upper });
        }
        Ok(Self { point, lower, upper })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CateEstimate {
    pub point: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl CateEstimate {
    pub fn new(point: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        for (what, v) in [("cate_lower", &lower), ("cate_upper", &upper)] {
            if v.len() != point.len() {
                return Err(Error::LengthMismatch {
                    what,
                    expected: point.len(),
                    found: v.len(),
                });
            }
        }
        if let Some((l, u)) = lower.iter().zip(&upper).find(|(l, u)| !(l <= u)) {
            return Err(Error::InvertedInterval { lower: *l, upper: *u });
        }
        Ok(Self { point, lower, upper })
    }

    pub fn n(&self) -> usize {
        self.point.len()
    }
}

fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::LengthMismatch { what, expected, found });
    }
    Ok(())
}

/// Mean of `alpha` over treated units.
pub fn true_att(alpha: &[f64], z: &[u8]) -> Result<f64> {
    check_len("z", alpha.len(), z.len())?;
    let (sum, count) = alpha
        .iter()
        .zip(z)
        .filter(|(_, &zi)| zi == 1)
        .fold((0.0, 0usize), |(s, c), (a, _)| (s + a, c + 1));
    if count == 0 {
        return Err(Error::NoTreatedUnits);
    }
    Ok(sum / count as f64)
}

/// √(mean((τ̂ − τ)²)), also known as PEHE.
pub fn rmse_cate(estimate: &[f64], alpha: &[f64]) -> Result<f64> {
    check_len("cate estimate", alpha.len(), estimate.len())?;
    let ss: f64 = estimate.iter().zip(alpha).map(|(e, a)| (e - a) * (e - a)).sum();
    Ok((ss / alpha.len() as f64).sqrt())
}

pub fn rmse_att(estimate: f64, truth: f64) -> f64 {
    (estimate - truth).abs()
}

pub fn interval_covers(lower: f64, upper: f64, truth: f64) -> Result<bool> {
    if !(lower <= upper) {
        return Err(Error::InvertedInterval { lower, upper });
    }
    Ok(lower <= truth && truth <= upper)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    Att,
    Cate,
    /// CATE coverage restricted to treated units.
    Catt,
}

/// One replicate's submission plus the treatment vector it was scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateSubmission {
    pub replicate_id: u32,
    pub z: Vec<u8>,
    pub att: AttEstimate,
    pub cate: Option<CateEstimate>,
}

fn unit_coverage(cate: &CateEstimate, alpha: &[f64], z: Option<&[u8]>) -> Result<f64> {
    check_len("cate estimate", alpha.len(), cate.n())?;
    let mut covered = 0usize;
    let mut count = 0usize;
    for i in 0..alpha.len() {
        if z.is_some_and(|z| z[i] != 1) {
            continue;
        }
        count += 1;
        covered += interval_covers(cate.lower[i], cate.upper[i], alpha[i])? as usize;
    }
    if count == 0 {
        return Err(Error::NoTreatedUnits);
    }
    Ok(covered as f64 / count as f64)
}

/// Average coverage over replicates in the requested mode.
pub fn coverage_summary(replicates: &[ReplicateSubmission], alpha: &[f64], mode: CoverageMode) -> Result<f64> {
    if replicates.is_empty() {
        return Err(Error::Validation("coverage needs at least one replicate".into()));
    }
    let mut total = 0.0;
    for rep in replicates {
        check_len("z", alpha.len(), rep.z.len())?;
        total += match mode {
            CoverageMode::Att => {
                let truth = true_att(alpha, &rep.z)?;
                f64::from(u8::from(interval_covers(rep.att.lower, rep.att.upper, truth)?))
            }
            CoverageMode::Cate | CoverageMode::Catt => {
                let cate = rep.cate.as_ref().ok_or_else(|| {
                    Error::Validation(format!("replicate {} has no CATE estimate", rep.replicate_id))
                })?;
                let z = (mode == CoverageMode::Catt).then_some(rep.z.as_slice());
                unit_coverage(cate, alpha, z)?
            }
        };
    }
    Ok(total / replicates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CateMetrics {
    pub rmse_cate: f64,
    pub cover_cate: f64,
    pub cover_catt: f64,
    pub mean_interval_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReplicateMetrics {
    pub replicate_id: u32,
    pub true_att: f64,
    pub att_estimate: f64,
    pub rmse_att: f64,
    pub att_covered: bool,
    pub att_interval_length: f64,
    pub cate: Option<CateMetrics>,
}

pub fn score_replicate(sub: &ReplicateSubmission, alpha: &[f64]) -> Result<ReplicateMetrics> {
    let truth = true_att(alpha, &sub.z)?;
    let cate = match &sub.cate {
        None => None,
        Some(c) => Some(CateMetrics {
            rmse_cate: rmse_cate(&c.point, alpha)?,
            cover_cate: unit_coverage(c, alpha, None)?,
            cover_catt: unit_coverage(c, alpha, Some(&sub.z))?,
            mean_interval_length: c.upper.iter().zip(&c.lower).map(|(u, l)| u - l).sum::<f64>() / c.n() as f64,
        }),
    };
    Ok(ReplicateMetrics {
        replicate_id: sub.replicate_id,
        true_att: truth,
        att_estimate: sub.att.point,
        rmse_att: rmse_att(sub.att.point, truth),
        att_covered: interval_covers(sub.att.lower, sub.att.upper, truth)?,
        att_interval_length: sub.att.upper - sub.att.lower,
        cate,
    })
}

/// Aggregate metrics for one DGP. CATE fields are `None` when no replicate
/// supplied a CATE file; otherwise they average over replicates that did.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpReport {
    pub code: DgpCode,
    pub replicates: usize,
    pub rmse_att: f64,
    pub cover_att: f64,
    pub mean_att_interval_length: f64,
    pub cate_replicates: usize,
    pub rmse_cate: Option<f64>,
    pub cover_cate: Option<f64>,
    pub cover_catt: Option<f64>,
    pub mean_cate_interval_length: Option<f64>,
    /// Heteroskedastic truth is the additive τ(x), which differs from the
    /// originally distributed files.
    pub corrected_truth: bool,
    pub detail: Vec<ReplicateMetrics>,
}

/// Deterministic fold of per-replicate rows (sorted by replicate id).
pub fn aggregate_report(code: DgpCode, rows: &[ReplicateMetrics]) -> Result<DgpReport> {
    if rows.is_empty() {
        return Err(Error::Validation(format!("{code}: no scored replicates")));
    }
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.replicate_id);
    let m = rows.len() as f64;
    let mean = |f: &dyn Fn(&ReplicateMetrics) -> f64| rows.iter().map(f).sum::<f64>() / m;
    let cates: Vec<CateMetrics> = rows.iter().filter_map(|r| r.cate).collect();
    let cmean = |f: &dyn Fn(&CateMetrics) -> f64| {
        (!cates.is_empty()).then(|| cates.iter().map(f).sum::<f64>() / cates.len() as f64)
    };
    Ok(DgpReport {
        code,
        replicates: rows.len(),
        rmse_att: mean(&|r| r.rmse_att),
        cover_att: mean(&|r| f64::from(u8::from(r.att_covered))),
        mean_att_interval_length: mean(&|r| r.att_interval_length),
        cate_replicates: cates.len(),
        rmse_cate: cmean(&|c| c.rmse_cate),
        cover_cate: cmean(&|c| c.cover_cate),
        cover_catt: cmean(&|c| c.cover_catt),
        mean_cate_interval_length: cmean(&|c| c.mean_interval_length),
        corrected_truth: code.family == ErrorFamily::Heteroskedastic,
        detail: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub dgps: Vec<DgpReport>,
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

impl EvaluationReport {
    pub const METRIC_COLUMNS: [&'static str; 12] = [
        "family",
        "bits",
        "replicates",
        "rmse_att",
        "rmse_cate",
        "cover_att",
        "cover_cate",
        "cover_catt",
        "mean_att_interval_length",
        "mean_cate_interval_length",
        "cate_replicates",
        "corrected_truth",
    ];

    /// One row per DGP; missing CATE metrics are empty cells.
    pub fn metrics_csv(&self) -> String {
        let mut out = Self::METRIC_COLUMNS.join(",");
        out.push('\n');
        for d in &self.dgps {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                d.code.family,
                d.code.bits,
                d.replicates,
                fmt_f64(d.rmse_att),
                opt(d.rmse_cate),
                fmt_f64(d.cover_att),
                opt(d.cover_cate),
                opt(d.cover_catt),
                fmt_f64(d.mean_att_interval_length),
                opt(d.mean_cate_interval_length),
                d.cate_replicates,
                d.corrected_truth
            );
        }
        out
    }

    pub fn detail_csv(&self) -> String {
        let mut out = String::from(
            "family,bits,replicate,true_att,att_estimate,rmse_att,att_covered,att_interval_length,rmse_cate,cover_cate,cover_catt,cate_interval_length\n",
        );
        for d in &self.dgps {
            for r in &d.detail {
                let c = r.cate;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    d.code.family,
                    d.code.bits,
                    r.replicate_id,
                    fmt_f64(r.true_att),
                    fmt_f64(r.att_estimate),
                    fmt_f64(r.rmse_att),
                    u8::from(r.att_covered),
                    fmt_f64(r.att_interval_length),
                    opt(c.map(|c| c.rmse_cate)),
                    opt(c.map(|c| c.cover_cate)),
                    opt(c.map(|c| c.cover_catt)),
                    opt(c.map(|c| c.mean_interval_length)),
                );
            }
        }
        out
    }

    /// Plot-ready long format: family,bits,metric,value.
    pub fn long_csv(&self) -> String {
        let mut out = String::from("family,bits,metric,value\n");
        for d in &self.dgps {
            let metrics = [
                ("rmse_att", Some(d.rmse_att)),
                ("rmse_cate", d.rmse_cate),
                ("cover_att", Some(d.cover_att)),
                ("cover_cate", d.cover_cate),
                ("cover_catt", d.cover_catt),
                ("mean_att_interval_length", Some(d.mean_att_interval_length)),
                ("mean_cate_interval_length", d.mean_cate_interval_length),
            ];
            for (name, v) in metrics {
                if let Some(v) = v {
                    let _ = writeln!(out, "{},{},{name},{}", d.code.family, d.code.bits, fmt_f64(v));
                }
            }
        }
        out
    }

    pub fn render_table(&self) -> String {
        let na = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        let mut out = format!(
            "{:<20} {:>4} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9} {:>9}\n",
            "dgp", "m", "rmse_att", "rmse_cate", "cov_att", "cov_cate", "cov_catt", "len_att", "len_cate"
        );
        for d in &self.dgps {
            let flag = if d.corrected_truth { "*" } else { "" };
            let _ = writeln!(
                out,
                "{:<20} {:>4} {:>9.4} {:>9} {:>9.4} {:>9} {:>9} {:>9.4} {:>9}",
                format!("{}{flag}", d.code),
                d.replicates,
                d.rmse_att,
                na(d.rmse_cate),
                d.cover_att,
                na(d.cover_cate),
                na(d.cover_catt),
                d.mean_att_interval_length,
                na(d.mean_cate_interval_length),
            );
        }
        if self.dgps.iter().any(|d| d.corrected_truth) {
            out.push_str("* heteroskedastic truth is the additive CATE (corrected relative to the original contest files)\n");
        }
        out
    }
}

pub fn read_att_file(path: &Path) -> Result<AttEstimate> {
    let cols = csvio::read_numeric_columns(path, &ATT_HEADER)?;
    if cols[0].len() != 1 {
        return Err(Error::RowCount {
            path: path.to_path_buf(),
            expected: 1,
            found: cols[0].len(),
        });
    }
    AttEstimate::new(cols[0][0], cols[1][0], cols[2][0])
}

pub fn read_cate_file(path: &Path, n: usize) -> Result<CateEstimate> {
    let mut cols = csvio::read_numeric_columns(path, &CATE_HEADER)?;
    if cols[0].len() != n {
        return Err(Error::RowCount {
            path: path.to_path_buf(),
            expected: n,
            found: cols[0].len(),
        });
    }
    let upper = cols.pop().unwrap_or_default();
    let lower = cols.pop().unwrap_or_default();
    let point = cols.pop().unwrap_or_default();
    CateEstimate::new(point, lower, upper)
}

pub fn att_file_name(replicate_id: u32) -> String {
    format!("{replicate_id}.att.csv")
}

pub fn cate_file_name(replicate_id: u32) -> String {
    format!("{replicate_id}.cate.csv")
}

/// Writes a submission that reports the truth itself with ±`half_width`
/// intervals. Useful as a perfect-knowledge baseline.
pub fn write_oracle_submission(
    truth_root: &Path,
    submission_root: &Path,
    code: DgpCode,
    replicate_ids: &[u32],
    half_width: f64,
) -> Result<()> {
    let dir = code.folder();
    let truth = engine::read_ground_truth(&truth_root.join(&dir).join(GROUND_TRUTH_FILE))?;
    for &r in replicate_ids {
        let (z, _) = engine::read_replicate(&truth_root.join(&dir).join(format!("{r}.csv")))?;
        let att = true_att(&truth.alpha, &z)?;
        let out = submission_root.join(&dir);
        csvio::write_atomic(
            &out.join(att_file_name(r)),
            csvio::render_columns(&ATT_HEADER, &[&[att], &[att - half_width], &[att + half_width]]).as_bytes(),
        )?;
        let lo: Vec<f64> = truth.alpha.iter().map(|a| a - half_width).collect();
        let hi: Vec<f64> = truth.alpha.iter().map(|a| a + half_width).collect();
        csvio::write_atomic(
            &out.join(cate_file_name(r)),
            csvio::render_columns(&CATE_HEADER, &[&truth.alpha, &lo, &hi]).as_bytes(),
        )?;
    }
    Ok(())
}

/// What to score inside a ground-truth tree.
#[derive(Debug, Clone, Default)]
pub struct ScoreSelection {
    pub families: Option<Vec<ErrorFamily>>,
    pub settings: Option<Vec<SettingBits>>,
    pub replicate_range: Option<(u32, u32)>,
}

/// DGP folders holding a ground-truth file, in folder order.
pub fn discover_dgps(truth_root: &Path, selection: &ScoreSelection) -> Result<Vec<DgpCode>> {
    let codes: Vec<DgpCode> = DgpCode::all()
        .filter(|c| selection.families.as_ref().is_none_or(|f| f.contains(&c.family)))
        .filter(|c| selection.settings.as_ref().is_none_or(|s| s.contains(&c.bits)))
        .filter(|c| truth_root.join(c.folder()).join(GROUND_TRUTH_FILE).is_file())
        .collect();
    if codes.is_empty() {
        return Err(Error::Validation(format!(
            "no ground-truth folders matching the selection under {}",
            truth_root.display()
        )));
    }
    Ok(codes)
}

fn replicate_ids_in(dir: &Path, range: Option<(u32, u32)>) -> Result<Vec<u32>> {
    let mut ids: Vec<u32> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            name.strip_suffix(".csv")?.parse::<u32>().ok()
        })
        .filter(|id| range.is_none_or(|(lo, hi)| (lo..=hi).contains(id)))
        .collect();
    ids.sort_unstable();
    Ok(ids)
}

fn with_coords(code: DgpCode, replicate: u32) -> impl Fn(Error) -> Error {
    move |e| Error::Validation(format!("{code} replicate {replicate}: {e}"))
}

/// Scores every selected DGP/replicate of `submission_root` against `truth_root`.
pub fn score_tree(truth_root: &Path, submission_root: &Path, selection: &ScoreSelection) -> Result<EvaluationReport> {
    let codes = discover_dgps(truth_root, selection)?;
    let dgps = codes
        .into_par_iter()
        .map(|code| {
            let dir = truth_root.join(code.folder());
            let truth: GroundTruth = engine::read_ground_truth(&dir.join(GROUND_TRUTH_FILE))?;
            let ids = replicate_ids_in(&dir, selection.replicate_range)?;
            if ids.is_empty() {
                return Err(Error::Validation(format!("{code}: no replicate files to score")));
            }
            let rows: Vec<ReplicateMetrics> = ids
                .par_iter()
                .map(|&r| {
                    let wrap = with_coords(code, r);
                    let (z, _) = engine::read_replicate(&dir.join(format!("{r}.csv"))).map_err(&wrap)?;
                    if z.len() != truth.n() {
                        return Err(wrap(Error::LengthMismatch {
                            what: "replicate rows",
                            expected: truth.n(),
                            found: z.len(),
                        }));
                    }
                    let sub_dir = submission_root.join(code.folder());
                    let att_path = sub_dir.join(att_file_name(r));
                    if !att_path.is_file() {
                        return Err(wrap(Error::Validation(format!(
                            "missing ATT submission {}",
                            att_path.display()
                        ))));
                    }
                    let att = read_att_file(&att_path).map_err(&wrap)?;
                    let cate_path = sub_dir.join(cate_file_name(r));
                    let cate = if cate_path.is_file() {
                        Some(read_cate_file(&cate_path, truth.n()).map_err(&wrap)?)
                    } else {
                        None
                    };
                    let sub = ReplicateSubmission {
                        replicate_id: r,
                        z,
                        att,
                        cate,
                    };
                    score_replicate(&sub, &truth.alpha).map_err(&wrap)
                })
                .collect::<Result<_>>()?;
            aggregate_report(code, &rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport { dgps })
}
