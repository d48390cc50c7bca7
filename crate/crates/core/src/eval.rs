//! Beat-by-beat comparison of detected R-peaks against reference annotations.
//!
//! Detections and annotations are 1-based sample indices. A detection matches
//! an annotation when they are at most `tol` samples apart; each one may be
//! used in at most one pair.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecg::RPeakList;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchStrategy {
    /// Earliest-first sweep. Maximises the number of pairs.
    #[default]
    Greedy,
    /// Maximises the number of pairs, then minimises total displacement.
    Optimal,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct MatchResult {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `(detected, reference)` index pairs in increasing order.
    pub pairs: Vec<(usize, usize)>,
}

/// Converts a tolerance in milliseconds to whole samples (rounded down).
pub fn tolerance_samples(tol_ms: f64, fs: f64) -> usize {
    (tol_ms * fs / 1000.0 + 1e-9).floor().max(0.0) as usize
}

fn check_sorted(name: &str, xs: &[usize]) -> Result<()> {
    if let Some(w) = xs.windows(2).find(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!(
            "{name} peaks must be strictly increasing ({} then {})",
            w[0], w[1]
        )));
    }
    Ok(())
}

pub fn match_peaks(
    detected: &[usize],
    reference: &[usize],
    tol: usize,
    strategy: MatchStrategy,
) -> Result<MatchResult> {
    check_sorted("detected", detected)?;
    check_sorted("reference", reference)?;
    let pairs = match strategy {
        MatchStrategy::Greedy => greedy_pairs(detected, reference, tol),
        MatchStrategy::Optimal => optimal_pairs(detected, reference, tol),
    };
    Ok(MatchResult {
        tp: pairs.len(),
        fp: detected.len() - pairs.len(),
        fn_: reference.len() - pairs.len(),
        pairs,
    })
}

fn greedy_pairs(det: &[usize], refs: &[usize], tol: usize) -> Vec<(usize, usize)> {
    let (mut i, mut j) = (0, 0);
    let mut pairs = Vec::new();
    while i < det.len() && j < refs.len() {
        let (d, r) = (det[i], refs[j]);
        if d + tol < r {
            i += 1;
        } else if r + tol < d {
            j += 1;
        } else {
            pairs.push((d, r));
            i += 1;
            j += 1;
        }
    }
    pairs
}

fn optimal_pairs(det: &[usize], refs: &[usize], tol: usize) -> Vec<(usize, usize)> {
    // No pair can straddle a gap wider than `tol` in the merged sequence, so
    // each cluster between such gaps is solved on its own.
    let mut pairs = Vec::new();
    let (mut i0, mut j0) = (0, 0);
    while i0 < det.len() || j0 < refs.len() {
        let (mut i1, mut j1) = (i0, j0);
        let mut last: Option<usize> = None;
        loop {
            let next_d = det.get(i1).copied();
            let next_r = refs.get(j1).copied();
            let take_det = match (next_d, next_r) {
                (Some(d), Some(r)) => d <= r,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let x = if take_det { next_d.unwrap() } else { next_r.unwrap() };
            if last.is_some_and(|l| x > l + tol) {
                break;
            }
            last = Some(x);
            if take_det {
                i1 += 1;
            } else {
                j1 += 1;
            }
        }
        pairs.extend(cluster_pairs(&det[i0..i1], &refs[j0..j1], tol));
        i0 = i1;
        j0 = j1;
    }
    pairs
}

fn cluster_pairs(det: &[usize], refs: &[usize], tol: usize) -> Vec<(usize, usize)> {
    if det.is_empty() || refs.is_empty() {
        return Vec::new();
    }
    let (n, m) = (det.len(), refs.len());
    // score = (pairs, −displacement), compared lexicographically
    let mut best = vec![vec![(0usize, 0i64); m + 1]; n + 1];
    for i in 1..=n {
        for j in 1..=m {
            let mut s = best[i - 1][j].max(best[i][j - 1]);
            let dist = det[i - 1].abs_diff(refs[j - 1]);
            if dist <= tol {
                let (p, neg) = best[i - 1][j - 1];
                s = s.max((p + 1, neg - dist as i64));
            }
            best[i][j] = s;
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        if best[i][j] == best[i - 1][j] {
            i -= 1;
        } else if best[i][j] == best[i][j - 1] {
            j -= 1;
        } else {
            out.push((det[i - 1], refs[j - 1]));
            i -= 1;
            j -= 1;
        }
    }
    out.reverse();
    out
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| 100.0 * num as f64 / den as f64)
}

/// Sensitivity `TP / (TP + FN)` in percent.
pub fn sensitivity(tp: usize, fn_: usize) -> Option<f64> {
    ratio(tp, tp + fn_)
}

/// Positive predictivity `TP / (TP + FP)` in percent.
pub fn ppr(tp: usize, fp: usize) -> Option<f64> {
    ratio(tp, tp + fp)
}

/// Detection error rate `(FP + FN) / (TP + FN)` in percent.
pub fn der(tp: usize, fp: usize, fn_: usize) -> Option<f64> {
    ratio(fp + fn_, tp + fn_)
}

/// Renders `100·num/den` truncated (not rounded) to two decimals.
///
/// Whole numbers print without decimals and an undefined ratio prints as `—`.
///
/// ```
/// use gccd::eval::format_percent;
/// assert_eq!(format_percent(2, 3), "66.66");
/// assert_eq!(format_percent(5, 5), "100");
/// assert_eq!(format_percent(0, 0), "—");
/// ```
pub fn format_percent(num: usize, den: usize) -> String {
    if den == 0 {
        return "—".to_string();
    }
    let hundredths = 10_000u128 * num as u128 / den as u128;
    if hundredths % 100 == 0 && 10_000u128 * num as u128 % den as u128 == 0 {
        format!("{}", hundredths / 100)
    } else {
        format!("{}.{:02}", hundredths / 100, hundredths % 100)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub record_id: String,
    pub total_beats: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub sen: Option<f64>,
    pub ppr: Option<f64>,
    pub der: Option<f64>,
}

impl MetricsRow {
    /// A row whose beat total is the number of reference beats, `TP + FN`.
    pub fn from_counts(record_id: impl Into<String>, tp: usize, fp: usize, fn_: usize) -> Self {
        MetricsRow {
            record_id: record_id.into(),
            total_beats: tp + fn_,
            tp,
            fp,
            fn_,
            sen: sensitivity(tp, fn_),
            ppr: ppr(tp, fp),
            der: der(tp, fp, fn_),
        }
    }

    pub fn from_match(record_id: impl Into<String>, m: &MatchResult) -> Self {
        Self::from_counts(record_id, m.tp, m.fp, m.fn_)
    }

    pub fn sen_text(&self) -> String {
        format_percent(self.tp, self.tp + self.fn_)
    }

    pub fn ppr_text(&self) -> String {
        format_percent(self.tp, self.tp + self.fp)
    }

    pub fn der_text(&self) -> String {
        format_percent(self.fp + self.fn_, self.tp + self.fn_)
    }
}

/// Pools counts over records and recomputes the metrics from the sums.
pub fn aggregate(rows: &[MetricsRow]) -> MetricsRow {
    let mut total = MetricsRow::from_counts(
        "Total",
        rows.iter().map(|r| r.tp).sum(),
        rows.iter().map(|r| r.fp).sum(),
        rows.iter().map(|r| r.fn_).sum(),
    );
    total.total_beats = rows.iter().map(|r| r.total_beats).sum();
    total
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub records: Vec<MetricsRow>,
    pub total: MetricsRow,
}

impl Report {
    pub fn new(records: Vec<MetricsRow>) -> Self {
        let total = aggregate(&records);
        Report { records, total }
    }

    pub fn to_text(&self) -> String {
        let header = [
            "Record", "Total beats", "TP", "FP", "FN", "Sen (%)", "PPR (%)", "DER (%)",
        ];
        let mut lines: Vec<[String; 8]> = vec![header.map(String::from)];
        for r in self.records.iter().chain(std::iter::once(&self.total)) {
            lines.push([
                r.record_id.clone(),
                r.total_beats.to_string(),
                r.tp.to_string(),
                r.fp.to_string(),
                r.fn_.to_string(),
                r.sen_text(),
                r.ppr_text(),
                r.der_text(),
            ]);
        }
        let mut widths = [0usize; 8];
        for l in &lines {
            for (w, cell) in widths.iter_mut().zip(l) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let mut out = String::new();
        for l in &lines {
            let mut row = String::new();
            for (c, (cell, w)) in l.iter().zip(widths).enumerate() {
                let pad = w - cell.chars().count();
                if c == 0 {
                    row.push_str(cell);
                    row.push_str(&" ".repeat(pad));
                } else {
                    row.push_str("  ");
                    row.push_str(&" ".repeat(pad));
                    row.push_str(cell);
                }
            }
            let _ = writeln!(out, "{}", row.trim_end());
        }
        out
    }
}

/// Parses one 1-based sample index per line. Blank lines and `#` comments
/// are skipped.
pub fn parse_annotations(text: &str) -> Result<RPeakList> {
    let mut peaks = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let idx: usize = line
            .parse()
            .map_err(|_| Error::parse(i + 1, format!("expected a sample index, found `{line}`")))?;
        if idx == 0 {
            return Err(Error::parse(i + 1, "sample indices start at 1"));
        }
        if peaks.last().is_some_and(|&p| idx <= p) {
            return Err(Error::parse(i + 1, "annotations must be strictly increasing"));
        }
        peaks.push(idx);
    }
    RPeakList::new(peaks)
}

pub fn load_annotations(path: &Path) -> Result<RPeakList> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn greedy_example() {
        let m = match_peaks(&[100, 205, 400], &[102, 300, 398], 3, MatchStrategy::Greedy).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (2, 1, 1));
        assert_eq!(m.pairs, vec![(100, 102), (400, 398)]);
    }

    #[test]
    fn greedy_beats_nearest_first() {
        let m = match_peaks(&[3, 6], &[5, 9], 3, MatchStrategy::Greedy).unwrap();
        assert_eq!(m.tp, 2);
    }

    #[test]
    fn optimal_prefers_small_displacement() {
        let m = match_peaks(&[10], &[7, 11], 3, MatchStrategy::Optimal).unwrap();
        assert_eq!(m.pairs, vec![(10, 11)]);
        let g = match_peaks(&[10], &[7, 11], 3, MatchStrategy::Greedy).unwrap();
        assert_eq!(g.tp, 1);
    }

    #[test]
    fn unsorted_is_rejected() {
        assert!(match_peaks(&[5, 3], &[1], 1, MatchStrategy::Greedy).is_err());
        assert!(match_peaks(&[1], &[2, 2], 1, MatchStrategy::Optimal).is_err());
    }

    #[test]
    fn empty_inputs() {
        let m = match_peaks(&[], &[1, 2], 5, MatchStrategy::Greedy).unwrap();
        assert_eq!((m.tp, m.fp, m.fn_), (0, 0, 2));
        let row = MetricsRow::from_match("x", &match_peaks(&[], &[], 5, MatchStrategy::Greedy).unwrap());
        assert_eq!(row.sen, None);
        assert_eq!(row.sen_text(), "—");
    }

    #[test]
    fn truncation_not_rounding() {
        // 2 FP + 3 FN over 2091 beats is 0.2391...; 1 - 1/401 is 99.750...
        assert_eq!(format_percent(5, 2091), "0.23");
        assert_eq!(format_percent(2, 3), "66.66");
        assert_eq!(format_percent(1, 1), "100");
        assert_eq!(format_percent(0, 7), "0");
    }

    #[test]
    fn aggregate_pools_counts() {
        let rows = vec![
            MetricsRow::from_counts("a", 9, 1, 0),
            MetricsRow::from_counts("b", 1, 0, 9),
        ];
        let t = aggregate(&rows);
        assert_eq!((t.tp, t.fp, t.fn_, t.total_beats), (10, 1, 9, 19));
        assert_eq!(t.sen_text(), "52.63");
    }

    #[test]
    fn report_text_layout() {
        let r = Report::new(vec![MetricsRow::from_counts("100", 2273, 0, 0)]);
        let text = r.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("Record"));
        assert!(lines[0].ends_with("DER (%)"));
        assert!(lines[1].starts_with("100"));
        let cells: Vec<&str> = lines[1].split_whitespace().collect();
        assert_eq!(cells, ["100", "2273", "2273", "0", "0", "100", "100", "0"]);
        assert!(lines[2].starts_with("Total"));
    }

    #[test]
    fn annotations_parse() {
        assert!(parse_annotations("").unwrap().is_empty());
        assert_eq!(parse_annotations("3\n\n7 # beat\n").unwrap().as_slice(), &[3, 7]);
        assert!(matches!(parse_annotations("3\n2"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_annotations("x"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_annotations("0").is_err());
    }
}
