//! Information-plane tables built from layer traces: coordinates
//! `(I(X;Z), I(Z;Y))` per layer and epoch, an optional per-layer horizontal
//! offset for plotting, and fitting/compression phase labels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::flownib::LayerTrace;
use crate::{Error, Result};

pub const DEFAULT_WINDOW: usize = 5;
pub const DEFAULT_SLOPE_TOL: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanePoint {
    pub layer: usize,
    pub epoch: usize,
    /// `I(X;Z)`, shifted by `layer * offset`.
    pub x: f64,
    /// `I(Z;Y)`.
    pub y: f64,
    pub alpha: f64,
}

/// Exports raw or normalized coordinates; the offset only shifts exported x
/// values.
pub fn export_plane(traces: &[LayerTrace], layer_offset: f64, normalized: bool) -> Result<Vec<PlanePoint>> {
    if traces.is_empty() {
        return Err(Error::NoTraces);
    }
    let mut out = Vec::new();
    for t in traces {
        let shift = t.layer as f64 * layer_offset;
        for r in &t.records {
            let (x, y) = if normalized {
                (r.i_xz_norm, r.i_zy_norm)
            } else {
                (r.i_xz_raw, r.i_zy_raw)
            };
            out.push(PlanePoint {
                layer: t.layer,
                epoch: r.epoch,
                x: x + shift,
                y,
                alpha: r.alpha,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Fitting,
    Compression,
    Unlabeled,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Fitting => "fitting",
            Phase::Compression => "compression",
            Phase::Unlabeled => "unlabeled",
        })
    }
}

/// A run of consecutive epochs `start..=end` sharing one label.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLabel {
    pub start: usize,
    pub end: usize,
    pub label: Phase,
}

/// Least-squares slope of `ys` over a centered window around each index,
/// clipped at the series ends.
pub fn windowed_slopes(ys: &[f64], window: usize) -> Vec<f64> {
    let n = ys.len();
    let half = window / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n).max(lo + 2).min(n);
            let lo = lo.min(hi.saturating_sub(2));
            let xs = lo..hi;
            let k = xs.len() as f64;
            let mx = xs.clone().map(|x| x as f64).sum::<f64>() / k;
            let my = ys[xs.clone()].iter().sum::<f64>() / k;
            let (mut sxy, mut sxx) = (0.0, 0.0);
            for x in xs {
                let dx = x as f64 - mx;
                sxy += dx * (ys[x] - my);
                sxx += dx * dx;
            }
            sxy / sxx
        })
        .collect()
}

/// Per-epoch labels for one trace.
pub fn label_epochs(trace: &LayerTrace, window: usize, tol: f64) -> Result<Vec<Phase>> {
    let len = trace.records.len();
    if window == 0 {
        return Err(Error::InvalidInput("window must be >= 1".into()));
    }
    if len < 2 * window || len < 2 {
        return Err(Error::TraceTooShort {
            len,
            needed: (2 * window).max(2),
        });
    }
    let xz: Vec<f64> = trace.records.iter().map(|r| r.i_xz_raw).collect();
    let zy: Vec<f64> = trace.records.iter().map(|r| r.i_zy_raw).collect();
    let (sx, sy) = (windowed_slopes(&xz, window), windowed_slopes(&zy, window));
    Ok(sx
        .iter()
        .zip(&sy)
        .map(|(&a, &b)| {
            if a > tol && b > tol {
                Phase::Fitting
            } else if a < -tol && b >= -tol {
                Phase::Compression
            } else {
                Phase::Unlabeled
            }
        })
        .collect())
}

/// Merges per-epoch labels into contiguous ranges that cover every epoch once.
pub fn detect_phases(trace: &LayerTrace, window: usize) -> Result<Vec<PhaseLabel>> {
    detect_phases_with_tol(trace, window, DEFAULT_SLOPE_TOL)
}

pub fn detect_phases_with_tol(trace: &LayerTrace, window: usize, tol: f64) -> Result<Vec<PhaseLabel>> {
    let labels = label_epochs(trace, window, tol)?;
    let epochs: Vec<usize> = trace.records.iter().map(|r| r.epoch).collect();
    let mut out: Vec<PhaseLabel> = Vec::new();
    for (i, &label) in labels.iter().enumerate() {
        match out.last_mut() {
            Some(last) if last.label == label => last.end = epochs[i],
            _ => out.push(PhaseLabel {
                start: epochs[i],
                end: epochs[i],
                label,
            }),
        }
    }
    Ok(out)
}

/// Label of `epoch` within a partition.
pub fn phase_of(labels: &[PhaseLabel], epoch: usize) -> Option<Phase> {
    labels
        .iter()
        .find(|l| l.start <= epoch && epoch <= l.end)
        .map(|l| l.label)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MicScore {
    #[default]
    Min,
    HarmonicMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MicRecord {
    pub layer: usize,
    pub i_xz_norm: f64,
    pub i_zy_norm: f64,
    pub mic_score: f64,
}

/// Scalar summary of a coordinate pair; negative estimates count as zero.
pub fn mic_score(a: f64, b: f64, kind: MicScore) -> f64 {
    let (a, b) = (a.max(0.0), b.max(0.0));
    match kind {
        MicScore::Min => a.min(b),
        MicScore::HarmonicMean if a + b > 0.0 => 2.0 * a * b / (a + b),
        MicScore::HarmonicMean => 0.0,
    }
}

/// Final-epoch normalized pair and score per layer.
pub fn mic_summary(traces: &[LayerTrace], kind: MicScore) -> Result<Vec<MicRecord>> {
    if traces.is_empty() {
        return Err(Error::NoTraces);
    }
    traces
        .iter()
        .map(|t| {
            let r = t.records.last().ok_or(Error::TraceTooShort { len: 0, needed: 1 })?;
            Ok(MicRecord {
                layer: t.layer,
                i_xz_norm: r.i_xz_norm,
                i_zy_norm: r.i_zy_norm,
                mic_score: mic_score(r.i_xz_norm, r.i_zy_norm, kind),
            })
        })
        .collect()
}

/// A plane point with its phase label, ready for CSV or JSONL.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaneRow {
    pub layer: usize,
    pub epoch: usize,
    pub x: f64,
    pub y: f64,
    pub alpha: f64,
    pub phase: Phase,
}

/// Plane points joined with phase labels. Traces too short for the window
/// are exported as unlabeled.
pub fn plane_rows(
    traces: &[LayerTrace],
    layer_offset: f64,
    normalized: bool,
    window: usize,
) -> Result<Vec<PlaneRow>> {
    let points = export_plane(traces, layer_offset, normalized)?;
    let mut phases = Vec::with_capacity(traces.len());
    for t in traces {
        let p = match detect_phases(t, window) {
            Ok(p) => p,
            Err(Error::TraceTooShort { .. }) => Vec::new(),
            Err(e) => return Err(e),
        };
        phases.push((t.layer, p));
    }
    Ok(points
        .into_iter()
        .map(|p| {
            let phase = phases
                .iter()
                .find(|(l, _)| *l == p.layer)
                .and_then(|(_, ph)| phase_of(ph, p.epoch))
                .unwrap_or(Phase::Unlabeled);
            PlaneRow {
                layer: p.layer,
                epoch: p.epoch,
                x: p.x,
                y: p.y,
                alpha: p.alpha,
                phase,
            }
        })
        .collect())
}

pub const CSV_HEADER: &str = "layer,epoch,x,y,alpha,phase";

pub fn rows_to_csv(rows: &[PlaneRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.layer, r.epoch, r.x, r.y, r.alpha, r.phase
        ));
    }
    out
}

pub fn rows_to_jsonl(rows: &[PlaneRow]) -> Result<String> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flownib::EpochRecord;

    fn trace(layer: usize, xz: impl Fn(f64) -> f64, zy: impl Fn(f64) -> f64, n: usize) -> LayerTrace {
        LayerTrace {
            layer,
            records: (0..n)
                .map(|e| {
                    let (a, b) = (xz(e as f64), zy(e as f64));
                    EpochRecord {
                        epoch: e,
                        alpha: 1.0,
                        i_xz_raw: a,
                        i_zy_raw: b,
                        i_xz_norm: a / 4.0,
                        i_zy_norm: b,
                        d_eff_z: 2.0,
                        d_eff_y: 1.0,
                        loss: -a / 4.0,
                    }
                })
                .collect(),
        }
    }

    #[test]
    fn offset_examples() {
        let ts = vec![trace(0, |_| 1.0, |_| 0.5, 3), trace(3, |_| 1.0, |_| 0.5, 3)];
        let pts = export_plane(&ts, 0.05, false).unwrap();
        assert_eq!(pts[0].x, 1.0);
        assert!((pts[3].x - 1.15).abs() < 1e-12);
        assert_eq!(pts[3].y, 0.5);
        assert!(matches!(export_plane(&[], 0.05, false), Err(Error::NoTraces)));
        assert_eq!(Error::NoTraces.to_string(), "no traces");
        let norm = export_plane(&ts, 0.0, true).unwrap();
        assert_eq!(norm[0].x, 0.25);
    }

    #[test]
    fn phase_examples() {
        let up = trace(0, |e| 0.1 * e, |e| 0.05 * e + 0.01, 20);
        let p = detect_phases(&up, 5).unwrap();
        assert_eq!(p, vec![PhaseLabel { start: 0, end: 19, label: Phase::Fitting }]);

        let comp = trace(0, |e| 1.0 - 0.01 * e, |e| 0.01 * e, 20);
        assert_eq!(detect_phases(&comp, 5).unwrap()[0].label, Phase::Compression);
        assert_eq!(detect_phases(&comp, 5).unwrap().len(), 1);

        let flat = trace(0, |_| 0.3, |_| 0.3, 20);
        assert_eq!(detect_phases(&flat, 5).unwrap()[0].label, Phase::Unlabeled);

        let short = trace(0, |_| 0.3, |_| 0.3, 9);
        assert!(matches!(detect_phases(&short, 5), Err(Error::TraceTooShort { .. })));
    }

    #[test]
    fn slopes_of_a_line_are_exact() {
        let ys: Vec<f64> = (0..12).map(|i| 3.0 - 0.5 * i as f64).collect();
        for w in [1, 2, 3, 5, 12] {
            for s in windowed_slopes(&ys, w) {
                assert!((s + 0.5).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mic_examples() {
        assert_eq!(mic_score(0.2, 0.4, MicScore::Min), 0.2);
        assert_eq!(mic_score(0.0, 7.0, MicScore::Min), 0.0);
        assert_eq!(mic_score(-0.1, 7.0, MicScore::Min), 0.0);
        assert_eq!(mic_score(0.31, 0.31, MicScore::Min), 0.31);
        assert!((mic_score(0.31, 0.31, MicScore::HarmonicMean) - 0.31).abs() < 1e-15);
        let s = mic_summary(&[trace(2, |_| 0.8, |_| 0.4, 3)], MicScore::Min).unwrap();
        assert_eq!(s[0].layer, 2);
        assert_eq!(s[0].mic_score, 0.2);
    }

    #[test]
    fn csv_columns() {
        let rows = plane_rows(&[trace(0, |e| e, |e| e, 12)], 0.0, false, 5).unwrap();
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with("layer,epoch,x,y,alpha,phase\n0,0,0,0,1,fitting\n"));
        assert_eq!(rows_to_jsonl(&rows).unwrap().lines().count(), 12);
    }
}
