//! Score files and the equal error rate.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::manifest::Label;

/// One scored clip. Higher scores mean "more bona fide".
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub clip_id: String,
    pub score: f64,
    pub label: Option<Label>,
}

/// Clip scores with unique ids and finite values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreFile {
    rows: Vec<ScoreRow>,
}

impl ScoreFile {
    pub fn new(rows: Vec<ScoreRow>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &rows {
            if r.clip_id.is_empty() || r.clip_id.contains(['\t', '\n', '\r']) {
                return Err(Error::Format(format!(
                    "clip id {:?} is empty or contains a tab or line break",
                    r.clip_id
                )));
            }
            if !r.score.is_finite() {
                return Err(Error::Format(format!(
                    "{}: score {} is not finite",
                    r.clip_id, r.score
                )));
            }
            if !seen.insert(r.clip_id.as_str()) {
                return Err(Error::Format(format!("duplicate clip id {:?}", r.clip_id)));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ScoreRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// `clip_id<TAB>score[<TAB>label]` lines, scores with six decimals.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&r.clip_id);
            out.push('\t');
            out.push_str(&format!("{:.6}", r.score));
            if let Some(l) = r.label {
                out.push('\t');
                out.push_str(l.as_str());
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&fields.len()) {
                return Err(bad(format!(
                    "expected 2 or 3 tab-separated fields, got {}",
                    fields.len()
                )));
            }
            let score: f64 = fields[1]
                .trim()
                .parse()
                .map_err(|_| bad(format!("score {:?} is not a number", fields[1])))?;
            let label = fields
                .get(2)
                .map(|l| l.trim().parse::<Label>())
                .transpose()
                .map_err(|e| bad(e.to_string()))?;
            rows.push(ScoreRow {
                clip_id: fields[0].to_string(),
                score,
                label,
            });
        }
        Self::new(rows)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// `(score, label)` pairs; every row must carry a label.
    pub fn labeled(&self) -> Result<Vec<(f64, Label)>> {
        self.rows
            .iter()
            .map(|r| {
                r.label
                    .map(|l| (r.score, l))
                    .ok_or_else(|| Error::Metric(format!("{} has no label", r.clip_id)))
            })
            .collect()
    }
}

/// Equal error rate and the threshold where it occurs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// Error rates when accepting scores `>= threshold` as bona fide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Spoofs accepted, over all spoofs.
    pub far: f64,
    /// Bona fide rejected, over all bona fide.
    pub frr: f64,
}

/// Operating points at every distinct score, ascending, followed by one at
/// `+inf` where everything is rejected.
pub fn operating_points(scores: &[(f64, Label)]) -> Result<Vec<OperatingPoint>> {
    let n_bona = scores.iter().filter(|(_, l)| *l == Label::Bonafide).count();
    let n_spoof = scores.len() - n_bona;
    if n_bona == 0 || n_spoof == 0 {
        return Err(Error::Metric(format!(
            "need both classes, got {n_bona} bona fide and {n_spoof} spoof scores"
        )));
    }
    if let Some((s, _)) = scores.iter().find(|(s, _)| !s.is_finite()) {
        return Err(Error::Metric(format!("score {s} is not finite")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut points = Vec::new();
    // counts strictly below the current threshold
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].0;
        points.push(OperatingPoint {
            threshold: tau,
            far: (n_spoof - spoof_below) as f64 / n_spoof as f64,
            frr: bona_below as f64 / n_bona as f64,
        });
        while i < sorted.len() && sorted[i].0 == tau {
            match sorted[i].1 {
                Label::Bonafide => bona_below += 1,
                Label::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// Where false acceptance and false rejection meet along the threshold
/// sweep, linearly interpolated between the two bracketing operating points.
///
/// The threshold of an interpolated crossing is interpolated the same way;
/// when the upper bracket is the `+inf` point, the highest score is reported.
pub fn compute_eer(scores: &[(f64, Label)]) -> Result<Eer> {
    let points = operating_points(scores)?;
    // FRR - FAR rises from -1 at the lowest threshold to +1 at +inf
    let i = points
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("the +inf operating point has frr > far");
    let hi = points[i];
    if hi.frr == hi.far || i == 0 {
        return Ok(Eer {
            eer: hi.far,
            threshold: hi.threshold,
        });
    }
    let lo = points[i - 1];
    let (d_lo, d_hi) = (lo.frr - lo.far, hi.frr - hi.far);
    let t = -d_lo / (d_hi - d_lo);
    let eer = lo.far + t * (hi.far - lo.far);
    let threshold = if hi.threshold.is_finite() {
        lo.threshold + t * (hi.threshold - lo.threshold)
    } else {
        lo.threshold
    };
    Ok(Eer { eer, threshold })
}
