//! Score aggregation and table/CSV rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::matching::{Counts, Prf};
use super::DEFAULT_TOLERANCE_SEC;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Averaging {
    /// Scores from counts summed over videos.
    #[default]
    Micro,
    /// Mean of per-video scores.
    Macro,
}

impl Averaging {
    pub fn as_str(self) -> &'static str {
        match self {
            Averaging::Micro => "micro",
            Averaging::Macro => "macro",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "macro" => Ok(Averaging::Macro),
            _ => Err(Error::Config(format!("averaging must be micro or macro, got {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub counts: Counts,
    /// Ground-truth onsets of the video.
    pub truth_onsets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub subject: String,
    pub tolerance_sec: f64,
    pub averaging: Averaging,
    pub videos: Vec<VideoScore>,
}

impl EvalReport {
    pub fn totals(&self) -> Counts {
        self.videos.iter().map(|v| v.counts).sum()
    }

    pub fn aggregate(&self) -> Prf {
        match self.averaging {
            Averaging::Micro => self.totals().prf(),
            Averaging::Macro => {
                if self.videos.is_empty() {
                    return Prf { precision: 0.0, recall: 0.0, f: 0.0 };
                }
                let n = self.videos.len() as f64;
                let scores: Vec<Prf> = self.videos.iter().map(|v| v.counts.prf()).collect();
                Prf {
                    precision: scores.iter().map(|s| s.precision).sum::<f64>() / n,
                    recall: scores.iter().map(|s| s.recall).sum::<f64>() / n,
                    f: scores.iter().map(|s| s.f).sum::<f64>() / n,
                }
            }
        }
    }
}

/// Published f-scores (fractions) for two splits and their average; shown
/// for comparison only, never recomputed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReferenceRow {
    pub method: &'static str,
    pub split1: f64,
    pub split2: f64,
    pub average: f64,
}

pub const REFERENCE_LABEL: &str = "published reference";

pub const REFERENCE_ROWS: [ReferenceRow; 4] = [
    ReferenceRow { method: "informed random baseline", split1: 0.274, split2: 0.196, average: 0.235 },
    ReferenceRow { method: "audio-only SuperFlux", split1: 0.828, split2: 0.813, average: 0.821 },
    ReferenceRow { method: "audio-only CNN", split1: 0.943, split2: 0.921, average: 0.932 },
    ReferenceRow { method: "visual-based 3D CNN", split1: 0.263, split2: 0.250, average: 0.257 },
];

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedReport {
    pub text: String,
    pub csv: String,
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Text table (percent, one decimal) and CSV
/// `method,video_id,tp,fp,fn,precision,recall,f` (fractions) with the same rows.
pub fn render_report(reports: &[EvalReport], include_reference: bool) -> RenderedReport {
    let tol = reports.first().map_or(DEFAULT_TOLERANCE_SEC, |r| r.tolerance_sec);
    let mut text = String::new();
    let mut csv = String::from("method,video_id,tp,fp,fn,precision,recall,f\n");
    writeln!(text, "F-scores in % at {:.0} ms tolerance", tol * 1000.0).unwrap();
    writeln!(
        text,
        "{:<32} {:<20} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
        "method", "video", "tp", "fp", "fn", "P", "R", "F"
    )
    .unwrap();
    for r in reports {
        let mut row = |video: &str, c: Option<Counts>, s: Prf| {
            let (tp, fp, fn_) = c.map_or((String::new(), String::new(), String::new()), |c| {
                (c.tp.to_string(), c.fp.to_string(), c.fn_.to_string())
            });
            writeln!(
                text,
                "{:<32} {:<20} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}",
                r.method,
                video,
                tp,
                fp,
                fn_,
                pct(s.precision),
                pct(s.recall),
                pct(s.f)
            )
            .unwrap();
            writeln!(csv, "{},{video},{tp},{fp},{fn_},{},{},{}", r.method, s.precision, s.recall, s.f).unwrap();
        };
        for v in &r.videos {
            row(&v.video_id, Some(v.counts), v.counts.prf());
        }
        let label = format!("{} ({})", r.subject, r.averaging.as_str());
        let totals = match r.averaging {
            Averaging::Micro => Some(r.totals()),
            Averaging::Macro => None,
        };
        row(&label, totals, r.aggregate());
    }
    if include_reference {
        writeln!(text).unwrap();
        writeln!(text, "{:<32} {:>8} {:>8} {:>8}", REFERENCE_LABEL, "split 1", "split 2", "average").unwrap();
        for row in REFERENCE_ROWS {
            writeln!(
                text,
                "{:<32} {:>8} {:>8} {:>8}",
                row.method,
                pct(row.split1),
                pct(row.split2),
                pct(row.average)
            )
            .unwrap();
            for (col, f) in [("split 1", row.split1), ("split 2", row.split2), ("average", row.average)] {
                writeln!(csv, "{REFERENCE_LABEL}: {},{col},,,,,,{f}", row.method).unwrap();
            }
        }
    }
    RenderedReport { text, csv }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(averaging: Averaging) -> EvalReport {
        EvalReport {
            method: "visual".into(),
            subject: "s1".into(),
            tolerance_sec: 0.05,
            averaging,
            videos: vec![
                VideoScore { video_id: "a".into(), counts: Counts { tp: 3, fp: 1, fn_: 0 }, truth_onsets: 3 },
                VideoScore { video_id: "b".into(), counts: Counts { tp: 1, fp: 0, fn_: 3 }, truth_onsets: 4 },
            ],
        }
    }

    #[test]
    fn micro_and_macro() {
        let micro = report(Averaging::Micro).aggregate();
        assert_eq!((micro.precision, micro.recall), (0.8, 4.0 / 7.0));
        let macro_ = report(Averaging::Macro).aggregate();
        assert!((macro_.precision - (0.75 + 1.0) / 2.0).abs() < 1e-12);
        assert!((macro_.recall - (1.0 + 0.25) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn reference_rows_are_exact() {
        let out = render_report(&[], true);
        for line in [
            "informed random baseline",
            "27.4     19.6     23.5",
            "82.8     81.3     82.1",
            "94.3     92.1     93.2",
            "26.3     25.0     25.7",
        ] {
            assert!(out.text.contains(line), "missing {line:?} in\n{}", out.text);
        }
        assert!(out.text.contains(REFERENCE_LABEL));
        assert_eq!(out.csv.lines().count(), 1 + 12);
    }

    #[test]
    fn header_only_without_rows() {
        let out = render_report(&[], false);
        assert_eq!(out.text.lines().count(), 2);
        assert_eq!(out.csv.lines().count(), 1);
    }

    #[test]
    fn text_and_csv_agree() {
        let out = render_report(&[report(Averaging::Micro)], true);
        let text_rows: Vec<&str> = out.text.lines().skip(2).take(3).collect();
        let csv_rows: Vec<&str> = out.csv.lines().skip(1).take(3).collect();
        for (t, c) in text_rows.iter().zip(&csv_rows) {
            let fields: Vec<&str> = c.split(',').collect();
            let cols: Vec<&str> = t.split_whitespace().collect();
            let n = cols.len();
            for (k, f) in fields[5..8].iter().enumerate() {
                let v: f64 = f.parse().unwrap();
                assert_eq!(pct(v), cols[n - 3 + k]);
            }
            assert_eq!(&cols[n - 6..n - 3], &fields[2..5]);
        }
        for line in out.csv.lines().filter(|l| l.starts_with(REFERENCE_LABEL)) {
            let f: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
            assert!(out.text.contains(&pct(f)));
        }
    }
}
