//! Machine-readable outputs: evaluation JSON, loss CSV and P5 heatmaps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use vqflow_core::score::{auroc, AnomalyMap, EvalReport};
use vqflow_core::train::TraceRow;

use crate::error::{self, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapInfo {
    pub height: usize,
    pub width: usize,
    /// Score range mapped onto 0..=255 in the P5 file.
    pub min: f64,
    pub max: f64,
    /// Relative to the report, when maps were dumped.
    pub file: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: u32,
    pub class_id: u32,
    pub anomalous: bool,
    pub score: f64,
    pub map: MapInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: u32,
    pub samples: usize,
    /// Absent when the class has only one label in the test split.
    pub detection_auroc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub detection_auroc: f64,
    pub localization_auroc: Option<f64>,
    pub density: String,
    pub image_score: String,
    pub per_class: Vec<ClassEntry>,
    pub prototype_usage: Vec<u64>,
    pub pattern_usage: Vec<Vec<u64>>,
    pub samples: Vec<SampleEntry>,
}

impl ReportJson {
    /// `map_files[i]` names the P5 file of sample `i`, if written.
    pub fn new(r: &EvalReport, density: &str, image_score: &str, map_files: &[Option<String>]) -> Self {
        let mut classes: Vec<u32> = r.scores.iter().map(|s| s.class_id).collect();
        classes.sort_unstable();
        classes.dedup();
        let per_class = classes
            .into_iter()
            .map(|c| {
                let (scores, labels): (Vec<f64>, Vec<bool>) =
                    r.scores.iter().filter(|s| s.class_id == c).map(|s| (s.score, s.anomalous)).unzip();
                ClassEntry { class_id: c, samples: scores.len(), detection_auroc: auroc(&scores, &labels).ok() }
            })
            .collect();
        let samples = r
            .scores
            .iter()
            .zip(&r.maps)
            .enumerate()
            .map(|(i, (s, m))| {
                let (min, max) = m.min_max();
                SampleEntry {
                    id: s.id,
                    class_id: s.class_id,
                    anomalous: s.anomalous,
                    score: s.score,
                    map: MapInfo {
                        height: m.height,
                        width: m.width,
                        min,
                        max,
                        file: map_files.get(i).cloned().flatten(),
                    },
                }
            })
            .collect();
        ReportJson {
            detection_auroc: r.detection_auroc,
            localization_auroc: r.localization_auroc,
            density: density.into(),
            image_score: image_score.into(),
            per_class,
            prototype_usage: r.prototype_usage.clone(),
            pattern_usage: r.pattern_usage.clone(),
            samples,
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        error::write(path, serde_json::to_string_pretty(self)?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&error::read(path)?)?)
    }
}

/// Header `step,L_f1..L_fL,L_Qcp,L_Qcsp1..L_QcspL,total`, one row per step.
pub fn loss_csv(trace: &[TraceRow], scales: usize) -> String {
    let mut s = String::from("step");
    for i in 1..=scales {
        s.push_str(&format!(",L_f{i}"));
    }
    s.push_str(",L_Qcp");
    for i in 1..=scales {
        s.push_str(&format!(",L_Qcsp{i}"));
    }
    s.push_str(",total\n");
    for row in trace {
        s.push_str(&row.step.to_string());
        for v in row.loss.flow.iter().chain([&row.loss.cpc]).chain(&row.loss.cspc) {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", row.loss.total));
    }
    s
}

/// 8-bit binary PGM, min-max normalized; a constant map is all zeros.
pub fn p5_bytes(map: &AnomalyMap) -> Vec<u8> {
    let (lo, hi) = map.min_max();
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend(map.values.iter().map(|&v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

/// `(width, height, pixels)` of an 8-bit P5 file.
pub fn parse_p5(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos, "truncated P5 header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::format(0, "not a P5 file"));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i].1.parse().map_err(|_| Error::format(fields[i].0, format!("bad P5 header field `{}`", fields[i].1)))
    };
    let (w, h, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != 255 {
        return Err(Error::format(fields[3].0, "only 8-bit P5 is supported"));
    }
    let data = &bytes[pos + 1..];
    if data.len() != w * h {
        return Err(Error::format(pos + 1, format!("P5 payload is {} bytes, header says {}", data.len(), w * h)));
    }
    Ok((w, h, data.to_vec()))
}
