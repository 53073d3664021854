//! Per-video average precision, corpus mAP and attention explanations.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featureio::{FeatureMatrix, HistorySegment, UserRecord};
use crate::model::ModelParams;
use crate::preference::{AttentionStrategy, PredictionTrace};
use crate::tensor::Real;

/// Frame order used for ranking: descending score, then ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .partial_cmp(&scores[i])
            .unwrap_or_else(|| scores[j].total_cmp(&scores[i]))
            .then(i.cmp(&j))
    });
    order
}

/// Mean over positives of precision at each positive's rank; `None` without positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len(), "scores and labels differ in length");
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranking(scores).iter().enumerate() {
        if labels[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAp {
    pub id: String,
    pub ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Mean AP over included videos; `None` when every video was excluded.
    pub map: Option<f64>,
    pub n_videos: usize,
    /// Videos without positive labels.
    pub n_excluded: usize,
    pub videos: Vec<VideoAp>,
}

impl EvalReport {
    pub fn from_aps(aps: Vec<(String, Option<f64>)>) -> Self {
        let n_videos = aps.len();
        let videos: Vec<VideoAp> = aps
            .into_iter()
            .filter_map(|(id, ap)| ap.map(|ap| VideoAp { id, ap }))
            .collect();
        let map = if videos.is_empty() {
            None
        } else {
            Some(videos.iter().map(|v| v.ap).sum::<f64>() / videos.len() as f64)
        };
        Self {
            map,
            n_excluded: n_videos - videos.len(),
            n_videos,
            videos,
        }
    }
}

/// Scores every video of every user as one pass with that user's history.
pub fn evaluate<F: Real>(
    params: &ModelParams<F>,
    users: &[UserRecord],
    strategy: AttentionStrategy,
) -> Result<EvalReport> {
    let jobs: Vec<(&UserRecord, usize)> = users
        .iter()
        .flat_map(|u| (0..u.videos.len()).map(move |v| (u, v)))
        .collect();
    let aps = jobs
        .par_iter()
        .map(|&(u, v)| {
            let video = &u.videos[v];
            let trace = params.predict(strategy, &video.features, &u.history)?;
            Ok((
                video.id.clone(),
                average_precision(&trace.highlight_scores(), &video.labels),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_aps(aps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWeight {
    /// History segment index.
    pub j: usize,
    pub a: f64,
}

/// Explanation of one frame's score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameExplanation {
    pub i: usize,
    pub l: f64,
    pub b: f64,
    /// Most attended history segments, strongest first.
    pub top: Vec<HistoryWeight>,
    pub qc1: f64,
    pub qc2: f64,
    /// Normalized fusion weights `(qc1, qc2) / (qc1 + qc2)`.
    pub w_user: f64,
    pub w_generic: f64,
}

/// Reduces a trace to explanations for the requested frames (all when `None`).
pub fn explain_trace(trace: &PredictionTrace, frames: Option<&[usize]>, top_m: usize) -> Result<Vec<FrameExplanation>> {
    let all: Vec<usize>;
    let frames = match frames {
        Some(f) => f,
        None => {
            all = (0..trace.frames.len()).collect();
            &all
        }
    };
    frames
        .iter()
        .map(|&i| {
            let f = trace
                .frames
                .get(i)
                .ok_or_else(|| Error::Config(format!("frame {i} out of range for {} frames", trace.frames.len())))?;
            let mut idx: Vec<usize> = (0..f.a.len()).collect();
            idx.sort_by(|&x, &y| f.a[y].partial_cmp(&f.a[x]).unwrap_or(Ordering::Equal).then(x.cmp(&y)));
            let top = idx
                .into_iter()
                .take(top_m)
                .map(|j| HistoryWeight { j, a: f.a[j] })
                .collect();
            let (w_user, w_generic) = f.fusion_weights();
            Ok(FrameExplanation {
                i,
                l: f.l,
                b: f.b,
                top,
                qc1: f.qc1,
                qc2: f.qc2,
                w_user,
                w_generic,
            })
        })
        .collect()
}

/// Scores `video` and explains the requested frames.
pub fn explain<F: Real>(
    params: &ModelParams<F>,
    strategy: AttentionStrategy,
    video: &FeatureMatrix,
    history: &[HistorySegment],
    frames: Option<&[usize]>,
    top_m: usize,
) -> Result<Vec<FrameExplanation>> {
    let trace = params.predict(strategy, video, history)?;
    explain_trace(&trace, frames, top_m)
}

pub fn explanations_to_jsonl(rows: &[FrameExplanation]) -> Result<String> {
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
    use crate::preference::FrameTrace;

    #[test]
    fn worked_example() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_excluded() {
        assert_eq!(
            average_precision(&[3.0, 2.0, 1.0, 0.0], &[true, true, false, false]),
            Some(1.0)
        );
        assert_eq!(average_precision(&[1.0, 2.0], &[false, false]), None);
    }

    #[test]
    fn ties_rank_lower_index_first() {
        assert_eq!(ranking(&[1.0, 2.0, 1.0, 2.0]), vec![1, 3, 0, 2]);
        // positive at index 1 ties with negative at 0, which ranks first
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]), Some(1.0));
    }

    #[test]
    fn report_counts_exclusions() {
        let r = EvalReport::from_aps(vec![
            ("a".into(), Some(0.5)),
            ("b".into(), None),
            ("c".into(), Some(1.0)),
        ]);
        assert_eq!((r.n_videos, r.n_excluded), (3, 1));
        assert_eq!(r.map, Some(0.75));
        let text = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&text).unwrap(), r);
        assert!(text.starts_with("{\"map\":0.75,\"n_videos\":3,\"n_excluded\":1,\"videos\":["));
    }

    #[test]
    fn explanation_clamps_top_m() {
        let trace = PredictionTrace {
            frames: vec![FrameTrace {
                i: 0,
                l: 1.0,
                b: 0.0,
                a: vec![0.2, 0.7, 0.1],
                qc1: 3.0,
                qc2: 1.0,
            }],
        };
        let e = explain_trace(&trace, None, 10).unwrap();
        let order: Vec<usize> = e[0].top.iter().map(|h| h.j).collect();
        assert_eq!(order, vec![1, 0, 2]);
        assert_eq!((e[0].w_user, e[0].w_generic), (0.75, 0.25));
        assert!(explain_trace(&trace, Some(&[1]), 3).is_err());
    }
}
