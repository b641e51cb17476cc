//! Dataset-level fitting and evaluation, parallel over frames.

use std::collections::HashMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assignment::{hungarian_assign, matching_cost, resample_lane, ResampledLane2D};
use crate::camera::{project_points, Lane2D};
use crate::datagen::FrameRecord;
use crate::error::{Error, Result};
use crate::fitting::{
    fit_2d_projective, fit_3d, fit_perspective_baseline, ipm_init, CurveModel, FitConfig, FitReport,
};
use crate::geometry::DecoupledLane3D;
use crate::io::{PredictionRecord, ScoredLane2D};
use crate::losses::{height_variance_reg, LossConfig};
use crate::metrics::{
    cd_error_parts, f1_suite, row_anchors, tusimple_accuracy, EvalConfig, EvalReport,
    TuSimpleResult,
};
use crate::par::Execution;

/// Points per projected or baseline 2D lane.
pub const LANE_2D_SAMPLES: usize = 72;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FitMode {
    /// Image-only refinement from a flat-ground warm start.
    #[serde(rename = "2d")]
    TwoD,
    /// Refinement with 3D labels.
    #[serde(rename = "3d")]
    ThreeD,
    /// Polynomial `u(v)` in the image.
    #[serde(rename = "perspective-baseline")]
    PerspectiveBaseline,
}

impl FromStr for FitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2d" => Ok(FitMode::TwoD),
            "3d" => Ok(FitMode::ThreeD),
            "perspective-baseline" => Ok(FitMode::PerspectiveBaseline),
            _ => Err(Error::InvalidParameter(format!(
                "mode must be 2d, 3d or perspective-baseline, got {s:?}"
            ))),
        }
    }
}

/// A ground-truth lane that produced no prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedLane {
    pub frame_id: String,
    pub lane: usize,
    pub reason: Error,
}

/// Final loss terms of one refined lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneFitSummary {
    pub frame_id: String,
    pub lane: usize,
    pub l_per: f64,
    pub l_v: f64,
    pub l_bev: f64,
    pub l_h: f64,
    pub l_z: f64,
    pub sigma_h: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub predictions: Vec<PredictionRecord>,
    pub skipped: Vec<SkippedLane>,
    /// One entry per refined lane (empty for the perspective baseline).
    pub summaries: Vec<LaneFitSummary>,
}

/// Lanes that cannot be fitted (outside the image, too few usable points)
/// are skipped; non-finite objectives abort.
fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NoOverlap
            | Error::DegenerateLane(_)
            | Error::DegenerateInput(_)
            | Error::RankDeficient { .. }
    )
}

enum Fitted {
    Lane3D(DecoupledLane3D, Box<LaneFitSummary>),
    Lane2D(ScoredLane2D),
}

fn summarize(frame: &FrameRecord, lane: usize, r: FitReport) -> Fitted {
    let l = &r.final_loss;
    let summary = LaneFitSummary {
        frame_id: frame.id.clone(),
        lane,
        l_per: l.l_per,
        l_v: l.l_v,
        l_bev: l.l_bev,
        l_h: l.l_h,
        l_z: l.l_z,
        sigma_h: height_variance_reg(&r.lane.profile.heights).0,
        objective: r.objective,
        iterations: r.iterations,
        converged: r.converged,
    };
    Fitted::Lane3D(r.lane, Box::new(summary))
}

fn fit_lane(
    frame: &FrameRecord,
    i: usize,
    mode: FitMode,
    fit: &FitConfig,
    loss: &LossConfig,
) -> Result<Fitted> {
    let gt2d = &frame.lanes_2d[i];
    let k = &frame.intrinsics;
    match mode {
        FitMode::ThreeD => {
            let gt3d = frame.lanes_3d.get(i).ok_or_else(|| {
                Error::DegenerateInput(format!("frame {:?} has no 3D label for lane {i}", frame.id))
            })?;
            let r = fit_3d(gt2d, gt3d, k, frame.image, fit, loss)?;
            Ok(summarize(frame, i, r))
        }
        FitMode::TwoD => {
            let init = ipm_init(gt2d, k, fit)?;
            let r = fit_2d_projective(gt2d, k, frame.image, &init, fit, loss)?;
            Ok(summarize(frame, i, r))
        }
        FitMode::PerspectiveBaseline => {
            let order = match fit.curve {
                CurveModel::Poly(o) => o,
                CurveModel::Bezier => 3,
            };
            let p = fit_perspective_baseline(gt2d, order)?;
            Ok(Fitted::Lane2D(ScoredLane2D {
                points: p.to_lane(LANE_2D_SAMPLES).points,
                score: 1.0,
            }))
        }
    }
}

/// Fits every ground-truth lane of every frame.
pub fn fit_frames(
    frames: &[FrameRecord],
    mode: FitMode,
    fit: &FitConfig,
    loss: &LossConfig,
    exec: Execution,
) -> Result<FitOutcome> {
    fit.validate()?;
    let per_frame = exec.map(
        frames,
        |frame| -> Result<(PredictionRecord, Vec<SkippedLane>, Vec<LaneFitSummary>)> {
            let mut rec = PredictionRecord {
                frame_id: frame.id.clone(),
                lanes_3d: Vec::new(),
                lanes_2d: Vec::new(),
            };
            let mut skipped = Vec::new();
            let mut summaries = Vec::new();
            for i in 0..frame.lanes_2d.len() {
                match fit_lane(frame, i, mode, fit, loss) {
                    Ok(Fitted::Lane3D(lane, summary)) => {
                        rec.lanes_3d.push(lane);
                        summaries.push(*summary);
                    }
                    Ok(Fitted::Lane2D(lane)) => rec.lanes_2d.push(lane),
                    Err(e) if recoverable(&e) => skipped.push(SkippedLane {
                        frame_id: frame.id.clone(),
                        lane: i,
                        reason: e,
                    }),
                    Err(e) => return Err(e),
                }
            }
            Ok((rec, skipped, summaries))
        },
    );
    let mut out = FitOutcome {
        predictions: Vec::with_capacity(frames.len()),
        skipped: Vec::new(),
        summaries: Vec::new(),
    };
    for r in per_frame {
        let (rec, skipped, summaries) = r?;
        out.predictions.push(rec);
        out.skipped.extend(skipped);
        out.summaries.extend(summaries);
    }
    Ok(out)
}

/// Image polyline of a decoupled lane.
pub fn project_lane_3d(lane: &DecoupledLane3D, frame: &FrameRecord) -> Result<Lane2D> {
    project_points(&frame.intrinsics, &lane.sample(LANE_2D_SAMPLES))
}

/// Replaces 3D lanes by their projections.
pub fn project_predictions(
    frames: &[FrameRecord],
    preds: &[PredictionRecord],
) -> Result<Vec<PredictionRecord>> {
    let by_id: HashMap<&str, &FrameRecord> = frames.iter().map(|f| (f.id.as_str(), f)).collect();
    preds
        .iter()
        .map(|p| {
            let frame = by_id.get(p.frame_id.as_str()).ok_or_else(|| {
                Error::InvalidParameter(format!("unknown frame id {:?}", p.frame_id))
            })?;
            let mut lanes_2d = p.lanes_2d.clone();
            for l in &p.lanes_3d {
                lanes_2d.push(ScoredLane2D {
                    points: project_lane_3d(l, frame)?.points,
                    score: l.score,
                });
            }
            Ok(PredictionRecord {
                frame_id: p.frame_id.clone(),
                lanes_3d: Vec::new(),
                lanes_2d,
            })
        })
        .collect()
}

struct FrameEval {
    counts: Vec<(usize, usize, usize)>,
    tusimple: TuSimpleResult,
    cd: (f64, usize),
    predictions: usize,
    ground_truths: usize,
}

fn resample_or_none(lane: &Lane2D, frame: &FrameRecord, step: f64) -> Option<ResampledLane2D> {
    resample_lane(lane, frame.image, step).ok()
}

fn evaluate_frame(
    frame: &FrameRecord,
    lanes_2d: &[Lane2D],
    lanes_3d: &[DecoupledLane3D],
    cfg: &EvalConfig,
    loss: &LossConfig,
) -> Result<FrameEval> {
    let suite = f1_suite(lanes_2d, &frame.lanes_2d, frame.image, cfg)?;
    let anchors = row_anchors(frame.image, cfg.tusimple_row_step);
    let tusimple = tusimple_accuracy(lanes_2d, &frame.lanes_2d, &anchors, cfg)?;
    let mut cd = (0.0, 0);
    if !lanes_3d.is_empty() && !frame.lanes_3d.is_empty() {
        let projected = lanes_3d
            .iter()
            .map(|l| project_lane_3d(l, frame))
            .collect::<Result<Vec<_>>>()?;
        let p: Vec<_> = projected
            .iter()
            .map(|l| resample_or_none(l, frame, loss.row_step))
            .collect();
        let g: Vec<_> = frame
            .lanes_2d
            .iter()
            .map(|l| resample_or_none(l, frame, loss.row_step))
            .collect();
        let costs = p
            .iter()
            .map(|p| {
                g.iter()
                    .map(|g| match (p, g) {
                        (Some(p), Some(g)) => matching_cost(p, g),
                        _ => Ok(f64::INFINITY),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let matches = hungarian_assign(&costs, loss.match_threshold)?;
        cd = cd_error_parts(lanes_3d, &frame.lanes_3d, &matches)?;
    }
    Ok(FrameEval {
        counts: suite
            .per_threshold
            .iter()
            .map(|c| (c.tp, c.fp, c.fn_))
            .collect(),
        tusimple,
        cd,
        predictions: lanes_2d.len(),
        ground_truths: frame.lanes_2d.len(),
    })
}

/// Evaluates predictions against every frame. Frames without a prediction
/// record count as having no predicted lanes. Predictions given only in 3D
/// are projected for the image metrics; the chamfer error uses 3D lanes
/// matched to ground truth in the image.
pub fn evaluate(
    frames: &[FrameRecord],
    preds: &[PredictionRecord],
    cfg: &EvalConfig,
    loss: &LossConfig,
    exec: Execution,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut by_id: HashMap<&str, Vec<&PredictionRecord>> = HashMap::new();
    for p in preds {
        by_id.entry(p.frame_id.as_str()).or_default().push(p);
    }
    if let Some(p) = preds
        .iter()
        .find(|p| !frames.iter().any(|f| f.id == p.frame_id))
    {
        return Err(Error::InvalidParameter(format!(
            "unknown frame id {:?}",
            p.frame_id
        )));
    }
    let results = exec.map(frames, |frame| -> Result<FrameEval> {
        let recs = by_id.get(frame.id.as_str()).cloned().unwrap_or_default();
        let lanes_3d: Vec<DecoupledLane3D> = recs
            .iter()
            .flat_map(|r| r.lanes_3d.iter().cloned())
            .collect();
        let mut lanes_2d = Vec::new();
        for r in &recs {
            for l in &r.lanes_2d {
                lanes_2d.push(l.lane()?);
            }
            for l in &r.lanes_3d {
                lanes_2d.push(project_lane_3d(l, frame)?);
            }
        }
        evaluate_frame(frame, &lanes_2d, &lanes_3d, cfg, loss)
    });
    let n = cfg.iou_thresholds.len();
    let mut totals = vec![(0usize, 0usize, 0usize); n];
    let mut tus = Vec::with_capacity(frames.len());
    let (mut cd_sum, mut cd_n) = (0.0, 0usize);
    let (mut np, mut ng) = (0, 0);
    for r in results {
        let r = r?;
        for (t, c) in totals.iter_mut().zip(&r.counts) {
            t.0 += c.0;
            t.1 += c.1;
            t.2 += c.2;
        }
        tus.push(r.tusimple);
        cd_sum += r.cd.0;
        cd_n += r.cd.1;
        np += r.predictions;
        ng += r.ground_truths;
    }
    let cd = (cd_n > 0).then(|| cd_sum / cd_n as f64);
    Ok(EvalReport::from_totals(
        frames.len(),
        np,
        ng,
        &cfg.iou_thresholds,
        &totals,
        &TuSimpleResult::aggregate(&tus),
        cd,
    ))
}
