//! Static SVG figures of a frame: the image plane, the bird's-eye view, or
//! the ground-height profile. Output bytes depend only on the inputs.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::camera::project_points;
use crate::datagen::FrameRecord;
use crate::geometry::Point3D;
use crate::io::PredictionRecord;

/// Samples drawn per predicted 3D lane.
const PRED_SAMPLES: usize = 72;
const BEV_SIZE: (f64, f64) = (400.0, 600.0);
const PROFILE_SIZE: (f64, f64) = (800.0, 300.0);
const MARGIN: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Perspective,
    Bev,
    Profile,
}

impl FromStr for View {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perspective" => Ok(View::Perspective),
            "bev" => Ok(View::Bev),
            "profile" => Ok(View::Profile),
            _ => Err(format!(
                "unknown view {s:?} (expected perspective, bev or profile)"
            )),
        }
    }
}

fn num(x: f64) -> String {
    let s = format!("{x:.3}");
    if s == "-0.000" {
        "0.000".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn path_data(points: &[(f64, f64)]) -> String {
    let mut d = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            d.push(' ');
        }
        let _ = write!(
            d,
            "{}{} {}",
            if i == 0 { 'M' } else { 'L' },
            num(*x),
            num(*y)
        );
    }
    d
}

/// Polylines in view coordinates, before scaling.
struct Layers {
    gt: Vec<Vec<(f64, f64)>>,
    pred: Vec<Vec<(f64, f64)>>,
}

fn pred_3d(preds: Option<&PredictionRecord>) -> Vec<Vec<Point3D>> {
    preds
        .map(|p| p.lanes_3d.iter().map(|l| l.sample(PRED_SAMPLES)).collect())
        .unwrap_or_default()
}

fn layers(frame: &FrameRecord, preds: Option<&PredictionRecord>, view: View) -> Layers {
    let plane =
        |pts: &[Point3D], f: fn(&Point3D) -> (f64, f64)| pts.iter().map(f).collect::<Vec<_>>();
    match view {
        View::Perspective => {
            let gt = frame.lanes_2d.iter().map(|l| l.points.clone()).collect();
            let pred = match preds {
                Some(p) if !p.lanes_2d.is_empty() => {
                    p.lanes_2d.iter().map(|l| l.points.clone()).collect()
                }
                _ => pred_3d(preds)
                    .iter()
                    .filter_map(|pts| project_points(&frame.intrinsics, pts).ok())
                    .map(|l| l.points)
                    .collect(),
            };
            Layers { gt, pred }
        }
        View::Bev => Layers {
            gt: frame
                .lanes_3d
                .iter()
                .map(|l| plane(l, |p| (p.x, p.z)))
                .collect(),
            pred: pred_3d(preds)
                .iter()
                .map(|l| plane(l, |p| (p.x, p.z)))
                .collect(),
        },
        View::Profile => Layers {
            gt: frame
                .lanes_3d
                .iter()
                .map(|l| plane(l, |p| (p.z, p.y)))
                .collect(),
            pred: pred_3d(preds)
                .iter()
                .map(|l| plane(l, |p| (p.z, p.y)))
                .collect(),
        },
    }
}

/// Maps data bounds onto the drawing area, preserving the aspect ratio in
/// the bird's-eye view.
struct Transform {
    sx: f64,
    sy: f64,
    x0: f64,
    y0: f64,
    flip_y: bool,
    height: f64,
}

impl Transform {
    fn fit(all: &[&(f64, f64)], size: (f64, f64), equal: bool, flip_y: bool) -> Self {
        let (mut xmin, mut xmax, mut ymin, mut ymax) = (
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for &&(x, y) in all {
            xmin = xmin.min(x);
            xmax = xmax.max(x);
            ymin = ymin.min(y);
            ymax = ymax.max(y);
        }
        if all.is_empty() {
            (xmin, xmax, ymin, ymax) = (0.0, 1.0, 0.0, 1.0);
        }
        let (wx, wy) = ((xmax - xmin).max(1e-6), (ymax - ymin).max(1e-6));
        let (aw, ah) = (size.0 - 2.0 * MARGIN, size.1 - 2.0 * MARGIN);
        let (mut sx, mut sy) = (aw / wx, ah / wy);
        if equal {
            sx = sx.min(sy);
            sy = sx;
        }
        Self {
            sx,
            sy,
            x0: xmin - (aw / sx - wx) / 2.0,
            y0: ymin - (ah / sy - wy) / 2.0,
            flip_y,
            height: size.1,
        }
    }

    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        let px = MARGIN + (x - self.x0) * self.sx;
        let py = MARGIN + (y - self.y0) * self.sy;
        (px, if self.flip_y { self.height - py } else { py })
    }
}

/// SVG document of one frame in the chosen view. Ground truth is drawn with
/// class `gt`, predictions with class `pred`.
pub fn render_svg(frame: &FrameRecord, preds: Option<&PredictionRecord>, view: View) -> String {
    let layers = layers(frame, preds, view);
    let (size, transform) = match view {
        View::Perspective => {
            let size = (frame.image.width as f64, frame.image.height as f64);
            (size, None)
        }
        View::Bev | View::Profile => {
            let size = if view == View::Bev {
                BEV_SIZE
            } else {
                PROFILE_SIZE
            };
            let all: Vec<&(f64, f64)> = layers.gt.iter().chain(&layers.pred).flatten().collect();
            (
                size,
                Some(Transform::fit(
                    &all,
                    size,
                    view == View::Bev,
                    view == View::Bev,
                )),
            )
        }
    };
    let place = |l: &Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        match &transform {
            Some(t) => l.iter().map(|&p| t.apply(p)).collect(),
            None => l.clone(),
        }
    };
    let (w, h) = (num(size.0), num(size.1));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">"
    );
    s.push_str(
        "<style>.gt{fill:none;stroke:#1b9e77;stroke-width:2}\
         .pred{fill:none;stroke:#d95f02;stroke-width:2;stroke-dasharray:6 4}\
         .frame{fill:#f7f7f7;stroke:#444}</style>\n",
    );
    s.push_str("<defs><clipPath id=\"canvas\">");
    let _ = write!(s, "<rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\"/>");
    s.push_str("</clipPath></defs>\n");
    let _ = writeln!(
        s,
        "<rect class=\"frame\" x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\"/>"
    );
    for (name, lanes) in [("gt", &layers.gt), ("pred", &layers.pred)] {
        let _ = writeln!(s, "<g id=\"{name}\" clip-path=\"url(#canvas)\">");
        for l in lanes.iter() {
            let _ = writeln!(s, "<path class=\"{name}\" d=\"{}\"/>", path_data(&place(l)));
        }
        s.push_str("</g>\n");
    }
    let label = match view {
        View::Perspective => "perspective",
        View::Bev => "bev (x right, z up)",
        View::Profile => "profile (z right, y down)",
    };
    let _ = writeln!(
        s,
        "<text x=\"6\" y=\"16\" font-family=\"monospace\" font-size=\"12\">{} {}</text>",
        escape(&frame.id),
        label
    );
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_frame, SceneSpec};

    fn paths(svg: &str, class: &str) -> Vec<Vec<(f64, f64)>> {
        let tag = format!("<path class=\"{class}\" d=\"");
        svg.lines()
            .filter_map(|l| l.strip_prefix(&tag))
            .map(|rest| {
                let d = rest.trim_end_matches("\"/>");
                d.split(['M', 'L'])
                    .filter(|s| !s.trim().is_empty())
                    .map(|p| {
                        let mut it = p.split_whitespace().map(|x| x.parse::<f64>().unwrap());
                        (it.next().unwrap(), it.next().unwrap())
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn empty_frame_is_valid_svg() {
        let spec = SceneSpec {
            lateral_offsets: vec![],
            ..SceneSpec::default()
        };
        let f = generate_frame(&spec).unwrap();
        for view in [View::Perspective, View::Bev, View::Profile] {
            let svg = render_svg(&f, None, view);
            assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
            assert!(svg.contains("<g id=\"gt\" clip-path=\"url(#canvas)\">\n</g>"));
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let f = generate_frame(&SceneSpec::preset("noise").unwrap()).unwrap();
        assert_eq!(
            render_svg(&f, None, View::Bev),
            render_svg(&f, None, View::Bev)
        );
    }

    #[test]
    fn bump_zigzags_in_image_but_not_in_bev() {
        let spec = SceneSpec {
            lateral_offsets: vec![1.75],
            ..SceneSpec::bump()
        };
        let f = generate_frame(&spec).unwrap();
        let per = &paths(&render_svg(&f, None, View::Perspective), "gt")[0];
        let dv: Vec<f64> = per.windows(2).map(|w| w[1].1 - w[0].1).collect();
        assert!(dv.iter().any(|&d| d > 0.0) && dv.iter().any(|&d| d < 0.0));
        let bev = &paths(&render_svg(&f, None, View::Bev), "gt")[0];
        assert!(bev.iter().all(|p| p.0 == bev[0].0));
        assert!(bev.windows(2).all(|w| w[1].1 < w[0].1));
    }

    #[test]
    fn view_parsing() {
        assert_eq!("bev".parse::<View>().unwrap(), View::Bev);
        assert!("top".parse::<View>().is_err());
        assert_eq!(num(-0.0001), "0.000");
    }
}
