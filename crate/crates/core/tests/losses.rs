mod common;

use bevlane::datagen::{generate_frame, SceneSpec};
use bevlane::fitting::{init_from_3d, FitConfig};
use bevlane::geometry::DecoupledLane3D;
use bevlane::losses::{total_loss, LossConfig, LossWeights};
use common::rng;
use rand::Rng;

fn perturbed(lane: &DecoupledLane3D, r: &mut impl Rng) -> DecoupledLane3D {
    let mut l = lane.clone();
    let mut c = l.curve.coefficients();
    c[3] += r.random_range(-0.4..0.4);
    c[2] += r.random_range(-0.01..0.01);
    l.curve = bevlane::BevCurve::from_coefficients(c);
    for h in &mut l.profile.heights {
        *h += r.random_range(-0.1..0.1);
    }
    l.profile.z_max += r.random_range(-5.0..5.0);
    l.score = r.random_range(0.05..0.95);
    l
}

#[test]
fn total_is_the_weighted_sum_of_its_terms_in_both_modes() {
    let mut r = rng(21);
    for (i, name) in ["flat", "sine", "curve", "noise"].iter().enumerate() {
        let frame = generate_frame(&SceneSpec {
            seed: i as u64,
            ..SceneSpec::preset(name).unwrap()
        })
        .unwrap();
        let cfg = FitConfig::default();
        let mut preds: Vec<DecoupledLane3D> = frame
            .lanes_3d
            .iter()
            .map(|l| perturbed(&init_from_3d(l, &cfg).unwrap(), &mut r))
            .collect();
        preds.pop();
        for (alpha, beta) in [(1.0, 1.0), (0.3, 2.5), (2.0, 0.0)] {
            let loss = LossConfig {
                weights: LossWeights { alpha, beta },
                ..LossConfig::default()
            };
            let b = total_loss(
                &preds,
                &frame.lanes_2d,
                Some(&frame.lanes_3d),
                &frame.intrinsics,
                frame.image,
                &loss,
            )
            .unwrap();
            assert!(b.has_3d);
            assert_eq!(b.l_reg, 0.0);
            assert_eq!(
                b.total,
                b.l_cls + alpha * (b.l_bev + b.l_h + b.l_z) + beta * (b.l_per + b.l_v)
            );
            assert!(b.l_bev > 0.0 && b.l_h > 0.0 && b.l_per > 0.0);

            let b = total_loss(
                &preds,
                &frame.lanes_2d,
                None,
                &frame.intrinsics,
                frame.image,
                &loss,
            )
            .unwrap();
            assert!(!b.has_3d);
            assert_eq!((b.l_bev, b.l_h, b.l_z), (0.0, 0.0, 0.0));
            assert_eq!(b.total, b.l_cls + beta * (b.l_per + b.l_v) + b.l_reg);
            assert!(b.l_reg > 0.0);
        }
    }
}
