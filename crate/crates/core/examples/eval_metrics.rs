//! Segmentation IoU, depth and waypoint/control errors, plus aggregation
//! over several runs.

use seqnav::bevmap::DepthImage;
use seqnav::controller::ControlAction;
use seqnav::geodesy::LocalPoint;
use seqnav::metrics::*;
use seqnav::planner::WaypointPlan;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let pred = masks_from_labels(&[0, 0, 1, 1, 2, 2], 3);
    let truth = masks_from_labels(&[0, 1, 1, 1, 2, 0], 3);
    println!("iou {:.4}", iou(&pred, &truth, 3, IouOptions::default())?);

    let d_pred = DepthImage::new(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
    let d_true = DepthImage::new(3, 2, vec![1.5, 2.0, 2.5, f32::NAN, 5.0, 7.0])?;
    println!("depth mae {:.4}", depth_mae(&d_pred, &d_true)?);

    let line = |dx: f64| WaypointPlan::from_points(&(1..=5).map(|l| LocalPoint::new(dx * l as f64, l as f64)).collect::<Vec<_>>());
    println!("wp mae {:.4}", wp_mae(&line(0.1), &line(0.0))?);
    println!("ctrl mae {:.4}", ctrl_mae(&ControlAction::new(0.1, 0.8, 0.0), &ControlAction::new(0.0, 0.6, 0.1)));

    let runs: Vec<EvalReport> = [0.12, 0.10, 0.15]
        .iter()
        .map(|&c| {
            EvalReport::from_routes(vec![RouteMetrics {
                route: "r0".into(),
                samples: 40,
                metrics: MetricSet { iou: 0.8, depth_mae: 0.4, wp_mae: 0.3, ctrl_mae: c },
            }])
        })
        .collect();
    let agg = aggregate(&runs)?;
    println!("ctrl mae over {} runs: {:.4} ± {:.4}", agg.runs, agg.ctrl_mae.mean, agg.ctrl_mae.std);
    Ok(())
}
