//! Train the full policy model on a few synthetic routes and print the
//! loss history.
//!
//! cargo run --release --example train_small -- [K] [epochs]

use seqnav::dataset::{synth_route, PathShape, SceneSpec, Split};
use seqnav::learning::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let k: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(3);
    let epochs: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(15);

    let spec = SceneSpec {
        path: PathShape::SCurve { length: 25.0, amplitude: 2.0, wavelength: 25.0 },
        fps: 5.0,
        gnss_sigma: 0.3,
        image_width: 32,
        image_height: 16,
        ..Default::default()
    };
    let routes = |seeds: std::ops::Range<u64>, split| -> Result<Vec<_>, _> {
        seeds.map(|s| synth_route(&spec, s, &format!("r{s}"), split)).collect()
    };
    let train_routes = routes(0..4, Split::Train)?;
    let val_routes = routes(10..12, Split::Val)?;

    let model = PolicyModel::new(ModelConfig::default(), 0);
    let train_set = routes_samples(&train_routes, k, &model.config)?;
    let val_set = routes_samples(&val_routes, k, &model.config)?;
    println!("{} parameters, {} train / {} val samples", model.parameter_count(), train_set.len(), val_set.len());

    let cfg = TrainConfig { k, max_epochs: epochs, lr: 1e-3, ..Default::default() };
    let out = train(model, &train_set, &val_set, &cfg)?;
    for h in &out.history {
        let t = &h.train;
        println!(
            "epoch {:>3} lr {:.1e}  percep {:.4} wp {:.4} ctrl {:.4}  alpha [{:.2} {:.2} {:.2}]  val {:.4}",
            h.epoch, h.lr, t.l_percep, t.l_wp, t.l_ctrl, t.weights.0[0], t.weights.0[1], t.weights.0[2], h.val_total
        );
    }
    println!("best epoch {} (val {:.4})", out.best_epoch, out.best_val);
    Ok(())
}
