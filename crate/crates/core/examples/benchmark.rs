//! Runs the default benchmark with each single-loss removal and the Euclidean variant and
//! prints the headline metrics. Optional argument: a JSON run config.

use hyperdisc::evalmod::AblationDelta;
use hyperdisc::hypmath::Geometry;
use hyperdisc::pipeline::{self, RunConfig};

fn main() -> hyperdisc::Result<()> {
    let config: RunConfig = match std::env::args().nth(1) {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => RunConfig::benchmark(),
    };
    let (world, scenes) = pipeline::generate(&config)?;
    let variants = [
        ("base", None),
        ("w/o L_mask", Some(AblationDelta::Beta(0.0))),
        ("w/o L_object", Some(AblationDelta::Gamma(0.0))),
        ("w/o L_hierarchical", Some(AblationDelta::HierWeight(0.0))),
        ("Euclidean", Some(AblationDelta::Geometry(Geometry::Euclidean))),
    ];
    println!("variant,hierarchy,purity,mAP,mAP50,mAP75,final_loss,seconds");
    for (name, delta) in variants {
        let mut cfg = config.clone();
        if let Some(d) = delta {
            d.apply(&mut cfg.train);
        }
        let t = std::time::Instant::now();
        let out = pipeline::run(&world, &scenes, &cfg)?;
        println!(
            "{name},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.1}",
            out.hierarchy_fraction.unwrap_or(f64::NAN),
            out.report.purity,
            out.report.map.map,
            out.report.map.map50,
            out.report.map.map75,
            out.train.trace.last().map_or(f64::NAN, |e| e.total),
            t.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
