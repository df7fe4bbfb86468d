use pathway_demo::{contrastive_loss, geometry, shortest_path};
use serde_json::Value;

fn json(s: String) -> Value {
    serde_json::from_str(&s).unwrap()
}

#[test]
fn path_starts_and_ends_where_asked() {
    let r = json(shortest_path("36/4*(z+12)/3", "3*(z+12)", 5, 1).unwrap());
    let steps = r["steps"].as_array().unwrap();
    assert_eq!(steps.len(), r["distance"].as_u64().unwrap() as usize + 1);
    assert!(steps[0]["action"].is_null());
    assert!(steps[1..].iter().all(|s| s["action"].is_string()));
    assert_eq!(steps.last().unwrap()["state"], pathway_core::expr::canonicalize("3*(z+12)").unwrap());
}

#[test]
fn path_errors_are_messages() {
    assert!(shortest_path("x + * 5", "x", 5, 1).unwrap_err().starts_with("start:"));
    assert!(shortest_path("x", "y", 3, 1).unwrap_err().contains("not reachable"));
}

#[test]
fn geometry_reports_both_silhouettes() {
    let r = json(geometry(7, 10, 80, 128, true).unwrap());
    assert_eq!(r["level"], "transition");
    let n = r["n"].as_u64().unwrap() as usize;
    let points = r["points"].as_array().unwrap();
    assert!(!points.is_empty() && points.len() <= n.min(pathway_demo::MAX_POINTS));
    for key in ["by_problem", "by_action"] {
        assert!(r[key].as_f64().unwrap().abs() <= 1.0);
    }
}

#[test]
fn loss_limits() {
    let same = json(contrastive_loss(8, 16, 0.0, 0.01, 3).unwrap());
    assert!(same["loss"].as_f64().unwrap() < 1e-6);
    let mild = json(contrastive_loss(8, 16, 0.5, 0.05, 3).unwrap());
    let wild = json(contrastive_loss(8, 16, 5.0, 0.05, 3).unwrap());
    assert!(mild["loss"].as_f64().unwrap() < wild["loss"].as_f64().unwrap());
    assert!((same["positive_cos"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let noisy = json(contrastive_loss(8, 16, 50.0, 1e6, 3).unwrap());
    assert!((noisy["loss"].as_f64().unwrap() - noisy["ln_batch"].as_f64().unwrap()).abs() < 1e-4);
    assert!(contrastive_loss(0, 16, 0.1, 0.05, 3).is_err());
    assert!(contrastive_loss(4, 16, 0.1, 0.0, 3).is_err());
}
