//! Writes the pinned benchmark instances and sweep configs to a directory
//! (default `configs/`).

use std::path::PathBuf;

use serde_json::json;
use softq::benchmark::{benchmark_mdp, gap_mdp, partial_coverage_instance, GAP_SEED};

fn write(dir: &std::path::Path, name: &str, value: &impl serde::Serialize) {
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    std::fs::write(dir.join(name), text).expect("writable");
}

fn sweep(mdp: &str, behavior: &str, method: &str, alpha_rule: serde_json::Value, output: &str) -> serde_json::Value {
    let mut cfg = json!({
        "mdp": mdp,
        "behavior": behavior,
        "method": method,
        "n_grid": [500, 2000, 8000, 32000],
        "seeds": (0..20).collect::<Vec<u64>>(),
        "q_class": {"kind": "tabular_box"},
        "l_class": {"kind": "tabular_box"},
        "output": output,
        "timing": false,
    });
    if !alpha_rule.is_null() {
        cfg["alpha_rule"] = alpha_rule;
    }
    cfg
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    std::fs::create_dir_all(&dir).expect("creatable");
    let (m, b) = benchmark_mdp();
    write(&dir, "benchmark_mdp.json", &m);
    write(&dir, "benchmark_behavior.json", &b);
    let (g, gb) = gap_mdp(10, 3, 0.9, 0.5, GAP_SEED);
    write(&dir, "gap_mdp.json", &g);
    write(&dir, "gap_behavior.json", &gb);
    let (p, pb, f) = partial_coverage_instance();
    write(&dir, "partial_coverage_mdp.json", &p);
    write(&dir, "partial_coverage_behavior.json", &pb);
    write(&dir, "partial_coverage_features.json", &f);

    let fixed = json!({"kind": "fixed", "alpha": 0.1});
    let schedule = json!({"kind": "schedule", "c": 1.0});
    let bm = ("benchmark_mdp.json", "benchmark_behavior.json");
    write(&dir, "msqp_benchmark.json", &sweep(bm.0, bm.1, "msqp", fixed, "out/msqp_benchmark"));
    write(&dir, "mqp_benchmark.json", &sweep(bm.0, bm.1, "mqp", serde_json::Value::Null, "out/mqp_benchmark"));
    write(&dir, "msqp_schedule.json", &sweep(bm.0, bm.1, "msqp", schedule, "out/msqp_schedule"));
    write(&dir, "mqp_gap.json", &sweep("gap_mdp.json", "gap_behavior.json", "mqp", serde_json::Value::Null, "out/mqp_gap"));
    write(&dir, "fqi_benchmark.json", &sweep(bm.0, bm.1, "fqi", serde_json::Value::Null, "out/fqi_benchmark"));
}
