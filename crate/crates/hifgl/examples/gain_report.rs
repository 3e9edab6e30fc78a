//! Graph information gain: the share of graph-derived predictive signal a
//! framework retains, measured between a feature-only lower bound and the
//! centralized upper bound.
//!
//! ```bash
//! cargo run --release --example gain_report
//! ```

use hifgl::metrics;

fn main() {
    // reference accuracy triples (model, feature-only lower, centralized upper)
    let rows = [
        ("cora / coded federation", 0.8555, 0.5698, 0.8689),
        ("cora / cross edges dropped", 0.8358, 0.5698, 0.8689),
        ("citeseer / coded federation", 0.7724, 0.6450, 0.7742),
        ("pubmed / coded federation", 0.8626, 0.8051, 0.8583),
        ("pubmed / local only", 0.8525, 0.8051, 0.8583),
    ];
    println!(
        "{:<30} {:>8} {:>8} {:>8} {:>9}",
        "setting", "model", "lower", "upper", "gain"
    );
    for (name, model, lower, upper) in rows {
        let g = metrics::graph_information_gain(model, lower, upper).unwrap();
        println!(
            "{:<30} {:>8.4} {:>8.4} {:>8.4} {:>+8.2}%",
            name,
            model,
            lower,
            upper,
            g.gain * 100.0
        );
    }

    // the ratio may exceed 100% (model beats the centralized bound) or go
    // negative (model below the feature-only baseline)
    let above = metrics::graph_information_gain(0.8626, 0.8051, 0.8583).unwrap();
    assert!(above.gain > 1.0);
    let below = metrics::graph_information_gain(0.6125, 0.6450, 0.7748).unwrap();
    assert!(below.gain < 0.0);
    println!(
        "\nabove-unity gain {:+.2}%, negative gain {:+.2}% are both legal",
        above.gain * 100.0,
        below.gain * 100.0
    );

    // degenerate bounds are an explicit error, never NaN
    assert!(metrics::graph_information_gain(0.5, 0.7, 0.7).is_err());
}
