//! Round trips on random systems that once tripped the pipeline.

use webscatter::cli::roundtrip;
use webscatter::dataset::ExportOptions;
use webscatter::fixtures::random_system;

fn check(seed: u64, channels: usize) {
    let opts = ExportOptions { circle_nodes: 1024, ..ExportOptions::default() };
    let err = roundtrip(random_system(seed * 7919, channels, 5), &opts, 5).unwrap();
    assert!(err < 1e-6, "seed {seed}: {err:e}");
}

#[test]
fn resonance_next_to_the_circle() {
    check(127, 3);
}

#[test]
fn resonances_near_sampled_arcs() {
    for (seed, c) in [(34, 2), (53, 3), (100, 2)] {
        check(seed, c);
    }
}

#[test]
fn level_with_small_jost_value() {
    check(181, 3);
}

#[test]
fn resonance_found_from_a_shallow_circle_minimum() {
    check(440, 4);
    check(554, 4);
}

#[test]
fn level_close_to_band_end() {
    check(808, 3);
}

#[test]
fn resonance_with_moderate_circle_minimum() {
    // |det| on the circle bottoms out near 1e-7 of its maximum
    let opts = ExportOptions { circle_nodes: 1024, ..ExportOptions::default() };
    let err = roundtrip(random_system(2010, 3, 4), &opts, 4).unwrap();
    assert!(err < 1e-7, "{err:e}");
}
