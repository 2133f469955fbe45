//! The cycle against a plain nested-Vec transcription of the reference loop.

#[path = "support/reference.rs"]
mod reference;

#[test]
fn cycle_matches_reference_loop() {
    let start = std::time::Instant::now();
    let worst = reference::max_deviation(0..10);
    assert!(worst <= 1e-10, "max deviation {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
