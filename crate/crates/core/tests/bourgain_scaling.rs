use dnls_core::bourgain::l4_ensemble;

#[test]
fn l4_ratio_supremum_is_stable_under_refinement() {
    let coarse = l4_ensemble(64, 64, 200, 11).unwrap();
    let fine = l4_ensemble(128, 128, 200, 11).unwrap();
    println!("{coarse:?}\n{fine:?}");
    let change = (fine.max_ratio - coarse.max_ratio).abs() / coarse.max_ratio;
    assert!(change < 0.2, "relative change {change}");
}
