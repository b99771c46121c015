mod common;

use common::*;

#[test]
fn metrics_agree_with_brute_force() {
    let r = check_metrics(300);
    assert_eq!(r.sets, 300);
    assert!(r.worst <= 1e-12, "worst disagreement {}", r.worst);
}

#[test]
fn oracle_sanity() {
    let ins = [0.9, 0.8];
    let outs = [0.1, 0.2];
    assert_eq!(brute_auroc(&ins, &outs), 1.0);
    assert_eq!(brute_detection_error(&ins, &outs), 0.0);
    assert_eq!(brute_fpr_at_95(&ins, &outs), 0.0);
    assert_eq!(brute_aupr(&ins, &outs), 1.0);
    // Ranking pos, neg, pos: AP = 0.5 * 1 + 0.5 * 2/3.
    assert!((brute_aupr(&[3.0, 1.0], &[2.0]) - (0.5 + 1.0 / 3.0)).abs() < 1e-15);
}
