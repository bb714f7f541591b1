use mixad_demo::{deseasonalize, detect_period, jsd, sample_graph, score_trace};

#[test]
fn jsd_bounds_and_invalid_input() {
    assert_eq!(jsd(vec![1.0, 0.0], vec![0.0, 1.0]), 1.0);
    assert_eq!(jsd(vec![2.0, 2.0], vec![0.5, 0.5]), 0.0);
    assert!(jsd(vec![-1.0, 2.0], vec![0.5, 0.5]).is_nan());
    assert!(jsd(vec![1.0], vec![0.5, 0.5]).is_nan());
}

#[test]
fn trace_period_round_trip() {
    let x = score_trace(240, 24.0, 0.0, 0.0, 1);
    assert_eq!(detect_period(x.clone()), 24);
    let flat = deseasonalize(x.clone());
    let energy: f64 = x.iter().map(|v| v * v).sum();
    assert!(flat.iter().map(|v| v * v).sum::<f64>() < 0.01 * energy);
    let spiky = score_trace(240, 24.0, 0.05, 5.0, 2);
    assert!(deseasonalize(spiky)[120] > 4.0);
    assert_eq!(detect_period(vec![1.0; 50]), 0);
}

#[test]
fn graph_shape_and_temperature() {
    let a = sample_graph(6, 3, 0.5, 7, 0, false);
    assert_eq!(a.len(), 36);
    assert!((0..6).all(|i| a[i * 6 + i] == 0.0));
    assert!(a.iter().all(|&v| (0.0..=1.0).contains(&v)));
    // low temperature pushes sampled edges towards 0 or 1
    let cold = sample_graph(6, 3, 0.01, 7, 3, true);
    let hot = sample_graph(6, 3, 5.0, 7, 3, true);
    let spread = |v: &[f64]| v.iter().map(|x| (x - 0.5).abs()).sum::<f64>();
    assert!(spread(&cold) > spread(&hot));
    assert_eq!(sample_graph(6, 3, 0.5, 7, 3, true), sample_graph(6, 3, 0.5, 7, 3, true));
    assert_ne!(sample_graph(6, 3, 0.5, 7, 3, true), sample_graph(6, 3, 0.5, 7, 4, true));
    assert!(sample_graph(4, 3, 0.0, 7, 3, true).is_empty());
}
