use kpbench_core::models::{
    build_manual_cnn, custom_cnn_spec, load_weights, mobilenetv2_spec, model_size_bytes, save_weights, Architecture,
};
use kpbench_core::Tensor;

#[test]
fn mobilenet_trunk_matches_reference_count() {
    let b = mobilenetv2_spec(1.0).unwrap().parameter_breakdown().unwrap();
    // trunk of the reference implementation without its classifier
    assert_eq!(b.trunk.total, 2_257_984);
    assert_eq!(b.trunk.trainable, 2_223_872);
    assert_eq!(b.trunk.non_trainable, 34_112);
    assert_eq!(b.head.total, 1280 * 30 + 30);
}

#[test]
fn custom_cnn_counts_in_band() {
    let manual = Architecture::Manual
        .spec()
        .unwrap()
        .parameter_breakdown()
        .unwrap()
        .total();
    assert!((200_000..=260_000).contains(&manual.total), "{}", manual.total);
    let base = Architecture::Baseline
        .spec()
        .unwrap()
        .parameter_breakdown()
        .unwrap()
        .total();
    assert!((1_500_000..=2_300_000).contains(&base.total), "{}", base.total);
    println!("manual {} baseline {}", manual.total, base.total);
}

#[test]
fn describe_reports_every_architecture() {
    for a in Architecture::ALL {
        let text = a.spec().unwrap().describe().unwrap();
        assert!(text.contains("total params"));
    }
}

#[test]
fn manual_forward_and_weight_round_trip() {
    let m = build_manual_cnn(4).unwrap();
    let x = Tensor::from_fn(&[2, 1, 96, 96], |i| ((i % 97) as f32) / 97.0).unwrap();
    let y = m.forward(&x).unwrap();
    assert_eq!(y.shape(), &[2, 30]);
    let mut buf = Vec::new();
    let n = save_weights(&m, &mut buf).unwrap();
    assert_eq!(n, model_size_bytes(&m));
    assert_eq!(n as usize, buf.len());
    let back = load_weights(m.spec(), &buf[..]).unwrap();
    assert_eq!(back.forward(&x).unwrap(), y);
}

#[test]
fn custom_spec_rejects_empty_stack() {
    assert!(custom_cnn_spec("e", &[], 8).is_err());
}
