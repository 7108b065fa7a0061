use proptest::prelude::*;
use riccilab::io::{config_hash, decode_blob, encode_blob, ExperimentConfig};
use riccilab::Error;

const BASE: &str = r#"{
  "schema_version": 1,
  "dimension": 2,
  "grid_size": 32,
  "initial_metric": { "kind": "conformal_perturbation", "amplitude": 0.05 },
  "flow": { "t_end": 2.0, "sample_interval": 0.05 }
}"#;

proptest! {
    #[test]
    fn blobs_round_trip_bit_exactly(values in prop::collection::vec(any::<f64>(), 0..64)) {
        let bytes = encode_blob(&values);
        let back = decode_blob(&bytes, values.len()).unwrap();
        prop_assert_eq!(back.len(), values.len());
        for (a, b) in back.iter().zip(&values) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}

#[test]
fn malformed_blobs_are_rejected() {
    let good = encode_blob(&[1.0, 2.0]);
    assert!(matches!(decode_blob(&good, 3), Err(Error::Blob(_))));
    let mut bad = good.clone();
    bad[0] = b'X';
    assert!(matches!(decode_blob(&bad, 2), Err(Error::Blob(_))));
    let mut bad = good;
    bad[4] = 9;
    assert!(matches!(decode_blob(&bad, 2), Err(Error::Blob(_))));
}

#[test]
fn hash_is_sha256_of_the_bytes() {
    assert_eq!(
        config_hash(b"abc"),
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    );
}

#[test]
fn defaults_fill_the_analysis_sections() {
    let c = ExperimentConfig::from_bytes(BASE.as_bytes()).unwrap();
    assert_eq!(c.conjugate.s_list, vec![0.5, 1.0, 2.0]);
    assert_eq!(c.spectral.k_max, 5);
    let s = c.schedule();
    assert_eq!(s.len(), 4);
    for (a, b) in s.iter().zip([0.5, 1.0, 1.5, 2.0]) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(c.checkpoint_count().unwrap(), 41);
}

#[test]
fn schema_violations_name_the_field() {
    let check = |body: String, path: &str| match ExperimentConfig::from_bytes(body.as_bytes()) {
        Err(Error::Config { path: p, .. }) => assert_eq!(p, path, "{body}"),
        other => panic!("expected config error at {path}, got {other:?}"),
    };
    check(BASE.replace("\"schema_version\": 1", "\"schema_version\": 2"), "schema_version");
    check(BASE.replace("\"amplitude\"", "\"amplitud\""), "initial_metric.amplitud");
    check(
        BASE.replace("\"sample_interval\": 0.05", "\"dt\": 0.001"),
        "flow.checkpoint_stride",
    );
    check(
        BASE.replace("\"sample_interval\": 0.05 }", "\"sample_interval\": 0.05 }, \"conjugate\": { \"s_list\": [0.52] }"),
        "conjugate.s_list[0]",
    );
    check(
        BASE.replace("\"sample_interval\": 0.05 }", "\"sample_interval\": 0.05 }, \"conjugate\": { \"schedule\": [1.0, 0.5] }"),
        "conjugate.schedule",
    );
    check(BASE.replace("\"dimension\": 2", "\"dimension\": 4"), "dimension");
}
