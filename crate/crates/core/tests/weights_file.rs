use proptest::prelude::*;
use speech_portrait::apc::ApcModel;
use speech_portrait::config::PipelineConfig;
use speech_portrait::pipeline::random_weights;
use speech_portrait::tensor::Tensor;
use speech_portrait::weights::{load_weights, save_weights, WeightStore};
use speech_portrait::Error;

fn one_tensor_store() -> WeightStore {
    let mut s = WeightStore::new();
    s.insert("ab", Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap())
        .unwrap();
    s
}

#[test]
fn byte_layout_matches_hand_encoding() {
    let mut expected = Vec::new();
    expected.extend_from_slice(b"LSPW");
    expected.extend_from_slice(&1u32.to_le_bytes());
    expected.extend_from_slice(&1u32.to_le_bytes());
    expected.extend_from_slice(&0u32.to_le_bytes());
    expected.extend_from_slice(&2u16.to_le_bytes());
    expected.extend_from_slice(b"ab");
    expected.push(0); // f32
    expected.push(2); // rank
    expected.extend_from_slice(&2u32.to_le_bytes());
    expected.extend_from_slice(&1u32.to_le_bytes());
    expected.extend_from_slice(&1.0f32.to_le_bytes());
    expected.extend_from_slice(&(-2.5f32).to_le_bytes());
    assert_eq!(one_tensor_store().to_bytes(), expected);
    assert_eq!(WeightStore::from_bytes(&expected).unwrap(), one_tensor_store());
}

#[test]
fn every_truncation_and_header_corruption_is_rejected() {
    let bytes = one_tensor_store().to_bytes();
    for n in 0..bytes.len() {
        assert!(
            matches!(WeightStore::from_bytes(&bytes[..n]), Err(Error::Format(_))),
            "prefix {n}"
        );
    }
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(WeightStore::from_bytes(&extra).is_err());
    for (at, value) in [(0usize, b'X'), (4, 2), (12, 1), (20, 7)] {
        let mut bad = bytes.clone();
        bad[at] = value;
        assert!(
            matches!(WeightStore::from_bytes(&bad), Err(Error::Format(_))),
            "byte {at}"
        );
    }
}

#[test]
fn full_model_file_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("models.lspw");
    let store = random_weights(&PipelineConfig::default()).unwrap();
    save_weights(&store, &path).unwrap();
    let loaded = load_weights(&path).unwrap();
    assert_eq!(loaded, store);
    let apc = ApcModel::from_store(&loaded).unwrap();
    assert_eq!(apc.gru_param_count(), 4_064_256);
}

proptest! {
    #[test]
    fn arbitrary_stores_round_trip(
        tensors in prop::collection::btree_map(
            "[a-z.]{1,12}",
            (prop::collection::vec(1usize..4, 0..3), any::<u64>()),
            0..5,
        )
    ) {
        let mut store = WeightStore::new();
        for (name, (shape, seed)) in &tensors {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|i| f32::from_bits((seed.wrapping_mul(i as u64 + 1) >> 32) as u32 & 0x7f7f_ffff)).collect();
            store.insert(name.clone(), Tensor::new(shape.clone(), data).unwrap()).unwrap();
        }
        let bytes = store.to_bytes();
        prop_assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), store);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = WeightStore::from_bytes(&bytes);
    }
}
