//! Round-trip invariants for the two binary formats, over arbitrary shapes
//! and contents.

mod common;

use ccal::data::{from_bytes, to_bytes, PairedDataset};
use ccal::net::{model_from_bytes, model_to_bytes, DualNet, HeadMode, TowerSpec};
use common::*;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_bytes_round_trip(
        m in 1..20usize,
        dx in 1..6usize,
        dy in 1..6usize,
        with_labels in any::<bool>(),
        seed in 0..10_000u64,
    ) {
        let mut r = rng(seed);
        let x = random_mat(&mut r, m, dx);
        let y = random_mat(&mut r, m, dy);
        let labels = with_labels.then(|| (0..m as u32).map(|i| i * 7 % 5).collect());
        let ds = PairedDataset::new(x, y, labels, "prop".into()).unwrap();

        let bytes = to_bytes(&ds);
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&ds, &back);
        prop_assert_eq!(bytes, to_bytes(&back));
    }

    #[test]
    fn model_bytes_round_trip(
        d in 1..5usize,
        hidden in 1..8usize,
        k in 1..4usize,
        head_pick in 0..3usize,
        seed in 0..10_000u64,
    ) {
        let head = [HeadMode::Tno, HeadMode::LearnedRank, HeadMode::CcalRank][head_pick];
        let spec = TowerSpec::new(vec![d.max(k), hidden, k]).unwrap();
        let mut model = DualNet::new(&spec, &spec, head, seed).unwrap();
        model.config_echo = format!("seed = {seed}\n");
        if head == HeadMode::CcalRank {
            let mut r = rng(seed);
            let m = 4 * (k + 2);
            let x = random_mat(&mut r, m, d.max(k));
            let xf = ccal::net::mlp_output(&model.tower_f, &x).unwrap();
            let yg = ccal::net::mlp_output(&model.tower_g, &x).unwrap();
            model.cca = Some(ccal::cca::cca_fit(&xf, &yg, 1e-2, k).unwrap());
        }

        let bytes = model_to_bytes(&model);
        let back = model_from_bytes(&bytes).unwrap();
        prop_assert_eq!(&model, &back);
        prop_assert_eq!(bytes, model_to_bytes(&back));
    }

    #[test]
    fn dataset_parser_never_panics_on_mutations(
        seed in 0..500u64,
        flip_at in 0..200usize,
        flip_to in 0..255u8,
        truncate_to in 0..200usize,
    ) {
        let mut r = rng(seed);
        let ds = PairedDataset::new(
            random_mat(&mut r, 3, 2),
            random_mat(&mut r, 3, 2),
            Some(vec![1, 2, 3]),
            "prop".into(),
        )
        .unwrap();
        let mut bytes = to_bytes(&ds);
        if flip_at < bytes.len() {
            bytes[flip_at] = flip_to;
        }
        bytes.truncate(truncate_to.min(bytes.len()));
        let _ = from_bytes(&bytes); // must return, never panic
    }
}
