//! Randomized invariants.

use ispnet::models::{checkpoint_bytes, checkpoint_from_bytes, smallnet, CsaNetConfig, UNetConfig};
use ispnet::raw_pipeline::{augment_flip, normalize, pack_bayer, unpack_bayer};
use ispnet::{mai_score, BayerImage, LossKind, LossSpec, ModelName, ScoreInputs, Tensor};
use proptest::prelude::*;

fn bayer(max_half: usize) -> impl Strategy<Value = BayerImage> {
    (1..=max_half, 1..=max_half).prop_flat_map(|(hh, hw)| {
        proptest::collection::vec(0u16..=1023, 4 * hh * hw)
            .prop_map(move |data| BayerImage::new(2 * hw, 2 * hh, data).unwrap())
    })
}

fn loss_kind() -> impl Strategy<Value = LossKind> {
    proptest::sample::select(LossKind::ALL.to_vec())
}

fn model_name() -> impl Strategy<Value = ModelName> {
    prop_oneof![
        Just(ModelName::Smallnet),
        (1usize..64, 0usize..6).prop_map(|(base, dams)| ModelName::CsaNet(CsaNetConfig { base, dams })),
        (1usize..64, 1usize..6).prop_map(|(base, depth)| ModelName::UNet(UNetConfig { base, depth })),
        (1usize..128).prop_map(|channels| ModelName::Dam { channels }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unpack_inverts_pack(b in bayer(8)) {
        let packed = pack_bayer(&b);
        prop_assert_eq!(packed.shape().c(), 4);
        prop_assert_eq!(unpack_bayer(&packed).unwrap(), normalize(&b));
    }

    #[test]
    fn flip_twice_is_identity(b in bayer(6)) {
        let raw = pack_bayer(&b);
        let s = raw.shape();
        let rgb = Tensor::randn((1, 3, 2 * s.h(), 2 * s.w()), b.data()[0] as u64);
        let (r1, t1) = augment_flip(&raw, &rgb, true).unwrap();
        let (r2, t2) = augment_flip(&r1, &t1, true).unwrap();
        prop_assert_eq!(r2, raw.clone());
        prop_assert_eq!(t2, rgb.clone());
        let (r0, t0) = augment_flip(&raw, &rgb, false).unwrap();
        prop_assert_eq!((r0, t0), (raw, rgb));
    }

    #[test]
    fn score_rises_with_psnr(p in 0.0f64..60.0, dp in 1e-3f64..10.0, t in 1e-4f64..20.0) {
        let a = mai_score(ScoreInputs::new(p, t).unwrap());
        let b = mai_score(ScoreInputs::new(p + dp, t).unwrap());
        prop_assert!(b > a);
    }

    #[test]
    fn score_never_rises_with_runtime(p in 0.0f64..60.0, t in 1e-4f64..20.0, dt in 1e-4f64..5.0) {
        let fast = mai_score(ScoreInputs::new(p, t).unwrap());
        let slow = mai_score(ScoreInputs::new(p, t + dt).unwrap());
        prop_assert!(slow <= fast);
        prop_assert!(fast - p <= 20.0 * (0.2 - 0.03) + 1e-12);
        prop_assert!(slow - p >= 0.5 * (0.2 - 5.0) - 1e-12);
    }

    #[test]
    fn loss_spec_text_round_trips(
        terms in proptest::collection::vec((loss_kind(), -1e3f64..1e3), 1..6)
    ) {
        let spec = LossSpec::new(terms).unwrap();
        let back: LossSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(back, spec);
    }

    #[test]
    fn model_name_text_round_trips(name in model_name()) {
        let back: ModelName = name.to_string().parse().unwrap();
        prop_assert_eq!(back, name);
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>()) {
        let m = smallnet(seed).unwrap();
        let bytes = checkpoint_bytes(&m).unwrap();
        let back = checkpoint_from_bytes(&bytes).unwrap();
        prop_assert_eq!(back.params(), m.params());
        prop_assert_eq!(checkpoint_bytes(&back).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn truncated_checkpoints_are_rejected(seed in 0u64..1000, cut in 1usize..64) {
        let bytes = checkpoint_bytes(&smallnet(seed).unwrap()).unwrap();
        prop_assert!(checkpoint_from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }
}
