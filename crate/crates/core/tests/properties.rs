use proptest::prelude::*;

use dctshield::codec::{decode, defend, encode, CodecConfig};
use dctshield::design::{build_partition, build_table, OF_SIZES};
use dctshield::ensemble::{average_confidence, majority_vote, ConfidenceVector};
use dctshield::image::{ColorPath, ImageBuffer, BLOCK_LEN};
use dctshield::perturb::{apply, PerturbSpec};
use dctshield::quant::{quantize_traced, QuantTable};
use dctshield::stats::BandRatio;
use dctshield::transform::CoefBlock;

fn image() -> impl Strategy<Value = ImageBuffer> {
    (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
        proptest::collection::vec(any::<u8>(), w * h * 3)
            .prop_map(move |data| ImageBuffer::new(w, h, data).unwrap())
    })
}

fn ratios() -> impl Strategy<Value = BandRatio> {
    proptest::collection::vec(1u32..20, BLOCK_LEN).prop_map(|v| {
        BandRatio::from_ratios(std::array::from_fn(|i| f64::from(v[i]) / 7.0)).unwrap()
    })
}

fn config() -> impl Strategy<Value = CodecConfig> {
    (1u16..=255, 1u8..=100, any::<bool>(), any::<bool>(), any::<bool>()).prop_map(
        |(step, quality, ycc, standard, level_shift)| {
            let path = if ycc { ColorPath::YCbCr420 } else { ColorPath::Rgb };
            let mut cfg = if standard {
                CodecConfig::standard(quality, path)
            } else {
                CodecConfig::custom(QuantTable::uniform(step).unwrap(), path).with_quality(quality)
            };
            cfg.level_shift = level_shift;
            cfg
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partitions_cover_all_bands(r in ratios(), k in 1u8..=15) {
        let p = build_partition(&r, k).unwrap();
        let (of, af) = (p.of_set(), p.af_set());
        prop_assert_eq!(of.len(), OF_SIZES[usize::from(k) - 1]);
        prop_assert_eq!(of.len() + af.len(), BLOCK_LEN);
        prop_assert!(of.iter().all(|b| !af.contains(b)));
        prop_assert!(p.is_of(0));
        if k > 1 {
            prop_assert!(build_partition(&r, k - 1).unwrap().of_set().len() < of.len());
        }
        let t = build_table(&p, 16, 50).unwrap();
        prop_assert_eq!(t, build_table(&p.clone(), 16, 50).unwrap());
        for b in 0..BLOCK_LEN {
            prop_assert_eq!(t.natural_steps()[b], if p.is_of(b) { 16 } else { 50 });
        }
    }

    #[test]
    fn defend_preserves_shape_and_matches_archive(img in image(), cfg in config()) {
        let out = defend(&img, &cfg).unwrap();
        prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        let archive = encode(&img, &cfg).unwrap();
        prop_assert_eq!(decode(&archive, &cfg).unwrap(), out);
    }

    #[test]
    fn quantization_decomposes_exactly(
        coefs in proptest::collection::vec(-2000.0f64..2000.0, BLOCK_LEN),
        step in 1u16..=255,
    ) {
        let block = CoefBlock(std::array::from_fn(|i| coefs[i]));
        let table = QuantTable::uniform(step).unwrap();
        let (_, trace) = quantize_traced(&block, &table);
        let qs = f64::from(step);
        for (c, e) in block.0.iter().zip(&trace.entries) {
            prop_assert!(e.remainder.abs() <= qs / 2.0 + 1e-9);
            prop_assert!((f64::from(e.level) * qs + e.remainder - c).abs() < 1e-9);
        }
    }

    #[test]
    fn perturbation_stays_in_bounds(img in image(), eps in 0.0f64..0.05, seed in any::<u64>(), uniform in any::<bool>()) {
        let spec = if uniform { PerturbSpec::uniform(eps, seed) } else { PerturbSpec::sign(eps, seed) };
        let (out, res) = apply(&img, &spec, 3).unwrap();
        prop_assert!(res.linf_injected() <= spec.amplitude());
        let again = apply(&img, &spec, 3).unwrap().0;
        prop_assert_eq!(out, again);
    }

    #[test]
    fn ensemble_ignores_model_order(
        raw in proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, 5), 1..7),
        rot in 0usize..7,
    ) {
        let vs: Vec<ConfidenceVector> = raw
            .iter()
            .enumerate()
            .filter(|(_, r)| r.iter().sum::<f64>() > 0.0)
            .map(|(i, r)| {
                let s: f64 = r.iter().sum();
                ConfidenceVector::new(format!("m{i}"), r.iter().map(|v| v / s).collect()).unwrap()
            })
            .collect();
        prop_assume!(!vs.is_empty());
        let mut rotated = vs.clone();
        rotated.rotate_left(rot % vs.len());
        rotated.reverse();
        prop_assert_eq!(average_confidence(&vs).unwrap().label, average_confidence(&rotated).unwrap().label);
        prop_assert_eq!(majority_vote(&vs).unwrap().label, majority_vote(&rotated).unwrap().label);
        let a = average_confidence(&vs).unwrap();
        let m = majority_vote(&vs).unwrap();
        if a.votes.iter().all(|&v| v == a.votes[0]) {
            prop_assert_eq!(a.label, a.votes[0]);
            prop_assert_eq!(m.label, a.votes[0]);
        }
    }
}
