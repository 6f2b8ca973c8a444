use proptest::prelude::*;

use dsalign_core::alignment::{bregman, Domain, LatentBatch};
use dsalign_core::data::{
    parse_idx, select_classes, serialize_idx, IdxArray, IdxType, LabeledDataset,
};
use dsalign_core::harness::corrected_accuracy;
use dsalign_core::Tensor;

fn idx_case() -> impl Strategy<Value = (IdxType, Vec<usize>, Vec<f64>)> {
    let dtype = prop_oneof![
        Just(IdxType::U8),
        Just(IdxType::I8),
        Just(IdxType::I16),
        Just(IdxType::I32),
        Just(IdxType::F32),
        Just(IdxType::F64),
    ];
    (dtype, prop::collection::vec(1usize..5, 1..4)).prop_flat_map(|(dtype, dims)| {
        let n: usize = dims.iter().product();
        let value = match dtype {
            IdxType::U8 => (0i64..=255).prop_map(|v| v as f64).boxed(),
            IdxType::I8 => (-128i64..=127).prop_map(|v| v as f64).boxed(),
            IdxType::I16 => (-32768i64..=32767).prop_map(|v| v as f64).boxed(),
            IdxType::I32 => any::<i32>().prop_map(f64::from).boxed(),
            IdxType::F32 => (-1e6f32..1e6).prop_map(f64::from).boxed(),
            IdxType::F64 => (-1e12f64..1e12).boxed(),
        };
        (Just(dtype), Just(dims), prop::collection::vec(value, n))
    })
}

fn points(n: std::ops::RangeInclusive<usize>, d: usize) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(move |n| prop::collection::vec(-3.0f64..3.0, n * d))
}

proptest! {
    #[test]
    fn idx_round_trip((dtype, dims, values) in idx_case()) {
        let a = IdxArray::new(dtype, dims, values).unwrap();
        let back = parse_idx(&serialize_idx(&a).unwrap()).unwrap();
        prop_assert_eq!(back.dtype, a.dtype);
        prop_assert_eq!(&back.dims, &a.dims);
        prop_assert_eq!(
            back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn idx_truncation_is_an_error((dtype, dims, values) in idx_case(), cut in 1usize..8) {
        let bytes = serialize_idx(&IdxArray::new(dtype, dims, values).unwrap()).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(parse_idx(&bytes[..keep]).is_err());
    }

    #[test]
    fn balanced_subsampling_keeps_proportions(per_class in 5usize..40, k in 2usize..5, n_max in 4usize..100, seed: u64) {
        let labels: Vec<usize> = (0..per_class * k).map(|i| i % k).collect();
        let samples = Tensor::new([labels.len(), 1], (0..labels.len()).map(|i| i as f32).collect()).unwrap();
        let ds = LabeledDataset::new(samples, labels, (0..k as u32).collect(), Domain::Source).unwrap();
        let classes: Vec<u32> = (0..k as u32).rev().collect();
        let sub = select_classes(&ds, &classes, n_max, seed).unwrap();
        prop_assert_eq!(sub.len(), n_max.min(per_class * k));
        let counts = sub.class_counts();
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        prop_assert!(hi - lo <= 1, "{:?}", counts);
        let again = select_classes(&ds, &classes, n_max, seed).unwrap();
        prop_assert_eq!(sub.samples, again.samples);
    }

    #[test]
    fn corrected_accuracy_two_class_bounds(pairs in prop::collection::vec((0usize..2, 0usize..2), 1..200)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let c = corrected_accuracy(&pred, &truth, 2).unwrap();
        prop_assert!((0.5..=1.0).contains(&c));
        let flipped: Vec<usize> = pred.iter().map(|p| 1 - p).collect();
        prop_assert!((corrected_accuracy(&flipped, &truth, 2).unwrap() - c).abs() < 1e-12);
    }

    #[test]
    fn divergence_symmetric_and_zero_on_self(d in 1usize..4, s in points(2..=10, 3), t in points(2..=10, 3)) {
        let (s, t) = (s[..s.len() / 3 * d].to_vec(), t[..t.len() / 3 * d].to_vec());
        let mk = |p: &[f64], dom| LatentBatch::new(p.to_vec(), p.len() / d, d, dom).unwrap();
        let ab = bregman(&mk(&s, Domain::Source), &mk(&t, Domain::Target)).unwrap().value;
        let ba = bregman(&mk(&t, Domain::Source), &mk(&s, Domain::Target)).unwrap().value;
        prop_assert!((ab - ba).abs() <= 1e-9 * ab.abs().max(1.0));
        let same = bregman(&mk(&s, Domain::Source), &mk(&s, Domain::Target)).unwrap();
        prop_assert!(same.value.abs() <= 1e-9);
    }
}
