use caps_ood_core::caps::{
    affinity_stats, build_caps, build_caps_from_codes, cap_cosine_matrix, jaccard_matrix,
    mean_off_diagonal, predict_class, CapTable,
};
use caps_ood_core::epd::{score_dataset, ScoreConfig};
use caps_ood_core::linalg::Matrix;
use caps_ood_core::metrics::auroc;
use caps_ood_core::sae::{encode_dataset, train, SparseCode, TrainConfig};
use caps_ood_core::synth::{gen_id, gen_ood, IdSplit, OodMode, SynthConfig};
use proptest::prelude::*;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

proptest! {
    #[test]
    fn similarity_matrices_symmetric_with_unit_diagonal(
        classes in 1usize..6, d in 1usize..40, q in 0.01f64..1.0, seed in any::<u64>()
    ) {
        let mut rng = caps_ood_core::rng::RngStream::new(seed);
        let values = (0..classes * d).map(|_| 0.1 + rng.uniform()).collect();
        let table = CapTable::from_parts(Matrix::from_vec(classes, d, values).unwrap(), vec![1; classes], q).unwrap();
        for m in [jaccard_matrix(&table), cap_cosine_matrix(&table).unwrap()] {
            for i in 0..classes {
                prop_assert_eq!(m[(i, i)], 1.0);
                for j in 0..classes {
                    prop_assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
        }
    }

    #[test]
    fn duplicating_samples_leaves_caps_unchanged(
        raw in prop::collection::vec((0usize..3, prop::collection::vec(0u8..16, 10)), 3..30)
    ) {
        // dyadic activations keep every sum exact
        let mut codes = Vec::new();
        let mut labels = Vec::new();
        for (c, vals) in &raw {
            let dense: Vec<f64> = vals.iter().map(|&v| if v < 8 { 0.0 } else { f64::from(v) / 8.0 }).collect();
            codes.push(SparseCode::from_dense(&dense).unwrap());
            labels.push(*c as i32);
        }
        prop_assume!((0..3).all(|c| labels.contains(&c)));
        let base = build_caps_from_codes(&codes, &labels, 0.2).unwrap();
        let doubled_codes: Vec<_> = codes.iter().chain(&codes).cloned().collect();
        let doubled_labels: Vec<_> = labels.iter().chain(&labels).copied().collect();
        let doubled = build_caps_from_codes(&doubled_codes, &doubled_labels, 0.2).unwrap();
        prop_assert_eq!(base.caps(), doubled.caps());
        prop_assert_eq!(base.core_sets(), doubled.core_sets());
    }
}

#[test]
fn synthetic_benchmark_structure() {
    let cfg = SynthConfig::default();
    let train_ds = gen_id(&cfg, IdSplit::Train).unwrap();
    let test_ds = gen_id(&cfg, IdSplit::Test).unwrap();
    let diffuse = gen_ood(&cfg, OodMode::Diffuse).unwrap();
    let report = train(
        &train_ds,
        &TrainConfig {
            seed: 42,
            ..TrainConfig::for_input_dim(cfg.d_in)
        },
    )
    .unwrap();
    let (model, nz) = (&report.model, &report.normalizer);
    let table = build_caps(model, nz, &train_ds, 0.05).unwrap();

    let jac = jaccard_matrix(&table);
    assert!((0..cfg.classes).all(|c| jac[(c, c)] == 1.0));
    let off = mean_off_diagonal(&jac);
    assert!(off < 0.2, "mean off-diagonal Jaccard {off}");

    // the router recovers held-out labels without being told them
    let codes = encode_dataset(model, nz, &test_ds).unwrap();
    let truth = test_ds.true_labels().unwrap();
    let hits = codes
        .iter()
        .zip(truth)
        .filter(|(code, &t)| predict_class(&table, code) == t as usize)
        .count();
    let accuracy = hits as f64 / codes.len() as f64;
    assert!(accuracy >= 0.95, "predict_class accuracy {accuracy}");

    let cfg_score = ScoreConfig::default();
    let id_scores = score_dataset(&table, model, nz, &test_ds, &cfg_score).unwrap();
    let ood_scores = score_dataset(&table, model, nz, &diffuse, &cfg_score).unwrap();
    assert!(auroc(&id_scores, &ood_scores).unwrap() > 0.5);

    let id_aff = affinity_stats(&table, model, nz, &test_ds).unwrap();
    let ood_aff = affinity_stats(&table, model, nz, &diffuse).unwrap();
    let id_matched = median(id_aff.iter().map(|a| a.matched_core_mean).collect());
    let ood_matched = median(ood_aff.iter().map(|a| a.matched_core_mean).collect());
    let ood_other = median(ood_aff.iter().map(|a| a.other_core_mean).collect());
    assert!(id_matched > ood_matched && ood_matched > ood_other);
    eprintln!("jaccard {off:.4} accuracy {accuracy:.4} medians {id_matched:.4} {ood_matched:.4} {ood_other:.4}");
}
