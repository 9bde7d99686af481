//! End-to-end run on the synthetic benchmark: train, build CAPs, score and
//! print separation statistics for every OOD mode and metric.
//!
//!   cargo run --release -p caps-ood-core --example synthetic_pipeline -- [seed] [epochs]

use std::time::Instant;

use caps_ood_core::caps::{affinity_stats, build_caps, jaccard_matrix, mean_off_diagonal};
use caps_ood_core::epd::{score_dataset, Metric, ScoreConfig};
use caps_ood_core::metrics::{auroc, fpr95};
use caps_ood_core::sae::{train, TrainConfig};
use caps_ood_core::synth::{gen_id, gen_ood, IdSplit, OodMode, SynthConfig};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn main() -> Result<(), caps_ood_core::Error> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(42, |s| s.parse().expect("seed"));
    let synth = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    let id_train = gen_id(&synth, IdSplit::Train)?;
    let id_test = gen_id(&synth, IdSplit::Test)?;

    let mut cfg = TrainConfig::for_input_dim(synth.d_in);
    cfg.seed = seed;
    if let Some(e) = args.next() {
        cfg.epochs = e.parse().expect("epochs");
    }
    let t0 = Instant::now();
    let run = train(&id_train, &cfg)?;
    println!(
        "train: {:.1}s, recon {:.4} -> {:.4}, dead {}",
        t0.elapsed().as_secs_f64(),
        run.initial_recon,
        run.history.last().unwrap().recon,
        run.final_dead_latents()
    );

    let table = build_caps(&run.model, &run.normalizer, &id_train, 0.05)?;
    println!(
        "jaccard mean off-diagonal: {:.4}",
        mean_off_diagonal(&jaccard_matrix(&table))
    );

    let sanity = SynthConfig {
        ood_intensity: 1.0,
        ood_leakage: 0.0,
        ..synth.clone()
    };
    let mut splits: Vec<(String, _)> = OodMode::ALL
        .iter()
        .map(|&m| Ok((m.to_string(), gen_ood(&synth, m)?)))
        .collect::<Result<_, caps_ood_core::Error>>()?;
    splits.push(("sanity".into(), gen_ood(&sanity, OodMode::Diffuse)?));

    for metric in [Metric::Epd, Metric::Euclidean, Metric::Cosine] {
        let sc = ScoreConfig {
            metric,
            ..ScoreConfig::default()
        };
        let id_scores = score_dataset(&table, &run.model, &run.normalizer, &id_test, &sc)?;
        for (name, ds) in &splits {
            let ood = score_dataset(&table, &run.model, &run.normalizer, ds, &sc)?;
            println!(
                "{metric:>9} {name:>8}: auroc {:.4} fpr95 {:.4}",
                auroc(&id_scores, &ood)?,
                fpr95(&id_scores, &ood)?
            );
        }
    }

    let id_aff = affinity_stats(&table, &run.model, &run.normalizer, &id_test)?;
    let ood_aff = affinity_stats(&table, &run.model, &run.normalizer, &splits[0].1)?;
    println!(
        "affinity medians: id matched {:.4}, ood matched {:.4}, ood other {:.4}",
        median(id_aff.iter().map(|a| a.matched_core_mean).collect()),
        median(ood_aff.iter().map(|a| a.matched_core_mean).collect()),
        median(ood_aff.iter().map(|a| a.other_core_mean).collect()),
    );
    Ok(())
}
