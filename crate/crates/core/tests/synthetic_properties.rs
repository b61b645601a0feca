//! Statistical properties of the synthetic generator.

use complaint_core::data_model::{Split, NUM_ASPECTS, NUM_STATES};
use complaint_core::metrics::exact_match;
use complaint_core::synthetic::{generate_dataset, SynthSpec};
use complaint_core::train::{predict_all, train, TrainConfig, TrainOutputs};
use complaint_core::{AspectCatalog, Model, ModelConfig};

fn spec(n: usize) -> SynthSpec {
    SynthSpec {
        num_samples: n,
        dim: 16,
        max_chunks: 4,
        seed: 42,
        ..SynthSpec::default()
    }
}

// Mean projection of every chunk embedding onto each (aspect, state)
// direction, split by whether the sample is in that state.
fn projections(data: &complaint_core::synthetic::SyntheticDataset, image: bool) -> Vec<(f64, usize, f64, usize)> {
    let mut out = Vec::new();
    for j in 0..NUM_ASPECTS {
        for s in 0..NUM_STATES {
            let u = data.directions.row(NUM_STATES * j + s);
            let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0, 0.0, 0);
            for r in &data.reviews {
                let active = r.gold_label.unwrap().get(j).index() == s;
                for c in &r.chunks {
                    let e = if image { &c.image_embedding } else { &c.text_embedding };
                    let p: f64 = e.iter().zip(u.iter()).map(|(&x, &w)| x as f64 * w).sum();
                    if active {
                        on += p;
                        n_on += 1;
                    } else {
                        off += p;
                        n_off += 1;
                    }
                }
            }
            out.push((on / n_on as f64, n_on, off / n_off as f64, n_off));
        }
    }
    out
}

#[test]
fn text_only_split_leaves_image_without_signal() {
    let s = SynthSpec {
        modality_split: 1.0,
        signal_strength: 3.0,
        ..spec(1000)
    };
    let data = generate_dataset(&s).unwrap();
    // projections of unit-variance noise onto a unit vector: N(0, 1/count)
    for (on, n_on, off, n_off) in projections(&data, true) {
        assert!(on.abs() < 3.0 / (n_on as f64).sqrt(), "{on} over {n_on}");
        assert!(off.abs() < 3.0 / (n_off as f64).sqrt(), "{off} over {n_off}");
    }
    // positive control: text carries the full strength on active directions
    for (on, n_on, off, n_off) in projections(&data, false) {
        assert!((on - 3.0).abs() < 3.0 / (n_on as f64).sqrt(), "{on}");
        assert!(off.abs() < 3.0 / (n_off as f64).sqrt(), "{off}");
    }
}

#[test]
fn label_marginals_pass_chi_square() {
    let data = generate_dataset(&spec(1000)).unwrap();
    for j in 0..NUM_ASPECTS {
        let mut counts = [0f64; NUM_STATES];
        for r in &data.reviews {
            counts[r.gold_label.unwrap().get(j).index()] += 1.0;
        }
        let expected = 1000.0 / 3.0;
        let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
        // 99.9th percentile of chi-square with 2 degrees of freedom
        assert!(chi2 < 13.8, "aspect {j}: {counts:?} chi2 {chi2}");
    }
}

#[test]
fn zero_signal_is_not_learnable() {
    let s = SynthSpec {
        signal_strength: 0.0,
        test_fraction: 0.5,
        ..spec(400)
    };
    let data = generate_dataset(&s).unwrap();
    let cfg = TrainConfig {
        lr_isec: 1e-2,
        lr_classifier: 1e-3,
        epochs: 20,
        seed: 1,
        ..TrainConfig::default()
    };
    let model = Model::<f32>::new(ModelConfig::tiny(16, 2, 2), 1).unwrap();
    let test = data.split(Split::Test);
    let out = train(model, &data.split(Split::Train), &[], &AspectCatalog::default(), &cfg, &TrainOutputs::default())
        .unwrap();
    let p = predict_all(&out.model, &test).unwrap();
    let hits = (exact_match(&p.golds, &p.preds).unwrap() * test.len() as f64).round() as usize;
    // chance is (1/3)^5 per vector: 0.82 expected hits in 200;
    // P(X >= 6) under Binomial(200, 1/243) is below 1e-3
    assert_eq!(test.len(), 200);
    assert!(hits <= 5, "{hits} exact matches out of 200");
}
