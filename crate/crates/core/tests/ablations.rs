use diffmf::pipeline::{run_ablation, synthetic_pair, Ablation, Distinction, ModelConfig};

#[test]
fn studied_variants_train_and_differ_from_the_full_model() {
    let base = ModelConfig { channels: 2, state: 4, crop: 12, batch: 1, lr: 1e-3, seed: 17, ..ModelConfig::tiny() };
    let data = vec![synthetic_pair(12, 2)];
    let probe = synthetic_pair(12, 3);
    let full = run_ablation(&base, Ablation::Full, &data, &probe, 10).unwrap();
    assert!(full.all_finite());
    for variant in Ablation::STUDIED {
        let run = run_ablation(&base, variant, &data, &probe, 10).unwrap();
        assert_eq!(run.history.len(), 10, "{variant}");
        assert!(run.all_finite(), "{variant}");
        match variant.distinction() {
            Distinction::FewerParameters => {
                assert!(run.parameters < full.parameters, "{variant}: {} vs {}", run.parameters, full.parameters)
            }
            Distinction::DifferentOutput => {
                let gap = run.probe.iter().zip(&full.probe).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let loss_gap = (run.last().unwrap().total - full.last().unwrap().total).abs();
                assert!(gap > 1e-9 || loss_gap > 1e-9, "{variant} matches the full model");
            }
            Distinction::Reference => panic!("{variant} is the reference"),
        }
    }
}

#[test]
fn names_round_trip() {
    for v in Ablation::ALL {
        assert_eq!(v.name().parse::<Ablation>().unwrap(), v);
    }
    let err = "no_such".parse::<Ablation>().unwrap_err().to_string();
    assert!(err.contains("no_such") && err.contains("full"), "{err}");
}
