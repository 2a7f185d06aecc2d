use std::path::PathBuf;

use cxr_anomaly::corpus::Setting;
use cxr_anomaly::experiment::ExperimentConfig;
use cxr_anomaly::training::Regime;

fn preset(scale: &str, regime: Regime) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(scale)
        .join(format!("{regime}.toml"));
    ExperimentConfig::load(&path).unwrap()
}

#[test]
fn shipped_presets_match_their_constructors() {
    for regime in [Regime::Cae, Regime::VanillaAdv, Regime::WassersteinAdv] {
        let desk = preset("desk", regime);
        let expected = ExperimentConfig::desk(
            "data/synth/manifest.csv",
            format!("runs/desk_{regime}_healthy"),
            Setting::Healthy,
            regime,
        );
        assert_eq!(desk, expected);
        assert_eq!(desk.model.input_side, 64);
        assert_eq!(desk.train.epochs, 50);

        let full = preset("full", regime);
        let expected = ExperimentConfig::full(
            "data/covidx/manifest.csv",
            format!("runs/full_{regime}_healthy"),
            Setting::Healthy,
            regime,
        );
        assert_eq!(full, expected);
        assert_eq!(full.model.flatten_size().unwrap(), 25088);
        assert_eq!(full.train.epochs, 750);
    }
}
