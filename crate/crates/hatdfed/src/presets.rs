//! Named experiment presets: the desk-scale analogs of the four
//! (skewness, connection probability) settings, plus a fast smoke preset.

use hatdfed_core::SimConfig;

pub const PRESET_NAMES: &[&str] = &[
    "table1-desk",
    "table1-desk-dds07",
    "table1-desk-spc09",
    "table1-desk-dds07-spc09",
    "smoke",
];

pub fn preset(name: &str) -> Option<SimConfig> {
    let base = SimConfig::default();
    let cfg = match name {
        "table1-desk" => base,
        "table1-desk-dds07" => SimConfig { lambda_dir: 0.7, ..base },
        "table1-desk-spc09" => SimConfig { rho: 0.9, ..base },
        "table1-desk-dds07-spc09" => SimConfig {
            lambda_dir: 0.7,
            rho: 0.9,
            ..base
        },
        // Few rounds and a small task, for quick checks.
        "smoke" => SimConfig {
            n_rounds: 10,
            n_classes: 4,
            feature_dim: 8,
            samples_per_server: 200,
            test_per_class: 50,
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}
