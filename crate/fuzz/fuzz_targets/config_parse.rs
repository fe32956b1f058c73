#![no_main]
use difflab::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

const MAX_INPUT: usize = 64 * 1024;

fuzz_target!(|data: &[u8]| {
    if data.len() > MAX_INPUT {
        return;
    }
    let Ok(s) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = ExperimentConfig::from_json(s) else {
        return;
    };
    // Echo must parse back to the same config.
    let again = ExperimentConfig::from_json(&config.to_json()).expect("echo parses");
    assert_eq!(again.to_json(), config.to_json());
    if config.process.dimension <= 8 {
        let _ = config.spec();
        let _ = config.grid.as_ref().filter(|g| g.n_steps.is_none_or(|n| n <= 1 << 16)).map(|_| config.grid());
    }
});
