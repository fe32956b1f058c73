#![no_main]
use difflab_core::csvio::read_samples;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = read_samples(data) {
        if let Some(first) = samples.first() {
            assert!(samples.iter().all(|x| x.len() == first.len()));
            assert!(samples.iter().flat_map(|x| x.iter()).all(|v| v.is_finite()));
        }
    }
});
