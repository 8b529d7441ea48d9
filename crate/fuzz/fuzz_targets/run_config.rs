#![no_main]

use libfuzzer_sys::fuzz_target;
use sdff_core::config::RunConfig;
use sdff_core::net::ModelConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = RunConfig::parse(text) {
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
    if let Ok(m) = ModelConfig::from_kv(text) {
        assert_eq!(ModelConfig::from_kv(&m.to_kv()).unwrap(), m);
    }
});
