#![no_main]

use libfuzzer_sys::fuzz_target;
use sdff_core::events::{parse_bin_v1, write_bin_v1};

fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = parse_bin_v1(data) {
        let mut out = Vec::new();
        write_bin_v1(&stream, &mut out).unwrap();
        assert_eq!(parse_bin_v1(&out).unwrap().events(), stream.events());
    }
});
