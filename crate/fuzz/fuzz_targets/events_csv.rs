#![no_main]

use libfuzzer_sys::fuzz_target;
use sdff_core::events::{parse_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    if let Ok(stream) = parse_csv(data, None) {
        let mut out = Vec::new();
        write_csv(&stream, &mut out).unwrap();
        let again = parse_csv(out.as_slice(), Some((stream.width(), stream.height()))).unwrap();
        assert_eq!(again.events(), stream.events());
    }
});
