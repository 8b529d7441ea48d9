#![no_main]

use libfuzzer_sys::fuzz_target;
use sdff_core::flow::FlowField;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = FlowField::from_flo_bytes(data) {
        let again = FlowField::from_flo_bytes(&f.to_flo_bytes()).unwrap();
        assert_eq!((again.width, again.height), (f.width, f.height));
    }
});
