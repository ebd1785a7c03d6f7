#![no_main]

use libfuzzer_sys::fuzz_target;
use ride::ride::{decode_tensors, encode_tensors, load_model, save_model};

fuzz_target!(|data: &[u8]| {
    if let Ok(tensors) = decode_tensors(data) {
        assert_eq!(encode_tensors(&tensors), data);
    }
    if let Ok(model) = load_model(data) {
        assert_eq!(save_model(&model), data);
    }
});
