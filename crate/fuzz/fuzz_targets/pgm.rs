#![no_main]

use libfuzzer_sys::fuzz_target;
use ride::imaging::{load_image, load_pgm, save_pgm};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = load_pgm(data) {
        assert!(img.values().iter().all(|v| v.fract() == 0.0 && (0.0..=255.0).contains(v)));
        // Decoding is canonical up to header whitespace: re-encoding
        // and decoding again is a fixed point.
        let bytes = save_pgm(&img).expect("decoded levels re-encode");
        assert_eq!(load_pgm(&bytes).unwrap(), img);
    }
    let _ = load_image(data);
});
