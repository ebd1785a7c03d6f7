#![no_main]

use libfuzzer_sys::fuzz_target;
use ride::imaging::{load_fgrd, save_fgrd};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = load_fgrd(data) {
        // The decoder accepts exactly the encoder's output.
        assert_eq!(save_fgrd(&img), data);
    }
});
