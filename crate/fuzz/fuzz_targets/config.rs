#![no_main]

use libfuzzer_sys::fuzz_target;
use ride_cli::CliConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = CliConfig::parse(text) {
            assert_eq!(CliConfig::parse(&cfg.render()).unwrap(), cfg);
        }
    }
});
