//! `key = value` run configurations; anything accepted must survive a
//! serialize and re-parse unchanged.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = mara::config::parse_config(text) {
        let again = mara::config::parse_config(&cfg.to_kv_string()).expect("serialized config re-parses");
        assert_eq!(again, cfg);
    }
});
