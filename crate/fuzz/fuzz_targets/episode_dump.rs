//! Episode dumps written by `generate`.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(records) = mara::mdp::parse_episode_dump(text) {
            let _ = mara::eval::acceptance_histogram(&records);
        }
    }
});
