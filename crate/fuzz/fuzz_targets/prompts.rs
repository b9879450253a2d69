//! Prompt files, one token-id line per prompt.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = mara::dataset::PromptDataset::parse("fuzz", text);
    }
});
