//! Reference model server handshake bodies.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = mara::refmodel::decode_handshake(data);
});
