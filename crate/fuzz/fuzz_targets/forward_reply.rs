//! Reference model server `/forward` bodies. The first byte picks the
//! requested `k`.

#![no_main]

use libfuzzer_sys::fuzz_target;

use mara::refmodel::{decode_forward_reply, decode_handshake};

const HANDSHAKE: &[u8] = br#"{"vocab_size":16,"eos_id":15,"feature_dim":4,"model_name":"fuzz","max_context":64}"#;

fuzz_target!(|data: &[u8]| {
    let Some((&k, body)) = data.split_first() else { return };
    let hs = decode_handshake(HANDSHAKE).expect("fixed handshake is valid");
    let _ = decode_forward_reply(body, &hs, usize::from(k % 20));
});
