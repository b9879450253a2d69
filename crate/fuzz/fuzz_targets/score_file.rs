//! Judge score files.

#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = mara::eval::parse_score_file(text) else {
        return;
    };
    let outcomes: Result<Vec<_>, _> = rows
        .into_iter()
        .map(|[ha, xa, hb, xb]| mara::eval::judge_pair(ha, xa, hb, xb))
        .collect();
    if let Ok(o) = outcomes {
        let _ = mara::eval::tally(o);
    }
});
