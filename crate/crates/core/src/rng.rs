//! Deterministic per-stream seeding, so parallel work draws the same numbers
//! regardless of scheduling.

/// Seed for the stream `(master, tag, a, b)`.
pub fn stream_seed(master: u64, tag: u64, a: u64, b: u64) -> u64 {
    let mut x = master;
    for v in [tag, a, b] {
        x = splitmix(x ^ splitmix(v.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
