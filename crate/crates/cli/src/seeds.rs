//! One master seed fanned out to named, independent substreams.

/// Seed of the substream `name` under `master`.
pub fn substream(master: u64, name: &str) -> u64 {
    // FNV-1a over the name, mixed into the master seed by splitmix64.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(master ^ h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub const SPLIT: &str = "split";
pub const TUNING: &str = "tuning";
pub const SYNTH_SETPOINT: &str = "synth.setpoint";
pub const SYNTH_DISTURBANCE: &str = "synth.disturbance";
pub const SYNTH_NOISE: &str = "synth.noise";
