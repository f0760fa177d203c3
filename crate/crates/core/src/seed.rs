use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream for a `(seed, parts...)` coordinate, e.g. `(seed, epoch)` or `(seed, day, member)`.
pub fn derive(seed: u64, parts: &[u64]) -> u64 {
    parts.iter().fold(splitmix(seed), |acc, &p| splitmix(acc ^ splitmix(p)))
}

pub fn rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, parts))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_give_distinct_streams() {
        let a = derive(1, &[0, 1]);
        assert_ne!(a, derive(1, &[1, 0]));
        assert_ne!(a, derive(2, &[0, 1]));
        assert_ne!(derive(1, &[]), derive(1, &[0]));
        assert_eq!(a, derive(1, &[0, 1]));
    }
}
