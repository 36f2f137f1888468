//! Orthonormal 8x8 DCT-II with optional JPEG level shift, and zigzag
//! ordering.

use std::sync::OnceLock;

use crate::image::{BLOCK, BLOCK_LEN};

/// 64 DCT coefficients of one block, row-major: index `i * 8 + j` holds
/// vertical frequency `i` and horizontal frequency `j`. Index 0 is DC.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefBlock(pub [f64; BLOCK_LEN]);

impl CoefBlock {
    pub const ZERO: CoefBlock = CoefBlock([0.0; BLOCK_LEN]);

    pub fn dc(&self) -> f64 {
        self.0[0]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row * BLOCK + col]
    }
}

impl Default for CoefBlock {
    fn default() -> Self {
        Self::ZERO
    }
}

/// Zigzag position -> row-major band index.
pub const ZIGZAG: [usize; BLOCK_LEN] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27,
    20, 13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58,
    59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Row-major band index -> zigzag position.
pub const fn zigzag_position(band: usize) -> usize {
    let mut pos = 0;
    while pos < BLOCK_LEN {
        if ZIGZAG[pos] == band {
            return pos;
        }
        pos += 1;
    }
    panic!("band index out of range")
}

pub const UNZIGZAG: [usize; BLOCK_LEN] = {
    let mut inv = [0; BLOCK_LEN];
    let mut pos = 0;
    while pos < BLOCK_LEN {
        inv[ZIGZAG[pos]] = pos;
        pos += 1;
    }
    inv
};

pub fn zigzag<T: Copy>(natural: &[T; BLOCK_LEN]) -> [T; BLOCK_LEN] {
    std::array::from_fn(|pos| natural[ZIGZAG[pos]])
}

pub fn unzigzag<T: Copy>(scan: &[T; BLOCK_LEN]) -> [T; BLOCK_LEN] {
    std::array::from_fn(|band| scan[UNZIGZAG[band]])
}

/// `basis[u][x] = a(u) * cos((2x + 1) u pi / 16)` with `a(0) = sqrt(1/8)`
/// and `a(u) = 1/2` otherwise.
fn basis() -> &'static [[f64; BLOCK]; BLOCK] {
    static BASIS: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (u, row) in m.iter_mut().enumerate() {
            let a = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * x + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

pub const LEVEL_SHIFT: f64 = 128.0;

/// Forward 2D DCT of `block` (row-major samples), subtracting 128 first when
/// `level_shift` is set.
pub fn dct2(block: &[f64; BLOCK_LEN], level_shift: bool) -> CoefBlock {
    let m = basis();
    let shift = if level_shift { LEVEL_SHIFT } else { 0.0 };
    // rows: tmp[r][v] = sum_x m[v][x] * (block[r][x] - shift)
    let mut tmp = [0.0; BLOCK_LEN];
    for r in 0..BLOCK {
        let row = &block[r * BLOCK..(r + 1) * BLOCK];
        for v in 0..BLOCK {
            let mut acc = 0.0;
            for x in 0..BLOCK {
                acc += m[v][x] * (row[x] - shift);
            }
            tmp[r * BLOCK + v] = acc;
        }
    }
    let mut out = [0.0; BLOCK_LEN];
    for u in 0..BLOCK {
        for v in 0..BLOCK {
            let mut acc = 0.0;
            for r in 0..BLOCK {
                acc += m[u][r] * tmp[r * BLOCK + v];
            }
            out[u * BLOCK + v] = acc;
        }
    }
    CoefBlock(out)
}

/// Inverse of [`dct2`].
pub fn idct2(coefs: &CoefBlock, level_shift: bool) -> [f64; BLOCK_LEN] {
    let m = basis();
    let c = &coefs.0;
    // columns: tmp[y][v] = sum_u m[u][y] * c[u][v]
    let mut tmp = [0.0; BLOCK_LEN];
    for y in 0..BLOCK {
        for v in 0..BLOCK {
            let mut acc = 0.0;
            for u in 0..BLOCK {
                acc += m[u][y] * c[u * BLOCK + v];
            }
            tmp[y * BLOCK + v] = acc;
        }
    }
    let shift = if level_shift { LEVEL_SHIFT } else { 0.0 };
    let mut out = [0.0; BLOCK_LEN];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            let mut acc = 0.0;
            for v in 0..BLOCK {
                acc += m[v][x] * tmp[y * BLOCK + v];
            }
            out[y * BLOCK + x] = acc + shift;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct quadruple-sum DCT used as an independent reference.
    fn naive_dct(block: &[f64; 64]) -> [f64; 64] {
        let pi = std::f64::consts::PI;
        let a = |u: usize| if u == 0 { (0.125f64).sqrt() } else { 0.5 };
        let mut out = [0.0; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut s = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        s += block[y * 8 + x]
                            * ((2 * y + 1) as f64 * u as f64 * pi / 16.0).cos()
                            * ((2 * x + 1) as f64 * v as f64 * pi / 16.0).cos();
                    }
                }
                out[u * 8 + v] = a(u) * a(v) * s;
            }
        }
        out
    }

    fn random_block(rng: &mut ChaCha8Rng) -> [f64; 64] {
        std::array::from_fn(|_| rng.gen_range(0.0..255.0))
    }

    #[test]
    fn matches_naive_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let b = random_block(&mut rng);
            let fast = dct2(&b, false);
            let slow = naive_dct(&b);
            for i in 0..64 {
                assert!((fast.0[i] - slow[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn constant_blocks() {
        assert!(dct2(&[128.0; 64], true).0.iter().all(|&c| c.abs() < 1e-12));
        let c = dct2(&[100.0; 64], true);
        assert!((c.dc() + 224.0).abs() < 1e-9);
        assert!(c.0[1..].iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn inverse_special_cases() {
        let zero = idct2(&CoefBlock::ZERO, true);
        assert!(zero.iter().all(|&v| (v - 128.0).abs() < 1e-12));
        let mut dc = CoefBlock::ZERO;
        dc.0[0] = 8.0;
        assert!(idct2(&dc, false).iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn round_trip_and_linearity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = random_block(&mut rng);
            let rho: [f64; 64] = std::array::from_fn(|_| rng.gen_range(-8.0..8.0));
            let back = idct2(&dct2(&x, true), true);
            for i in 0..64 {
                assert!((back[i] - x[i]).abs() < 1e-9);
            }
            let sum: [f64; 64] = std::array::from_fn(|i| x[i] + rho[i]);
            let (cs, cx, cr) = (dct2(&sum, false), dct2(&x, false), dct2(&rho, false));
            for i in 0..64 {
                assert!((cs.0[i] - cx.0[i] - cr.0[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zigzag_layout() {
        let expected = [(0, 0), (0, 1), (1, 0), (2, 0), (1, 1), (0, 2)];
        for (pos, &(r, c)) in expected.iter().enumerate() {
            assert_eq!(ZIGZAG[pos], r * 8 + c);
        }
        assert_eq!(ZIGZAG[63], 63);
        let mut seen = [false; 64];
        for &b in &ZIGZAG {
            assert!(!seen[b]);
            seen[b] = true;
        }
        for band in 0..64 {
            assert_eq!(ZIGZAG[UNZIGZAG[band]], band);
            assert_eq!(zigzag_position(band), UNZIGZAG[band]);
        }
    }

    #[test]
    fn zigzag_follows_anti_diagonals() {
        // consecutive positions stay on the same or the next anti-diagonal
        for pos in 1..64 {
            let d = |b: usize| b / 8 + b % 8;
            let (a, b) = (d(ZIGZAG[pos - 1]), d(ZIGZAG[pos]));
            assert!(b == a || b == a + 1);
        }
    }

    #[test]
    fn zigzag_round_trip() {
        let c: [f64; 64] = std::array::from_fn(|i| i as f64 * 1.5 - 3.0);
        assert_eq!(unzigzag(&zigzag(&c)), c);
    }
}
