//! Arithmetic in GF(2^8) with the reducing polynomial x^8 + x^4 + x^3 + x^2 + 1 (0x11d).

const POLY: u16 = 0x11d;

const fn build_tables() -> ([u8; 512], [u8; 256]) {
    let mut exp = [0u8; 512];
    let mut log = [0u8; 256];
    let mut x: u16 = 1;
    let mut i = 0;
    while i < 255 {
        exp[i] = x as u8;
        log[x as usize] = i as u8;
        x <<= 1;
        if x & 0x100 != 0 {
            x ^= POLY;
        }
        i += 1;
    }
    // Doubled so mul can skip the mod 255.
    while i < 512 {
        exp[i] = exp[i - 255];
        i += 1;
    }
    (exp, log)
}

const TABLES: ([u8; 512], [u8; 256]) = build_tables();
static EXP: [u8; 512] = TABLES.0;
static LOG: [u8; 256] = TABLES.1;

const fn build_mul_table() -> [[u8; 256]; 256] {
    let (exp, log) = build_tables();
    let mut table = [[0u8; 256]; 256];
    let mut a = 1;
    while a < 256 {
        let mut b = 1;
        while b < 256 {
            table[a][b] = exp[log[a] as usize + log[b] as usize];
            b += 1;
        }
        a += 1;
    }
    table
}

/// `MUL[a][b] = a * b`; rows are used directly in the bulk kernels.
pub(crate) static MUL: [[u8; 256]; 256] = build_mul_table();

#[inline]
pub fn mul(a: u8, b: u8) -> u8 {
    MUL[a as usize][b as usize]
}

/// Multiplicative inverse. Zero has none.
pub fn inv(a: u8) -> Option<u8> {
    if a == 0 {
        None
    } else {
        Some(EXP[255 - LOG[a as usize] as usize])
    }
}

pub fn pow(base: u8, exp: usize) -> u8 {
    if exp == 0 {
        return 1;
    }
    if base == 0 {
        return 0;
    }
    EXP[(LOG[base as usize] as usize * exp) % 255]
}

/// `dst[i] ^= coeff * src[i]`
pub fn mul_acc(dst: &mut [u8], src: &[u8], coeff: u8) {
    debug_assert_eq!(dst.len(), src.len());
    match coeff {
        0 => {}
        1 => dst.iter_mut().zip(src).for_each(|(d, s)| *d ^= s),
        c => {
            let row = &MUL[c as usize];
            dst.iter_mut()
                .zip(src)
                .for_each(|(d, s)| *d ^= row[*s as usize]);
        }
    }
}

/// Dense row-major square matrix over GF(2^8).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matrix {
    size: usize,
    cells: Vec<u8>,
}

impl Matrix {
    pub fn from_rows(rows: &[Vec<u8>]) -> Self {
        let size = rows.len();
        let mut cells = Vec::with_capacity(size * size);
        for row in rows {
            assert_eq!(row.len(), size, "matrix must be square");
            cells.extend_from_slice(row);
        }
        Self { size, cells }
    }

    pub fn get(&self, r: usize, c: usize) -> u8 {
        self.cells[r * self.size + c]
    }

    pub fn row(&self, r: usize) -> &[u8] {
        &self.cells[r * self.size..(r + 1) * self.size]
    }

    /// Gauss-Jordan inversion; `None` when singular.
    pub fn invert(&self) -> Option<Matrix> {
        let n = self.size;
        let mut work = self.cells.clone();
        let mut out = vec![0u8; n * n];
        for i in 0..n {
            out[i * n + i] = 1;
        }
        for col in 0..n {
            let pivot = (col..n).find(|&r| work[r * n + col] != 0)?;
            if pivot != col {
                for c in 0..n {
                    work.swap(pivot * n + c, col * n + c);
                    out.swap(pivot * n + c, col * n + c);
                }
            }
            let scale = inv(work[col * n + col])?;
            for c in 0..n {
                work[col * n + c] = mul(work[col * n + c], scale);
                out[col * n + c] = mul(out[col * n + c], scale);
            }
            for r in 0..n {
                let factor = work[r * n + col];
                if r == col || factor == 0 {
                    continue;
                }
                for c in 0..n {
                    work[r * n + c] ^= mul(factor, work[col * n + c]);
                    out[r * n + c] ^= mul(factor, out[col * n + c]);
                }
            }
        }
        Some(Matrix {
            size: n,
            cells: out,
        })
    }

    pub fn multiply(&self, other: &Matrix) -> Matrix {
        let n = self.size;
        assert_eq!(n, other.size);
        let mut cells = vec![0u8; n * n];
        for r in 0..n {
            for c in 0..n {
                let mut acc = 0u8;
                for i in 0..n {
                    acc ^= mul(self.get(r, i), other.get(i, c));
                }
                cells[r * n + c] = acc;
            }
        }
        Matrix { size: n, cells }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn slow_mul(mut a: u8, mut b: u8) -> u8 {
        // Russian-peasant multiplication, independent of the log tables.
        let mut p = 0u8;
        while b != 0 {
            if b & 1 != 0 {
                p ^= a;
            }
            let carry = a & 0x80 != 0;
            a <<= 1;
            if carry {
                a ^= (POLY & 0xff) as u8;
            }
            b >>= 1;
        }
        p
    }

    #[test]
    fn table_mul_matches_shift_and_add() {
        for a in 0..=255u8 {
            for b in 0..=255u8 {
                assert_eq!(mul(a, b), slow_mul(a, b), "{a} * {b}");
            }
        }
    }

    #[test]
    fn every_nonzero_element_has_inverse() {
        assert_eq!(inv(0), None);
        for a in 1..=255u8 {
            assert_eq!(mul(a, inv(a).unwrap()), 1);
        }
    }

    #[test]
    fn pow_agrees_with_repeated_mul() {
        for base in [0u8, 1, 2, 3, 29, 255] {
            let mut acc = 1u8;
            for e in 0..300 {
                assert_eq!(pow(base, e), acc, "{base}^{e}");
                acc = mul(acc, base);
            }
        }
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = Matrix::from_rows(&[vec![1, 2, 3], vec![4, 5, 6], vec![7, 8, 10]]);
        let inv = m.invert().expect("invertible");
        let id = m.multiply(&inv);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(id.get(r, c), u8::from(r == c));
            }
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let m = Matrix::from_rows(&[vec![1, 2], vec![1, 2]]);
        assert!(m.invert().is_none());
    }
}
