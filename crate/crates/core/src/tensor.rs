//! Small fixed-size tensors in four dimensions.

use nalgebra::Matrix4;

pub type Vec4 = [f64; 4];
pub type Mat4 = [[f64; 4]; 4];
pub type Tensor3 = [[[f64; 4]; 4]; 4];

/// Value with its first two derivatives along a curve parameter.
pub type Taylor = [f64; 3];

pub const ZETA_LEN: usize = 40;

/// Coefficient family of a current in adapted coordinates, stored flat.
pub type Zeta = [f64; ZETA_LEN];

/// Fixed-size component arrays that can be viewed as flat slices.
pub trait ComponentArray: Copy + Send + Sync + std::fmt::Debug + 'static {
    const LEN: usize;
    fn zero() -> Self;
    fn flat(&self) -> &[f64];
    fn flat_mut(&mut self) -> &mut [f64];

    fn from_flat(values: &[f64]) -> Self {
        let mut out = Self::zero();
        out.flat_mut().copy_from_slice(&values[..Self::LEN]);
        out
    }

    fn max_abs(&self) -> f64 {
        self.flat().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl ComponentArray for Mat4 {
    const LEN: usize = 16;
    fn zero() -> Self {
        [[0.0; 4]; 4]
    }
    fn flat(&self) -> &[f64] {
        self.as_flattened()
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self.as_flattened_mut()
    }
}

impl ComponentArray for Tensor3 {
    const LEN: usize = 64;
    fn zero() -> Self {
        [[[0.0; 4]; 4]; 4]
    }
    fn flat(&self) -> &[f64] {
        self.as_flattened().as_flattened()
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self.as_flattened_mut().as_flattened_mut()
    }
}

impl ComponentArray for Vec4 {
    const LEN: usize = 4;
    fn zero() -> Self {
        [0.0; 4]
    }
    fn flat(&self) -> &[f64] {
        self
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self
    }
}

impl ComponentArray for Zeta {
    const LEN: usize = ZETA_LEN;
    fn zero() -> Self {
        [0.0; ZETA_LEN]
    }
    fn flat(&self) -> &[f64] {
        self
    }
    fn flat_mut(&mut self) -> &mut [f64] {
        self
    }
}

pub fn flat_index2(a: usize, b: usize) -> usize {
    4 * a + b
}

pub fn flat_index3(a: usize, b: usize, c: usize) -> usize {
    16 * a + 4 * b + c
}

/// Levi-Civita symbol on spatial indices 1..=3 with `eps(1,2,3) = 1`.
pub fn levi_civita(i: usize, j: usize, k: usize) -> f64 {
    match (i, j, k) {
        (1, 2, 3) | (2, 3, 1) | (3, 1, 2) => 1.0,
        (3, 2, 1) | (1, 3, 2) | (2, 1, 3) => -1.0,
        _ => 0.0,
    }
}

pub fn to_matrix(m: &Mat4) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[i][j])
}

pub fn from_matrix(m: &Matrix4<f64>) -> Mat4 {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

pub fn det(m: &Mat4) -> f64 {
    to_matrix(m).determinant()
}

pub fn inverse(m: &Mat4) -> Option<Mat4> {
    to_matrix(m).try_inverse().map(|i| from_matrix(&i))
}

pub fn mat_mul(a: &Mat4, b: &Mat4) -> Mat4 {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..4).map(|k| a[i][k] * b[k][j]).sum()))
}

pub fn mat_vec(a: &Mat4, v: &Vec4) -> Vec4 {
    std::array::from_fn(|i| (0..4).map(|k| a[i][k] * v[k]).sum())
}

/// `out^{cd} = A^c_a A^d_b m^{ab}`.
pub fn push_forward2(a: &Mat4, m: &Mat4) -> Mat4 {
    let mut half = [[0.0; 4]; 4];
    for c in 0..4 {
        for b in 0..4 {
            half[c][b] = (0..4).map(|k| a[c][k] * m[k][b]).sum();
        }
    }
    std::array::from_fn(|c| std::array::from_fn(|d| (0..4).map(|b| half[c][b] * a[d][b]).sum()))
}

/// `out^{def} = A^d_a A^e_b A^f_c t^{abc}`, contracted one slot at a time.
pub fn push_forward3(a: &Mat4, t: &Tensor3) -> Tensor3 {
    let mut s1 = Tensor3::zero();
    for x in 0..4 {
        for y in 0..4 {
            for f in 0..4 {
                s1[x][y][f] = (0..4).map(|c| a[f][c] * t[x][y][c]).sum();
            }
        }
    }
    let mut s2 = Tensor3::zero();
    for x in 0..4 {
        for e in 0..4 {
            for f in 0..4 {
                s2[x][e][f] = (0..4).map(|b| a[e][b] * s1[x][b][f]).sum();
            }
        }
    }
    let mut out = Tensor3::zero();
    for d in 0..4 {
        for e in 0..4 {
            for f in 0..4 {
                out[d][e][f] = (0..4).map(|x| a[d][x] * s2[x][e][f]).sum();
            }
        }
    }
    out
}

/// Largest `|m^{ab} + m^{ba}|` and where it occurs.
pub fn antisymmetry_defect(m: &Mat4) -> (f64, [usize; 2]) {
    let mut worst = (0.0, [0, 0]);
    for a in 0..4 {
        for b in a..4 {
            let r = (m[a][b] + m[b][a]).abs();
            if r > worst.0 {
                worst = (r, [a, b]);
            }
        }
    }
    worst
}

/// Largest violation of `t^{abc} = t^{acb}` and `t^{abc} + t^{bca} + t^{cab} = 0`.
pub fn quadrupole_defect(t: &Tensor3) -> (f64, [usize; 3]) {
    let mut worst = (0.0, [0, 0, 0]);
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let sym = (t[a][b][c] - t[a][c][b]).abs();
                let cyc = (t[a][b][c] + t[b][c][a] + t[c][a][b]).abs();
                let r = sym.max(cyc);
                if r > worst.0 {
                    worst = (r, [a, b, c]);
                }
            }
        }
    }
    worst
}

/// Orthogonal projection onto tensors symmetric in the last two slots whose
/// cyclic sum vanishes.
pub fn project_quadrupole(t: &Tensor3) -> Tensor3 {
    let mut s = Tensor3::zero();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                s[a][b][c] = 0.5 * (t[a][b][c] + t[a][c][b]);
            }
        }
    }
    let mut out = Tensor3::zero();
    for a in 0..4 {
        for b in 0..4 {
            for c in 0..4 {
                let total = (s[a][b][c] + s[b][c][a] + s[c][a][b]) / 3.0;
                out[a][b][c] = s[a][b][c] - total;
            }
        }
    }
    out
}

pub fn norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Product of two truncated series.
#[inline]
pub fn tmul(a: Taylor, b: Taylor) -> Taylor {
    [
        a[0] * b[0],
        a[1] * b[0] + a[0] * b[1],
        a[2] * b[0] + 2.0 * a[1] * b[1] + a[0] * b[2],
    ]
}

#[inline]
pub fn tadd(a: Taylor, b: Taylor) -> Taylor {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn tscale(a: Taylor, s: f64) -> Taylor {
    [a[0] * s, a[1] * s, a[2] * s]
}
