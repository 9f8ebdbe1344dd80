//! Hilbert space-filling curve index (Skilling's transpose algorithm,
//! origin-start orientation) and the Hilbert sort of a particle cloud.

use crate::error::{NhfError, Result};

use super::{psi_map, PsiConfig};

/// Quantized Hilbert curve on `[0,1)^dim` with `bits` bits per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HilbertMap {
    dim: usize,
    bits: u32,
}

impl HilbertMap {
    pub fn new(dim: usize, bits: u32) -> Result<Self> {
        if dim == 0 || bits == 0 {
            return Err(NhfError::invalid("Hilbert map needs positive dimension and bit depth"));
        }
        if dim as u64 * bits as u64 > 62 || bits > 32 {
            return Err(NhfError::invalid(format!(
                "Hilbert map with {dim} axes of {bits} bits exceeds 62 index bits"
            )));
        }
        Ok(Self { dim, bits })
    }

    /// The finest map for `dim` axes.
    pub fn finest(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(NhfError::invalid("Hilbert map needs positive dimension"));
        }
        Self::new(dim, (62 / dim as u32).min(32).max(1))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Integer curve position of a cell with integer coordinates `< 2^bits`.
    pub fn cell_index(&self, cell: &[u32]) -> u64 {
        let b = self.bits;
        if self.dim == 1 {
            return cell[0] as u64;
        }
        let mut x: Vec<u32> = cell.to_vec();
        axes_to_transpose(&mut x, b);
        let mut index = 0u64;
        for bit in (0..b).rev() {
            for xi in &x {
                index = (index << 1) | ((xi >> bit) & 1) as u64;
            }
        }
        index
    }

    /// Quantizes a point of `[0,1)^dim` to its cell.
    pub fn quantize(&self, point: &[f64]) -> Result<Vec<u32>> {
        crate::error::check_len("Hilbert point", self.dim, point.len())?;
        let cells = (1u64 << self.bits) as f64;
        let max = ((1u64 << self.bits) - 1) as u32;
        point
            .iter()
            .map(|&u| {
                if !(0.0..1.0).contains(&u) {
                    return Err(NhfError::invalid(format!("Hilbert coordinate {u} outside [0,1)")));
                }
                Ok(((u * cells) as u64).min(max as u64) as u32)
            })
            .collect()
    }

    pub fn index_u64(&self, point: &[f64]) -> Result<u64> {
        Ok(self.cell_index(&self.quantize(point)?))
    }
}

/// Skilling's in-place conversion from axes to the transposed Hilbert index.
fn axes_to_transpose(x: &mut [u32], bits: u32) {
    let n = x.len();
    let m = 1u32 << (bits - 1);
    // inverse undo
    let mut q = m;
    while q > 1 {
        let p = q - 1;
        for i in 0..n {
            if x[i] & q != 0 {
                x[0] ^= p;
            } else {
                let t = (x[0] ^ x[i]) & p;
                x[0] ^= t;
                x[i] ^= t;
            }
        }
        q >>= 1;
    }
    // Gray encode
    for i in 1..n {
        x[i] ^= x[i - 1];
    }
    let mut t = 0;
    q = m;
    while q > 1 {
        if x[n - 1] & q != 0 {
            t ^= q - 1;
        }
        q >>= 1;
    }
    for xi in x.iter_mut() {
        *xi ^= t;
    }
}

/// Curve position of `point` scaled into `[0,1)`.
pub fn hilbert_index(point: &[f64], map: &HilbertMap) -> Result<f64> {
    let idx = map.index_u64(point)?;
    Ok(idx as f64 / (map.dim as f64 * map.bits as f64).exp2())
}

/// Stable permutation ordering a weighted cloud along the Hilbert curve of
/// its logistic image. One-dimensional clouds are sorted by value.
pub fn hilbert_sort(points: &[Vec<f64>], weights: &[f64], map: &HilbertMap, psi: &PsiConfig) -> Result<Vec<usize>> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    if points.len() <= 1 {
        return Ok(order);
    }
    if map.dim == 1 {
        for p in points {
            crate::error::check_len("Hilbert point", 1, p.len())?;
        }
        order.sort_by(|&a, &b| points[a][0].total_cmp(&points[b][0]));
        return Ok(order);
    }
    let keys = psi_map(points, weights, psi)?
        .iter()
        .map(|u| map.index_u64(u))
        .collect::<Result<Vec<u64>>>()?;
    order.sort_by_key(|&i| keys[i]);
    Ok(order)
}
