use candle_core::{DType, Device, Tensor, D};

use crate::error::{Error, Result};

/// Rotary position embedding with the half-split pairing: dimension `i` is
/// rotated together with `i + head_dim/2`.
#[derive(Debug, Clone, Copy)]
pub struct Rotary {
    head_dim: usize,
    base: f64,
}

/// Precomputed `cos`/`sin` tables `[L × head_dim/2]` for a list of positions.
#[derive(Debug, Clone)]
pub struct RotaryTables {
    cos: Tensor,
    sin: Tensor,
}

impl Rotary {
    pub fn new(head_dim: usize) -> Result<Self> {
        if head_dim == 0 || head_dim % 2 != 0 {
            return Err(Error::config(format!(
                "rotary embedding needs an even head dimension, got {head_dim}"
            )));
        }
        Ok(Self {
            head_dim,
            base: 10_000.0,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn tables(&self, positions: &[f64], dtype: DType, device: &Device) -> Result<RotaryTables> {
        let half = self.head_dim / 2;
        let mut cos = Vec::with_capacity(positions.len() * half);
        let mut sin = Vec::with_capacity(positions.len() * half);
        for &p in positions {
            for i in 0..half {
                let theta = p / self.base.powf(2.0 * i as f64 / self.head_dim as f64);
                cos.push(theta.cos());
                sin.push(theta.sin());
            }
        }
        let shape = (positions.len(), half);
        Ok(RotaryTables {
            cos: Tensor::from_vec(cos, shape, device)?.to_dtype(dtype)?,
            sin: Tensor::from_vec(sin, shape, device)?.to_dtype(dtype)?,
        })
    }

    /// Rotates `x` of shape `[..., L, head_dim]` by the per-row positions in `tables`.
    pub fn apply(&self, x: &Tensor, tables: &RotaryTables) -> Result<Tensor> {
        let hd = x.dim(D::Minus1)?;
        if hd != self.head_dim {
            return Err(Error::config(format!(
                "rotary head dim {} does not match input dim {hd}",
                self.head_dim
            )));
        }
        let half = hd / 2;
        let x1 = x.narrow(D::Minus1, 0, half)?;
        let x2 = x.narrow(D::Minus1, half, half)?;
        let a = (x1.broadcast_mul(&tables.cos)? - x2.broadcast_mul(&tables.sin)?)?;
        let b = (x1.broadcast_mul(&tables.sin)? + x2.broadcast_mul(&tables.cos)?)?;
        Ok(Tensor::cat(&[a, b], D::Minus1)?)
    }

    pub fn rotate(&self, x: &Tensor, positions: &[f64]) -> Result<Tensor> {
        let tables = self.tables(positions, x.dtype(), x.device())?;
        self.apply(x, &tables)
    }
}

/// Rotates queries and keys that share the same positions.
pub fn rotary_rotate(q: &Tensor, k: &Tensor, positions: &[f64]) -> Result<(Tensor, Tensor)> {
    let rot = Rotary::new(q.dim(D::Minus1)?)?;
    let tables = rot.tables(positions, q.dtype(), q.device())?;
    Ok((rot.apply(q, &tables)?, rot.apply(k, &tables)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn vecs(rng: &mut rand_chacha::ChaCha8Rng, n: usize, d: usize) -> Tensor {
        let v: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, (n, d), &Device::Cpu).unwrap()
    }

    fn dot(a: &Tensor, b: &Tensor) -> f64 {
        (a * b).unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn equal_positions_cancel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let q = vecs(&mut rng, 1, 32);
        let k = vecs(&mut rng, 1, 32);
        let (qr, kr) = rotary_rotate(&q, &k, &[17.0]).unwrap();
        assert!((dot(&qr, &kr) - dot(&q, &k)).abs() < 1e-10);
    }

    #[test]
    fn relative_shift_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let rot = Rotary::new(32).unwrap();
        for _ in 0..20 {
            let q = vecs(&mut rng, 1, 32);
            let k = vecs(&mut rng, 1, 32);
            let p = rng.random_range(0.0..50.0f64).floor();
            let r = rng.random_range(0.0..50.0f64).floor();
            let delta = rng.random_range(1.0..100.0f64).floor();
            let base = dot(&rot.rotate(&q, &[p]).unwrap(), &rot.rotate(&k, &[r]).unwrap());
            let shifted = dot(
                &rot.rotate(&q, &[p + delta]).unwrap(),
                &rot.rotate(&k, &[r + delta]).unwrap(),
            );
            assert!((base - shifted).abs() < 1e-5, "{base} vs {shifted}");
        }
    }

    #[test]
    fn preserves_subplane_norms_and_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let rot = Rotary::new(8).unwrap();
        let x = vecs(&mut rng, 3, 8);
        let y = rot.rotate(&x, &[0.0, 5.0, 11.0]).unwrap();
        let xv = x.to_vec2::<f64>().unwrap();
        let yv = y.to_vec2::<f64>().unwrap();
        for (xr, yr) in xv.iter().zip(&yv) {
            for i in 0..4 {
                let nx = xr[i].hypot(xr[i + 4]);
                let ny = yr[i].hypot(yr[i + 4]);
                assert!((nx - ny).abs() < 1e-12);
            }
        }
        let z = Tensor::zeros((2, 8), DType::F64, &Device::Cpu).unwrap();
        let zr = rot.rotate(&z, &[3.0, 9.0]).unwrap();
        assert_eq!(zr.abs().unwrap().sum_all().unwrap().to_scalar::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn odd_head_dim_is_config_error() {
        assert!(matches!(Rotary::new(7), Err(Error::Config(_))));
    }
}
