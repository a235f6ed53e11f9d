use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Continuous latents at `1/downsample` of the mel frame rate.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub latents: Array2<f32>,
    pub downsample: usize,
}

impl LatentSequence {
    pub fn new(latents: Array2<f32>, downsample: usize) -> Result<Self> {
        if downsample == 0 {
            return Err(Error::config("downsample must be ≥ 1"));
        }
        if latents.iter().any(|x| !x.is_finite()) {
            return Err(Error::input("latents contain non-finite values"));
        }
        Ok(Self { latents, downsample })
    }

    pub fn len(&self) -> usize {
        self.latents.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.latents.ncols()
    }

    /// Mel frames covered by the latents.
    pub fn n_frames(&self) -> usize {
        self.len() * self.downsample
    }
}

/// `ceil(n_frames / downsample)`.
pub fn latent_len(n_frames: usize, downsample: usize) -> usize {
    n_frames.div_ceil(downsample)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebooks {
    pub stages: Vec<Array2<f32>>,
}

impl RvqCodebooks {
    pub fn new(stages: Vec<Array2<f32>>) -> Result<Self> {
        let cb = Self { stages };
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.stages.first() else {
            return Err(Error::config("RVQ needs at least one stage"));
        };
        let d = first.ncols();
        for s in &self.stages {
            if s.nrows() < 2 {
                return Err(Error::config("each codebook needs at least 2 codes"));
            }
            if s.ncols() != d {
                return Err(Error::config("codebooks disagree on latent width"));
            }
            if s.iter().any(|x| !x.is_finite()) {
                return Err(Error::config("codebook contains non-finite values"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.stages[0].ncols()
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RvqOutput {
    /// `codes[t][k]`
    pub codes: Vec<Vec<usize>>,
    pub quantized: LatentSequence,
    /// Frobenius norm of the whole-sequence residual after each stage.
    pub residual_norms: Vec<f64>,
    /// Residual entering each stage (what that stage quantized).
    pub stage_inputs: Vec<Array2<f32>>,
}

/// Index of the nearest row of `book`; ties go to the lowest index.
pub fn nearest(book: ArrayView2<f32>, x: ArrayView1<f32>) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, row) in book.rows().into_iter().enumerate() {
        let d: f64 = row.iter().zip(x).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

pub fn rvq_quantize(x: &LatentSequence, cb: &RvqCodebooks) -> Result<RvqOutput> {
    cb.validate()?;
    if x.dim() != cb.dim() {
        return Err(Error::input(format!(
            "latent width {} does not match codebook width {}",
            x.dim(),
            cb.dim()
        )));
    }
    let t = x.len();
    let mut residual = x.latents.clone();
    let mut quantized = Array2::<f32>::zeros(x.latents.raw_dim());
    let mut codes = vec![Vec::with_capacity(cb.n_stages()); t];
    let mut norms = Vec::with_capacity(cb.n_stages());
    let mut stage_inputs = Vec::with_capacity(cb.n_stages());
    for book in &cb.stages {
        stage_inputs.push(residual.clone());
        for r in 0..t {
            let c = nearest(book.view(), residual.row(r));
            codes[r].push(c);
            let w = book.row(c);
            for j in 0..residual.ncols() {
                residual[[r, j]] -= w[j];
                quantized[[r, j]] += w[j];
            }
        }
        norms.push(residual.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt());
    }
    Ok(RvqOutput {
        codes,
        quantized: LatentSequence {
            latents: quantized,
            downsample: x.downsample,
        },
        residual_norms: norms,
        stage_inputs,
    })
}

/// Sum of the selected codewords for given codes.
pub fn rvq_lookup(codes: &[Vec<usize>], cb: &RvqCodebooks, downsample: usize) -> Result<LatentSequence> {
    let d = cb.dim();
    let mut out = Array2::<f32>::zeros((codes.len(), d));
    for (t, row) in codes.iter().enumerate() {
        if row.len() != cb.n_stages() {
            return Err(Error::input("code row length differs from stage count"));
        }
        for (k, &c) in row.iter().enumerate() {
            let book = &cb.stages[k];
            if c >= book.nrows() {
                return Err(Error::input(format!("code {c} outside codebook {k}")));
            }
            for j in 0..d {
                out[[t, j]] += book[[c, j]];
            }
        }
    }
    LatentSequence::new(out, downsample)
}
