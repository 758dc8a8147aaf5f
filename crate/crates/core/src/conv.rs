//! Convolution kernels factored by an order-3 chain over `(C_out, C_in, D²)`
//! and the equivalent three-layer block: a 1×1 convolution `W1`, a spatial
//! convolution `W2` applied to each of the `R1` channel groups, and a 1×1
//! convolution `W3`.
//!
//! Chain bonds `(b0, b1, b2)` map to block ranks `R1 = b1`, `R2 = b2`,
//! `R3 = b0`:
//!
//! ```text
//! K[o, c, kh*D + kw] = Σ A0[r3, o, r1] A1[r1, c, r2] A2[r2, kh*D + kw, r3]
//! ```

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::decompose::{fit_with_ss_control, init_model, FitConfig};
use crate::error::{invalid, Result};
use crate::model::TcModel;
use crate::stabilize::CorrectionConfig;
use crate::tensor::{relative_error, DenseTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    /// `C_out x C_in x D x D`.
    pub weights: DenseTensor,
    pub stride: usize,
    pub padding: usize,
}

impl ConvKernel {
    pub fn new(weights: DenseTensor, stride: usize, padding: usize) -> Result<Self> {
        if weights.order() != 4 {
            return invalid(format!("kernel must have order 4, got {}", weights.order()));
        }
        if weights.dims()[2] != weights.dims()[3] {
            return invalid(format!("kernel must be square, got {:?}", weights.dims()));
        }
        if stride == 0 {
            return invalid("stride must be positive");
        }
        Ok(Self { weights, stride, padding })
    }

    pub fn c_out(&self) -> usize {
        self.weights.dims()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weights.dims()[1]
    }

    pub fn size(&self) -> usize {
        self.weights.dims()[2]
    }
}

/// `(C_out, C_in, D, D)` → `(C_out, C_in, D²)` with spatial index `kh*D + kw`.
pub fn kernel_to_order3(k: &ConvKernel) -> DenseTensor {
    let (co, ci, d) = (k.c_out(), k.c_in(), k.size());
    DenseTensor::from_fn(vec![co, ci, d * d], |i| {
        k.weights.get(&[i[0], i[1], i[2] / d, i[2] % d])
    })
    .expect("positive dims")
}

/// Inverse of [`kernel_to_order3`].
pub fn order3_to_kernel(t: &DenseTensor, stride: usize, padding: usize) -> Result<ConvKernel> {
    if t.order() != 3 {
        return invalid("expected an order-3 tensor");
    }
    let d = spatial_size(t.dims()[2])?;
    let w = DenseTensor::from_fn(vec![t.dims()[0], t.dims()[1], d, d], |i| {
        t.get(&[i[0], i[1], i[2] * d + i[3]])
    })?;
    ConvKernel::new(w, stride, padding)
}

fn spatial_size(d2: usize) -> Result<usize> {
    let d = (d2 as f64).sqrt().round() as usize;
    if d * d != d2 {
        return invalid(format!("spatial mode of size {d2} is not a square"));
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TcBlockFactors {
    /// `C_in x (R1 R2)`, column `r1 + R1 r2`.
    pub w1: DMatrix<f64>,
    /// `R2 x R3 x D x D`.
    pub w2: DenseTensor,
    /// `(R1 R3) x C_out`, row `r1 + R1 r3`.
    pub w3: DMatrix<f64>,
    pub ranks: (usize, usize, usize),
}

impl TcBlockFactors {
    pub fn num_params(&self) -> usize {
        self.w1.len() + self.w2.len() + self.w3.len()
    }

    pub fn kernel_size(&self) -> usize {
        self.w2.dims()[2]
    }

    /// Dense kernel realized by the block.
    pub fn compose_kernel(&self) -> DenseTensor {
        let (r1, r2, r3) = self.ranks;
        let d = self.kernel_size();
        let (ci, co) = (self.w1.nrows(), self.w3.ncols());
        DenseTensor::from_fn(vec![co, ci, d, d], |i| {
            let (o, c, kh, kw) = (i[0], i[1], i[2], i[3]);
            let mut acc = 0.0;
            for a in 0..r1 {
                for b in 0..r2 {
                    let w1 = self.w1[(c, a + r1 * b)];
                    if w1 == 0.0 {
                        continue;
                    }
                    for g in 0..r3 {
                        acc += w1 * self.w2.get(&[b, g, kh, kw]) * self.w3[(a + r1 * g, o)];
                    }
                }
            }
            acc
        })
        .expect("positive dims")
    }
}

/// Factors of the convolution block equivalent to an order-3 chain over
/// `(C_out, C_in, D²)`.
pub fn build_tc_block(m: &TcModel) -> Result<TcBlockFactors> {
    if m.order() != 3 {
        return invalid(format!("a kernel chain has order 3, got {}", m.order()));
    }
    let dims = m.mode_dims();
    let d = spatial_size(dims[2])?;
    let bonds = m.bond_dims();
    let (r1, r2, r3) = (bonds[1], bonds[2], bonds[0]);
    let (a0, a1, a2) = (m.core(0), m.core(1), m.core(2));
    let (co, ci) = (dims[0], dims[1]);
    let w1 = DMatrix::from_fn(ci, r1 * r2, |c, col| a1.get(&[col % r1, c, col / r1]));
    let w2 = DenseTensor::from_fn(vec![r2, r3, d, d], |i| a2.get(&[i[0], i[2] * d + i[3], i[1]]))?;
    let w3 = DMatrix::from_fn(r1 * r3, co, |row, o| a0.get(&[row / r1, o, row % r1]));
    Ok(TcBlockFactors { w1, w2, w3, ranks: (r1, r2, r3) })
}

fn output_size(n: usize, d: usize, stride: usize, padding: usize) -> Result<usize> {
    let span = n + 2 * padding;
    if span < d || !(span - d).is_multiple_of(stride) {
        return invalid(format!(
            "input size {n} with kernel {d}, stride {stride}, padding {padding} gives a non-integral output size"
        ));
    }
    Ok((span - d) / stride + 1)
}

/// Direct cross-correlation with zero padding: `x` is `C_in x H x W`.
pub fn conv2d_reference(x: &DenseTensor, k: &ConvKernel) -> Result<DenseTensor> {
    if x.order() != 3 || x.dims()[0] != k.c_in() {
        return invalid(format!(
            "input {:?} does not match kernel with {} input channels",
            x.dims(),
            k.c_in()
        ));
    }
    let (ci, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let d = k.size();
    let (s, p) = (k.stride, k.padding);
    let ho = output_size(h, d, s, p)?;
    let wo = output_size(w, d, s, p)?;
    let co = k.c_out();
    let mut out = DenseTensor::zeros(vec![co, ho, wo])?;
    for o in 0..co {
        for i in 0..ho {
            for j in 0..wo {
                let mut acc = 0.0;
                for c in 0..ci {
                    for kh in 0..d {
                        let hh = (i * s + kh) as isize - p as isize;
                        if hh < 0 || hh >= h as isize {
                            continue;
                        }
                        for kw in 0..d {
                            let ww = (j * s + kw) as isize - p as isize;
                            if ww < 0 || ww >= w as isize {
                                continue;
                            }
                            acc += k.weights.get(&[o, c, kh, kw]) * x.get(&[c, hh as usize, ww as usize]);
                        }
                    }
                }
                out.set(&[o, i, j], acc);
            }
        }
    }
    Ok(out)
}

/// Forward pass through `W1`, the `(R1R2) → (R2, R1)` regrouping, `W2`, the
/// `(R3, R1) → R1R3` regrouping, and `W3`.
pub fn tc_block_forward(
    x: &DenseTensor,
    f: &TcBlockFactors,
    stride: usize,
    padding: usize,
) -> Result<DenseTensor> {
    let (r1, r2, r3) = f.ranks;
    if x.order() != 3 || x.dims()[0] != f.w1.nrows() {
        return invalid(format!(
            "input {:?} does not match a block with {} input channels",
            x.dims(),
            f.w1.nrows()
        ));
    }
    if stride == 0 {
        return invalid("stride must be positive");
    }
    let (ci, h, w) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let d = f.kernel_size();
    let ho = output_size(h, d, stride, padding)?;
    let wo = output_size(w, d, stride, padding)?;

    // W1: 1×1 convolution at input resolution; pixels are the columns.
    let xm = DMatrix::from_fn(ci, h * w, |c, px| x.get(&[c, px % h, px / h]));
    let out1 = f.w1.transpose() * xm; // (R1 R2) x (H W), row r1 + R1 r2

    // W2: per r1 group, spatial convolution R2 → R3.
    let mut out2 = DMatrix::zeros(r1 * r3, ho * wo); // row r1 + R1 r3
    for a in 0..r1 {
        for g in 0..r3 {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = 0.0;
                    for kh in 0..d {
                        let hh = (i * stride + kh) as isize - padding as isize;
                        if hh < 0 || hh >= h as isize {
                            continue;
                        }
                        for kw in 0..d {
                            let ww = (j * stride + kw) as isize - padding as isize;
                            if ww < 0 || ww >= w as isize {
                                continue;
                            }
                            let px = hh as usize + h * ww as usize;
                            for b in 0..r2 {
                                acc += f.w2.get(&[b, g, kh, kw]) * out1[(a + r1 * b, px)];
                            }
                        }
                    }
                    out2[(a + r1 * g, i + ho * j)] = acc;
                }
            }
        }
    }

    // W3: 1×1 convolution to the output channels.
    let out3 = f.w3.transpose() * out2; // C_out x (Ho Wo)
    let co = f.w3.ncols();
    DenseTensor::from_fn(vec![co, ho, wo], |i| out3[(i[0], i[1] + ho * i[2])])
}

/// Multiply-accumulates per output position of the block.
pub fn block_flops(c_in: usize, c_out: usize, d: usize, ranks: (usize, usize, usize)) -> usize {
    let (r1, r2, r3) = ranks;
    c_in * r1 * r2 + r1 * r2 * r3 * d * d + r1 * r3 * c_out
}

pub fn block_params(c_in: usize, c_out: usize, d: usize, ranks: (usize, usize, usize)) -> usize {
    let (r1, r2, r3) = ranks;
    c_in * r1 * r2 + r2 * r3 * d * d + r1 * r3 * c_out
}

/// `Σ_n R_n I_n R_{n+1}` for a chain with the given mode and bond sizes.
pub fn tc_param_count(dims: &[usize], bonds: &[usize]) -> usize {
    let n = dims.len();
    (0..n).map(|k| bonds[k] * dims[k] * bonds[(k + 1) % n]).sum()
}

/// Cartesian grid of block ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankGrid {
    pub r1: Vec<usize>,
    pub r2: Vec<usize>,
    pub r3: Vec<usize>,
}

impl RankGrid {
    pub fn points(&self) -> Vec<(usize, usize, usize)> {
        let mut out = Vec::new();
        for &a in &self.r1 {
            for &b in &self.r2 {
                for &c in &self.r3 {
                    out.push((a, b, c));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub r1: usize,
    pub r2: usize,
    pub r3: usize,
    pub rel_err: f64,
    pub flops: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    /// Feasible entries, ascending in `rel_err`.
    pub entries: Vec<GridEntry>,
    pub over_budget: usize,
    pub above_threshold: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSearchConfig {
    pub flops_budget: f64,
    pub err_threshold: f64,
    /// Fits per grid point; the best is kept.
    pub restarts: usize,
    pub fit: FitConfig,
    pub correction: CorrectionConfig,
}

impl Default for GridSearchConfig {
    fn default() -> Self {
        Self {
            flops_budget: f64::INFINITY,
            err_threshold: f64::INFINITY,
            restarts: 1,
            // Stall-triggered correction with some error slack; plain ALS
            // tends to creep along a high-sensitivity path on kernels.
            fit: FitConfig {
                max_iters: 1000,
                ss_max: 1e5,
                stall_window: 50,
                stall_tol: 1e-2,
                ..FitConfig::default()
            },
            correction: CorrectionConfig {
                delta_factor: 1.5,
                intensity_first: true,
                ..CorrectionConfig::default()
            },
        }
    }
}

/// Best relative error of `restarts` controlled fits of a kernel at the
/// given block ranks.
pub fn fit_kernel(
    kernel3: &DenseTensor,
    ranks: (usize, usize, usize),
    cfg: &GridSearchConfig,
) -> Result<(TcModel, f64)> {
    let (r1, r2, r3) = ranks;
    let bonds = [r3, r1, r2];
    let norm = kernel3.frobenius_norm();
    let mut best: Option<(TcModel, f64)> = None;
    for k in 0..cfg.restarts.max(1) {
        let seed = cfg.fit.seed.wrapping_add(k as u64);
        let m0 = init_model(kernel3.dims(), &bonds, seed, cfg.fit.init_scheme, Some(norm))?;
        let (m, _) = fit_with_ss_control(kernel3, &m0, &cfg.fit, &cfg.correction)?;
        let err = relative_error(kernel3, &m.reconstruct())?;
        if best.as_ref().is_none_or(|(_, e)| err < *e) {
            best = Some((m, err));
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Fits every grid point within the FLOPs budget, keeps those within the
/// error threshold, and sorts them by error.
pub fn rank_grid_search(
    k: &ConvKernel,
    grid: &RankGrid,
    cfg: &GridSearchConfig,
) -> Result<GridSearchResult> {
    if !(cfg.flops_budget > 0.0) {
        return invalid("flops budget must be positive");
    }
    let kernel3 = kernel_to_order3(k);
    let (ci, co, d) = (k.c_in(), k.c_out(), k.size());
    let mut entries = Vec::new();
    let mut over_budget = 0;
    let mut above_threshold = 0;
    for ranks in grid.points() {
        let flops = block_flops(ci, co, d, ranks);
        if flops as f64 > cfg.flops_budget {
            over_budget += 1;
            continue;
        }
        let (_, rel_err) = fit_kernel(&kernel3, ranks, cfg)?;
        if rel_err > cfg.err_threshold {
            above_threshold += 1;
            continue;
        }
        entries.push(GridEntry {
            r1: ranks.0,
            r2: ranks.1,
            r3: ranks.2,
            rel_err,
            flops,
            params: block_params(ci, co, d, ranks),
        });
    }
    entries.sort_by(|a, b| a.rel_err.total_cmp(&b.rel_err));
    Ok(GridSearchResult { entries, over_budget, above_threshold })
}
