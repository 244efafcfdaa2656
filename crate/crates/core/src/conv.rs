//! Stride-1, zero "same" padded 2D convolution kernels (im2col form).
//!
//! Layouts: input `C_in × H × W`, kernel `C_out × C_in × kH × kW`, bias `C_out`,
//! output `C_out × H × W`. Kernel extents must be odd.

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeometry {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
}

impl ConvGeometry {
    pub fn infer(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Self> {
        let (is, ks, bs) = (input.shape(), kernel.shape(), bias.shape());
        if is.len() != 3 {
            return Err(shape_err(
                "conv2d",
                format!("input must be C×H×W, got {is:?}"),
            ));
        }
        if ks.len() != 4 {
            return Err(shape_err(
                "conv2d",
                format!("kernel must be C_out×C_in×kH×kW, got {ks:?}"),
            ));
        }
        if ks[1] != is[0] {
            return Err(shape_err(
                "conv2d",
                format!(
                    "kernel expects {} input channels but input has {}",
                    ks[1], is[0]
                ),
            ));
        }
        if ks[2] % 2 == 0 || ks[3] % 2 == 0 {
            return Err(shape_err(
                "conv2d",
                format!("kernel extent must be odd, got {}×{}", ks[2], ks[3]),
            ));
        }
        if bs != [ks[0]] {
            return Err(shape_err(
                "conv2d",
                format!("bias must have shape [{}], got {bs:?}", ks[0]),
            ));
        }
        Ok(Self {
            c_in: is[0],
            c_out: ks[0],
            height: is[1],
            width: is[2],
            kh: ks[2],
            kw: ks[3],
        })
    }

    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn patch(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1
    }
}

/// Unfolds the padded input into a `(C_in·kH·kW) × (H·W)` matrix.
fn im2col(g: &ConvGeometry, input: &[f64]) -> Vec<f64> {
    let (h, w) = (g.height, g.width);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.pixels();
    let mut col = vec![0.0; g.patch() * hw];
    for ci in 0..g.c_in {
        let plane = &input[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - pw as isize;
                        if sx >= 0 && sx < w as isize {
                            row[y * w + x] = src[sx as usize];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Folds a column-gradient matrix back onto the input plane (adjoint of `im2col`).
fn col2im(g: &ConvGeometry, dcol: &[f64]) -> Vec<f64> {
    let (h, w) = (g.height, g.width);
    let (ph, pw) = (g.kh / 2, g.kw / 2);
    let hw = g.pixels();
    let mut out = vec![0.0; g.c_in * hw];
    for ci in 0..g.c_in {
        let plane = &mut out[ci * hw..(ci + 1) * hw];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &dcol[((ci * g.kh + ky) * g.kw + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - ph as isize;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - pw as isize;
                        if sx >= 0 && sx < w as isize {
                            plane[sy as usize * w + sx as usize] += row[y * w + x];
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn forward(g: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let hw = g.pixels();
    let patch = g.patch();
    let owned;
    let col: &[f64] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(g, input);
        &owned
    };
    let mut out = vec![0.0; g.c_out * hw];
    for co in 0..g.c_out {
        let o = &mut out[co * hw..(co + 1) * hw];
        o.fill(bias[co]);
        let krow = &kernel[co * patch..(co + 1) * patch];
        for (r, &wv) in krow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let c = &col[r * hw..(r + 1) * hw];
            for (ov, cv) in o.iter_mut().zip(c) {
                *ov += wv * cv;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub input: Vec<f64>,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

pub(crate) fn backward(
    g: &ConvGeometry,
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
) -> ConvGrads {
    let hw = g.pixels();
    let patch = g.patch();
    let owned;
    let col: &[f64] = if g.is_pointwise() {
        input
    } else {
        owned = im2col(g, input);
        &owned
    };

    let mut dk = vec![0.0; g.c_out * patch];
    let mut db = vec![0.0; g.c_out];
    let mut dcol = vec![0.0; patch * hw];
    for co in 0..g.c_out {
        let go = &grad_out[co * hw..(co + 1) * hw];
        db[co] = go.iter().sum();
        let krow = &kernel[co * patch..(co + 1) * patch];
        let dkrow = &mut dk[co * patch..(co + 1) * patch];
        for r in 0..patch {
            let c = &col[r * hw..(r + 1) * hw];
            dkrow[r] = c.iter().zip(go).map(|(a, b)| a * b).sum();
            let wv = krow[r];
            if wv != 0.0 {
                let d = &mut dcol[r * hw..(r + 1) * hw];
                for (dv, gv) in d.iter_mut().zip(go) {
                    *dv += wv * gv;
                }
            }
        }
    }
    let dinput = if g.is_pointwise() {
        dcol
    } else {
        col2im(g, &dcol)
    };
    ConvGrads {
        input: dinput,
        kernel: dk,
        bias: db,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Direct per-pixel summation, independent of the im2col path.
    fn direct(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Vec<f64> {
        let g = ConvGeometry::infer(input, kernel, bias).unwrap();
        let (h, w) = (g.height as isize, g.width as isize);
        let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
        let x = input.data();
        let k = kernel.data();
        let mut out = vec![0.0; g.c_out * g.height * g.width];
        for co in 0..g.c_out {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = bias.data()[co];
                    for ci in 0..g.c_in {
                        for ky in 0..g.kh as isize {
                            for kx in 0..g.kw as isize {
                                let sy = y + ky - ph;
                                let sx = xx + kx - pw;
                                if sy < 0 || sx < 0 || sy >= h || sx >= w {
                                    continue;
                                }
                                let kv = k[((co * g.c_in + ci) * g.kh + ky as usize) * g.kw
                                    + kx as usize];
                                acc += kv * x[(ci * g.height + sy as usize) * g.width + sx as usize];
                            }
                        }
                    }
                    out[(co * g.height + y as usize) * g.width + xx as usize] = acc;
                }
            }
        }
        out
    }

    fn ramp(shape: &[usize], scale: f64) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) * scale).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn matches_direct_summation() {
        for (cin, cout, h, w, k) in [(1, 1, 3, 3, 3), (2, 3, 18, 3, 3), (4, 2, 5, 4, 1), (3, 2, 6, 5, 5)] {
            let x = ramp(&[cin, h, w], 0.3);
            let kern = ramp(&[cout, cin, k, k], 0.1);
            let b = ramp(&[cout], 0.05);
            let g = ConvGeometry::infer(&x, &kern, &b).unwrap();
            let fast = forward(&g, x.data(), kern.data(), b.data());
            let slow = direct(&x, &kern, &b);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn delta_input_reproduces_flipped_kernel() {
        // A unit impulse at the centre of a 3×3 plane picks out the kernel,
        // reflected through its centre: out[y][x] = k[2-y][2-x].
        let mut x = Tensor::zeros(&[1, 3, 3]);
        x.data_mut()[4] = 1.0;
        let kern = Tensor::new(vec![1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let b = Tensor::zeros(&[1]);
        let g = ConvGeometry::infer(&x, &kern, &b).unwrap();
        let out = forward(&g, x.data(), kern.data(), b.data());
        assert_eq!(out, vec![9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        // centre row holds the reversed centre row of the kernel
        assert_eq!(&out[3..6], &[6.0, 5.0, 4.0]);
        assert_eq!(out, direct(&x, &kern, &b));
    }

    #[test]
    fn rejects_channel_mismatch_and_even_kernels() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let b = Tensor::zeros(&[1]);
        let err = ConvGeometry::infer(&x, &Tensor::zeros(&[1, 3, 3, 3]), &b).unwrap_err();
        assert!(err.to_string().contains("input channels"));
        assert!(ConvGeometry::infer(&x, &Tensor::zeros(&[1, 2, 2, 2]), &b).is_err());
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = ramp(&[2, 5, 3], 0.7);
        let g = ConvGeometry {
            c_in: 2,
            c_out: 1,
            height: 5,
            width: 3,
            kh: 3,
            kw: 3,
        };
        let col = im2col(&g, x.data());
        let c: Vec<f64> = (0..col.len()).map(|i| ((i * 13 % 17) as f64) * 0.1 - 0.8).collect();
        let lhs: f64 = col.iter().zip(&c).map(|(a, b)| a * b).sum();
        let back = col2im(&g, &c);
        let rhs: f64 = x.data().iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
