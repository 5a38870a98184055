//! Forward/backward kernels for the gradient tape.
//!
//! Straight loops over `C×H×W` buffers. No im2col, no SIMD.

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub const POINTWISE: ConvGeom = ConvGeom {
        stride: 1,
        pad: 0,
        dilation: 1,
    };

    /// 3×3 window that keeps spatial size at stride 1.
    pub fn same3(dilation: usize) -> Self {
        Self {
            stride: 1,
            pad: dilation,
            dilation,
        }
    }

    pub fn strided3(stride: usize) -> Self {
        Self {
            stride,
            pad: 1,
            dilation: 1,
        }
    }

    pub fn out_len(&self, input: usize, kernel: usize) -> Option<usize> {
        let span = self.dilation * (kernel - 1) + 1;
        let padded = input + 2 * self.pad;
        if padded < span {
            return None;
        }
        Some((padded - span) / self.stride + 1)
    }

    /// Output positions `o` for which `o*stride - pad + k*dilation` lands in `0..input`.
    #[inline]
    fn valid_range(&self, k: usize, input: usize, out: usize) -> (usize, usize) {
        let offset = k as i64 * self.dilation as i64 - self.pad as i64;
        let s = self.stride as i64;
        // o*s + offset >= 0
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        // o*s + offset <= input - 1
        let hi_num = input as i64 - 1 - offset;
        let hi = if hi_num < 0 { -1 } else { hi_num / s };
        let lo = lo.max(0) as usize;
        let hi = (hi + 1).clamp(0, out as i64) as usize;
        (lo, hi.max(lo))
    }
}

pub fn conv2d_forward(input: &Tensor, weight: &Tensor, bias: Option<&Tensor>, geom: ConvGeom) -> Tensor {
    let (c_in, h, w) = input.chw();
    let ws = weight.shape();
    let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
    debug_assert_eq!(ws[1], c_in);
    let oh = geom.out_len(h, kh).expect("conv output height");
    let ow = geom.out_len(w, kw).expect("conv output width");
    let mut out = Tensor::zeros(&[c_out, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let s = geom.stride;
    let out_data = out.data_mut();
    for o in 0..c_out {
        let oplane = &mut out_data[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = bias {
            oplane.fill(b.data()[o]);
        }
        for i in 0..c_in {
            let iplane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                let (y0, y1) = geom.valid_range(ky, h, oh);
                for kx in 0..kw {
                    let wv = wt[((o * c_in + i) * kh + ky) * kw + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = geom.valid_range(kx, w, ow);
                    for oy in y0..y1 {
                        let iy = oy * s + ky * geom.dilation - geom.pad;
                        let irow = &iplane[iy * w..(iy + 1) * w];
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        let base = kx * geom.dilation;
                        if s == 1 {
                            for ox in x0..x1 {
                                orow[ox] += wv * irow[ox + base - geom.pad];
                            }
                        } else {
                            for ox in x0..x1 {
                                orow[ox] += wv * irow[ox * s + base - geom.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d input, d weight, d bias)`.
pub fn conv2d_backward(input: &Tensor, weight: &Tensor, grad_out: &Tensor, geom: ConvGeom) -> (Tensor, Tensor, Tensor) {
    let (c_in, h, w) = input.chw();
    let ws = weight.shape();
    let (c_out, kh, kw) = (ws[0], ws[2], ws[3]);
    let (_, oh, ow) = grad_out.chw();
    let mut gin = Tensor::zeros(&[c_in, h, w]);
    let mut gw = Tensor::zeros(ws);
    let mut gb = Tensor::zeros(&[c_out]);
    let x = input.data();
    let wt = weight.data();
    let go = grad_out.data();
    let s = geom.stride;
    for o in 0..c_out {
        let gplane = &go[o * oh * ow..(o + 1) * oh * ow];
        gb.data_mut()[o] = gplane.iter().sum();
        for i in 0..c_in {
            let iplane = &x[i * h * w..(i + 1) * h * w];
            for ky in 0..kh {
                let (y0, y1) = geom.valid_range(ky, h, oh);
                for kx in 0..kw {
                    let widx = ((o * c_in + i) * kh + ky) * kw + kx;
                    let wv = wt[widx];
                    let (x0, x1) = geom.valid_range(kx, w, ow);
                    let base = kx * geom.dilation;
                    let mut acc = 0.0;
                    for oy in y0..y1 {
                        let iy = oy * s + ky * geom.dilation - geom.pad;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        let irow = &iplane[iy * w..(iy + 1) * w];
                        let girow = &mut gin.data_mut()[(i * h + iy) * w..(i * h + iy + 1) * w];
                        for ox in x0..x1 {
                            let ix = ox * s + base - geom.pad;
                            acc += irow[ix] * grow[ox];
                            girow[ix] += wv * grow[ox];
                        }
                    }
                    gw.data_mut()[widx] += acc;
                }
            }
        }
    }
    (gin, gw, gb)
}

/// 2×2 average pooling, stride 2, ceil mode: a trailing odd row/column is
/// averaged over the cells that exist, so `1×1` stays `1×1`.
pub fn avg_pool2_forward(input: &Tensor) -> Tensor {
    let (c, h, w) = input.chw();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    Tensor::from_fn_chw(c, oh, ow, |ci, oy, ox| {
        let mut s = 0.0;
        let mut n = 0.0;
        for y in 2 * oy..(2 * oy + 2).min(h) {
            for x in 2 * ox..(2 * ox + 2).min(w) {
                s += input.at(ci, y, x);
                n += 1.0;
            }
        }
        s / n
    })
}

pub fn avg_pool2_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (_, oh, ow) = grad_out.chw();
    let mut gin = Tensor::zeros(&[c, h, w]);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let ys = 2 * oy..(2 * oy + 2).min(h);
                let xs = 2 * ox..(2 * ox + 2).min(w);
                let n = (ys.len() * xs.len()) as f64;
                let g = grad_out.at(ci, oy, ox) / n;
                for y in ys {
                    for x in xs.clone() {
                        let v = gin.at(ci, y, x) + g;
                        gin.set(ci, y, x, v);
                    }
                }
            }
        }
    }
    gin
}

/// Source taps of half-pixel-centred bilinear resampling along one axis:
/// `(i0, i1, weight of i1)` per output index.
fn bilinear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

/// Bilinear resampling of every channel to `out_h×out_w`
/// (half-pixel centres, edge clamped).
pub fn resize_bilinear_forward(input: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let (c, h, w) = input.chw();
    if h == out_h && w == out_w {
        return input.clone();
    }
    let ty = bilinear_taps(h, out_h);
    let tx = bilinear_taps(w, out_w);
    Tensor::from_fn_chw(c, out_h, out_w, |ci, oy, ox| {
        let (y0, y1, fy) = ty[oy];
        let (x0, x1, fx) = tx[ox];
        let top = input.at(ci, y0, x0) * (1.0 - fx) + input.at(ci, y0, x1) * fx;
        let bot = input.at(ci, y1, x0) * (1.0 - fx) + input.at(ci, y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    })
}

pub fn resize_bilinear_backward(input_shape: &[usize], grad_out: &Tensor) -> Tensor {
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (_, oh, ow) = grad_out.chw();
    if h == oh && w == ow {
        return grad_out.clone();
    }
    let ty = bilinear_taps(h, oh);
    let tx = bilinear_taps(w, ow);
    let mut gin = Tensor::zeros(&[c, h, w]);
    let hw = h * w;
    let g = gin.data_mut();
    for ci in 0..c {
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let go = grad_out.at(ci, oy, ox);
                g[ci * hw + y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                g[ci * hw + y0 * w + x1] += go * (1.0 - fy) * fx;
                g[ci * hw + y1 * w + x0] += go * fy * (1.0 - fx);
                g[ci * hw + y1 * w + x1] += go * fy * fx;
            }
        }
    }
    gin
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(input: &Tensor, weight: &Tensor, bias: &Tensor, g: ConvGeom) -> Tensor {
        let (ci, h, w) = input.chw();
        let ws = weight.shape();
        let (co, kh, kw) = (ws[0], ws[2], ws[3]);
        let oh = g.out_len(h, kh).unwrap();
        let ow = g.out_len(w, kw).unwrap();
        Tensor::from_fn_chw(co, oh, ow, |o, oy, ox| {
            let mut acc = bias.data()[o];
            for i in 0..ci {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * g.stride + ky * g.dilation) as i64 - g.pad as i64;
                        let ix = (ox * g.stride + kx * g.dilation) as i64 - g.pad as i64;
                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= w as i64 {
                            continue;
                        }
                        acc += weight.data()[((o * ci + i) * kh + ky) * kw + kx] * input.at(i, iy as usize, ix as usize);
                    }
                }
            }
            acc
        })
    }

    fn pseudo(n: usize, seed: f64) -> Vec<f64> {
        (0..n).map(|i| ((i as f64 + seed) * 12.9898).sin() * 0.7).collect()
    }

    #[test]
    fn conv_matches_naive_for_assorted_geometries() {
        let input = Tensor::from_vec(vec![3, 9, 7], pseudo(3 * 9 * 7, 0.3)).unwrap();
        let weight = Tensor::from_vec(vec![4, 3, 3, 3], pseudo(4 * 27, 1.1)).unwrap();
        let bias = Tensor::from_vec(vec![4], pseudo(4, 2.2)).unwrap();
        for geom in [
            ConvGeom::same3(1),
            ConvGeom::same3(2),
            ConvGeom::same3(12),
            ConvGeom::strided3(2),
            ConvGeom { stride: 3, pad: 0, dilation: 1 },
        ] {
            let a = conv2d_forward(&input, &weight, Some(&bias), geom);
            let b = naive_conv(&input, &weight, &bias, geom);
            assert_eq!(a.shape(), b.shape(), "{geom:?}");
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() < 1e-12, "{geom:?}");
            }
        }
    }

    #[test]
    fn pooling_keeps_unit_maps() {
        let t = Tensor::from_vec(vec![2, 1, 1], vec![3.0, -1.0]).unwrap();
        assert_eq!(avg_pool2_forward(&t), t);
        let odd = Tensor::from_fn_chw(1, 3, 3, |_, y, x| (y * 3 + x) as f64);
        let p = avg_pool2_forward(&odd);
        assert_eq!(p.shape(), &[1, 2, 2]);
        assert_eq!(p.at(0, 0, 0), 2.0);
        assert_eq!(p.at(0, 0, 1), 3.5);
        assert_eq!(p.at(0, 1, 1), 8.0);
    }

    #[test]
    fn bilinear_from_single_cell_is_constant() {
        let t = Tensor::from_vec(vec![1, 1, 1], vec![2.5]).unwrap();
        let r = resize_bilinear_forward(&t, 4, 3);
        assert!(r.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn bilinear_upsample_interpolates_between_centres() {
        let t = Tensor::from_vec(vec![1, 1, 2], vec![0.0, 4.0]).unwrap();
        let r = resize_bilinear_forward(&t, 1, 4);
        assert_eq!(r.data(), &[0.0, 1.0, 3.0, 4.0]);
    }
}
