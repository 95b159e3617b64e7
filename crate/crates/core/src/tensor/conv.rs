//! Raw convolution kernels (zero "same" padding, cross-correlation).

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv1dDims {
    pub cin: usize,
    pub cout: usize,
    pub len: usize,
    pub k: usize,
}

pub(crate) fn conv1d_forward(x: &[f64], w: &[f64], b: &[f64], d: Conv1dDims) -> Vec<f64> {
    let Conv1dDims { cin, cout, len, k } = d;
    let pad = k / 2;
    let mut out = vec![0.0; cout * len];
    for o in 0..cout {
        let orow = &mut out[o * len..(o + 1) * len];
        orow.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..cin {
            let xrow = &x[i * len..(i + 1) * len];
            for j in 0..k {
                let wv = w[(o * cin + i) * k + j];
                // out[t] += wv * x[t + j - pad]
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                for t in lo..hi {
                    orow[t] += wv * xrow[t + j - pad];
                }
            }
        }
    }
    out
}

pub(crate) fn conv1d_backward(g: &[f64], x: &[f64], w: &[f64], d: Conv1dDims, need_x: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let Conv1dDims { cin, cout, len, k } = d;
    let pad = k / 2;
    let mut gx = if need_x { Some(vec![0.0; cin * len]) } else { None };
    let mut gw = vec![0.0; cout * cin * k];
    let mut gb = vec![0.0; cout];
    for o in 0..cout {
        let grow = &g[o * len..(o + 1) * len];
        gb[o] = grow.iter().sum();
        for i in 0..cin {
            let xrow = &x[i * len..(i + 1) * len];
            for j in 0..k {
                let lo = pad.saturating_sub(j);
                let hi = (len + pad).saturating_sub(j).min(len);
                let mut acc = 0.0;
                for t in lo..hi {
                    acc += grow[t] * xrow[t + j - pad];
                }
                gw[(o * cin + i) * k + j] += acc;
                if let Some(gx) = gx.as_mut() {
                    let wv = w[(o * cin + i) * k + j];
                    let gxrow = &mut gx[i * len..(i + 1) * len];
                    for t in lo..hi {
                        gxrow[t + j - pad] += wv * grow[t];
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv2dDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
}

impl Conv2dDims {
    pub fn out_hw(&self) -> (usize, usize) {
        let ph = self.kh / 2;
        let pw = self.kw / 2;
        (
            (self.h + 2 * ph - self.kh) / self.stride + 1,
            (self.w + 2 * pw - self.kw) / self.stride + 1,
        )
    }
}

/// Valid output-column range for kernel column `kx`: columns `ox` with
/// `0 <= ox*stride + kx - pad < w`.
#[inline]
fn col_range(kx: usize, pad: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx >= pad { 0 } else { (pad - kx).div_ceil(stride) };
    // ox*stride + kx - pad <= w - 1  =>  ox <= (w - 1 + pad - kx) / stride
    let hi = if w + pad > kx {
        ((w - 1 + pad - kx) / stride + 1).min(wo)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) fn conv2d_forward(x: &[f64], wt: &[f64], b: &[f64], d: Conv2dDims) -> Vec<f64> {
    let (ho, wo) = d.out_hw();
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let s = d.stride;
    let plane_in = d.h * d.w;
    let plane_out = ho * wo;
    let mut out = vec![0.0; d.cout * plane_out];
    for o in 0..d.cout {
        let oimg = &mut out[o * plane_out..(o + 1) * plane_out];
        oimg.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..d.cin {
            let ximg = &x[i * plane_in..(i + 1) * plane_in];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = wt[((o * d.cin + i) * d.kh + ky) * d.kw + kx];
                    let (xlo, xhi) = col_range(kx, pw, s, d.w, wo);
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = &ximg[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let orow = &mut oimg[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let off = kx as isize - pw as isize;
                            for ox in xlo..xhi {
                                orow[ox] += wv * xrow[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in xlo..xhi {
                                orow[ox] += wv * xrow[ox * s + kx - pw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn conv2d_backward(g: &[f64], x: &[f64], wt: &[f64], d: Conv2dDims, need_x: bool) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (ho, wo) = d.out_hw();
    let (ph, pw) = (d.kh / 2, d.kw / 2);
    let s = d.stride;
    let plane_in = d.h * d.w;
    let plane_out = ho * wo;
    let mut gx = if need_x { Some(vec![0.0; d.cin * plane_in]) } else { None };
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; d.cout];
    for o in 0..d.cout {
        let gimg = &g[o * plane_out..(o + 1) * plane_out];
        gb[o] = gimg.iter().sum();
        for i in 0..d.cin {
            let ximg = &x[i * plane_in..(i + 1) * plane_in];
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let widx = ((o * d.cin + i) * d.kh + ky) * d.kw + kx;
                    let wv = wt[widx];
                    let (xlo, xhi) = col_range(kx, pw, s, d.w, wo);
                    let mut acc = 0.0;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - ph as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        let xrow = &ximg[iy * d.w..(iy + 1) * d.w];
                        let grow = &gimg[oy * wo..(oy + 1) * wo];
                        if s == 1 {
                            let off = kx as isize - pw as isize;
                            for ox in xlo..xhi {
                                acc += grow[ox] * xrow[(ox as isize + off) as usize];
                            }
                        } else {
                            for ox in xlo..xhi {
                                acc += grow[ox] * xrow[ox * s + kx - pw];
                            }
                        }
                        if let Some(gx) = gx.as_mut() {
                            let gxrow = &mut gx[i * plane_in + iy * d.w..i * plane_in + (iy + 1) * d.w];
                            if s == 1 {
                                let off = kx as isize - pw as isize;
                                for ox in xlo..xhi {
                                    gxrow[(ox as isize + off) as usize] += wv * grow[ox];
                                }
                            } else {
                                for ox in xlo..xhi {
                                    gxrow[ox * s + kx - pw] += wv * grow[ox];
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    (gx, gw, gb)
}

pub(crate) fn upsample2_forward(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h2 * w2];
    for ch in 0..c {
        for y in 0..h2 {
            let src = &x[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            let dst = &mut out[ch * h2 * w2 + y * w2..ch * h2 * w2 + (y + 1) * w2];
            for (xo, v) in dst.iter_mut().enumerate() {
                *v = src[xo / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward(g: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for y in 0..h2 {
            let grow = &g[ch * h2 * w2 + y * w2..ch * h2 * w2 + (y + 1) * w2];
            let dst = &mut out[ch * h * w + (y / 2) * w..ch * h * w + (y / 2 + 1) * w];
            for (xo, v) in grow.iter().enumerate() {
                dst[xo / 2] += v;
            }
        }
    }
    out
}
