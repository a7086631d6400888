//! Compute kernels for the layer DAG: direct convolution, pooling,
//! dense layers, and their gradients. Loops are ordered so the innermost
//! dimension walks contiguous memory.

use crate::tensor::Tensor;

fn out_extent(extent: usize, k: usize, stride: usize, padding: usize) -> usize {
    (extent + 2 * padding - k) / stride + 1
}

pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> Tensor {
    let [n, cin, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let cout = weight.shape()[0];
    let oh = out_extent(h, k, stride, padding);
    let ow = out_extent(w, k, stride, padding);
    let mut out = Tensor::zeros(&[n, cout, oh, ow]);
    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let o = out.data_mut();
    for ni in 0..n {
        for co in 0..cout {
            let obase = ((ni * cout) + co) * oh * ow;
            o[obase..obase + oh * ow].fill(b[co]);
            for ci in 0..cin {
                let xbase = ((ni * cin) + ci) * h * w;
                for kh in 0..k {
                    for kw in 0..k {
                        let wv = wt[((co * cin + ci) * k + kh) * k + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        for oy in 0..oh {
                            let iy = (oy * stride + kh) as isize - padding as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let orow = obase + oy * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kw) as isize - padding as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                o[orow + ox] += wv * x[xrow + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    gout: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let [n, cin, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let cout = weight.shape()[0];
    let oh = gout.shape()[2];
    let ow = gout.shape()[3];
    let mut gin = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[cout]);
    let x = input.data();
    let wt = weight.data();
    let go = gout.data();
    let gx = gin.data_mut();
    {
        let gwd = gw.data_mut();
        let gbd = gb.data_mut();
        for ni in 0..n {
            for co in 0..cout {
                let obase = ((ni * cout) + co) * oh * ow;
                for v in &go[obase..obase + oh * ow] {
                    gbd[co] += v;
                }
                for ci in 0..cin {
                    let xbase = ((ni * cin) + ci) * h * w;
                    for kh in 0..k {
                        for kw in 0..k {
                            let widx = ((co * cin + ci) * k + kh) * k + kw;
                            let wv = wt[widx];
                            let mut gwacc = 0.0;
                            for oy in 0..oh {
                                let iy = (oy * stride + kh) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                let xrow = xbase + iy as usize * w;
                                let orow = obase + oy * ow;
                                for ox in 0..ow {
                                    let ix = (ox * stride + kw) as isize - padding as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let g = go[orow + ox];
                                    gwacc += g * x[xrow + ix as usize];
                                    gx[xrow + ix as usize] += g * wv;
                                }
                            }
                            gwd[widx] += gwacc;
                        }
                    }
                }
            }
        }
    }
    (gin, gw, gb)
}

pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let n = input.shape()[0];
    let fin = input.shape()[1];
    let fout = weight.shape()[0];
    let mut out = Tensor::zeros(&[n, fout]);
    let x = input.data();
    let wd = weight.data();
    let o = out.data_mut();
    for ni in 0..n {
        let xrow = &x[ni * fin..(ni + 1) * fin];
        for fo in 0..fout {
            let wrow = &wd[fo * fin..(fo + 1) * fin];
            let mut acc = bias.data()[fo];
            for (xv, wv) in xrow.iter().zip(wrow) {
                acc += xv * wv;
            }
            o[ni * fout + fo] = acc;
        }
    }
    out
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, gout: &Tensor) -> (Tensor, Tensor, Tensor) {
    let n = input.shape()[0];
    let fin = input.shape()[1];
    let fout = weight.shape()[0];
    let mut gin = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[fout]);
    let x = input.data();
    let wd = weight.data();
    let go = gout.data();
    for ni in 0..n {
        let xrow = &x[ni * fin..(ni + 1) * fin];
        let grow = &go[ni * fout..(ni + 1) * fout];
        let gxrow = &mut gin.data_mut()[ni * fin..(ni + 1) * fin];
        for fo in 0..fout {
            let g = grow[fo];
            gb.data_mut()[fo] += g;
            let wrow = &wd[fo * fin..(fo + 1) * fin];
            let gwrow = &mut gw.data_mut()[fo * fin..(fo + 1) * fin];
            for fi in 0..fin {
                gwrow[fi] += g * xrow[fi];
                gxrow[fi] += g * wrow[fi];
            }
        }
    }
    (gin, gw, gb)
}

/// Max pooling over valid window elements only (out-of-bounds positions
/// are ignored rather than padded with a sentinel).
pub fn maxpool_forward(input: &Tensor, k: usize, stride: usize, padding: usize) -> Tensor {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let oh = out_extent(h, k, stride, padding);
    let ow = out_extent(w, k, stride, padding);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let x = input.data();
    let o = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let xbase = ((ni * c) + ci) * h * w;
            let obase = ((ni * c) + ci) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    for kh in 0..k {
                        let iy = (oy * stride + kh) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let ix = (ox * stride + kw) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = x[xbase + iy as usize * w + ix as usize];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    o[obase + oy * ow + ox] = best;
                }
            }
        }
    }
    out
}

/// Routes each output gradient to the first-scanned maximum of its window.
pub fn maxpool_backward(
    input: &Tensor,
    gout: &Tensor,
    k: usize,
    stride: usize,
    padding: usize,
) -> Tensor {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let oh = gout.shape()[2];
    let ow = gout.shape()[3];
    let mut gin = Tensor::zeros(input.shape());
    let x = input.data();
    let go = gout.data();
    let gx = gin.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let xbase = ((ni * c) + ci) * h * w;
            let obase = ((ni * c) + ci) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = None;
                    for kh in 0..k {
                        let iy = (oy * stride + kh) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kw in 0..k {
                            let ix = (ox * stride + kw) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = xbase + iy as usize * w + ix as usize;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = Some(idx);
                            }
                        }
                    }
                    if let Some(idx) = best_idx {
                        gx[idx] += go[obase + oy * ow + ox];
                    }
                }
            }
        }
    }
    gin
}

pub fn gap_forward(input: &Tensor) -> Tensor {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let mut out = Tensor::zeros(&[n, c]);
    let x = input.data();
    let o = out.data_mut();
    let area = (h * w) as f64;
    for ni in 0..n {
        for ci in 0..c {
            let base = ((ni * c) + ci) * h * w;
            o[ni * c + ci] = x[base..base + h * w].iter().sum::<f64>() / area;
        }
    }
    out
}

pub fn gap_backward(input: &Tensor, gout: &Tensor) -> Tensor {
    let [n, c, h, w] = [input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]];
    let mut gin = Tensor::zeros(input.shape());
    let area = (h * w) as f64;
    let go = gout.data();
    let gx = gin.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let g = go[ni * c + ci] / area;
            let base = ((ni * c) + ci) * h * w;
            gx[base..base + h * w].fill(g);
        }
    }
    gin
}

pub fn concat_forward(ins: &[&Tensor]) -> Tensor {
    let n = ins[0].shape()[0];
    let h = ins[0].shape()[2];
    let w = ins[0].shape()[3];
    let ctot: usize = ins.iter().map(|t| t.shape()[1]).sum();
    let mut out = Tensor::zeros(&[n, ctot, h, w]);
    let o = out.data_mut();
    for ni in 0..n {
        let mut coff = 0;
        for t in ins {
            let c = t.shape()[1];
            let src = &t.data()[ni * c * h * w..(ni + 1) * c * h * w];
            let dst = &mut o[(ni * ctot + coff) * h * w..(ni * ctot + coff + c) * h * w];
            dst.copy_from_slice(src);
            coff += c;
        }
    }
    out
}

pub fn concat_backward(ins: &[&Tensor], gout: &Tensor) -> Vec<Tensor> {
    let n = ins[0].shape()[0];
    let h = ins[0].shape()[2];
    let w = ins[0].shape()[3];
    let ctot = gout.shape()[1];
    let go = gout.data();
    let mut gins: Vec<Tensor> = ins.iter().map(|t| Tensor::zeros(t.shape())).collect();
    for ni in 0..n {
        let mut coff = 0;
        for (t, gin) in ins.iter().zip(gins.iter_mut()) {
            let c = t.shape()[1];
            let src = &go[(ni * ctot + coff) * h * w..(ni * ctot + coff + c) * h * w];
            gin.data_mut()[ni * c * h * w..(ni + 1) * c * h * w].copy_from_slice(src);
            coff += c;
        }
    }
    gins
}
