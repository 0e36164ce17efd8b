//! Network operations on `[N, C, H, W]` feature maps.

use alloc::vec;
use alloc::vec::Vec;

use super::{grads_of, Tape, Var};
use crate::math;
use crate::tensor::Tensor;

/// Row-major GEMM: `c = a·b (+ c)`, where `a` is `m×k` (or its transpose is
/// stored when `ta`), `b` is `k×n` (or transposed when `tb`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the slices cover the strided extents asserted above and `c`
    // does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col(x: &[f64], g: &ConvGeom, col: &mut [f64]) {
    let l = g.cols();
    for ci in 0..g.cin {
        let xc = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst = &mut col[row * l..(row + 1) * l];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let d = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if ih < 0 || ih >= g.h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let xr = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, v) in d.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *v = if iw < 0 || iw >= g.w as isize {
                            0.0
                        } else {
                            xr[iw as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(col: &[f64], g: &ConvGeom, x: &mut [f64]) {
    let l = g.cols();
    for ci in 0..g.cin {
        let xc = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src = &col[row * l..(row + 1) * l];
                for oh in 0..g.ho {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let xr = &mut xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for ow in 0..g.wo {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            xr[iw as usize] += src[oh * g.wo + ow];
                        }
                    }
                }
            }
        }
    }
}

fn dims4(t: &Tensor) -> [usize; 4] {
    let s = t.shape();
    assert_eq!(s.len(), 4, "expected [N, C, H, W], got {s:?}");
    [s[0], s[1], s[2], s[3]]
}

impl Tape {
    /// 2D cross-correlation. `w: [Cout, Cin, k, k]`, optional `b: [Cout]`.
    pub fn conv2d(&self, x: &Var, w: &Var, b: Option<&Var>, stride: usize, pad: usize) -> Var {
        let [n, cin, h, wd] = dims4(x.value());
        let ws = w.shape();
        assert_eq!(ws.len(), 4);
        assert_eq!(ws[1], cin, "conv2d: input channels");
        assert_eq!(ws[2], ws[3], "conv2d: square kernels only");
        let (cout, k) = (ws[0], ws[2]);
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k, "conv2d: input smaller than kernel");
        let g = ConvGeom {
            cin,
            h,
            w: wd,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (wd + 2 * pad - k) / stride + 1,
        };
        let (kk, l) = (g.rows(), g.cols());
        let mut col = vec![0.0; kk * l];
        let mut out = vec![0.0; n * cout * l];
        let xd = x.value().data();
        let wdata = w.value().data();
        for i in 0..n {
            let xi = &xd[i * cin * h * wd..(i + 1) * cin * h * wd];
            let oi = &mut out[i * cout * l..(i + 1) * cout * l];
            if k == 1 && stride == 1 && pad == 0 {
                gemm(cout, kk, l, wdata, false, xi, false, oi, false);
            } else {
                im2col(xi, &g, &mut col);
                gemm(cout, kk, l, wdata, false, &col, false, oi, false);
            }
            if let Some(b) = b {
                for (co, &bv) in b.value().data().iter().enumerate() {
                    for v in &mut oi[co * l..(co + 1) * l] {
                        *v += bv;
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, cout, g.ho, g.wo], out);
        let (xv, wv) = (x.rc(), w.rc());
        let has_bias = b.is_some();
        let parents: Vec<&Var> = match b {
            Some(b) => vec![x, w, b],
            None => vec![x, w],
        };
        self.push(value, &parents, move |go, needs| {
            let gd = go.data();
            let xd = xv.data();
            let wdata = wv.data();
            let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
            let mut gw = needs[1].then(|| vec![0.0; wdata.len()]);
            let mut gb = (has_bias && needs[2]).then(|| vec![0.0; cout]);
            let mut col = vec![0.0; kk * l];
            let mut dcol = vec![0.0; kk * l];
            let direct = k == 1 && stride == 1 && pad == 0;
            for i in 0..n {
                let gi = &gd[i * cout * l..(i + 1) * cout * l];
                let xi = &xd[i * cin * h * wd..(i + 1) * cin * h * wd];
                if let Some(gw) = gw.as_mut() {
                    if direct {
                        gemm(cout, l, kk, gi, false, xi, true, gw, true);
                    } else {
                        im2col(xi, &g, &mut col);
                        gemm(cout, l, kk, gi, false, &col, true, gw, true);
                    }
                }
                if let Some(gx) = gx.as_mut() {
                    let gxi = &mut gx[i * cin * h * wd..(i + 1) * cin * h * wd];
                    if direct {
                        gemm(kk, cout, l, wdata, true, gi, false, gxi, true);
                    } else {
                        gemm(kk, cout, l, wdata, true, gi, false, &mut dcol, false);
                        col2im(&dcol, &g, gxi);
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    for (co, b) in gb.iter_mut().enumerate() {
                        *b += gi[co * l..(co + 1) * l].iter().sum::<f64>();
                    }
                }
            }
            let mut out = vec![
                gx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
                gw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
            ];
            if has_bias {
                out.push(gb.map(|d| Tensor::from_parts(vec![cout], d)));
            }
            out
        })
    }

    /// Transposed convolution with kernel 2 and stride 2 (exact 2× upsample).
    /// `w: [Cin, Cout, 2, 2]`, `b: [Cout]`.
    pub fn conv_transpose2x2(&self, x: &Var, w: &Var, b: &Var) -> Var {
        let [n, cin, h, wd] = dims4(x.value());
        let ws = w.shape();
        assert_eq!(ws, &[cin, ws[1], 2, 2], "conv_transpose2x2: weight shape");
        let cout = ws[1];
        let l = h * wd;
        let rows = cout * 4;
        let mut y = vec![0.0; rows * l];
        let mut out = vec![0.0; n * cout * 4 * l];
        let (ho, wo) = (2 * h, 2 * wd);
        let xd = x.value().data();
        let bd = b.value().data();
        for i in 0..n {
            let xi = &xd[i * cin * l..(i + 1) * cin * l];
            gemm(rows, cin, l, w.value().data(), true, xi, false, &mut y, false);
            let oi = &mut out[i * cout * ho * wo..(i + 1) * cout * ho * wo];
            for co in 0..cout {
                for ki in 0..2 {
                    for kj in 0..2 {
                        let src = &y[((co * 2 + ki) * 2 + kj) * l..][..l];
                        for r in 0..h {
                            for c in 0..wd {
                                oi[co * ho * wo + (2 * r + ki) * wo + 2 * c + kj] =
                                    src[r * wd + c] + bd[co];
                            }
                        }
                    }
                }
            }
        }
        let value = Tensor::from_parts(vec![n, cout, ho, wo], out);
        let (xv, wv) = (x.rc(), w.rc());
        self.push(value, &[x, w, b], move |go, needs| {
            let gd = go.data();
            let xd = xv.data();
            let mut dy = vec![0.0; rows * l];
            let mut gx = needs[0].then(|| vec![0.0; xd.len()]);
            let mut gw = needs[1].then(|| vec![0.0; wv.len()]);
            let mut gb = vec![0.0; cout];
            for i in 0..n {
                let gi = &gd[i * cout * ho * wo..(i + 1) * cout * ho * wo];
                for co in 0..cout {
                    for ki in 0..2 {
                        for kj in 0..2 {
                            let dst = &mut dy[((co * 2 + ki) * 2 + kj) * l..][..l];
                            for r in 0..h {
                                for c in 0..wd {
                                    dst[r * wd + c] =
                                        gi[co * ho * wo + (2 * r + ki) * wo + 2 * c + kj];
                                }
                            }
                        }
                    }
                    gb[co] += gi[co * ho * wo..(co + 1) * ho * wo].iter().sum::<f64>();
                }
                let xi = &xd[i * cin * l..(i + 1) * cin * l];
                if let Some(gw) = gw.as_mut() {
                    gemm(cin, l, rows, xi, false, &dy, true, gw, true);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(cin, rows, l, wv.data(), false, &dy, false, &mut gx[i * cin * l..(i + 1) * cin * l], false);
                }
            }
            grads_of([
                gx.map(|d| Tensor::from_parts(xv.shape().to_vec(), d)),
                gw.map(|d| Tensor::from_parts(wv.shape().to_vec(), d)),
                Some(Tensor::from_parts(vec![cout], gb)),
            ])
        })
    }

    /// Per-(sample, channel) normalization to zero mean, unit variance.
    pub fn instance_norm(&self, x: &Var, eps: f64) -> Var {
        let [n, c, h, w] = dims4(x.value());
        let l = h * w;
        let xd = x.value().data();
        let mut y = vec![0.0; xd.len()];
        let mut inv_std = vec![0.0; n * c];
        for (p, (xs, ys)) in xd.chunks_exact(l).zip(y.chunks_exact_mut(l)).enumerate() {
            let mu = xs.iter().sum::<f64>() / l as f64;
            let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / l as f64;
            let is = 1.0 / math::sqrt(var + eps);
            inv_std[p] = is;
            for (o, v) in ys.iter_mut().zip(xs) {
                *o = (v - mu) * is;
            }
        }
        let yv = alloc::rc::Rc::new(Tensor::from_parts(vec![n, c, h, w], y.clone()));
        let value = Tensor::from_parts(vec![n, c, h, w], y);
        self.push(value, &[x], move |go, _| {
            let mut gx = vec![0.0; go.len()];
            for (p, ((gs, ys), out)) in go
                .data()
                .chunks_exact(l)
                .zip(yv.data().chunks_exact(l))
                .zip(gx.chunks_exact_mut(l))
                .enumerate()
            {
                let mg = gs.iter().sum::<f64>() / l as f64;
                let mgy = gs.iter().zip(ys).map(|(g, y)| g * y).sum::<f64>() / l as f64;
                for ((o, g), y) in out.iter_mut().zip(gs).zip(ys) {
                    *o = inv_std[p] * (g - mg - y * mgy);
                }
            }
            grads_of([Some(Tensor::from_parts(go.shape().to_vec(), gx))])
        })
    }

    /// Global average pooling `[N, C, H, W] → [N, C]`.
    pub fn gap(&self, x: &Var) -> Var {
        let [n, c, h, w] = dims4(x.value());
        let l = h * w;
        let v: Vec<f64> = x
            .value()
            .data()
            .chunks_exact(l)
            .map(|s| s.iter().sum::<f64>() / l as f64)
            .collect();
        self.push(Tensor::from_parts(vec![n, c], v), &[x], move |go, _| {
            let mut gx = Vec::with_capacity(n * c * l);
            for &g in go.data() {
                gx.extend(core::iter::repeat_n(g / l as f64, l));
            }
            grads_of([Some(Tensor::from_parts(vec![n, c, h, w], gx))])
        })
    }

    /// Affine map `[N, In] → [N, Out]` with `w: [Out, In]`, `b: [Out]`.
    pub fn linear(&self, x: &Var, w: &Var, b: &Var) -> Var {
        let xs = x.shape();
        assert_eq!(xs.len(), 2);
        let (n, fin) = (xs[0], xs[1]);
        let fout = w.shape()[0];
        assert_eq!(w.shape(), &[fout, fin], "linear: weight shape");
        let mut y = vec![0.0; n * fout];
        gemm(n, fin, fout, x.value().data(), false, w.value().data(), true, &mut y, false);
        for row in y.chunks_exact_mut(fout) {
            for (v, bv) in row.iter_mut().zip(b.value().data()) {
                *v += bv;
            }
        }
        let (xv, wv) = (x.rc(), w.rc());
        self.push(Tensor::from_parts(vec![n, fout], y), &[x, w, b], move |go, needs| {
            let gd = go.data();
            let gx = needs[0].then(|| {
                let mut d = vec![0.0; n * fin];
                gemm(n, fout, fin, gd, false, wv.data(), false, &mut d, false);
                Tensor::from_parts(vec![n, fin], d)
            });
            let gw = needs[1].then(|| {
                let mut d = vec![0.0; fout * fin];
                gemm(fout, n, fin, gd, true, xv.data(), false, &mut d, false);
                Tensor::from_parts(vec![fout, fin], d)
            });
            let mut gb = vec![0.0; fout];
            for row in gd.chunks_exact(fout) {
                for (b, g) in gb.iter_mut().zip(row) {
                    *b += g;
                }
            }
            grads_of([gx, gw, Some(Tensor::from_parts(vec![fout], gb))])
        })
    }

    /// `x[n, c, :, :] · s[n, c]`.
    pub fn scale_channels(&self, x: &Var, s: &Var) -> Var {
        let [n, c, h, w] = dims4(x.value());
        assert_eq!(s.shape(), &[n, c], "scale_channels: gate shape");
        let l = h * w;
        let mut y = x.value().data().to_vec();
        for (chunk, &g) in y.chunks_exact_mut(l).zip(s.value().data()) {
            for v in chunk {
                *v *= g;
            }
        }
        let (xv, sv) = (x.rc(), s.rc());
        self.push(Tensor::from_parts(vec![n, c, h, w], y), &[x, s], move |go, needs| {
            let gx = needs[0].then(|| {
                let mut d = go.data().to_vec();
                for (chunk, &g) in d.chunks_exact_mut(l).zip(sv.data()) {
                    for v in chunk {
                        *v *= g;
                    }
                }
                Tensor::from_parts(xv.shape().to_vec(), d)
            });
            let gs = needs[1].then(|| {
                let d = go
                    .data()
                    .chunks_exact(l)
                    .zip(xv.data().chunks_exact(l))
                    .map(|(g, x)| g.iter().zip(x).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::from_parts(vec![n, c], d)
            });
            grads_of([gx, gs])
        })
    }

    /// Mirror padding that excludes the edge sample.
    pub fn reflect_pad(&self, x: &Var, top: usize, bottom: usize, left: usize, right: usize) -> Var {
        let [n, c, h, w] = dims4(x.value());
        assert!(top < h && bottom < h && left < w && right < w, "reflect_pad: pad too large");
        let (ho, wo) = (h + top + bottom, w + left + right);
        let src_r: Vec<usize> = (0..ho).map(|r| reflect(r as isize - top as isize, h)).collect();
        let src_c: Vec<usize> = (0..wo).map(|c| reflect(c as isize - left as isize, w)).collect();
        let xd = x.value().data();
        let mut y = vec![0.0; n * c * ho * wo];
        for (p, out) in y.chunks_exact_mut(ho * wo).enumerate() {
            let xs = &xd[p * h * w..(p + 1) * h * w];
            for r in 0..ho {
                for cc in 0..wo {
                    out[r * wo + cc] = xs[src_r[r] * w + src_c[cc]];
                }
            }
        }
        self.push(Tensor::from_parts(vec![n, c, ho, wo], y), &[x], move |go, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for (p, g) in go.data().chunks_exact(ho * wo).enumerate() {
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for r in 0..ho {
                    for cc in 0..wo {
                        dst[src_r[r] * w + src_c[cc]] += g[r * wo + cc];
                    }
                }
            }
            grads_of([Some(Tensor::from_parts(vec![n, c, h, w], gx))])
        })
    }

    /// Spatial window `[top..top+h, left..left+w]`.
    pub fn crop(&self, x: &Var, top: usize, left: usize, h: usize, w: usize) -> Var {
        let [n, c, hi, wi] = dims4(x.value());
        assert!(top + h <= hi && left + w <= wi, "crop: window out of range");
        let xd = x.value().data();
        let mut y = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for r in 0..h {
                let base = p * hi * wi + (top + r) * wi + left;
                y.extend_from_slice(&xd[base..base + w]);
            }
        }
        self.push(Tensor::from_parts(vec![n, c, h, w], y), &[x], move |go, _| {
            let mut gx = vec![0.0; n * c * hi * wi];
            let gd = go.data();
            for p in 0..n * c {
                for r in 0..h {
                    let base = p * hi * wi + (top + r) * wi + left;
                    gx[base..base + w].copy_from_slice(&gd[(p * h + r) * w..(p * h + r + 1) * w]);
                }
            }
            grads_of([Some(Tensor::from_parts(vec![n, c, hi, wi], gx))])
        })
    }

    /// Bilinear resize with half-pixel centers (`align_corners = false`).
    pub fn bilinear_resize(&self, x: &Var, ho: usize, wo: usize) -> Var {
        let [n, c, h, w] = dims4(x.value());
        let ry = interp_axis(h, ho);
        let rx = interp_axis(w, wo);
        let xd = x.value().data();
        let mut y = vec![0.0; n * c * ho * wo];
        for (p, out) in y.chunks_exact_mut(ho * wo).enumerate() {
            let xs = &xd[p * h * w..(p + 1) * h * w];
            for (r, &(r0, r1, ly)) in ry.iter().enumerate() {
                for (cc, &(c0, c1, lx)) in rx.iter().enumerate() {
                    let top = xs[r0 * w + c0] * (1.0 - lx) + xs[r0 * w + c1] * lx;
                    let bot = xs[r1 * w + c0] * (1.0 - lx) + xs[r1 * w + c1] * lx;
                    out[r * wo + cc] = top * (1.0 - ly) + bot * ly;
                }
            }
        }
        self.push(Tensor::from_parts(vec![n, c, ho, wo], y), &[x], move |go, _| {
            let mut gx = vec![0.0; n * c * h * w];
            for (p, g) in go.data().chunks_exact(ho * wo).enumerate() {
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for (r, &(r0, r1, ly)) in ry.iter().enumerate() {
                    for (cc, &(c0, c1, lx)) in rx.iter().enumerate() {
                        let gv = g[r * wo + cc];
                        dst[r0 * w + c0] += gv * (1.0 - ly) * (1.0 - lx);
                        dst[r0 * w + c1] += gv * (1.0 - ly) * lx;
                        dst[r1 * w + c0] += gv * ly * (1.0 - lx);
                        dst[r1 * w + c1] += gv * ly * lx;
                    }
                }
            }
            grads_of([Some(Tensor::from_parts(vec![n, c, h, w], gx))])
        })
    }

    /// Row-wise softmax of `[N, K]`.
    pub fn softmax_rows(&self, x: &Var) -> Var {
        let s = x.shape();
        assert_eq!(s.len(), 2);
        let k = s[1];
        let mut y = x.value().data().to_vec();
        for row in y.chunks_exact_mut(k) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = math::exp(*v - m);
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let yv = alloc::rc::Rc::new(Tensor::from_parts(s.to_vec(), y.clone()));
        self.push(Tensor::from_parts(s.to_vec(), y), &[x], move |go, _| {
            let mut gx = vec![0.0; go.len()];
            for ((g, p), out) in go
                .data()
                .chunks_exact(k)
                .zip(yv.data().chunks_exact(k))
                .zip(gx.chunks_exact_mut(k))
            {
                let dotp: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
                for ((o, gi), pi) in out.iter_mut().zip(g).zip(p) {
                    *o = pi * (gi - dotp);
                }
            }
            grads_of([Some(Tensor::from_parts(yv.shape().to_vec(), gx))])
        })
    }

    /// `out[n] = Σ_j ω[n, j] · P[j]` for `ω: [N, Np]`, `P: [Np, ...]`.
    pub fn weighted_components(&self, weights: &Var, comps: &Var) -> Var {
        let ws = weights.shape();
        let cs = comps.shape();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws[1], cs[0], "weighted_components: component count");
        let (n, np) = (ws[0], ws[1]);
        let inner: usize = cs[1..].iter().product();
        let mut y = vec![0.0; n * inner];
        gemm(n, np, inner, weights.value().data(), false, comps.value().data(), false, &mut y, false);
        let mut shape = vec![n];
        shape.extend_from_slice(&cs[1..]);
        let (wv, cv) = (weights.rc(), comps.rc());
        self.push(Tensor::from_parts(shape, y), &[weights, comps], move |go, needs| {
            let gw = needs[0].then(|| {
                let mut d = vec![0.0; n * np];
                gemm(n, inner, np, go.data(), false, cv.data(), true, &mut d, false);
                Tensor::from_parts(vec![n, np], d)
            });
            let gc = needs[1].then(|| {
                let mut d = vec![0.0; np * inner];
                gemm(np, n, inner, wv.data(), true, go.data(), false, &mut d, false);
                Tensor::from_parts(cv.shape().to_vec(), d)
            });
            grads_of([gw, gc])
        })
    }

    /// Uniform `k×k` mean filter, valid region, over `[B, H, W]`.
    pub fn box_filter(&self, x: &Var, k: usize) -> Var {
        let s = x.shape();
        assert_eq!(s.len(), 3);
        let (b, h, w) = (s[0], s[1], s[2]);
        assert!(h >= k && w >= k, "box_filter: image smaller than window");
        let (ho, wo) = (h - k + 1, w - k + 1);
        let norm = 1.0 / (k * k) as f64;
        let xd = x.value().data();
        let mut y = vec![0.0; b * ho * wo];
        let mut rows = vec![0.0; ho * w];
        for (p, out) in y.chunks_exact_mut(ho * wo).enumerate() {
            let xs = &xd[p * h * w..(p + 1) * h * w];
            // vertical then horizontal running sums
            for c in 0..w {
                for r in 0..ho {
                    rows[r * w + c] = (0..k).map(|i| xs[(r + i) * w + c]).sum();
                }
            }
            for r in 0..ho {
                for c in 0..wo {
                    out[r * wo + c] = rows[r * w + c..r * w + c + k].iter().sum::<f64>() * norm;
                }
            }
        }
        self.push(Tensor::from_parts(vec![b, ho, wo], y), &[x], move |go, _| {
            let mut gx = vec![0.0; b * h * w];
            let mut tmp = vec![0.0; ho * w];
            for (p, g) in go.data().chunks_exact(ho * wo).enumerate() {
                tmp.fill(0.0);
                for r in 0..ho {
                    for c in 0..wo {
                        let v = g[r * wo + c] * norm;
                        for t in &mut tmp[r * w + c..r * w + c + k] {
                            *t += v;
                        }
                    }
                }
                let dst = &mut gx[p * h * w..(p + 1) * h * w];
                for r in 0..ho {
                    for i in 0..k {
                        for c in 0..w {
                            dst[(r + i) * w + c] += tmp[r * w + c];
                        }
                    }
                }
            }
            grads_of([Some(Tensor::from_parts(vec![b, h, w], gx))])
        })
    }

    /// Shifts channel groups of `[F, C, H, W]` along the frame axis:
    /// group `g` of output frame `t` reads input frame `t − offsets[g mod len]`.
    pub fn temporal_shift(&self, x: &Var, groups: usize, offsets: &[isize], cyclic: bool) -> Var {
        let [f, c, h, w] = dims4(x.value());
        assert!(groups > 0 && c % groups == 0, "temporal_shift: groups must divide channels");
        let per = c / groups;
        let l = h * w;
        // source frame for each (t, channel)
        let src: Vec<usize> = (0..f)
            .flat_map(|t| {
                (0..c).map(move |ch| {
                    let off = if offsets.is_empty() { 0 } else { offsets[(ch / per) % offsets.len()] };
                    let s = t as isize - off;
                    if cyclic {
                        s.rem_euclid(f as isize) as usize
                    } else {
                        s.clamp(0, f as isize - 1) as usize
                    }
                })
            })
            .collect();
        let xd = x.value().data();
        let mut y = vec![0.0; xd.len()];
        for t in 0..f {
            for ch in 0..c {
                let s = src[t * c + ch];
                y[(t * c + ch) * l..(t * c + ch + 1) * l]
                    .copy_from_slice(&xd[(s * c + ch) * l..(s * c + ch + 1) * l]);
            }
        }
        self.push(Tensor::from_parts(vec![f, c, h, w], y), &[x], move |go, _| {
            let gd = go.data();
            let mut gx = vec![0.0; gd.len()];
            for t in 0..f {
                for ch in 0..c {
                    let s = src[t * c + ch];
                    let (dst, srcg) = ((s * c + ch) * l, (t * c + ch) * l);
                    for i in 0..l {
                        gx[dst + i] += gd[srcg + i];
                    }
                }
            }
            grads_of([Some(Tensor::from_parts(vec![f, c, h, w], gx))])
        })
    }
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

fn interp_axis(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (math::floor(src) as usize).min(n_in - 1);
            let i1 = (i0 + 1).min(n_in - 1);
            let lam = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, lam)
        })
        .collect()
}
