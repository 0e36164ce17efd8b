//! Complex-valued operations on interleaved `[..., 2]` tensors.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::{grads_of, Tape, Var};
use crate::fft;
use crate::math;
use crate::tensor::Tensor;

fn as_complex(t: &Tensor) -> Vec<Complex64> {
    t.data()
        .chunks_exact(2)
        .map(|p| Complex64::new(p[0], p[1]))
        .collect()
}

fn from_complex(shape: Vec<usize>, z: &[Complex64]) -> Tensor {
    Tensor::from_parts(shape, z.iter().flat_map(|c| [c.re, c.im]).collect())
}

fn spatial(t: &Tensor) -> (usize, usize) {
    let s = t.shape();
    assert!(s.len() >= 3 && s[s.len() - 1] == 2, "expected [..., H, W, 2], got {s:?}");
    (s[s.len() - 3], s[s.len() - 2])
}

fn transform(t: &Tensor, forward: bool) -> Tensor {
    let (h, w) = spatial(t);
    let mut z = as_complex(t);
    if forward {
        fft::fft2c_inplace(&mut z, h, w);
    } else {
        fft::ifft2c_inplace(&mut z, h, w);
    }
    from_complex(t.shape().to_vec(), &z)
}

impl Tape {
    /// Centered orthonormal FFT over the spatial axes of `[..., H, W, 2]`.
    pub fn fft2c(&self, x: &Var) -> Var {
        self.push(transform(x.value(), true), &[x], |g, _| {
            grads_of([Some(transform(g, false))])
        })
    }

    pub fn ifft2c(&self, x: &Var) -> Var {
        self.push(transform(x.value(), false), &[x], |g, _| {
            grads_of([Some(transform(g, true))])
        })
    }

    /// Expand: `[F, H, W, 2]` images and `[C, H, W, 2]` maps give
    /// `[F, C, H, W, 2]` coil images `S_c · x_f`.
    pub fn coil_expand(&self, images: &Var, sens: &Var) -> Var {
        let is = images.shape();
        let ss = sens.shape();
        assert_eq!(is.len(), 4);
        assert_eq!(ss.len(), 4);
        assert_eq!(&is[1..], &ss[1..], "coil_expand: spatial mismatch");
        let (f, c, plane) = (is[0], ss[0], is[1] * is[2]);
        let x = as_complex(images.value());
        let s = as_complex(sens.value());
        let mut out = Vec::with_capacity(f * c * plane);
        for fi in 0..f {
            let xf = &x[fi * plane..(fi + 1) * plane];
            for ci in 0..c {
                let sc = &s[ci * plane..(ci + 1) * plane];
                out.extend(sc.iter().zip(xf).map(|(a, b)| a * b));
            }
        }
        let shape = vec![f, c, is[1], is[2], 2];
        let (ishape, sshape) = (is.to_vec(), ss.to_vec());
        self.push(from_complex(shape, &out), &[images, sens], move |go, needs| {
            let g = as_complex(go);
            let gx = needs[0].then(|| {
                let mut d = vec![Complex64::new(0.0, 0.0); f * plane];
                for fi in 0..f {
                    for ci in 0..c {
                        let gfc = &g[(fi * c + ci) * plane..][..plane];
                        let sc = &s[ci * plane..(ci + 1) * plane];
                        for ((o, gv), sv) in d[fi * plane..].iter_mut().zip(gfc).zip(sc) {
                            *o += sv.conj() * gv;
                        }
                    }
                }
                from_complex(ishape.clone(), &d)
            });
            let gs = needs[1].then(|| {
                let mut d = vec![Complex64::new(0.0, 0.0); c * plane];
                for fi in 0..f {
                    let xf = &x[fi * plane..(fi + 1) * plane];
                    for ci in 0..c {
                        let gfc = &g[(fi * c + ci) * plane..][..plane];
                        for ((o, gv), xv) in d[ci * plane..].iter_mut().zip(gfc).zip(xf) {
                            *o += xv.conj() * gv;
                        }
                    }
                }
                from_complex(sshape.clone(), &d)
            });
            grads_of([gx, gs])
        })
    }

    /// Reduce: `[F, C, H, W, 2]` coil images to `[F, H, W, 2]` via
    /// `Σ_c conj(S_c) · x_{f,c}`.
    pub fn coil_reduce(&self, coils: &Var, sens: &Var) -> Var {
        let xs = coils.shape();
        let ss = sens.shape();
        assert_eq!(xs.len(), 5);
        assert_eq!(&xs[1..], ss, "coil_reduce: coil/spatial mismatch");
        let (f, c, plane) = (xs[0], xs[1], xs[2] * xs[3]);
        let x = as_complex(coils.value());
        let s = as_complex(sens.value());
        let mut out = vec![Complex64::new(0.0, 0.0); f * plane];
        for fi in 0..f {
            for ci in 0..c {
                let xc = &x[(fi * c + ci) * plane..][..plane];
                let sc = &s[ci * plane..(ci + 1) * plane];
                for ((o, a), b) in out[fi * plane..].iter_mut().zip(sc).zip(xc) {
                    *o += a.conj() * b;
                }
            }
        }
        let shape = vec![f, xs[2], xs[3], 2];
        let (xshape, sshape) = (xs.to_vec(), ss.to_vec());
        self.push(from_complex(shape, &out), &[coils, sens], move |go, needs| {
            let g = as_complex(go);
            let gx = needs[0].then(|| {
                let mut d = Vec::with_capacity(f * c * plane);
                for fi in 0..f {
                    let gf = &g[fi * plane..(fi + 1) * plane];
                    for ci in 0..c {
                        let sc = &s[ci * plane..(ci + 1) * plane];
                        d.extend(sc.iter().zip(gf).map(|(a, b)| a * b));
                    }
                }
                from_complex(xshape.clone(), &d)
            });
            let gs = needs[1].then(|| {
                let mut d = vec![Complex64::new(0.0, 0.0); c * plane];
                for fi in 0..f {
                    let gf = &g[fi * plane..(fi + 1) * plane];
                    for ci in 0..c {
                        let xc = &x[(fi * c + ci) * plane..][..plane];
                        for ((o, gv), xv) in d[ci * plane..].iter_mut().zip(gf).zip(xc) {
                            *o += gv.conj() * xv;
                        }
                    }
                }
                from_complex(sshape.clone(), &d)
            });
            grads_of([gx, gs])
        })
    }

    /// Root-sum-of-squares over the coil axis of `[..., C, H, W, 2]`,
    /// giving `[..., H, W]`.
    pub fn rss(&self, x: &Var) -> Var {
        let s = x.shape().to_vec();
        let n = s.len();
        assert!(n >= 4 && s[n - 1] == 2, "rss: expected [..., C, H, W, 2]");
        let (c, plane) = (s[n - 4], s[n - 3] * s[n - 2]);
        let outer: usize = s[..n - 4].iter().product();
        let xd = x.value().data();
        let mut r = vec![0.0; outer * plane];
        for o in 0..outer {
            for ci in 0..c {
                let base = (o * c + ci) * plane * 2;
                for p in 0..plane {
                    let (a, b) = (xd[base + 2 * p], xd[base + 2 * p + 1]);
                    r[o * plane + p] += a * a + b * b;
                }
            }
        }
        for v in &mut r {
            *v = math::sqrt(*v);
        }
        let mut oshape = s[..n - 4].to_vec();
        oshape.extend_from_slice(&[s[n - 3], s[n - 2]]);
        let rv = alloc::rc::Rc::new(r.clone());
        let xv = x.rc();
        self.push(Tensor::from_parts(oshape, r), &[x], move |go, _| {
            let xd = xv.data();
            let gd = go.data();
            let mut gx = vec![0.0; xd.len()];
            for o in 0..outer {
                for ci in 0..c {
                    let base = (o * c + ci) * plane * 2;
                    for p in 0..plane {
                        let rr = rv[o * plane + p];
                        if rr > 0.0 {
                            let k = gd[o * plane + p] / rr;
                            gx[base + 2 * p] = k * xd[base + 2 * p];
                            gx[base + 2 * p + 1] = k * xd[base + 2 * p + 1];
                        }
                    }
                }
            }
            grads_of([Some(Tensor::from_parts(s.clone(), gx))])
        })
    }

    /// Divides `[C, H, W, 2]` coil maps by their pixelwise RSS; all-zero
    /// pixels stay zero.
    pub fn normalize_coils(&self, x: &Var) -> Var {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4, "normalize_coils: expected [C, H, W, 2]");
        let (c, plane) = (s[0], s[1] * s[2]);
        let z = as_complex(x.value());
        let mut r = vec![0.0; plane];
        for ci in 0..c {
            for p in 0..plane {
                r[p] += z[ci * plane + p].norm_sqr();
            }
        }
        for v in &mut r {
            *v = math::sqrt(*v);
        }
        let y: Vec<Complex64> = (0..c * plane)
            .map(|i| {
                let rr = r[i % plane];
                if rr > 0.0 {
                    z[i] / rr
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        self.push(from_complex(s.clone(), &y), &[x], move |go, _| {
            let g = as_complex(go);
            let mut alpha = vec![0.0; plane];
            for i in 0..c * plane {
                alpha[i % plane] += (g[i].conj() * z[i]).re;
            }
            let d: Vec<Complex64> = (0..c * plane)
                .map(|i| {
                    let p = i % plane;
                    let rr = r[p];
                    if rr > 0.0 {
                        g[i] / rr - z[i] * (alpha[p] / (rr * rr * rr))
                    } else {
                        Complex64::new(0.0, 0.0)
                    }
                })
                .collect();
            grads_of([Some(from_complex(s.clone(), &d))])
        })
    }

    /// `[B, H, W, 2]` complex images to `[1, 2B, H, W]` real channels
    /// ordered (re₀, im₀, re₁, im₁, …).
    pub fn complex_to_channels(&self, x: &Var) -> Var {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4);
        assert_eq!(s[3], 2);
        let (b, h, w) = (s[0], s[1], s[2]);
        let y = interleaved_to_planar(x.value().data(), b, h * w);
        self.push(Tensor::from_parts(vec![1, 2 * b, h, w], y), &[x], move |go, _| {
            let d = planar_to_interleaved(go.data(), b, h * w);
            grads_of([Some(Tensor::from_parts(s.clone(), d))])
        })
    }

    /// Inverse of [`Tape::complex_to_channels`]: `[N, 2B', H, W]` with
    /// `N·B' = B` images gives `[B, H, W, 2]`.
    pub fn channels_to_complex(&self, x: &Var) -> Var {
        let s = x.shape().to_vec();
        assert_eq!(s.len(), 4);
        assert_eq!(s[1] % 2, 0, "channels_to_complex: odd channel count");
        let b = s[0] * s[1] / 2;
        let (h, w) = (s[2], s[3]);
        let y = planar_to_interleaved(x.value().data(), b, h * w);
        self.push(Tensor::from_parts(vec![b, h, w, 2], y), &[x], move |go, _| {
            let d = interleaved_to_planar(go.data(), b, h * w);
            grads_of([Some(Tensor::from_parts(s.clone(), d))])
        })
    }
}

fn interleaved_to_planar(src: &[f64], b: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..b {
        let s = &src[i * plane * 2..(i + 1) * plane * 2];
        let (re, im) = out[i * plane * 2..(i + 1) * plane * 2].split_at_mut(plane);
        for p in 0..plane {
            re[p] = s[2 * p];
            im[p] = s[2 * p + 1];
        }
    }
    out
}

fn planar_to_interleaved(src: &[f64], b: usize, plane: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for i in 0..b {
        let s = &src[i * plane * 2..(i + 1) * plane * 2];
        let d = &mut out[i * plane * 2..(i + 1) * plane * 2];
        for p in 0..plane {
            d[2 * p] = s[p];
            d[2 * p + 1] = s[plane + p];
        }
    }
    out
}
