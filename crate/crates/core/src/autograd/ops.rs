//! Elementwise and structural operations.

use alloc::vec;
use alloc::vec::Vec;

use super::{grads_of, Tape, Var};
use crate::math;
use crate::tensor::Tensor;

fn same_shape(op: &str, a: &Var, b: &Var) {
    assert_eq!(a.shape(), b.shape(), "{op}: shape mismatch");
}

impl Tape {
    pub fn add(&self, a: &Var, b: &Var) -> Var {
        same_shape("add", a, b);
        let v = a.value().zip_map(b.value(), |x, y| x + y);
        self.push(v, &[a, b], |g, _| grads_of([Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Var {
        same_shape("sub", a, b);
        let v = a.value().zip_map(b.value(), |x, y| x - y);
        self.push(v, &[a, b], |g, _| grads_of([Some(g.clone()), Some(g.map(|x| -x))]))
    }

    pub fn mul(&self, a: &Var, b: &Var) -> Var {
        same_shape("mul", a, b);
        let v = a.value().zip_map(b.value(), |x, y| x * y);
        let (av, bv) = (a.rc(), b.rc());
        self.push(v, &[a, b], move |g, n| {
            grads_of([
                n[0].then(|| g.zip_map(&bv, |g, y| g * y)),
                n[1].then(|| g.zip_map(&av, |g, x| g * x)),
            ])
        })
    }

    pub fn div(&self, a: &Var, b: &Var) -> Var {
        same_shape("div", a, b);
        let v = a.value().zip_map(b.value(), |x, y| x / y);
        let (av, bv) = (a.rc(), b.rc());
        self.push(v, &[a, b], move |g, n| {
            let ga = n[0].then(|| g.zip_map(&bv, |g, y| g / y));
            let gb = n[1].then(|| {
                let mut out = g.clone();
                for ((o, x), y) in out.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                    *o *= -x / (y * y);
                }
                out
            });
            grads_of([ga, gb])
        })
    }

    pub fn scale(&self, a: &Var, s: f64) -> Var {
        let v = a.value().map(|x| x * s);
        self.push(v, &[a], move |g, _| grads_of([Some(g.map(|x| x * s))]))
    }

    pub fn add_scalar(&self, a: &Var, s: f64) -> Var {
        let v = a.value().map(|x| x + s);
        self.push(v, &[a], |g, _| grads_of([Some(g.clone())]))
    }

    /// `s · a` for a one-element `s`.
    pub fn mul_scalar_var(&self, a: &Var, s: &Var) -> Var {
        assert_eq!(s.value().len(), 1);
        let sv = s.value().data()[0];
        let v = a.value().map(|x| x * sv);
        let av = a.rc();
        self.push(v, &[a, s], move |g, n| {
            grads_of([
                n[0].then(|| g.map(|x| x * sv)),
                n[1].then(|| Tensor::scalar(g.dot(&av))),
            ])
        })
    }

    /// Elementwise product with an untracked tensor of equal shape.
    pub fn mul_const(&self, a: &Var, c: &Tensor) -> Var {
        assert_eq!(a.shape(), c.shape(), "mul_const: shape mismatch");
        let v = a.value().zip_map(c, |x, y| x * y);
        let cv = c.clone();
        self.push(v, &[a], move |g, _| grads_of([Some(g.zip_map(&cv, |g, y| g * y))]))
    }

    pub fn sum(&self, a: &Var) -> Var {
        let shape = a.shape().to_vec();
        self.push(Tensor::scalar(a.value().sum()), &[a], move |g, _| {
            grads_of([Some(Tensor::full(&shape, g.data()[0]))])
        })
    }

    pub fn mean(&self, a: &Var) -> Var {
        let n = a.value().len() as f64;
        let s = self.sum(a);
        self.scale(&s, 1.0 / n)
    }

    pub fn relu(&self, a: &Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn leaky_relu(&self, a: &Var, slope: f64) -> Var {
        let v = a.value().map(|x| if x > 0.0 { x } else { slope * x });
        let av = a.rc();
        self.push(v, &[a], move |g, _| {
            grads_of([Some(g.zip_map(&av, |g, x| if x > 0.0 { g } else { slope * g }))])
        })
    }

    pub fn sigmoid(&self, a: &Var) -> Var {
        let v = a.value().map(sigmoid);
        let out = alloc::rc::Rc::new(v.clone());
        self.push(v, &[a], move |g, _| {
            grads_of([Some(g.zip_map(&out, |g, s| g * s * (1.0 - s)))])
        })
    }

    pub fn sqrt(&self, a: &Var) -> Var {
        let v = a.value().map(math::sqrt);
        let out = alloc::rc::Rc::new(v.clone());
        self.push(v, &[a], move |g, _| {
            grads_of([Some(g.zip_map(&out, |g, s| if s > 0.0 { 0.5 * g / s } else { 0.0 }))])
        })
    }

    pub fn recip(&self, a: &Var) -> Var {
        let v = a.value().map(|x| 1.0 / x);
        let out = alloc::rc::Rc::new(v.clone());
        self.push(v, &[a], move |g, _| {
            grads_of([Some(g.zip_map(&out, |g, r| -g * r * r))])
        })
    }

    pub fn reshape(&self, a: &Var, shape: &[usize]) -> Var {
        let old = a.shape().to_vec();
        let v = a.value().clone().reshape(shape).expect("reshape: element count");
        self.push(v, &[a], move |g, _| {
            grads_of([Some(g.clone().reshape(&old).expect("reshape"))])
        })
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&self, parts: &[&Var], axis: usize) -> Var {
        let first = parts[0].shape();
        let outer: usize = first[..axis].iter().product();
        let inner: usize = first[axis + 1..].iter().product();
        let lens: Vec<usize> = parts
            .iter()
            .map(|p| {
                let s = p.shape();
                assert_eq!(s.len(), first.len(), "concat: rank");
                assert_eq!(&s[..axis], &first[..axis], "concat: leading dims");
                assert_eq!(&s[axis + 1..], &first[axis + 1..], "concat: trailing dims");
                s[axis]
            })
            .collect();
        let total: usize = lens.iter().sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (p, &l) in parts.iter().zip(&lens) {
                let d = p.value().data();
                data.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        let mut shape = first.to_vec();
        shape[axis] = total;
        let shapes: Vec<Vec<usize>> = parts.iter().map(|p| p.shape().to_vec()).collect();
        self.push(Tensor::from_parts(shape, data), parts, move |g, n| {
            let gd = g.data();
            let mut out = Vec::with_capacity(lens.len());
            let mut off = 0;
            for (i, &l) in lens.iter().enumerate() {
                if n[i] {
                    let mut d = Vec::with_capacity(outer * l * inner);
                    for o in 0..outer {
                        let base = o * total * inner + off * inner;
                        d.extend_from_slice(&gd[base..base + l * inner]);
                    }
                    out.push(Some(Tensor::from_parts(shapes[i].clone(), d)));
                } else {
                    out.push(None);
                }
                off += l;
            }
            out
        })
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice_axis(&self, a: &Var, axis: usize, start: usize, len: usize) -> Var {
        let s = a.shape().to_vec();
        assert!(start + len <= s[axis], "slice_axis: out of range");
        let outer: usize = s[..axis].iter().product();
        let inner: usize = s[axis + 1..].iter().product();
        let n = s[axis];
        let d = a.value().data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&d[base..base + len * inner]);
        }
        let mut shape = s.clone();
        shape[axis] = len;
        self.push(Tensor::from_parts(shape, data), &[a], move |g, _| {
            let mut full = vec![0.0; outer * n * inner];
            let gd = g.data();
            for o in 0..outer {
                let base = (o * n + start) * inner;
                full[base..base + len * inner]
                    .copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
            }
            grads_of([Some(Tensor::from_parts(s.clone(), full))])
        })
    }

    /// Entry `i` of the leading axis, with that axis removed.
    pub fn index0(&self, a: &Var, i: usize) -> Var {
        let s = self.slice_axis(a, 0, i, 1);
        let shape = a.shape()[1..].to_vec();
        self.reshape(&s, &shape)
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack0(&self, parts: &[&Var]) -> Var {
        let mut shape = vec![1];
        shape.extend_from_slice(parts[0].shape());
        let lifted: Vec<Var> = parts.iter().map(|p| self.reshape(p, &shape)).collect();
        let refs: Vec<&Var> = lifted.iter().collect();
        self.concat(&refs, 0)
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + math::exp(-x))
    } else {
        let e = math::exp(x);
        e / (1.0 + e)
    }
}
