//! Fisher linear discriminant as a two-class linear probe.

pub struct Lda {
    w: Vec<f64>,
    b: f64,
}

fn mean_of(rows: &[&Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|a| *a /= rows.len().max(1) as f64);
    m
}

/// Solves `A x = b` for symmetric positive-definite `A` by Cholesky.
fn cholesky_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            l[i][j] = if i == j { (a[i][i] - s).sqrt() } else { (a[i][j] - s) / l[j][j] };
        }
    }
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (b[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (z[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

impl Lda {
    /// Pooled within-class covariance with a relative ridge of 1e-6·tr/d.
    pub fn fit(x: &[Vec<f64>], y: &[bool]) -> Self {
        let d = x[0].len();
        let pos: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, &l)| l).map(|(r, _)| r).collect();
        let neg: Vec<&Vec<f64>> = x.iter().zip(y).filter(|(_, &l)| !l).map(|(r, _)| r).collect();
        let (m1, m0) = (mean_of(&pos, d), mean_of(&neg, d));
        let mut s = vec![vec![0.0; d]; d];
        for (rows, m) in [(&pos, &m1), (&neg, &m0)] {
            for r in rows.iter() {
                for i in 0..d {
                    for j in 0..d {
                        s[i][j] += (r[i] - m[i]) * (r[j] - m[j]);
                    }
                }
            }
        }
        let dof = (x.len() - 2).max(1) as f64;
        let tr: f64 = (0..d).map(|i| s[i][i]).sum::<f64>() / dof;
        for (i, row) in s.iter_mut().enumerate() {
            row.iter_mut().for_each(|v| *v /= dof);
            row[i] += 1e-6 * tr / d as f64 + f64::MIN_POSITIVE;
        }
        let diff: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        let w = cholesky_solve(&s, &diff);
        let b = -w.iter().zip(m1.iter().zip(&m0)).map(|(w, (a, c))| w * (a + c) / 2.0).sum::<f64>();
        Self { w, b }
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.w.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b > 0.0
    }

    pub fn accuracy(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        let hits = x.iter().zip(y).filter(|(r, &l)| self.predict(r) == l).count();
        hits as f64 / x.len().max(1) as f64
    }
}
