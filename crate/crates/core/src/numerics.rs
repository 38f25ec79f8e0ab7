//! Dense linear algebra and distribution functions.
//!
//! Everything here is plain `f64` on row-major storage. Orthonormal bases
//! come from Householder QR with a rank tolerance of
//! `max(rows, cols) * EPS * max_column_norm`; projections are always computed
//! as `Q (Qᵀ v)`, never through normal equations. The chi-square CDF is the
//! regularized lower incomplete gamma, evaluated by the series for
//! `x < dof` and by the continued fraction otherwise. All logarithms and
//! exponentials are natural-base.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "Mat::new",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parse {
                reason: "matrix entries must be finite".into(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Submatrix of the columns at the given 1-based positions, in order.
    pub fn select_columns(&self, indices_1based: &[usize]) -> Result<Self> {
        let mut out = Self::zeros(self.rows, indices_1based.len());
        for (c, &idx) in indices_1based.iter().enumerate() {
            if idx == 0 || idx > self.cols {
                return Err(Error::InvalidSupport {
                    reason: format!("column index {idx} outside 1..={}", self.cols),
                });
            }
            for i in 0..self.rows {
                out[(i, c)] = self[(i, idx - 1)];
            }
        }
        Ok(out)
    }

    /// `A v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "Mat::mul_vec",
                expected: self.cols,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            out[i] = dot(row, v);
        }
        Ok(out)
    }

    /// `Aᵀ v`.
    pub fn transpose_mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "Mat::transpose_mul_vec",
                expected: self.rows,
                got: v.len(),
            });
        }
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            let vi = v[i];
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * vi;
            }
        }
        Ok(out)
    }

    pub fn max_column_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| (0..self.rows).map(|i| self[(i, j)] * self[(i, j)]).sum::<f64>())
            .fold(0.0_f64, f64::max)
            .sqrt()
    }

    /// Writes the header (`rows cols`) and then one row per line, row-major,
    /// with 17 significant digits so values round-trip exactly.
    pub fn write_text<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let row: Vec<String> = (0..self.cols)
                .map(|j| format!("{:.16e}", self[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: std::io::BufRead>(r: &mut R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)?;
        let mut values = text.split_whitespace();
        let parse = |tok: Option<&str>, what: &str| -> Result<f64> {
            tok.ok_or_else(|| Error::Parse {
                reason: format!("matrix text ended while reading {what}"),
            })?
            .parse::<f64>()
            .map_err(|e| Error::Parse {
                reason: format!("bad {what}: {e}"),
            })
        };
        let rows = parse(values.next(), "row count")? as usize;
        let cols = parse(values.next(), "column count")? as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(parse(values.next(), "entry")?);
        }
        Mat::new(rows, cols, data)
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

// ---------------------------------------------------------------------------
// Householder QR
// ---------------------------------------------------------------------------

/// Compact Householder factorization of a full-column-rank tall matrix.
///
/// `packed` holds R on and above the diagonal and the reflector tails
/// (normalized to leading entry 1) below it.
pub struct QrFactor {
    rows: usize,
    cols: usize,
    packed: Mat,
    tau: Vec<f64>,
}

impl QrFactor {
    /// Rank tolerance: `max(rows, cols) * EPS * max_column_norm(a)`.
    pub fn factor(a: &Mat) -> Result<Self> {
        let (m, n) = (a.rows, a.cols);
        if m < n {
            return Err(Error::RankDeficient { support: None });
        }
        let tol = m.max(n) as f64 * f64::EPSILON * a.max_column_norm();
        let mut w = a.clone();
        let mut tau = vec![0.0; n];
        for j in 0..n {
            let norm_x = (j..m).map(|i| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt();
            if norm_x <= tol {
                return Err(Error::RankDeficient { support: None });
            }
            let x0 = w[(j, j)];
            let alpha = if x0 >= 0.0 { -norm_x } else { norm_x };
            let v0 = x0 - alpha;
            tau[j] = -v0 / alpha;
            w[(j, j)] = alpha;
            for i in j + 1..m {
                w[(i, j)] /= v0;
            }
            for c in j + 1..n {
                let mut s = w[(j, c)];
                for i in j + 1..m {
                    s += w[(i, j)] * w[(i, c)];
                }
                s *= tau[j];
                w[(j, c)] -= s;
                for i in j + 1..m {
                    let vij = w[(i, j)];
                    w[(i, c)] -= s * vij;
                }
            }
        }
        Ok(Self {
            rows: m,
            cols: n,
            packed: w,
            tau,
        })
    }

    fn apply_reflector(&self, j: usize, y: &mut [f64]) {
        let mut s = y[j];
        for i in j + 1..self.rows {
            s += self.packed[(i, j)] * y[i];
        }
        s *= self.tau[j];
        y[j] -= s;
        for i in j + 1..self.rows {
            y[i] -= s * self.packed[(i, j)];
        }
    }

    /// `y ← Qᵀ y` (full Q).
    pub fn apply_qt(&self, y: &mut [f64]) {
        for j in 0..self.cols {
            self.apply_reflector(j, y);
        }
    }

    /// `y ← Q y` (full Q).
    pub fn apply_q(&self, y: &mut [f64]) {
        for j in (0..self.cols).rev() {
            self.apply_reflector(j, y);
        }
    }

    /// The thin factor: `rows × cols` with orthonormal columns spanning
    /// the column space of the input.
    pub fn thin_q(&self) -> Mat {
        let mut q = Mat::zeros(self.rows, self.cols);
        let mut e = vec![0.0; self.rows];
        for c in 0..self.cols {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            self.apply_q(&mut e);
            for i in 0..self.rows {
                q[(i, c)] = e[i];
            }
        }
        q
    }

    /// Least-squares solution of `min ‖A c − y‖` by back substitution on R.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::DimensionMismatch {
                context: "QrFactor::solve",
                expected: self.rows,
                got: y.len(),
            });
        }
        let mut z = y.to_vec();
        self.apply_qt(&mut z);
        let n = self.cols;
        let mut c = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s -= self.packed[(i, j)] * c[j];
            }
            c[i] = s / self.packed[(i, i)];
        }
        Ok(c)
    }
}

/// Orthonormal basis of the column span of `a` (thin Q of the QR
/// factorization). Errors with `RankDeficient` when the numerical rank of
/// `a` is below its column count, which signals a violated 2k-independence
/// assumption upstream.
pub fn orthonormal_basis(a: &Mat) -> Result<Mat> {
    Ok(QrFactor::factor(a)?.thin_q())
}

/// Orthogonal projection of `v` onto the column span of `a`, computed as
/// `Q (Qᵀ v)`.
pub fn project(a: &Mat, v: &[f64]) -> Result<Vec<f64>> {
    let q = orthonormal_basis(a)?;
    Ok(project_with_basis(&q, v))
}

/// Projection when an orthonormal basis is already at hand.
pub fn project_with_basis(q: &Mat, v: &[f64]) -> Vec<f64> {
    let qt_v = q.transpose_mul_vec(v).expect("basis/vector rows must agree");
    q.mul_vec(&qt_v).expect("dimensions agree by construction")
}

/// Squared distance from `v` to the column span of `a`: `‖v − Q Qᵀ v‖²`.
pub fn residual_norm_sq(a: &Mat, v: &[f64]) -> Result<f64> {
    if v.len() != a.rows {
        return Err(Error::DimensionMismatch {
            context: "residual_norm_sq",
            expected: a.rows,
            got: v.len(),
        });
    }
    let q = orthonormal_basis(a)?;
    Ok(residual_norm_sq_with_basis(&q, v))
}

pub fn residual_norm_sq_with_basis(q: &Mat, v: &[f64]) -> f64 {
    let p = project_with_basis(q, v);
    v.iter().zip(&p).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Least-squares coefficients of `v` against the columns of `a`.
pub fn least_squares(a: &Mat, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != a.rows {
        return Err(Error::DimensionMismatch {
            context: "least_squares",
            expected: a.rows,
            got: v.len(),
        });
    }
    QrFactor::factor(a)?.solve(v)
}

// ---------------------------------------------------------------------------
// Distribution functions
// ---------------------------------------------------------------------------

// Lanczos approximation, g = 7, 9 terms.
const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma requires x > 0, got {x}");
    if x < 0.5 {
        // Reflection; only exercised for arguments below 1/2.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let mut acc = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x - 1.0 + i as f64);
    }
    let t = x + LANCZOS_G - 0.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x - 0.5) * t.ln() - t + acc.ln()
}

const GAMMA_MAX_ITER: usize = 1_000;
const GAMMA_EPS: f64 = 1e-16;

/// Lower regularized incomplete gamma by its power series; converges for
/// `x < a + 1`.
fn gamma_series(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let mut term = 1.0 / a;
    let mut sum = term;
    for n in 1..GAMMA_MAX_ITER {
        term *= x / (a + n as f64);
        sum += term;
        if term.abs() < sum.abs() * GAMMA_EPS {
            break;
        }
    }
    sum * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Upper regularized incomplete gamma by Lentz's continued fraction;
/// converges for `x ≥ a`.
fn gamma_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / if b.abs() < TINY { TINY } else { b };
    let mut h = d;
    for i in 1..GAMMA_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < GAMMA_EPS {
            break;
        }
    }
    h * (a * x.ln() - x - ln_gamma(a)).exp()
}

/// Chi-square CDF with `dof` degrees of freedom:
/// `γ(dof/2, x/2) / Γ(dof/2)`. Series branch below `x = dof`, continued
/// fraction at or above it.
pub fn chi_square_cdf(dof: u32, x: f64) -> f64 {
    assert!(dof >= 1, "chi_square_cdf requires dof >= 1");
    if x <= 0.0 {
        return 0.0;
    }
    let a = f64::from(dof) / 2.0;
    let half_x = x / 2.0;
    if x < f64::from(dof) {
        gamma_series(a, half_x)
    } else {
        1.0 - gamma_cf(a, half_x)
    }
}

/// Chi-square CDF through the finite-sum identity
/// `1 − e^{−x/2} Σ_{t=0}^{dof/2−1} (x/2)^t / t!`, valid only for even `dof`.
pub fn chi_square_cdf_even_sum(dof: u32, x: f64) -> Result<f64> {
    if dof == 0 || dof % 2 != 0 {
        return Err(Error::OddDof { dof });
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for t in 1..(dof / 2) {
        term *= half / f64::from(t);
        sum += term;
    }
    Ok(1.0 - (-half).exp() * sum)
}

/// Upper bound `e^{−t}` on `Pr(Z − m ≥ 2√(mt))` for `Z ~ χ²(m)`.
pub fn chi_square_tail_bound(t: f64) -> f64 {
    assert!(t >= 0.0, "tail bound requires t >= 0");
    (-t).exp()
}

/// Threshold `m + 2√(mt)` that [`chi_square_tail_bound`] refers to.
pub fn chi_square_tail_threshold(m: u32, t: f64) -> f64 {
    f64::from(m) + 2.0 * (f64::from(m) * t).sqrt()
}

/// Standard Gaussian tail probability `Q(x) = Pr(N(0,1) > x)`.
///
/// For `x ≥ 0` this is `Q_gamma(1/2, x²/2) / 2`, with the upper incomplete
/// gamma evaluated natively so large arguments keep relative accuracy.
pub fn gaussian_q(x: f64) -> f64 {
    assert!(x.is_finite(), "gaussian_q requires finite x");
    if x < 0.0 {
        return 1.0 - gaussian_q(-x);
    }
    if x == 0.0 {
        return 0.5;
    }
    let half_sq = 0.5 * x * x;
    if half_sq < 0.5 {
        0.5 * (1.0 - gamma_series(0.5, half_sq))
    } else {
        0.5 * gamma_cf(0.5, half_sq)
    }
}
