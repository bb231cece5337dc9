//! Small dense eigen-solvers: cyclic Jacobi for symmetric matrices (PCA Gram
//! matrices) and characteristic-polynomial root finding for the spectra of
//! small general matrices (Hurwitz validation of dynamics matrices).

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// `a` is `n*n` row-major and assumed symmetric; only the given entries are
/// read. Returns `(eigenvalues, eigenvectors)` sorted descending, with
/// eigenvector `i` stored as row `i` of the returned matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m
        .iter()
        .map(|x| x.abs())
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let tol = 1e-15 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0_f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() <= tol {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[j * n + j]
            .partial_cmp(&m[i * n + i])
            .expect("eigenvalues are finite")
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| m[i * n + i]).collect();
    let mut eigenvectors = vec![0.0; n * n];
    for (row, &i) in order.iter().enumerate() {
        for k in 0..n {
            eigenvectors[row * n + k] = v[i * n + k];
        }
    }
    (eigenvalues, eigenvectors)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    fn add(self, o: Self) -> Self {
        Self::new(self.re + o.re, self.im + o.im)
    }

    fn sub(self, o: Self) -> Self {
        Self::new(self.re - o.re, self.im - o.im)
    }

    fn mul(self, o: Self) -> Self {
        Self::new(
            self.re * o.re - self.im * o.im,
            self.re * o.im + self.im * o.re,
        )
    }

    fn div(self, o: Self) -> Self {
        let d = o.re * o.re + o.im * o.im;
        Self::new(
            (self.re * o.re + self.im * o.im) / d,
            (self.im * o.re - self.re * o.im) / d,
        )
    }

    pub fn abs(self) -> f64 {
        self.re.hypot(self.im)
    }
}

/// Coefficients of det(lambda*I - A) = lambda^n + c[n-1] lambda^{n-1} + ... + c[0],
/// by the Faddeev-LeVerrier recursion.
fn characteristic_polynomial(a: &[f64], n: usize) -> Vec<f64> {
    let mut coeffs = vec![0.0; n];
    let mut m = vec![0.0; n * n]; // M_0 = 0; loop starts from M_1 = I
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    for k in 1..=n {
        // trace(A * M_k)
        let mut am = vec![0.0; n * n];
        for i in 0..n {
            for l in 0..n {
                let ail = a[i * n + l];
                if ail == 0.0 {
                    continue;
                }
                for j in 0..n {
                    am[i * n + j] += ail * m[l * n + j];
                }
            }
        }
        let trace: f64 = (0..n).map(|i| am[i * n + i]).sum();
        let c = -trace / k as f64;
        coeffs[n - k] = c;
        if k < n {
            m = am;
            for i in 0..n {
                m[i * n + i] += c;
            }
        }
    }
    coeffs
}

/// All roots of the monic polynomial x^n + c[n-1] x^{n-1} + ... + c[0]
/// by Durand-Kerner iteration.
fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex> {
    let n = coeffs.len();
    if n == 0 {
        return Vec::new();
    }
    let eval = |z: Complex| {
        let mut p = Complex::new(1.0, 0.0);
        for &c in coeffs.iter().rev() {
            p = p.mul(z).add(Complex::new(c, 0.0));
        }
        p
    };
    // Initial guesses on a circle whose radius bounds all roots (Cauchy).
    let radius = 1.0 + coeffs.iter().map(|c| c.abs()).fold(0.0_f64, f64::max);
    let seed = Complex::new(0.4, 0.9);
    let mut roots = Vec::with_capacity(n);
    let mut z = Complex::new(radius, 0.0);
    for _ in 0..n {
        z = z.mul(seed);
        roots.push(z);
    }
    for _iter in 0..500 {
        let mut max_step = 0.0_f64;
        for i in 0..n {
            let mut denom = Complex::new(1.0, 0.0);
            for j in 0..n {
                if j != i {
                    denom = denom.mul(roots[i].sub(roots[j]));
                }
            }
            let step = eval(roots[i]).div(denom);
            roots[i] = roots[i].sub(step);
            max_step = max_step.max(step.abs());
        }
        if max_step <= 1e-13 * radius.max(1.0) {
            break;
        }
    }
    roots
}

/// Eigenvalues of a small general real matrix (row-major `n*n`).
pub fn eigenvalues(a: &[f64], n: usize) -> Vec<Complex> {
    assert_eq!(a.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    polynomial_roots(&characteristic_polynomial(a, n))
}

/// Largest eigenvalue real part of a small general real matrix.
pub fn spectral_abscissa(a: &[f64], n: usize) -> f64 {
    eigenvalues(a, n)
        .into_iter()
        .map(|z| z.re)
        .fold(f64::NEG_INFINITY, f64::max)
}
