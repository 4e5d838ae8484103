//! Ellipsoidal knowledge sets and their Löwner-John cut updates.
//!
//! An ellipsoid is stored as a center `c` and a symmetric positive-definite
//! shape matrix `A`; it is the set `{θ : (θ - c)ᵀ A⁻¹ (θ - c) ≤ 1}`.
//!
//! A cut along the feature direction `x` is located by its position
//! parameter `alpha`, the signed distance from the center to the cutting
//! hyperplane measured in the ellipsoidal norm. With `w = sqrt(xᵀAx)` the
//! hyperplane is `xᵀθ = xᵀc - alpha·w`, so `alpha = 0` is a central cut.
//! [`CutSide::RetainBelow`] keeps `{θ : xᵀθ ≤ xᵀc - alpha·w}` (a price was
//! rejected), [`CutSide::RetainAbove`] keeps `{θ : xᵀθ ≥ xᵀc - alpha·w}` (a
//! price was accepted).
//!
//! Values are immutable: every update returns a new [`Ellipsoid`].

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Cuts with a signed position within this margin of 1 collapse the
/// retained cap and are refused.
pub const DEGENERACY_MARGIN: f64 = 1e-9;

/// Below this value of `xᵀAx` the ellipsoid is treated as flat along `x`.
pub const DIRECTION_FLOOR: f64 = 1e-14;

/// Slack on the membership test, absorbing rounding in post-cut checks.
pub const CONTAINMENT_SLACK: f64 = 1e-8;

const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Which halfspace of a cut survives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutSide {
    /// Keep `{θ : p ≥ xᵀθ}`; the posted price was rejected.
    RetainBelow,
    /// Keep `{θ : p ≤ xᵀθ}`; the posted price was accepted.
    RetainAbove,
}

/// Minimum and maximum of `xᵀθ` over a knowledge set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBounds {
    pub lower: f64,
    pub upper: f64,
    pub halfwidth: f64,
}

impl SupportBounds {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    center: DVector<f64>,
    shape: DMatrix<f64>,
}

impl Ellipsoid {
    /// The ball of radius `radius` around the origin: `A = R²I`, `c = 0`.
    pub fn ball(dim: usize, radius: f64) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidRadius(radius));
        }
        Ok(Self {
            center: DVector::zeros(dim),
            shape: DMatrix::identity(dim, dim) * (radius * radius),
        })
    }

    /// Builds an ellipsoid from an explicit center and shape, checking
    /// symmetry and positive definiteness.
    pub fn new(center: DVector<f64>, shape: DMatrix<f64>) -> Result<Self> {
        let dim = center.len();
        if dim < 2 {
            return Err(Error::InvalidDimension(dim));
        }
        if shape.nrows() != dim || shape.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: shape.nrows(),
            });
        }
        if symmetry_error(&shape) > SYMMETRY_TOLERANCE {
            return Err(Error::NumericalFailure("shape matrix is not symmetric".into()));
        }
        if Cholesky::new(shape.clone()).is_none() {
            return Err(Error::NumericalFailure(
                "shape matrix is not positive definite".into(),
            ));
        }
        Ok(Self { center, shape })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    fn check_len(&self, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.len(),
            });
        }
        Ok(())
    }

    /// `xᵀAx`, the squared half-width of the ellipsoid along `x`.
    pub fn quadratic_form(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_len(x)?;
        Ok(x.dot(&(&self.shape * x)))
    }

    /// Returns `(b, sqrt(xᵀAx))` with `b = Ax / sqrt(xᵀAx)`.
    fn direction_and_halfwidth(&self, x: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
        self.check_len(x)?;
        let ax = &self.shape * x;
        let quadratic = x.dot(&ax);
        if !(quadratic > DIRECTION_FLOOR) {
            return Err(Error::DegenerateDirection { quadratic });
        }
        let halfwidth = quadratic.sqrt();
        Ok((ax / halfwidth, halfwidth))
    }

    /// `b = Ax / sqrt(xᵀAx)`: the offset from the center to the point of
    /// the ellipsoid maximizing `xᵀθ`.
    pub fn direction_vector(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.direction_and_halfwidth(x).map(|(b, _)| b)
    }

    pub fn support_bounds(&self, x: &DVector<f64>) -> Result<SupportBounds> {
        let (_, halfwidth) = self.direction_and_halfwidth(x)?;
        let mid = x.dot(&self.center);
        Ok(SupportBounds {
            lower: mid - halfwidth,
            upper: mid + halfwidth,
            halfwidth,
        })
    }

    /// Löwner-John ellipsoid of the cap retained by a cut along `x` at
    /// position `alpha`.
    ///
    /// Only mathematical validity is enforced here: the signed position
    /// (`alpha` for [`CutSide::RetainBelow`], `-alpha` for
    /// [`CutSide::RetainAbove`]) must lie in `[-1/n, 1 - DEGENERACY_MARGIN)`.
    /// Algorithm-specific guards belong to the caller.
    pub fn cut(&self, x: &DVector<f64>, alpha: f64, side: CutSide) -> Result<Self> {
        let n = self.dim() as f64;
        let signed = match side {
            CutSide::RetainBelow => alpha,
            CutSide::RetainAbove => -alpha,
        };
        let lo = -1.0 / n;
        let hi = 1.0 - DEGENERACY_MARGIN;
        if !(signed >= lo && signed < hi) {
            return Err(Error::InvalidCutPosition { alpha, lo, hi });
        }
        let (b, _) = self.direction_and_halfwidth(x)?;

        let scale = n * n * (1.0 - signed * signed) / (n * n - 1.0);
        let beta = 2.0 * (1.0 + n * signed) / ((n + 1.0) * (1.0 + signed));
        let step = (1.0 + n * signed) / (n + 1.0);

        let mut shape = self.shape.clone();
        shape.ger(-beta, &b, &b, 1.0);
        shape *= scale;
        symmetrize(&mut shape);

        let center = match side {
            CutSide::RetainBelow => &self.center - &b * step,
            CutSide::RetainAbove => &self.center + &b * step,
        };
        Ok(Self { center, shape })
    }

    /// Natural log of the volume, `ln V_n + ½ ln det A`.
    pub fn log_volume(&self) -> Result<f64> {
        let chol = Cholesky::new(self.shape.clone()).ok_or_else(|| {
            Error::NumericalFailure("shape matrix lost positive definiteness".into())
        })?;
        let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
        Ok(log_unit_ball_volume(self.dim()) + half_log_det)
    }

    pub fn volume(&self) -> Result<f64> {
        self.log_volume().map(f64::exp)
    }

    /// Smallest eigenvalue of the shape matrix. Diagnostic only; this is an
    /// iterative O(n³) solve.
    pub fn smallest_eigenvalue(&self) -> Result<f64> {
        let eig = SymmetricEigen::try_new(self.shape.clone(), f64::EPSILON, 10_000)
            .ok_or_else(|| Error::NumericalFailure("eigen-solve did not converge".into()))?;
        Ok(eig.eigenvalues.min())
    }

    /// `(θ - c)ᵀ A⁻¹ (θ - c)`, computed with a triangular solve.
    pub fn mahalanobis_sq(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check_len(theta)?;
        let chol = Cholesky::new(self.shape.clone())
            .ok_or_else(|| Error::NumericalFailure("Cholesky factorization failed".into()))?;
        let d = theta - &self.center;
        let y = chol
            .l_dirty()
            .solve_lower_triangular(&d)
            .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
        Ok(y.norm_squared())
    }

    pub fn contains(&self, theta: &DVector<f64>) -> Result<bool> {
        Ok(self.mahalanobis_sq(theta)? <= 1.0 + CONTAINMENT_SLACK)
    }

    /// Relative asymmetry `max|A - Aᵀ| / max|A|`.
    pub fn symmetry_error(&self) -> f64 {
        symmetry_error(&self.shape)
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn symmetry_error(m: &DMatrix<f64>) -> f64 {
    let scale = m.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst / scale
}

/// `ln V_n` for the unit ball in `n` dimensions, via `V_n = V_{n-2}·2π/n`.
pub fn log_unit_ball_volume(n: usize) -> f64 {
    let two_pi_ln = (2.0 * std::f64::consts::PI).ln();
    let (mut k, mut acc) = if n % 2 == 0 { (0, 0.0) } else { (1, 2f64.ln()) };
    while k < n {
        k += 2;
        acc += two_pi_ln - (k as f64).ln();
    }
    acc
}
