use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::datamodel::{CovarianceMode, FeatureMatrix};

/// Ridge added to full covariances after eigenvalue flooring.
pub const FULL_RIDGE: f64 = 1e-3;

/// Components whose responsibility mass falls below this keep their previous parameters.
pub const MIN_MASS: f64 = 1e-8;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    /// Stored as the matrix and its lower Cholesky factor.
    Full {
        matrix: DMatrix<f64>,
        chol: DMatrix<f64>,
    },
}

/// A multivariate normal with cached normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    pub mean: Vec<f64>,
    pub cov: Covariance,
    log_norm: f64,
}

impl Gaussian {
    pub fn diagonal(mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len());
        let log_norm =
            -0.5 * (mean.len() as f64 * LN_2PI + var.iter().map(|v| v.ln()).sum::<f64>());
        Gaussian {
            mean,
            cov: Covariance::Diagonal(var),
            log_norm,
        }
    }

    /// Panics if `matrix` is not positive definite.
    pub fn full(mean: Vec<f64>, matrix: DMatrix<f64>) -> Self {
        let chol = matrix
            .clone()
            .cholesky()
            .expect("covariance must be positive definite")
            .unpack();
        let log_det_half: f64 = chol.diagonal().iter().map(|v| v.ln()).sum();
        let log_norm = -0.5 * mean.len() as f64 * LN_2PI - log_det_half;
        Gaussian {
            mean,
            cov: Covariance::Full { matrix, chol },
            log_norm,
        }
    }

    /// Isotropic `var * I` in the representation `mode` asks for.
    pub fn isotropic(mean: Vec<f64>, var: f64, mode: CovarianceMode) -> Self {
        let d = mean.len();
        match mode {
            CovarianceMode::Diagonal => Gaussian::diagonal(mean, vec![var; d]),
            CovarianceMode::FullWithRidge => Gaussian::full(mean, DMatrix::identity(d, d) * var),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        match &self.cov {
            Covariance::Diagonal(var) => {
                let quad: f64 = x
                    .iter()
                    .zip(&self.mean)
                    .zip(var)
                    .map(|((xi, mi), vi)| (xi - mi) * (xi - mi) / vi)
                    .sum();
                self.log_norm - 0.5 * quad
            }
            Covariance::Full { chol, .. } => {
                let diff =
                    DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, b)| a - b));
                let y = chol
                    .solve_lower_triangular(&diff)
                    .expect("cholesky factor has a non-zero diagonal");
                self.log_norm - 0.5 * y.norm_squared()
            }
        }
    }

    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(v) => DMatrix::from_diagonal(&DVector::from_column_slice(v)),
            Covariance::Full { matrix, .. } => matrix.clone(),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match &self.cov {
            Covariance::Diagonal(v) => v.iter().copied().fold(f64::INFINITY, f64::min),
            Covariance::Full { matrix, .. } => SymmetricEigen::new(matrix.clone())
                .eigenvalues
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min),
        }
    }
}

/// Weighted maximum-likelihood fit over `rows` of `features`.
///
/// Returns the fitted component and the total weight, or `None` when the
/// weight is below [`MIN_MASS`]. Sums run in the order of `rows`.
pub fn weighted_fit(
    features: &FeatureMatrix,
    rows: &[usize],
    weight: impl Fn(usize) -> f64,
    mode: CovarianceMode,
    var_floor: f64,
) -> Option<(Gaussian, f64)> {
    let d = features.dim();
    let mass: f64 = rows.iter().map(|&i| weight(i)).sum();
    if mass.is_nan() || mass < MIN_MASS {
        return None;
    }
    let mut mean = vec![0.0; d];
    for &i in rows {
        let w = weight(i);
        for (m, x) in mean.iter_mut().zip(features.row(i)) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= mass);

    let g = match mode {
        CovarianceMode::Diagonal => {
            let mut var = vec![0.0; d];
            for &i in rows {
                let w = weight(i);
                for ((v, x), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                    *v += w * (x - m) * (x - m);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / mass).max(var_floor));
            Gaussian::diagonal(mean, var)
        }
        CovarianceMode::FullWithRidge => {
            let mut s = DMatrix::<f64>::zeros(d, d);
            for &i in rows {
                let w = weight(i);
                let diff = DVector::from_iterator(
                    d,
                    features.row(i).iter().zip(&mean).map(|(x, m)| x - m),
                );
                s.ger(w, &diff, &diff, 1.0);
            }
            s /= mass;
            let s = (&s + s.transpose()) * 0.5;
            let mut eig = SymmetricEigen::new(s);
            eig.eigenvalues
                .iter_mut()
                .for_each(|l| *l = l.max(var_floor));
            let mut m = eig.recompose();
            m = (&m + m.transpose()) * 0.5;
            for k in 0..d {
                m[(k, k)] += FULL_RIDGE;
            }
            Gaussian::full(mean, m)
        }
    };
    Some((g, mass))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
    }

    fn fm(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let n = rows.len() as u64;
        FeatureMatrix::from_rows(vec![], rows, (1..=n).collect()).unwrap()
    }

    #[test]
    fn standard_normal_density() {
        let g = Gaussian::diagonal(vec![0.0], vec![1.0]);
        assert!(close(g.log_density(&[0.0]), -0.5 * LN_2PI, 1e-15));
        assert!(close(g.log_density(&[2.0]), -0.5 * LN_2PI - 2.0, 1e-15));
    }

    #[test]
    fn full_matches_diagonal_when_diagonal() {
        let d = Gaussian::diagonal(vec![1.0, -2.0], vec![2.0, 0.5]);
        let f = Gaussian::full(
            vec![1.0, -2.0],
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
        );
        for x in [[0.0, 0.0], [3.0, 1.0], [-4.0, -2.5]] {
            assert!(close(d.log_density(&x), f.log_density(&x), 1e-12));
        }
    }

    #[test]
    fn correlated_density_by_hand() {
        // Sigma = [[2,1],[1,2]], det 3, inverse (1/3)[[2,-1],[-1,2]]; x-mu = (1,1) -> quad 2/3
        let f = Gaussian::full(
            vec![0.0, 0.0],
            DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]),
        );
        let expected = -LN_2PI - 0.5 * 3f64.ln() - 1.0 / 3.0;
        assert!(close(f.log_density(&[1.0, 1.0]), expected, 1e-12));
    }

    #[test]
    fn weighted_moments_by_hand() {
        let f = fm(vec![vec![0.0, 10.0], vec![2.0, 10.0], vec![100.0, 100.0]]);
        let w = [1.0, 1.0, 0.0];
        let (g, mass) =
            weighted_fit(&f, &[0, 1, 2], |i| w[i], CovarianceMode::Diagonal, 1e-6).unwrap();
        assert_eq!(mass, 2.0);
        assert_eq!(g.mean, vec![1.0, 10.0]);
        assert_eq!(g.cov, Covariance::Diagonal(vec![1.0, 1e-6]));

        let (g, _) = weighted_fit(&f, &[0, 1, 2], |i| w[i], CovarianceMode::Diagonal, 4.0).unwrap();
        assert_eq!(g.cov, Covariance::Diagonal(vec![4.0, 4.0]));
        assert!(weighted_fit(&f, &[2], |i| w[i], CovarianceMode::Diagonal, 1.0).is_none());
    }

    #[test]
    fn full_mode_floors_eigenvalues() {
        let f = fm(vec![
            vec![0.0, 0.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
        ]);
        let (g, _) = weighted_fit(
            &f,
            &[0, 1, 2, 3],
            |_| 1.0,
            CovarianceMode::FullWithRidge,
            0.5,
        )
        .unwrap();
        let m = g.covariance_matrix();
        assert!(close(m[(0, 1)], m[(1, 0)], 1e-15));
        assert!(g.min_eigenvalue() >= 0.5);
        // sample covariance is 1.25 * [[1,1],[1,1]]: eigenvalues 2.5 and 0 -> 2.5 and 0.5
        let mut eig: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        assert!(close(eig[0], 0.5 + FULL_RIDGE, 1e-12));
        assert!(close(eig[1], 2.5 + FULL_RIDGE, 1e-12));
    }
}
