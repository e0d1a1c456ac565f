//! Embedded five-alternative benchmark fixtures used by the verification
//! tables, the CLI, and the golden tests.
//!
//! The family has means (2.1, 2.0, 1.95, 1.9, 1.9) and common variance 0.1.
//! Alternative 1's covariance with everyone else is `x`; alternative 5's
//! covariance with alternatives 2-4 is `y`; the remaining pairs sit at 0.01.

use ndarray::Array2;

use crate::pcs::PcsParams;
use crate::problem::ProblemSpec;

pub const GRID_X: [f64; 4] = [0.01, 0.02, 0.03, 0.05];
pub const GRID_Y: [f64; 4] = [0.0, 0.02, 0.04, 0.06];

/// The (x, y) cell excluded from the grid because the covariance matrix is
/// not positive definite there.
pub const INVALID_CELL: (f64, f64) = (0.05, 0.06);

pub const HIGH_CONFIDENCE_MEANS: [f64; 5] = [2.1, 2.0, 1.95, 1.9, 1.9];
pub const LOW_CONFIDENCE_MEANS: [f64; 5] = [2.01, 2.0, 1.95, 1.9, 1.9];

/// Covariance matrix of the five-alternative family.
pub fn fixture_sigma(x: f64, y: f64) -> Array2<f64> {
    let mut s = Array2::<f64>::from_elem((5, 5), 0.01);
    for i in 0..5 {
        s[[i, i]] = 0.1;
    }
    for j in 1..5 {
        s[[0, j]] = x;
        s[[j, 0]] = x;
    }
    for j in 1..4 {
        s[[j, 4]] = y;
        s[[4, j]] = y;
    }
    s
}

/// Plug-in parameters for one grid cell with a uniform sample size.
pub fn table1_params(x: f64, y: f64, n_each: u64) -> PcsParams<f64> {
    PcsParams::new(
        HIGH_CONFIDENCE_MEANS.to_vec(),
        fixture_sigma(x, y),
        vec![n_each; 5],
    )
    .expect("fixture dimensions are consistent")
}

/// The two mean scenarios of the sample-size study (x = 0.05, y = 0.01,
/// counts (N1, 10, 5, 5, 5)).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Table2Scenario {
    HighConfidence,
    LowConfidence,
}

pub fn table2_params(scenario: Table2Scenario, n1: u64) -> PcsParams<f64> {
    let means = match scenario {
        Table2Scenario::HighConfidence => HIGH_CONFIDENCE_MEANS.to_vec(),
        Table2Scenario::LowConfidence => LOW_CONFIDENCE_MEANS.to_vec(),
    };
    PcsParams::new(means, fixture_sigma(0.05, 0.01), vec![n1, 10, 5, 5, 5])
        .expect("fixture dimensions are consistent")
}

/// The fixture as a full problem instance (used by procedure-level tests).
pub fn fixture_problem(x: f64, y: f64) -> ProblemSpec<f64> {
    ProblemSpec::dense(
        HIGH_CONFIDENCE_MEANS.to_vec(),
        fixture_sigma(x, y),
        Some(vec![0, 1, 1, 1, 2]),
    )
    .expect("fixture sigma is positive definite")
}

/// All valid grid cells, row-major over (x, y).
pub fn valid_grid_cells() -> Vec<(f64, f64)> {
    let mut cells = Vec::new();
    for &x in &GRID_X {
        for &y in &GRID_Y {
            if (x, y) != INVALID_CELL {
                cells.push((x, y));
            }
        }
    }
    cells
}

/// Named fixtures exposed by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedFixture {
    Table1,
    Table2,
}

impl std::str::FromStr for NamedFixture {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table1" => Ok(NamedFixture::Table1),
            "table2" => Ok(NamedFixture::Table2),
            other => Err(crate::Error::InvalidConfig(format!(
                "unknown fixture '{other}' (expected table1 or table2)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_psd;

    #[test]
    fn valid_cells_exclude_the_non_psd_corner() {
        let cells = valid_grid_cells();
        assert_eq!(cells.len(), 15);
        assert!(!cells.contains(&INVALID_CELL));
        for &(x, y) in &cells {
            assert!(cholesky_psd(&fixture_sigma(x, y)).is_ok(), "cell ({x},{y})");
        }
        assert!(cholesky_psd(&fixture_sigma(INVALID_CELL.0, INVALID_CELL.1)).is_err());
    }

    #[test]
    fn sigma_layout_matches_definition() {
        let s = fixture_sigma(0.03, 0.02);
        assert_eq!(s[[0, 3]], 0.03);
        assert_eq!(s[[2, 4]], 0.02);
        assert_eq!(s[[1, 2]], 0.01);
        assert_eq!(s[[3, 3]], 0.1);
    }
}
