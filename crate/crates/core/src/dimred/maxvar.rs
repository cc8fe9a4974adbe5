use ndarray::{Array2, Axis};

use crate::error::{Error, Result};

/// Indices of the `m` columns of `frames` with the largest variance, in
/// ascending index order. Ties go to the lower index.
pub fn select_max_variance(frames: &Array2<f64>, m: usize) -> Result<Vec<usize>> {
    let d = frames.ncols();
    if m == 0 || m > d {
        return Err(Error::Config(format!("code dimension {m} outside 1..={d}")));
    }
    if frames.nrows() == 0 {
        return Err(Error::Dataset("no reference frames".into()));
    }
    let var = frames.var_axis(Axis(0), 0.0);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| var[b].total_cmp(&var[a]).then(a.cmp(&b)));
    let mut picked = order[..m].to_vec();
    picked.sort_unstable();
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn picks_largest_variances() {
        // column variances 3 : 1 : 2 (scaled)
        let s3 = 3f64.sqrt();
        let s2 = 2f64.sqrt();
        let x = array![[s3, 1.0, s2], [-s3, -1.0, -s2]];
        assert_eq!(select_max_variance(&x, 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn tie_break_prefers_lower_index() {
        let x = array![[1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]];
        assert_eq!(select_max_variance(&x, 1).unwrap(), vec![0]);
    }

    #[test]
    fn full_selection_is_identity() {
        let x = array![[1.0, 5.0, 2.0], [0.0, 1.0, 9.0]];
        assert_eq!(select_max_variance(&x, 3).unwrap(), vec![0, 1, 2]);
        assert!(select_max_variance(&x, 4).is_err());
        assert!(select_max_variance(&x, 0).is_err());
    }
}
