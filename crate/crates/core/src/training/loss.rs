use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean absolute difference over every element.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b).abs()).sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let t = Tensor::from_fn([1, 3, 4, 4], |_, c, y, x| (c + y * x) as f64 * 0.05);
        assert_eq!(l1_loss(&t, &t).unwrap(), 0.0);
        let shifted = t.map(|v| v + 0.1);
        assert!((l1_loss(&shifted, &t).unwrap() - 0.1).abs() < 1e-12);

        let zero = Tensor::zeros([1, 3, 4, 4]);
        let alt = Tensor::from_fn([1, 3, 4, 4], |_, _, y, x| ((x + y) % 2) as f64);
        let oracle: f64 = alt.data().iter().map(|v| v.abs()).sum::<f64>() / alt.len() as f64;
        assert_eq!(oracle, 0.5);
        assert_eq!(l1_loss(&zero, &alt).unwrap(), oracle);
    }

    #[test]
    fn shape_mismatch() {
        assert!(l1_loss(&Tensor::zeros([1, 3, 2, 2]), &Tensor::zeros([1, 3, 2, 3])).is_err());
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_iff_equal(
            a in prop::collection::vec(-2.0f64..2.0, 12),
            b in prop::collection::vec(-2.0f64..2.0, 12),
        ) {
            let ta = Tensor::from_vec([1, 3, 2, 2], a).unwrap();
            let tb = Tensor::from_vec([1, 3, 2, 2], b).unwrap();
            let l = l1_loss(&ta, &tb).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, ta == tb);
            prop_assert_eq!(l, l1_loss(&tb, &ta).unwrap());
        }
    }
}
