use super::kernels;
use super::Tensor;
use crate::error::{Error, Result};

/// Temperature-softened softmax over the last axis, computed with
/// max-subtraction so large logits do not overflow.
pub fn softened_softmax(logits: &Tensor, tau: f64) -> Result<Tensor> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if logits.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("logits must be finite".into()));
    }
    let w = *logits.shape().last().unwrap();
    let mut out = vec![0.0; logits.len()];
    for (src, dst) in logits.data().chunks(w).zip(out.chunks_mut(w)) {
        kernels::softmax_into(src, tau, dst);
    }
    Tensor::new(logits.shape().to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn equal_logits_are_uniform() {
        for tau in [0.1, 1.0, 48.0] {
            let p = softened_softmax(&t(&[3.7, 3.7]), tau).unwrap();
            assert_eq!(p.data(), &[0.5, 0.5]);
        }
    }

    #[test]
    fn hand_values() {
        let p = softened_softmax(&t(&[2f64.ln(), 0.0]), 1.0).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-12);

        let p = softened_softmax(&t(&[1.0, 0.0]), 100.0).unwrap();
        let e = (0.01f64).exp();
        assert!((p.data()[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((p.data()[0] - 0.5025).abs() < 1e-4);
    }

    #[test]
    fn rejects_non_positive_tau() {
        assert!(matches!(
            softened_softmax(&t(&[1.0]), 0.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            softened_softmax(&t(&[1.0]), -2.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn huge_logits_do_not_overflow() {
        let p = softened_softmax(&t(&[1e300, 0.0]), 1.0).unwrap();
        assert_eq!(p.data(), &[1.0, 0.0]);
    }
}
