//! Distortion and perturbation-suppression measures.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    Ok(())
}

/// Sum of squared sample differences over all channels.
pub fn squared_error(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    check_dims(a, b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    Ok(squared_error(a, b)? / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB; infinite for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0 * 255.0 / m).log10()
    })
}

/// Fraction of perturbation energy removed by a defense:
/// `max(0, 1 - |D(x_adv) - D(x)|^2 / |x_adv - x|^2)`, defined as 1 when the
/// pair is unperturbed.
pub fn suppression(
    benign: &ImageBuffer,
    adv: &ImageBuffer,
    benign_defended: &ImageBuffer,
    adv_defended: &ImageBuffer,
) -> Result<f64> {
    let injected = squared_error(adv, benign)?;
    if injected == 0.0 {
        return Ok(1.0);
    }
    let remaining = squared_error(adv_defended, benign_defended)?;
    Ok((1.0 - remaining / injected).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_values() {
        let a = ImageBuffer::filled(4, 4, [10, 10, 10]).unwrap();
        let b = ImageBuffer::filled(4, 4, [11, 11, 11]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let expected = 10.0 * (255.0f64 * 255.0).log10();
        assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn suppression_cases() {
        let x = ImageBuffer::filled(4, 4, [10, 10, 10]).unwrap();
        let y = ImageBuffer::filled(4, 4, [12, 10, 10]).unwrap();
        // identity defense keeps everything
        assert_eq!(suppression(&x, &y, &x, &y).unwrap(), 0.0);
        // perfect defense removes everything
        assert_eq!(suppression(&x, &y, &x, &x).unwrap(), 1.0);
        // unperturbed pair counts as fully suppressed
        assert_eq!(suppression(&x, &x, &x, &y).unwrap(), 1.0);
        // amplification clamps to zero
        let z = ImageBuffer::filled(4, 4, [20, 10, 10]).unwrap();
        assert_eq!(suppression(&x, &y, &x, &z).unwrap(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        let a = ImageBuffer::filled(4, 4, [0; 3]).unwrap();
        let b = ImageBuffer::filled(4, 5, [0; 3]).unwrap();
        assert!(psnr(&a, &b).is_err());
    }
}
