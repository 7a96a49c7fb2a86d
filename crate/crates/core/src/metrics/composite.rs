use serde::{Deserialize, Serialize};

/// Composite MOS predictors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Composites {
    pub csig: f64,
    pub cbak: f64,
    pub covl: f64,
}

/// Linear regressions of the Hu-Loizou composite measures, before clamping.
pub fn composites_unclamped(pesq: f64, llr: f64, wss: f64, segsnr: f64) -> Composites {
    Composites {
        csig: 3.093 - 1.029 * llr + 0.603 * pesq - 0.009 * wss,
        cbak: 1.634 + 0.478 * pesq - 0.007 * wss + 0.063 * segsnr,
        covl: 1.594 + 0.805 * pesq - 0.512 * llr - 0.007 * wss,
    }
}

/// Composite measures clamped to the MOS range [1, 5].
pub fn composites(pesq: f64, llr: f64, wss: f64, segsnr: f64) -> Composites {
    let c = composites_unclamped(pesq, llr, wss, segsnr);
    Composites {
        csig: c.csig.clamp(1.0, 5.0),
        cbak: c.cbak.clamp(1.0, 5.0),
        covl: c.covl.clamp(1.0, 5.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamped_examples() {
        let c = composites_unclamped(4.5, 0.0, 0.0, 0.0);
        assert!((c.csig - 5.8065).abs() < 1e-12);
        assert_eq!(composites(4.5, 0.0, 0.0, 0.0).csig, 5.0);
        let c = composites_unclamped(1.0, 2.0, 100.0, -10.0);
        assert!((c.cbak - 0.782).abs() < 1e-12);
        assert_eq!(composites(1.0, 2.0, 100.0, -10.0).cbak, 1.0);
    }
}
