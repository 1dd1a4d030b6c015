use ndarray::Array2;

use crate::error::{Error, Result};

/// Strengths of the text, dynamics and timbre guidance directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceScales {
    pub s_text: f64,
    pub s_ctrls: f64,
    pub s_timbre: f64,
}

impl Default for GuidanceScales {
    fn default() -> Self {
        Self::new(1.0, 1.0, 1.0)
    }
}

impl GuidanceScales {
    pub const fn new(s_text: f64, s_ctrls: f64, s_timbre: f64) -> Self {
        Self { s_text, s_ctrls, s_timbre }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("s_text", self.s_text), ("s_ctrls", self.s_ctrls), ("s_timbre", self.s_timbre)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Whether any control branch contributes.
    pub fn uses_controls(&self) -> bool {
        self.s_ctrls > 0.0 || self.s_timbre > 0.0
    }
}

/// How the three guidance directions are composed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GuidanceMode {
    /// Each scale acts on the difference to the previous branch.
    #[default]
    Nested,
    /// Each scale acts on the difference to the unconditional branch.
    Independent,
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested" => Ok(Self::Nested),
            "independent" => Ok(Self::Independent),
            other => Err(Error::InvalidArgument(format!(
                "unknown guidance mode '{other}' (expected nested or independent)"
            ))),
        }
    }
}

/// Combines the unconditional, text, text+dynamics and full predictions.
///
/// Nested: `u + s_text (T − u) + s_ctrls (TC − T) + s_timbre (TCM − TC)`.
/// Independent: `u + s_text (T − u) + s_ctrls (TC − u) + s_timbre (TCM − u)`.
pub fn cfg_combine(
    eps_u: &Array2<f64>,
    eps_t: &Array2<f64>,
    eps_tc: &Array2<f64>,
    eps_tcm: &Array2<f64>,
    scales: &GuidanceScales,
    mode: GuidanceMode,
) -> Result<Array2<f64>> {
    for (name, e) in [("text branch", eps_t), ("dynamics branch", eps_tc), ("full branch", eps_tcm)] {
        if e.dim() != eps_u.dim() {
            return Err(Error::shape(name, format!("{:?}", eps_u.dim()), format!("{:?}", e.dim())));
        }
    }
    let (prev_c, prev_m) = match mode {
        GuidanceMode::Nested => (eps_t, eps_tc),
        GuidanceMode::Independent => (eps_u, eps_u),
    };
    let mut out = eps_u.clone();
    out.scaled_add(scales.s_text, &(eps_t - eps_u));
    out.scaled_add(scales.s_ctrls, &(eps_tc - prev_c));
    out.scaled_add(scales.s_timbre, &(eps_tcm - prev_m));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn branches() -> [Array2<f64>; 4] {
        std::array::from_fn(|b| Array2::from_shape_fn((3, 5), |(i, j)| (b * 7 + i * 5 + j) as f64 * 0.37 - 2.0))
    }

    #[test]
    fn nested_identities() {
        let [u, t, tc, tcm] = branches();
        let full = cfg_combine(&u, &t, &tc, &tcm, &GuidanceScales::new(1.0, 1.0, 1.0), GuidanceMode::Nested).unwrap();
        assert!(full.iter().zip(&tcm).all(|(a, b)| (a - b).abs() < 1e-12));
        let none = cfg_combine(&u, &t, &tc, &tcm, &GuidanceScales::new(0.0, 0.0, 0.0), GuidanceMode::Nested).unwrap();
        assert_eq!(none, u);
    }

    #[test]
    fn independent_differs_from_nested() {
        let [u, t, tc, tcm] = branches();
        let s = GuidanceScales::new(1.0, 1.0, 1.0);
        let ind = cfg_combine(&u, &t, &tc, &tcm, &s, GuidanceMode::Independent).unwrap();
        let want = &t + &tc + &tcm - &u * 2.0;
        assert!(ind.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn shape_mismatch_and_bad_scales() {
        let [u, t, tc, _] = branches();
        let bad = Array2::zeros((2, 5));
        assert!(cfg_combine(&u, &t, &tc, &bad, &GuidanceScales::default(), GuidanceMode::Nested).is_err());
        assert!(GuidanceScales::new(-1.0, 0.0, 0.0).validate().is_err());
        assert!(GuidanceScales::new(f64::NAN, 0.0, 0.0).validate().is_err());
    }
}
