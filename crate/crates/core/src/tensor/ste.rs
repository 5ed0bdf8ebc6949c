use serde::{Deserialize, Serialize};

/// Hard threshold applied in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Binarizer {
    /// `b(x) = 1` iff `x >= 0`, for raw values.
    Sign,
    /// `b_p(x) = 1` iff `x >= 0.5`, for probabilities in `[0, 1]`.
    Prob,
}

impl Binarizer {
    pub fn threshold(self) -> f64 {
        match self {
            Binarizer::Sign => 0.0,
            Binarizer::Prob => 0.5,
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        if x >= self.threshold() {
            1.0
        } else {
            0.0
        }
    }
}

/// Surrogate derivative used in place of the threshold's zero derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SteMode {
    /// iSTE: `s(x) = x`, derivative 1 everywhere.
    Identity,
    /// sSTE: `s(x) = clip(x, [-1, 1])`, derivative 1 on `[-1, 1]` and 0 outside.
    Saturated,
}

impl SteMode {
    pub fn surrogate_grad(self, x: f64) -> f64 {
        match self {
            SteMode::Identity => 1.0,
            SteMode::Saturated => box_mask(x),
        }
    }
}

fn box_mask(x: f64) -> f64 {
    if (-1.0..=1.0).contains(&x) {
        1.0
    } else {
        0.0
    }
}

/// Gradient shaping function `g(x)` of the trainable gate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GMode {
    One,
    Box,
}

impl GMode {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            GMode::One => 1.0,
            GMode::Box => box_mask(x),
        }
    }
}

/// Trainable gate `b(x) + s^K(x) g(x)` with the sawtooth `s^K(x) = (Kx - ⌊Kx⌋)/K`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TgfConfig {
    pub k: f64,
    pub g: GMode,
}

impl TgfConfig {
    pub fn new(k: f64, g: GMode) -> Self {
        assert!(k > 0.0, "TGF scale K must be positive");
        TgfConfig { k, g }
    }

    /// Sawtooth term, 0 on grid points `Kx ∈ ℤ`.
    pub fn sawtooth(&self, x: f64) -> f64 {
        let kx = self.k * x;
        (kx - kx.floor()) / self.k
    }

    pub fn forward(&self, x: f64) -> f64 {
        Binarizer::Sign.apply(x) + self.sawtooth(x) * self.g.eval(x)
    }

    /// Analytic derivative; the sawtooth slope is 1 everywhere (right limit on
    /// the grid) and `g` is piecewise constant.
    pub fn derivative(&self, x: f64) -> f64 {
        self.g.eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thresholds_tie_to_one() {
        assert_eq!(Binarizer::Sign.apply(0.0), 1.0);
        assert_eq!(Binarizer::Sign.apply(-1e-300), 0.0);
        assert_eq!(Binarizer::Prob.apply(0.5), 1.0);
        assert_eq!(Binarizer::Prob.apply(0.4999999), 0.0);
    }

    #[test]
    fn surrogates() {
        assert_eq!(SteMode::Identity.surrogate_grad(7.0), 1.0);
        assert_eq!(SteMode::Saturated.surrogate_grad(1.0), 1.0);
        assert_eq!(SteMode::Saturated.surrogate_grad(-1.0), 1.0);
        assert_eq!(SteMode::Saturated.surrogate_grad(1.0001), 0.0);
    }

    #[test]
    fn tgf_on_grid_point_equals_threshold() {
        let cfg = TgfConfig::new(10.0, GMode::One);
        assert_eq!(cfg.forward(0.0), 1.0);
        assert_eq!(cfg.forward(-2.0), 0.0);
        assert_eq!(cfg.derivative(-2.0), 1.0);
        assert!((cfg.forward(0.37) - 1.07).abs() < 1e-12);
    }
}
