use crate::error::{Error, Result};

/// Spatial layer: `channels.len()` max+avg layers, flatten, one dense layer of size `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCnnConfig {
    pub k: usize,
    pub d: usize,
    /// Filters per branch in each max+avg layer.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub lambda: usize,
    pub dropout: f64,
}

impl Default for PathCnnConfig {
    fn default() -> Self {
        Self {
            k: 100,
            d: 4,
            channels: vec![16, 32, 64, 128],
            kernel: 3,
            lambda: 1024,
            dropout: 0.5,
        }
    }
}

impl PathCnnConfig {
    /// `2 * c_M * floor(k / 2^M)^2`.
    pub fn flatten_dim(&self) -> usize {
        let m = self.channels.len();
        let side = self.k >> m;
        2 * self.channels.last().copied().unwrap_or(0) * side * side
    }

    /// Spatial extent entering each max+avg layer.
    pub fn extents(&self) -> Vec<usize> {
        (0..=self.channels.len()).map(|m| self.k >> m).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config(
                "PathCNN needs at least one layer with nonzero filters",
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("PathCNN kernel size must be odd"));
        }
        if self.k >> self.channels.len() == 0 {
            return Err(Error::config(format!(
                "image size {} too small for {} pooling layers",
                self.k,
                self.channels.len()
            )));
        }
        if self.d == 0 || self.lambda == 0 {
            return Err(Error::config("channel count and lambda must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout rate must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Temporal layer: `channels.len()` conv1d+relu+maxpool layers over the
/// `s_max x lambda` sequence, flatten, then dense heads ending in a scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConfig {
    pub s_max: usize,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub head_dims: Vec<usize>,
    /// Hidden width of the per-window sub-path head.
    pub subpath_hidden: usize,
}

impl Default for TemporalConfig {
    fn default() -> Self {
        Self {
            s_max: 50,
            channels: vec![1024, 1024],
            kernel: 3,
            head_dims: vec![1024, 1024, 1],
            subpath_hidden: 1024,
        }
    }
}

impl TemporalConfig {
    /// `c_N * floor(s_max / 2^N)`.
    pub fn flatten_dim(&self) -> usize {
        self.channels.last().copied().unwrap_or(0) * (self.s_max >> self.channels.len())
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config(
                "temporal layer needs at least one conv layer",
            ));
        }
        if self.kernel.is_multiple_of(2) {
            return Err(Error::config("temporal kernel size must be odd"));
        }
        if self.s_max >> self.channels.len() == 0 {
            return Err(Error::config(
                "S_max too small for the temporal pooling layers",
            ));
        }
        if self.head_dims.last() != Some(&1) || self.head_dims.contains(&0) {
            return Err(Error::config(
                "head dimensions must be positive and end with 1",
            ));
        }
        if self.subpath_hidden == 0 {
            return Err(Error::config("sub-path head width must be positive"));
        }
        Ok(())
    }
}

/// Weights of the combined objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub beta: f64,
    pub gamma_center: f64,
    pub gamma_div: f64,
    pub gamma_l2: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 0.6,
            gamma_center: 0.1,
            gamma_div: 0.1,
            gamma_l2: 0.01,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta must be in [0, 1]"));
        }
        if self.gamma_center < 0.0 || self.gamma_div < 0.0 || self.gamma_l2 < 0.0 {
            return Err(Error::config("penalty weights must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub pathcnn: PathCnnConfig,
    pub temporal: TemporalConfig,
    /// Seconds represented by one unit of the path head output.
    pub output_scale_s: f64,
    /// Seconds represented by one unit of the sub-path head output.
    pub subpath_scale_s: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            pathcnn: PathCnnConfig::default(),
            temporal: TemporalConfig::default(),
            output_scale_s: 600.0,
            subpath_scale_s: 60.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.pathcnn.validate()?;
        self.temporal.validate()?;
        if !(self.output_scale_s > 0.0 && self.subpath_scale_s > 0.0) {
            return Err(Error::config("output scales must be positive"));
        }
        Ok(())
    }
}
