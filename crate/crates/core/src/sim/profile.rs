/// Speeds of each worker in local steps per simulated second.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceProfile {
    pub speeds: Vec<f64>,
}

impl DeviceProfile {
    pub fn fastest(&self) -> f64 {
        self.speeds.iter().copied().fold(0.0, f64::max)
    }

    pub fn slowest(&self) -> f64 {
        self.speeds.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Named heterogeneity levels for four workers; longer lists repeat the pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Heterogeneity {
    No,
    Slight,
    Moderate,
    Very,
}

impl Heterogeneity {
    pub const ALL: [Heterogeneity; 4] = [
        Heterogeneity::No,
        Heterogeneity::Slight,
        Heterogeneity::Moderate,
        Heterogeneity::Very,
    ];

    pub fn base_speeds(self) -> [f64; 4] {
        match self {
            Heterogeneity::No => [1.0, 1.0, 1.0, 1.0],
            Heterogeneity::Slight => [1.0, 0.9, 0.8, 0.7],
            Heterogeneity::Moderate => [1.0, 0.75, 0.5, 0.25],
            Heterogeneity::Very => [1.0, 0.5, 0.25, 0.125],
        }
    }

    pub fn profile(self, k: usize) -> DeviceProfile {
        let base = self.base_speeds();
        DeviceProfile {
            speeds: (0..k).map(|i| base[i % base.len()]).collect(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Heterogeneity::No => "no",
            Heterogeneity::Slight => "slight",
            Heterogeneity::Moderate => "moderate",
            Heterogeneity::Very => "very",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Heterogeneity::ALL.into_iter().find(|h| h.name() == s)
    }
}

/// Local steps for a worker of speed `speed` when the fastest runs `h`:
/// `floor(speed / fastest * h)`, never less than one.
pub fn dylu_steps(speed: f64, fastest: f64, h: u64) -> u64 {
    let steps = (speed / fastest * h as f64).floor() as u64;
    steps.max(1)
}
