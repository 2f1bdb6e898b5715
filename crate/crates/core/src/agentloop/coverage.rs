use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grid geometry over a 2-D state box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageSettings {
    pub resolution: usize,
    pub low: [f64; 2],
    pub high: [f64; 2],
}

impl Default for CoverageSettings {
    /// 32×32 over the mountain-car box.
    fn default() -> Self {
        Self {
            resolution: 32,
            low: [-1.2, -0.07],
            high: [0.6, 0.07],
        }
    }
}

/// Cumulative occupancy histogram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageGrid {
    pub settings: CoverageSettings,
    /// Visit counts, row-major with the first state dimension as rows.
    pub counts: Vec<u64>,
    pub visited: usize,
    /// States that fell outside the box and were clamped to a border cell.
    pub out_of_box: u64,
    /// Coverage fraction at the end of each epoch.
    pub series: Vec<f64>,
}

impl CoverageGrid {
    pub fn new(settings: CoverageSettings) -> Result<Self> {
        let ok = settings.resolution > 0
            && (0..2).all(|k| {
                settings.low[k].is_finite()
                    && settings.high[k].is_finite()
                    && settings.low[k] < settings.high[k]
            });
        if !ok {
            return Err(Error::invalid(
                "coverage grid needs a positive resolution and a non-empty box",
            ));
        }
        let g = settings.resolution;
        Ok(Self {
            settings,
            counts: vec![0; g * g],
            visited: 0,
            out_of_box: 0,
            series: Vec::new(),
        })
    }

    /// Cell index along axis `k` and whether `x` lay outside the box.
    fn axis(&self, k: usize, x: f64) -> (usize, bool) {
        let (lo, hi) = (self.settings.low[k], self.settings.high[k]);
        let g = self.settings.resolution;
        let t = ((x - lo) / (hi - lo) * g as f64).floor();
        let cell = if t.is_nan() || t < 0.0 {
            0
        } else {
            (t as usize).min(g - 1)
        };
        (cell, !(lo..=hi).contains(&x))
    }

    /// Marks the cell of one state.
    pub fn mark(&mut self, state: &[f64]) -> Result<()> {
        if state.len() != 2 {
            return Err(Error::Dimension {
                what: "coverage state",
                expected: 2,
                got: state.len(),
            });
        }
        let ((i, out_i), (j, out_j)) = (self.axis(0, state[0]), self.axis(1, state[1]));
        if out_i || out_j {
            self.out_of_box += 1;
        }
        let c = &mut self.counts[i * self.settings.resolution + j];
        if *c == 0 {
            self.visited += 1;
        }
        *c += 1;
        Ok(())
    }

    pub fn update<'a>(&mut self, states: impl IntoIterator<Item = &'a [f64]>) -> Result<()> {
        states.into_iter().try_for_each(|s| self.mark(s))
    }

    pub fn fraction(&self) -> f64 {
        self.visited as f64 / self.counts.len() as f64
    }

    /// Records the current fraction as the end of an epoch.
    pub fn close_epoch(&mut self) -> f64 {
        let f = self.fraction();
        self.series.push(f);
        f
    }
}
