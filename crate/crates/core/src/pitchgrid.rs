//! Log-pitch transform and the uniform bin grids the histograms live on.
//!
//! Voiced frequencies in `[51.91, 830.61]` Hz are mapped to
//! `log2(f / 51.91)`, i.e. four octaves on `[0, 4]`. Two grids exist:
//!
//! - [`GridKind::Unified`] adds 50 bins below the voiced range; bin 1 holds
//!   unvoiced frames, which are encoded at its left edge `-50 * b_w`. 435 bins.
//! - [`GridKind::VoicedOnly`] covers the voiced range only. 385 bins.
//!
//! Bin indices in this module are 1-based, matching the usual notation for
//! `l_k = a + (k - 1) * b_w`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower bound of the voiced range (G#1), and the log-pitch origin.
pub const F_MIN_HZ: f64 = 51.91;
/// Upper bound of the voiced range (G#5) as used for label validation.
pub const F_MAX_HZ: f64 = 830.61;
/// Uniform bin width in log2 units (1/8 semitone, as printed: 0.01042).
pub const BIN_WIDTH: f64 = 0.01042;
/// Number of bins spanning the voiced range.
pub const VOICED_BINS: usize = 385;
/// Distance, in bins, from the unvoiced bin to the first voiced bin.
pub const UNVOICED_GAP_BINS: usize = 50;

/// Which of the two supports a grid spans.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GridKind {
    /// Unvoiced bin + gap + voiced range (M1, M2 and the scalar baselines).
    Unified,
    /// Voiced range only (M3).
    VoicedOnly,
}

/// A uniform partition of a log-pitch interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinGrid {
    /// Left edge of bin 1.
    pub a: f64,
    pub bin_width: f64,
    pub n_bins: usize,
    /// 1-based index of the first voiced bin.
    pub first_voiced: usize,
    /// 1-based index of the last voiced bin.
    pub last_voiced: usize,
    /// Integer offset such that `l_k = (k - 1 - offset) * bin_width`.
    offset_bins: i64,
    pub kind: GridKind,
}

impl BinGrid {
    /// Standard grid for a method family.
    pub fn new(kind: GridKind) -> Self {
        match kind {
            GridKind::Unified => BinGrid {
                a: -(UNVOICED_GAP_BINS as f64) * BIN_WIDTH,
                bin_width: BIN_WIDTH,
                n_bins: UNVOICED_GAP_BINS + VOICED_BINS,
                first_voiced: UNVOICED_GAP_BINS + 1,
                last_voiced: UNVOICED_GAP_BINS + VOICED_BINS,
                offset_bins: UNVOICED_GAP_BINS as i64,
                kind,
            },
            GridKind::VoicedOnly => BinGrid {
                a: 0.0,
                bin_width: BIN_WIDTH,
                n_bins: VOICED_BINS,
                first_voiced: 1,
                last_voiced: VOICED_BINS,
                offset_bins: 0,
                kind,
            },
        }
    }

    /// A reduced grid with the same layout rules, for small test instances.
    ///
    /// `Unified` grids get one unvoiced bin, `gap_bins` empty bins and
    /// `voiced_bins` voiced bins; `VoicedOnly` grids ignore `gap_bins`.
    pub fn custom(kind: GridKind, bin_width: f64, gap_bins: usize, voiced_bins: usize) -> Result<Self> {
        if bin_width <= 0.0 || !bin_width.is_finite() {
            return Err(Error::Domain(format!("bin width must be positive, got {bin_width}")));
        }
        let grid = match kind {
            GridKind::Unified => BinGrid {
                a: -(gap_bins as f64) * bin_width,
                bin_width,
                n_bins: gap_bins + voiced_bins,
                first_voiced: gap_bins + 1,
                last_voiced: gap_bins + voiced_bins,
                offset_bins: gap_bins as i64,
                kind,
            },
            GridKind::VoicedOnly => BinGrid {
                a: 0.0,
                bin_width,
                n_bins: voiced_bins,
                first_voiced: 1,
                last_voiced: voiced_bins,
                offset_bins: 0,
                kind,
            },
        };
        if grid.n_bins < 2 || voiced_bins == 0 || (kind == GridKind::Unified && gap_bins == 0) {
            return Err(Error::Precondition(format!(
                "grid needs at least two bins and a separate unvoiced bin (gap={gap_bins}, voiced={voiced_bins})"
            )));
        }
        Ok(grid)
    }

    /// Left edge of bin `k` (1-based); `k = n_bins + 1` gives the right edge of the support.
    #[inline]
    pub fn left_edge(&self, k: usize) -> f64 {
        (k as i64 - 1 - self.offset_bins) as f64 * self.bin_width
    }

    /// All `n_bins + 1` edges, left to right.
    pub fn edges(&self) -> Vec<f64> {
        (1..=self.n_bins + 1).map(|k| self.left_edge(k)).collect()
    }

    /// Right end of the support, `a + K * b_w`.
    pub fn upper(&self) -> f64 {
        self.left_edge(self.n_bins + 1)
    }

    /// Center of bin `k` (1-based).
    pub fn bin_center(&self, k: usize) -> Result<f64> {
        if k == 0 || k > self.n_bins {
            return Err(Error::IndexOutOfRange { index: k, len: self.n_bins });
        }
        Ok(self.left_edge(k) + 0.5 * self.bin_width)
    }

    /// All bin centers, indexed from 0.
    pub fn centers(&self) -> Vec<f64> {
        (1..=self.n_bins)
            .map(|k| self.left_edge(k) + 0.5 * self.bin_width)
            .collect()
    }

    /// 1-based bin containing `value`. Bins are `[l_k, l_k + b_w)`, the last one
    /// closed; values outside the support clamp to the boundary bins.
    pub fn bin_index(&self, value: f64) -> usize {
        if value.is_nan() || value < self.a {
            return 1;
        }
        let mut k = ((value - self.a) / self.bin_width).floor() as i64 + 1;
        k = k.clamp(1, self.n_bins as i64);
        // floor can land one bin off right at an edge
        if k > 1 && value < self.left_edge(k as usize) {
            k -= 1;
        } else if (k as usize) < self.n_bins && value >= self.left_edge(k as usize + 1) {
            k += 1;
        }
        k as usize
    }

    /// 0-based index range of the voiced bins.
    pub fn voiced_range0(&self) -> std::ops::Range<usize> {
        self.first_voiced - 1..self.last_voiced
    }

    /// Log-pitch assigned to unvoiced frames (left edge of bin 1), if the grid has one.
    pub fn unvoiced_value(&self) -> Option<f64> {
        match self.kind {
            GridKind::Unified => Some(self.a),
            GridKind::VoicedOnly => None,
        }
    }

    /// Decision threshold for unified grids: midpoint of the unvoiced bin
    /// center and the first voiced bin center.
    pub fn voicing_boundary(&self) -> f64 {
        let uv = self.left_edge(1) + 0.5 * self.bin_width;
        let v = self.left_edge(self.first_voiced) + 0.5 * self.bin_width;
        0.5 * (uv + v)
    }
}

/// Standard grid for a method family.
pub fn make_grid(kind: GridKind) -> BinGrid {
    BinGrid::new(kind)
}

/// Ground-truth frequency of one frame; 0 Hz means unvoiced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub freq_hz: f64,
}

impl FrameLabel {
    pub const UNVOICED: FrameLabel = FrameLabel { freq_hz: 0.0 };

    /// Validates that voiced frequencies fall inside `[F_MIN_HZ, F_MAX_HZ]`.
    pub fn new(freq_hz: f64) -> Result<Self> {
        if freq_hz == 0.0 {
            return Ok(Self::UNVOICED);
        }
        if !freq_hz.is_finite() || freq_hz < 0.0 {
            return Err(Error::Domain(format!("invalid label frequency {freq_hz}")));
        }
        // small slack for values that were printed with limited precision
        if !(F_MIN_HZ - 1e-6..=F_MAX_HZ + 1e-6).contains(&freq_hz) {
            return Err(Error::Domain(format!(
                "voiced frequency {freq_hz} Hz outside [{F_MIN_HZ}, {F_MAX_HZ}]"
            )));
        }
        Ok(FrameLabel { freq_hz })
    }

    #[inline]
    pub fn voiced(&self) -> bool {
        self.freq_hz > 0.0
    }
}

/// `log2(freq_hz / 51.91)`.
pub fn hz_to_log(freq_hz: f64) -> Result<f64> {
    if !(freq_hz > 0.0) || !freq_hz.is_finite() {
        return Err(Error::Domain(format!("frequency must be positive, got {freq_hz}")));
    }
    Ok((freq_hz / F_MIN_HZ).log2())
}

/// Inverse of [`hz_to_log`].
#[inline]
pub fn log_to_hz(g: f64) -> f64 {
    F_MIN_HZ * g.exp2()
}

/// Log-pitch regression target of a frame on `grid`.
pub fn encode_frame(label: FrameLabel, grid: &BinGrid) -> Result<f64> {
    if label.voiced() {
        return hz_to_log(label.freq_hz);
    }
    grid.unvoiced_value().ok_or_else(|| {
        Error::Precondition("unvoiced frames carry no pitch target on a voiced-only grid".into())
    })
}

/// Absolute pitch distance in cents.
pub fn cents_between(f1: f64, f2: f64) -> Result<f64> {
    if !(f1 > 0.0 && f2 > 0.0) {
        return Err(Error::Domain(format!("cents need positive frequencies, got {f1}, {f2}")));
    }
    Ok(1200.0 * (f1 / f2).log2().abs())
}
