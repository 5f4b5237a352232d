use crate::error::{invalid, Result};
use crate::grid::Grid;

/// Geometric frequency axis shared by the forward warp and its inverse.
/// `centers[i]` is the fractional linear bin sampled by warped row `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpMap {
    pub linear_bins: usize,
    pub centers: Vec<f64>,
}

impl WarpMap {
    /// Centers run geometrically from two bin widths above DC up to Nyquist.
    pub fn new(linear_bins: usize, out_bins: usize) -> Result<Self> {
        if linear_bins < 2 {
            return Err(invalid("warp_log_freq", format!("need at least 2 linear bins, got {linear_bins}")));
        }
        if out_bins < 2 {
            return Err(invalid("warp_log_freq", format!("need at least 2 output bins, got {out_bins}")));
        }
        let hi = (linear_bins - 1) as f64;
        let lo = 2.0f64.min(hi / 2.0);
        let ratio = hi / lo;
        let last = (out_bins - 1) as f64;
        let mut centers: Vec<f64> = (0..out_bins).map(|i| lo * ratio.powf(i as f64 / last)).collect();
        centers[out_bins - 1] = hi;
        Ok(Self { linear_bins, centers })
    }

    pub fn out_bins(&self) -> usize {
        self.centers.len()
    }

    /// Samples each column at the warped centers by linear interpolation.
    pub fn warp(&self, grid: &Grid) -> Result<Grid> {
        if grid.rows != self.linear_bins {
            return Err(invalid("warp_log_freq", format!("map expects {} rows, grid has {}", self.linear_bins, grid.rows)));
        }
        let mut out = Grid::zeros(self.out_bins(), grid.cols);
        for (i, &c) in self.centers.iter().enumerate() {
            let j = (c.floor() as usize).min(self.linear_bins - 1);
            let frac = c - j as f64;
            let lower = grid.row(j);
            let dst = &mut out.data[i * grid.cols..(i + 1) * grid.cols];
            if frac == 0.0 {
                dst.copy_from_slice(lower);
            } else {
                let upper = grid.row(j + 1);
                for ((d, &a), &b) in dst.iter_mut().zip(lower).zip(upper) {
                    *d = a + frac * (b - a);
                }
            }
        }
        Ok(out)
    }

    /// Maps a warped grid back to linear bins. Linear bins below the first
    /// center copy the first warped row.
    pub fn unwarp(&self, warped: &Grid) -> Result<Grid> {
        if warped.rows != self.out_bins() {
            return Err(invalid("unwarp_log_freq", format!("map has {} warped bins, grid has {}", self.out_bins(), warped.rows)));
        }
        let mut out = Grid::zeros(self.linear_bins, warped.cols);
        let mut i = 0;
        for f in 0..self.linear_bins {
            let pos = f as f64;
            let dst = &mut out.data[f * warped.cols..(f + 1) * warped.cols];
            if pos <= self.centers[0] {
                dst.copy_from_slice(warped.row(0));
                continue;
            }
            while i + 1 < self.centers.len() - 1 && self.centers[i + 1] < pos {
                i += 1;
            }
            let (c0, c1) = (self.centers[i], self.centers[i + 1]);
            let t = ((pos - c0) / (c1 - c0)).min(1.0);
            let (a, b) = (warped.row(i), warped.row(i + 1));
            for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
                *d = x + t * (y - x);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogFreqSpectrogram {
    pub data: Grid,
    pub map: WarpMap,
}

pub fn warp_log_freq(mag: &Grid, out_bins: usize) -> Result<LogFreqSpectrogram> {
    let map = WarpMap::new(mag.rows, out_bins)?;
    Ok(LogFreqSpectrogram { data: map.warp(mag)?, map })
}

pub fn unwarp_log_freq(warped: &LogFreqSpectrogram, out_bins: usize) -> Result<Grid> {
    if out_bins != warped.map.linear_bins {
        return Err(invalid(
            "unwarp_log_freq",
            format!("requested {out_bins} linear bins but the map was built for {}", warped.map.linear_bins),
        ));
    }
    warped.map.unwarp(&warped.data)
}
