use sdff_autograd::Tensor;

use super::EventStream;
use crate::error::{Error, Result};

/// Signed event volume of `bins × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl VoxelGrid {
    pub fn zeros(bins: usize, height: usize, width: usize) -> Self {
        Self {
            bins,
            height,
            width,
            data: vec![0.0; bins * height * width],
        }
    }

    pub fn at(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    /// Adds `p·κ(x−xᵢ)κ(y−yᵢ)κ(t−tᵢ)` to the (up to 8) neighboring cells,
    /// with `κ(a) = max(0, 1 − |a|)`. Cells outside the grid are dropped.
    pub(crate) fn deposit(&mut self, x: f32, y: f32, t: f32, p: f32) {
        let taps = |c: f32, n: usize| {
            let c0 = c.floor();
            let mut out = [(0usize, 0.0f32); 2];
            let mut k = 0;
            for i in [c0, c0 + 1.0] {
                let w = (1.0 - (c - i).abs()).max(0.0);
                if w > 0.0 && i >= 0.0 && (i as usize) < n {
                    out[k] = (i as usize, w);
                    k += 1;
                }
            }
            (out, k)
        };
        let (tx, nx) = taps(x, self.width);
        let (ty, ny) = taps(y, self.height);
        let (tt, nt) = taps(t, self.bins);
        for &(b, wt) in &tt[..nt] {
            for &(yy, wy) in &ty[..ny] {
                for &(xx, wx) in &tx[..nx] {
                    self.data[(b * self.height + yy) * self.width + xx] += p * wt * wy * wx;
                }
            }
        }
    }
}

/// Bilinear-in-time voxelization of the events in the closed window
/// `[t_start, t_end]`, with timestamps mapped linearly onto `[0, bins − 1]`.
pub fn voxelize(stream: &EventStream, bins: usize, window: (u64, u64)) -> Result<VoxelGrid> {
    if bins < 2 {
        return Err(Error::Invalid(format!("voxelization needs at least 2 bins, got {bins}")));
    }
    let (t0, t1) = window;
    if t1 < t0 {
        return Err(Error::Invalid(format!("window end {t1} precedes start {t0}")));
    }
    let mut grid = VoxelGrid::zeros(bins, stream.height() as usize, stream.width() as usize);
    let span = (t1 - t0) as f64;
    let scale = (bins - 1) as f64;
    let first = stream.events().partition_point(|e| e.t < t0);
    for e in &stream.events()[first..] {
        if e.t > t1 {
            break;
        }
        let tn = if span > 0.0 {
            scale * (e.t - t0) as f64 / span
        } else {
            0.0
        };
        grid.deposit(e.x as f32, e.y as f32, tn as f32, e.p as f32);
    }
    Ok(grid)
}

/// Network input of `steps × channels × height × width`, `channels = 2·blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikeInput {
    pub steps: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub bins: usize,
    pub blocks: usize,
    pub data: Vec<f32>,
}

impl SpikeInput {
    pub fn shape(&self) -> [usize; 4] {
        [self.steps, self.channels, self.height, self.width]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.data.clone(), &self.shape()).expect("consistent spike input")
    }
}

/// Time step `t` takes bins `[t·n, t·n + n)`; each bin contributes a
/// positive-part and a negative-part channel, in bin order.
pub fn chunk_to_spike_input(v: &VoxelGrid, blocks: usize) -> Result<SpikeInput> {
    if blocks == 0 || v.bins % blocks != 0 {
        return Err(Error::Invalid(format!(
            "{} bins cannot be split into blocks of {blocks}",
            v.bins
        )));
    }
    let steps = v.bins / blocks;
    let channels = 2 * blocks;
    let plane = v.height * v.width;
    let mut data = vec![0.0f32; steps * channels * plane];
    for t in 0..steps {
        for k in 0..blocks {
            let src = &v.data[(t * blocks + k) * plane..][..plane];
            let pos = ((t * channels) + 2 * k) * plane;
            let neg = pos + plane;
            for (i, &val) in src.iter().enumerate() {
                data[pos + i] = val.max(0.0);
                data[neg + i] = (-val).max(0.0);
            }
        }
    }
    Ok(SpikeInput {
        steps,
        channels,
        height: v.height,
        width: v.width,
        bins: v.bins,
        blocks,
        data,
    })
}

/// Stacks samples into the network's time-major batch layout `[T·B, C, H, W]`.
pub fn stack_batch(samples: &[&SpikeInput]) -> Result<Tensor> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Invalid("cannot stack an empty batch".into()))?;
    let shape = first.shape();
    if let Some(bad) = samples.iter().find(|s| s.shape() != shape) {
        return Err(Error::Invalid(format!(
            "batch mixes shapes {:?} and {:?}",
            shape,
            bad.shape()
        )));
    }
    let [t, c, h, w] = shape;
    let per_step = c * h * w;
    let b = samples.len();
    let mut data = Vec::with_capacity(t * b * per_step);
    for step in 0..t {
        for s in samples {
            data.extend_from_slice(&s.data[step * per_step..(step + 1) * per_step]);
        }
    }
    Ok(Tensor::new(data, &[t * b, c, h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn stream(events: Vec<Event>) -> EventStream {
        EventStream::new(events, 4, 3).unwrap()
    }

    #[test]
    fn event_on_bin_node() {
        // t=500 of [0, 1000] with 5 bins -> normalized 2.0
        let g = voxelize(&stream(vec![Event::new(2, 1, 500, 1)]), 5, (0, 1000)).unwrap();
        for b in 0..5 {
            for y in 0..3 {
                for x in 0..4 {
                    let want = if (b, y, x) == (2, 1, 2) { 1.0 } else { 0.0 };
                    assert_eq!(g.at(b, y, x), want);
                }
            }
        }
    }

    #[test]
    fn event_between_bins_splits() {
        // normalized 1.5
        let g = voxelize(&stream(vec![Event::new(0, 0, 375, 1)]), 5, (0, 1000)).unwrap();
        assert_eq!(g.at(1, 0, 0), 0.5);
        assert_eq!(g.at(2, 0, 0), 0.5);
        assert!((g.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn opposite_polarities_cancel() {
        let g = voxelize(
            &stream(vec![Event::new(1, 1, 100, 1), Event::new(1, 1, 100, -1)]),
            3,
            (0, 200),
        )
        .unwrap();
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn window_is_closed_and_bounds_checked() {
        let s = stream(vec![Event::new(0, 0, 0, 1), Event::new(1, 0, 10, 1), Event::new(2, 0, 11, 1)]);
        let g = voxelize(&s, 2, (0, 10)).unwrap();
        assert_eq!(g.at(0, 0, 0), 1.0);
        assert_eq!(g.at(1, 0, 1), 1.0);
        assert_eq!(g.sum(), 2.0);
        assert!(voxelize(&s, 1, (0, 10)).is_err());
        assert!(voxelize(&s, 4, (10, 0)).is_err());
        let g = voxelize(&s, 4, (10, 10)).unwrap();
        assert_eq!(g.sum(), 1.0);
    }

    #[test]
    fn fractional_coordinates_use_bilinear_weights() {
        let mut g = VoxelGrid::zeros(2, 3, 3);
        g.deposit(0.25, 1.5, 0.0, 1.0);
        assert!((g.at(0, 1, 0) - 0.375).abs() < 1e-6);
        assert!((g.at(0, 2, 1) - 0.125).abs() < 1e-6);
        assert!((g.sum() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn chunk_shapes() {
        let v = VoxelGrid::zeros(10, 2, 2);
        let s = chunk_to_spike_input(&v, 2).unwrap();
        assert_eq!((s.steps, s.channels), (5, 4));
        let s = chunk_to_spike_input(&v, 1).unwrap();
        assert_eq!((s.steps, s.channels), (10, 2));
        assert!(s.data.iter().all(|&x| x == 0.0));
        assert!(chunk_to_spike_input(&v, 3).is_err());
        assert!(chunk_to_spike_input(&v, 0).is_err());
    }

    #[test]
    fn chunk_channel_order() {
        let mut v = VoxelGrid::zeros(4, 1, 1);
        v.data = vec![1.0, -2.0, 3.0, -4.0];
        let s = chunk_to_spike_input(&v, 2).unwrap();
        assert_eq!(s.data, vec![1.0, 0.0, 0.0, 2.0, 3.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn stack_is_time_major() {
        let mk = |off: f32| SpikeInput {
            steps: 2,
            channels: 1,
            height: 1,
            width: 1,
            bins: 2,
            blocks: 1,
            data: vec![off, off + 1.0],
        };
        let (a, b) = (mk(0.0), mk(10.0));
        let t = stack_batch(&[&a, &b]).unwrap();
        assert_eq!(t.shape(), &[4, 1, 1, 1]);
        assert_eq!(t.to_vec(), vec![0.0, 10.0, 1.0, 11.0]);
        assert!(stack_batch(&[]).is_err());
    }
}
