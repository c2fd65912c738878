//! Frame files, chunking, splits, the synthetic two-faction generator and
//! the occupancy rasterizer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

pub const CHUNK_LEN: usize = 50;
pub const FRAME_PERIOD: f64 = 0.2;
pub const MAP_RESOLUTION: usize = 256;

/// Unit positions at one instant, as fractions of the map extent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointFrame {
    pub t: f64,
    pub points: Vec<[f32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub owner: Option<Vec<u32>>,
}

impl PointFrame {
    pub fn new(t: f64, points: Vec<[f32; 2]>) -> Self {
        Self {
            t,
            points,
            owner: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `[N, 2]` matrix of positions.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let data = self
            .points
            .iter()
            .flat_map(|p| [T::from_f32(p[0]).unwrap(), T::from_f32(p[1]).unwrap()])
            .collect();
        Tensor::matrix(self.points.len(), 2, data).expect("two columns")
    }

    pub fn from_tensor<T: Real>(t: f64, points: &Tensor<T>) -> Self {
        let pts = (0..points.rows())
            .map(|i| {
                let r = points.row(i);
                [r[0].to_f32().unwrap(), r[1].to_f32().unwrap()]
            })
            .collect();
        Self::new(t, pts)
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !self.t.is_finite() {
            return Err(Error::OutOfRange {
                frame: index,
                message: "timestamp is not finite".into(),
            });
        }
        if self.points.is_empty() {
            return Err(Error::OutOfRange {
                frame: index,
                message: "frame has no points".into(),
            });
        }
        for (i, p) in self.points.iter().enumerate() {
            for &c in p {
                if !(0.0..=1.0).contains(&c) {
                    return Err(Error::OutOfRange {
                        frame: index,
                        message: format!("point {i} coordinate {c} outside [0, 1]"),
                    });
                }
            }
        }
        if let Some(owner) = &self.owner {
            if owner.len() != self.points.len() {
                return Err(Error::OutOfRange {
                    frame: index,
                    message: format!("{} owners for {} points", owner.len(), self.points.len()),
                });
            }
        }
        Ok(())
    }
}

/// Reads a JSON Lines frame file. Blank lines are skipped.
pub fn load_frames(path: impl AsRef<Path>) -> Result<Vec<PointFrame>> {
    let reader = BufReader::new(File::open(path)?);
    let mut frames = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: PointFrame = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        frame.validate(frames.len())?;
        frames.push(frame);
    }
    Ok(frames)
}

pub fn save_frames(path: impl AsRef<Path>, frames: &[PointFrame]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for f in frames {
        serde_json::to_writer(&mut w, f)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed-length run of consecutive frames.
#[derive(Clone, Debug, PartialEq)]
pub struct Chunk {
    pub frames: Vec<PointFrame>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Non-overlapping consecutive windows; a tail shorter than `chunk_len` is dropped.
pub fn make_chunks(frames: &[PointFrame], chunk_len: usize) -> Result<Vec<Chunk>> {
    if chunk_len == 0 {
        return Err(Error::invalid("chunk length must be positive"));
    }
    if frames.len() < chunk_len {
        return Err(Error::invalid(format!(
            "{} frames cannot fill a chunk of {chunk_len}",
            frames.len()
        )));
    }
    frames
        .chunks_exact(chunk_len)
        .map(|w| {
            if w.windows(2).any(|p| p[1].t <= p[0].t) {
                return Err(Error::invalid("timestamps within a chunk must increase"));
            }
            Ok(Chunk { frames: w.to_vec() })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<Chunk>,
    pub validation: Vec<Chunk>,
    pub test: Vec<Chunk>,
    pub seed: u64,
}

impl DatasetSplit {
    pub fn train_frames(&self) -> Vec<PointFrame> {
        flatten(&self.train)
    }

    pub fn validation_frames(&self) -> Vec<PointFrame> {
        flatten(&self.validation)
    }

    pub fn test_frames(&self) -> Vec<PointFrame> {
        flatten(&self.test)
    }
}

fn flatten(chunks: &[Chunk]) -> Vec<PointFrame> {
    chunks.iter().flat_map(|c| c.frames.iter().cloned()).collect()
}

/// Shuffles chunks and takes ⌊10%⌋ for validation, ⌊10%⌋ for test and the rest for training.
pub fn split(chunks: Vec<Chunk>, seed: u64) -> DatasetSplit {
    let n = chunks.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = n / 10;
    let n_test = n / 10;
    let mut slots: Vec<Option<Chunk>> = chunks.into_iter().map(Some).collect();
    let mut take = |idx: &[usize]| -> Vec<Chunk> {
        idx.iter().map(|&i| slots[i].take().expect("each index once")).collect()
    };
    let validation = take(&order[..n_val]);
    let test = take(&order[n_val..n_val + n_test]);
    let train = take(&order[n_val + n_test..]);
    DatasetSplit {
        train,
        validation,
        test,
        seed,
    }
}

/// Parameters of the synthetic two-faction generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    /// Units per faction in the first frame.
    pub initial_units: usize,
    pub min_units: usize,
    pub max_units: usize,
    /// Faction centroid speed, map fractions per second.
    pub speed: f64,
    /// Per-unit offset diffusion, map fractions per √second.
    pub jitter: f64,
    /// Standard deviation of unit offsets around the centroid.
    pub spread: f64,
    /// Expected new units per faction per second.
    pub spawn_rate: f64,
    /// Per-unit removal probability per second.
    pub death_rate: f64,
    pub period: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            frames: 11_000,
            initial_units: 60,
            min_units: 20,
            max_units: 200,
            speed: 0.04,
            jitter: 0.01,
            spread: 0.05,
            spawn_rate: 0.5,
            death_rate: 0.005,
            period: FRAME_PERIOD,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synthetic config: {m}")));
        if self.min_units == 0 {
            return bad("min_units must be at least 1");
        }
        if self.min_units > self.max_units {
            return bad("min_units exceeds max_units");
        }
        if !(self.min_units..=self.max_units).contains(&(2 * self.initial_units)) {
            return bad("2 × initial_units must lie within [min_units, max_units]");
        }
        for (name, v) in [
            ("speed", self.speed),
            ("jitter", self.jitter),
            ("spread", self.spread),
            ("spawn_rate", self.spawn_rate),
            ("death_rate", self.death_rate),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be a non-negative number"));
            }
        }
        if !(self.period > 0.0) {
            return bad("period must be positive");
        }
        Ok(())
    }
}

struct Faction {
    centroid: [f64; 2],
    waypoint: [f64; 2],
    offsets: Vec<[f64; 2]>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn clamp01(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

/// Two clustered factions that walk between random waypoints.
pub fn synth_generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<PointFrame>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let homes = [[0.2, 0.2], [0.8, 0.8]];
    let mut factions: Vec<Faction> = homes
        .iter()
        .map(|&h| Faction {
            centroid: h,
            waypoint: h,
            offsets: (0..cfg.initial_units)
                .map(|_| [cfg.spread * normal(&mut rng), cfg.spread * normal(&mut rng)])
                .collect(),
        })
        .collect();
    for f in &mut factions {
        f.waypoint = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
    }

    let dt = cfg.period;
    let step = cfg.speed * dt;
    let diffusion = cfg.jitter * dt.sqrt();
    // mean reversion keeps offsets at roughly `spread`
    let revert = if cfg.spread > 0.0 {
        (diffusion * diffusion / (2.0 * cfg.spread * cfg.spread)).min(1.0)
    } else {
        1.0
    };

    let mut frames = Vec::with_capacity(cfg.frames);
    for n in 0..cfg.frames {
        if n > 0 {
            for f in &mut factions {
                let d = [f.waypoint[0] - f.centroid[0], f.waypoint[1] - f.centroid[1]];
                let dist = (d[0] * d[0] + d[1] * d[1]).sqrt();
                if dist <= step {
                    f.centroid = f.waypoint;
                    if step > 0.0 {
                        f.waypoint = [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)];
                    }
                } else {
                    f.centroid[0] += step * d[0] / dist;
                    f.centroid[1] += step * d[1] / dist;
                }
                if diffusion > 0.0 {
                    for o in &mut f.offsets {
                        for c in o.iter_mut() {
                            *c += -revert * *c + diffusion * normal(&mut rng);
                        }
                    }
                }
            }
            let mut total: usize = factions.iter().map(|f| f.offsets.len()).sum();
            for f in &mut factions {
                if cfg.death_rate > 0.0 {
                    let p = (cfg.death_rate * dt).min(1.0);
                    let mut i = 0;
                    while i < f.offsets.len() {
                        if total > cfg.min_units && f.offsets.len() > 1 && rng.random::<f64>() < p {
                            f.offsets.swap_remove(i);
                            total -= 1;
                        } else {
                            i += 1;
                        }
                    }
                }
                if cfg.spawn_rate > 0.0 && total < cfg.max_units {
                    let p = (cfg.spawn_rate * dt).min(1.0);
                    if rng.random::<f64>() < p {
                        f.offsets
                            .push([cfg.spread * normal(&mut rng), cfg.spread * normal(&mut rng)]);
                        total += 1;
                    }
                }
            }
        }
        let mut points = Vec::new();
        let mut owner = Vec::new();
        for (k, f) in factions.iter().enumerate() {
            for o in &f.offsets {
                points.push([clamp01(f.centroid[0] + o[0]), clamp01(f.centroid[1] + o[1])]);
                owner.push(k as u32);
            }
        }
        frames.push(PointFrame {
            t: n as f64 * dt,
            points,
            owner: Some(owner),
        });
    }
    Ok(frames)
}

/// Binary occupancy map, row-major, `row = y`, `col = x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    pub resolution: usize,
    pub occupied: Vec<bool>,
}

impl Bitmap {
    pub fn is_occupied(&self, col: usize, row: usize) -> bool {
        self.occupied[row * self.resolution + col]
    }

    pub fn occupancy(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    /// Binary PGM; occupied pixels are 0 (dark), empty pixels 255.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{0} {0}\n255\n", self.resolution).into_bytes();
        out.extend(self.occupied.iter().map(|&b| if b { 0u8 } else { 255u8 }));
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::invalid(format!("pgm: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(bad("not a binary graymap"));
        }
        let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
        if w != h || fields[3] != "255" {
            return Err(bad("expected a square 8-bit map"));
        }
        let body = bytes.get(pos..).ok_or_else(|| bad("missing raster"))?;
        if body.len() != w * h {
            return Err(bad("raster size"));
        }
        Ok(Self {
            resolution: w,
            occupied: body.iter().map(|&v| v == 0).collect(),
        })
    }
}

pub fn rasterize(frame: &PointFrame, resolution: usize) -> Result<Bitmap> {
    if resolution < 2 {
        return Err(Error::invalid("raster resolution must be at least 2"));
    }
    let scale = (resolution - 1) as f64;
    let mut occupied = vec![false; resolution * resolution];
    for p in &frame.points {
        let px = |c: f32| ((c as f64).clamp(0.0, 1.0) * scale + 0.5).floor() as usize;
        occupied[px(p[1]) * resolution + px(p[0])] = true;
    }
    Ok(Bitmap {
        resolution,
        occupied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<PointFrame> {
        (0..n)
            .map(|i| PointFrame::new(i as f64 * 0.2, vec![[0.5, 0.5]]))
            .collect()
    }

    #[test]
    fn chunk_counts() {
        assert_eq!(make_chunks(&frames(11_000), CHUNK_LEN).unwrap().len(), 220);
        assert_eq!(make_chunks(&frames(100), CHUNK_LEN).unwrap().len(), 2);
        assert_eq!(make_chunks(&frames(149), CHUNK_LEN).unwrap().len(), 2);
        assert!(make_chunks(&frames(49), CHUNK_LEN).is_err());
    }

    #[test]
    fn split_sizes() {
        let chunks = make_chunks(&frames(11_000), CHUNK_LEN).unwrap();
        let s = split(chunks, 3);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (176, 22, 22));
        let s = split(make_chunks(&frames(50 * 7), CHUNK_LEN).unwrap(), 3);
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (7, 0, 0));
    }

    #[test]
    fn split_is_a_partition() {
        let mut fs = frames(50 * 23);
        for (i, f) in fs.iter_mut().enumerate() {
            f.points[0][0] = (i as f32) / 2000.0;
        }
        let chunks = make_chunks(&fs, CHUNK_LEN).unwrap();
        let s = split(chunks.clone(), 9);
        let mut firsts: Vec<f64> = s
            .train
            .iter()
            .chain(&s.validation)
            .chain(&s.test)
            .map(|c| c.frames[0].t)
            .collect();
        firsts.sort_by(f64::total_cmp);
        let expected: Vec<f64> = chunks.iter().map(|c| c.frames[0].t).collect();
        assert_eq!(firsts, expected);
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let mut fs = frames(50);
        fs[10].t = fs[9].t;
        assert!(make_chunks(&fs, CHUNK_LEN).is_err());
    }

    #[test]
    fn raster_pixels() {
        let f = PointFrame::new(0.0, vec![[0.0, 0.0]]);
        let b = rasterize(&f, 256).unwrap();
        assert!(b.is_occupied(0, 0));
        assert_eq!(b.occupancy(), 1);

        let f = PointFrame::new(0.0, vec![[0.3, 0.7], [0.3, 0.7]]);
        assert_eq!(rasterize(&f, 256).unwrap().occupancy(), 1);

        let f = PointFrame::new(0.0, vec![[1.0, 0.5]]);
        let b = rasterize(&f, 256).unwrap();
        // 0.5 * 255 + 0.5 = 128.0
        assert!(b.is_occupied(255, 128));

        assert!(rasterize(&f, 1).is_err());
    }

    #[test]
    fn four_hundred_units_cover_point_six_percent() {
        let pts: Vec<[f32; 2]> = (0..400)
            .map(|i| [(i % 20) as f32 * 10.0 / 255.0, (i / 20) as f32 * 10.0 / 255.0])
            .collect();
        let b = rasterize(&PointFrame::new(0.0, pts), 256).unwrap();
        assert_eq!(b.occupancy(), 400);
        let frac = b.occupancy() as f64 / 65_536.0;
        assert!((frac * 100.0 - 0.6).abs() < 0.05, "{frac}");
    }

    #[test]
    fn pgm_round_trip() {
        let f = PointFrame::new(0.0, vec![[0.1, 0.9], [0.5, 0.5]]);
        let b = rasterize(&f, 256).unwrap();
        let bytes = b.to_pgm();
        assert!(bytes.starts_with(b"P5\n256 256\n255\n"));
        assert_eq!(bytes.len(), 15 + 65_536);
        assert_eq!(Bitmap::from_pgm(&bytes).unwrap(), b);
    }

    #[test]
    fn synth_is_deterministic() {
        let cfg = SynthConfig {
            frames: 200,
            ..Default::default()
        };
        assert_eq!(synth_generate(&cfg, 5).unwrap(), synth_generate(&cfg, 5).unwrap());
        assert_ne!(synth_generate(&cfg, 5).unwrap(), synth_generate(&cfg, 6).unwrap());
    }

    #[test]
    fn synth_respects_unit_bounds() {
        let cfg = SynthConfig {
            frames: 2_000,
            initial_units: 20,
            min_units: 20,
            max_units: 200,
            spawn_rate: 4.0,
            death_rate: 0.05,
            ..Default::default()
        };
        let fs = synth_generate(&cfg, 1).unwrap();
        assert!(fs.iter().all(|f| (20..=200).contains(&f.len())));
        let sizes: Vec<usize> = fs.iter().map(PointFrame::len).collect();
        assert!(sizes.iter().min() != sizes.iter().max(), "N should vary");
        for (i, f) in fs.iter().enumerate() {
            f.validate(i).unwrap();
            assert!((f.t - i as f64 * 0.2).abs() < 1e-9);
        }
    }

    #[test]
    fn synth_fixed_point_without_motion() {
        let cfg = SynthConfig {
            frames: 30,
            speed: 0.0,
            jitter: 0.0,
            spawn_rate: 0.0,
            death_rate: 0.0,
            ..Default::default()
        };
        let fs = synth_generate(&cfg, 2).unwrap();
        assert!(fs.iter().all(|f| f.points == fs[0].points));
    }

    #[test]
    fn synth_rejects_bad_config() {
        let cfg = SynthConfig {
            speed: -1.0,
            ..Default::default()
        };
        assert!(synth_generate(&cfg, 0).is_err());
        let cfg = SynthConfig {
            min_units: 0,
            ..Default::default()
        };
        assert!(synth_generate(&cfg, 0).is_err());
    }
}
