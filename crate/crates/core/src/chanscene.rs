//! Deterministic position-to-channel mapping and labeled dataset generation.
//!
//! Multipath is produced with the image-source method: the user position is
//! mirrored across each reflecting plane (first order) and the first-order
//! images across every other plane (second order). Every path contributes
//! `(g / d)·exp(−j·2π·f·d / c₀)` to each antenna/subcarrier, where `g` is the
//! product of reflection coefficients along the path and `d` the image to
//! antenna distance.

use num_complex::Complex64;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkernel::{CMat, CVec};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

// stream used for per-dataset draws (antenna subset); samples use streams 0..L
const DATASET_STREAM: u64 = u64::MAX;

pub type Point3 = [f64; 3];

fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot3(d, d).sqrt()
}

/// Infinite reflecting plane through `point` with unit `normal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reflector {
    pub point: Point3,
    pub normal: Point3,
    pub coefficient: f64,
}

impl Reflector {
    pub fn new(point: Point3, normal: Point3, coefficient: f64) -> Result<Self> {
        let n = dot3(normal, normal).sqrt();
        if !(n > 0.0) {
            return Err(Error::InvalidArgument("reflector normal must be nonzero".into()));
        }
        if !(-1.0..=1.0).contains(&coefficient) {
            return Err(Error::InvalidArgument(format!(
                "reflection coefficient {coefficient} outside [-1, 1]"
            )));
        }
        Ok(Self {
            point,
            normal: [normal[0] / n, normal[1] / n, normal[2] / n],
            coefficient,
        })
    }

    pub fn mirror(&self, p: Point3) -> Point3 {
        let off = 2.0 * dot3(sub(p, self.point), self.normal);
        [
            p[0] - off * self.normal[0],
            p[1] - off * self.normal[1],
            p[2] - off * self.normal[2],
        ]
    }
}

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Point3,
    pub max: Point3,
}

impl Bounds {
    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    /// Room (or outdoor bounding box) spans `[0, x] × [0, y] × [0, z]`.
    pub room_extent: Point3,
    pub bs_antenna_positions: Vec<Point3>,
    pub reflectors: Vec<Reflector>,
    pub max_paths: usize,
    pub carrier_uplink_hz: f64,
    pub carrier_downlink_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
    /// Region users are sampled from; must lie inside the room.
    pub user_region: Bounds,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserPosition(pub Point3);

impl Scene {
    /// 10 m × 10 m × 3 m room with a `grid.0 × grid.1` antenna grid on the
    /// ceiling, reflecting floor and four walls. Users stand at 1.5 m inside
    /// `user_area` (x/y rectangle).
    pub fn indoor(grid: (usize, usize), n_subcarriers: usize, user_area: ([f64; 2], [f64; 2]), seed: u64) -> Result<Self> {
        let extent = [10.0, 10.0, 3.0];
        let mut antennas = Vec::with_capacity(grid.0 * grid.1);
        for i in 0..grid.0 {
            for j in 0..grid.1 {
                antennas.push([
                    (i as f64 + 0.5) * extent[0] / grid.0 as f64,
                    (j as f64 + 0.5) * extent[1] / grid.1 as f64,
                    extent[2],
                ]);
            }
        }
        let reflectors = vec![
            Reflector::new([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], -0.7)?,
            Reflector::new([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], -0.5)?,
            Reflector::new([extent[0], 0.0, 0.0], [-1.0, 0.0, 0.0], -0.5)?,
            Reflector::new([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], -0.5)?,
            Reflector::new([0.0, extent[1], 0.0], [0.0, -1.0, 0.0], -0.5)?,
        ];
        let scene = Self {
            room_extent: extent,
            bs_antenna_positions: antennas,
            reflectors,
            max_paths: 5,
            carrier_uplink_hz: 2.4e9,
            carrier_downlink_hz: 2.5e9,
            subcarrier_spacing_hz: 1.25e6,
            n_subcarriers,
            user_region: Bounds {
                min: [user_area.0[0], user_area.0[1], 1.5],
                max: [user_area.1[0], user_area.1[1], 1.5],
            },
            seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Outdoor-like scene: `side × side` m area, a colocated
    /// `grid.0 × grid.1` half-wavelength planar array on a mast at the middle
    /// of the west edge, and `n_scatterers` vertical planes placed from
    /// `layout_seed`.
    pub fn outdoor(
        side: f64,
        grid: (usize, usize),
        n_subcarriers: usize,
        n_scatterers: usize,
        layout_seed: u64,
        seed: u64,
    ) -> Result<Self> {
        let carrier = 1.27e9;
        let extent = [side, side, 40.0];
        let half_lambda = SPEED_OF_LIGHT / carrier / 2.0;
        let mast = [0.0, side / 2.0, 25.0];
        let mut antennas = Vec::with_capacity(grid.0 * grid.1);
        for i in 0..grid.0 {
            for j in 0..grid.1 {
                antennas.push([
                    mast[0],
                    mast[1] + (i as f64 - (grid.0 as f64 - 1.0) / 2.0) * half_lambda,
                    mast[2] + (j as f64 - (grid.1 as f64 - 1.0) / 2.0) * half_lambda,
                ]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let mut reflectors = vec![Reflector::new([0.0, 0.0, 0.0], [0.0, 0.0, 1.0], -0.6)?];
        for _ in 0..n_scatterers {
            let point = [rng.gen_range(0.0..side), rng.gen_range(0.0..side), 0.0];
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
            let coefficient = rng.gen_range(-0.8..0.8);
            reflectors.push(Reflector::new(point, [angle.cos(), angle.sin(), 0.0], coefficient)?);
        }
        let scene = Self {
            room_extent: extent,
            bs_antenna_positions: antennas,
            reflectors,
            max_paths: 8,
            carrier_uplink_hz: carrier,
            carrier_downlink_hz: carrier,
            subcarrier_spacing_hz: 0.3125e6,
            n_subcarriers,
            user_region: Bounds {
                min: [0.1 * side, 0.0, 1.5],
                max: [side, side, 1.5],
            },
            seed,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let room = Bounds { min: [0.0; 3], max: self.room_extent };
        if self.room_extent.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::InvalidArgument("room extent must be positive".into()));
        }
        if self.bs_antenna_positions.is_empty() {
            return Err(Error::InvalidArgument("scene needs at least one antenna".into()));
        }
        if let Some(p) = self.bs_antenna_positions.iter().find(|p| !room.contains(**p)) {
            return Err(Error::InvalidArgument(format!("antenna {p:?} outside the room")));
        }
        if self.max_paths == 0 || self.n_subcarriers == 0 {
            return Err(Error::InvalidArgument("max_paths and n_subcarriers must be >= 1".into()));
        }
        if !(room.contains(self.user_region.min) && room.contains(self.user_region.max)) {
            return Err(Error::InvalidArgument("user region must lie inside the room".into()));
        }
        if (0..3).any(|i| self.user_region.min[i] > self.user_region.max[i]) {
            return Err(Error::InvalidArgument("user region min exceeds max".into()));
        }
        for r in &self.reflectors {
            Reflector::new(r.point, r.normal, r.coefficient)?;
        }
        Ok(())
    }

    pub fn n_antennas(&self) -> usize {
        self.bs_antenna_positions.len()
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds { min: [0.0; 3], max: self.room_extent }
    }

    pub fn subcarrier_frequency(&self, carrier_hz: f64, s: usize) -> f64 {
        carrier_hz + (s as f64 - (self.n_subcarriers as f64 - 1.0) / 2.0) * self.subcarrier_spacing_hz
    }

    /// Image sources (position, gain) for `pos`, strongest first, at most
    /// `max_paths`. Strength is `|g| / d` measured at the array centroid.
    pub fn paths(&self, pos: Point3) -> Vec<(Point3, f64)> {
        let mut images = vec![(pos, 1.0)];
        for (a, ra) in self.reflectors.iter().enumerate() {
            let first = ra.mirror(pos);
            images.push((first, ra.coefficient));
            for (b, rb) in self.reflectors.iter().enumerate() {
                if a != b {
                    images.push((rb.mirror(first), ra.coefficient * rb.coefficient));
                }
            }
        }
        images.retain(|(_, g)| *g != 0.0);

        let n = self.n_antennas() as f64;
        let centroid = self.bs_antenna_positions.iter().fold([0.0; 3], |acc, p| {
            [acc[0] + p[0] / n, acc[1] + p[1] / n, acc[2] + p[2] / n]
        });
        let mut ranked: Vec<(f64, usize)> = images
            .iter()
            .enumerate()
            .map(|(i, (p, g))| (g.abs() / dist(*p, centroid), i))
            .collect();
        // stable on ties: lower generation index first
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        ranked.truncate(self.max_paths);
        ranked.into_iter().map(|(_, i)| images[i]).collect()
    }
}

/// Channel on `n_antennas × n_subcarriers`, antenna-major
/// (`index = n·S + s`).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelVector {
    values: CVec,
    n_antennas: usize,
    n_subcarriers: usize,
}

impl ChannelVector {
    pub fn new(values: CVec, n_antennas: usize, n_subcarriers: usize) -> Result<Self> {
        check_dim(n_antennas * n_subcarriers, values.len())?;
        Ok(Self { values, n_antennas, n_subcarriers })
    }

    pub fn values(&self) -> &CVec {
        &self.values
    }

    pub fn into_values(self) -> CVec {
        self.values
    }

    pub fn n_antennas(&self) -> usize {
        self.n_antennas
    }

    pub fn n_subcarriers(&self) -> usize {
        self.n_subcarriers
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, antenna: usize, subcarrier: usize) -> Complex64 {
        self.values[antenna * self.n_subcarriers + subcarrier]
    }

    /// Channel across antennas on one subcarrier.
    pub fn subcarrier(&self, s: usize) -> Vec<Complex64> {
        (0..self.n_antennas).map(|n| self.get(n, s)).collect()
    }

    /// `N × S` matrix view (row = antenna).
    pub fn to_matrix(&self) -> CMat {
        CMat::new(self.n_antennas, self.n_subcarriers, self.values.as_slice().to_vec())
            .expect("channel dimensions are consistent")
    }

    /// Re-stacks a `[re.., im..]` vector laid out like this channel.
    pub fn from_stacked(stacked: &[f64], n_antennas: usize, n_subcarriers: usize) -> Result<Self> {
        check_dim(2 * n_antennas * n_subcarriers, stacked.len())?;
        Self::new(CVec::from_stacked(stacked)?, n_antennas, n_subcarriers)
    }
}

/// Evaluates the multipath model at `pos` on the subcarrier grid centred on
/// `carrier_hz`.
pub fn synth_channel(scene: &Scene, pos: UserPosition, carrier_hz: f64) -> Result<ChannelVector> {
    let p = pos.0;
    if !scene.bounds().contains(p) {
        return Err(Error::OutOfBounds { x: p[0], y: p[1], z: p[2] });
    }
    let paths = scene.paths(p);
    let s_count = scene.n_subcarriers;
    let freqs: Vec<f64> = (0..s_count).map(|s| scene.subcarrier_frequency(carrier_hz, s)).collect();
    let mut values = Vec::with_capacity(scene.n_antennas() * s_count);
    for ant in &scene.bs_antenna_positions {
        let lengths: Vec<(f64, f64)> = paths.iter().map(|(img, g)| (dist(*img, *ant), *g)).collect();
        for &f in &freqs {
            let mut acc = Complex64::new(0.0, 0.0);
            for &(d, g) in &lengths {
                let phase = -2.0 * std::f64::consts::PI * f * d / SPEED_OF_LIGHT;
                acc += Complex64::from_polar(g / d, phase);
            }
            values.push(acc);
        }
    }
    ChannelVector::new(CVec::new(values)?, scene.n_antennas(), s_count)
}

/// Restricts `ch` to the listed antennas, keeping every subcarrier.
pub fn antenna_subset(ch: &ChannelVector, idx: &[usize]) -> Result<ChannelVector> {
    validate_subset(idx, ch.n_antennas)?;
    let s_count = ch.n_subcarriers;
    let values = idx
        .iter()
        .flat_map(|&n| (0..s_count).map(move |s| ch.get(n, s)))
        .collect();
    ChannelVector::new(CVec::new(values)?, idx.len(), s_count)
}

fn validate_subset(idx: &[usize], n_antennas: usize) -> Result<()> {
    if idx.is_empty() {
        return Err(Error::InvalidSubset("subset is empty".into()));
    }
    let mut seen = vec![false; n_antennas];
    for &i in idx {
        if i >= n_antennas {
            return Err(Error::InvalidSubset(format!("index {i} out of range 0..{n_antennas}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidSubset(format!("duplicate index {i}")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Positioning,
    ChannelMapping,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Positioning => "positioning",
            Task::ChannelMapping => "channel_mapping",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<ChannelVector>,
    pub targets: Vec<Vec<f64>>,
    pub task: Task,
    /// Antennas of the full array kept in `inputs`, if restricted.
    pub antenna_subset: Option<Vec<usize>>,
    pub split: Vec<Split>,
    /// Antenna count of the full array.
    pub n_antennas: usize,
    pub n_subcarriers: usize,
}

impl LabeledDataset {
    pub fn empty(task: Task, n_antennas: usize, n_subcarriers: usize) -> Self {
        Self {
            inputs: Vec::new(),
            targets: Vec::new(),
            task,
            antenna_subset: None,
            split: Vec::new(),
            n_antennas,
            n_subcarriers,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.first().map_or(0, Vec::len)
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, ChannelVector::len)
    }

    /// Checks count and shape consistency.
    pub fn validate(&self) -> Result<()> {
        check_dim(self.inputs.len(), self.targets.len())?;
        check_dim(self.inputs.len(), self.split.len())?;
        let t = self.target_dim();
        let i = self.input_dim();
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            check_dim(t, y.len())?;
            check_dim(i, x.len())?;
        }
        Ok(())
    }

    fn select(&self, keep: impl Fn(usize) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(i)).collect();
        Self {
            inputs: idx.iter().map(|&i| self.inputs[i].clone()).collect(),
            targets: idx.iter().map(|&i| self.targets[i].clone()).collect(),
            split: idx.iter().map(|&i| self.split[i]).collect(),
            ..Self::empty(self.task, self.n_antennas, self.n_subcarriers)
        }
        .with_subset(self.antenna_subset.clone())
    }

    fn with_subset(mut self, subset: Option<Vec<usize>>) -> Self {
        self.antenna_subset = subset;
        self
    }

    /// Marks the last `n` samples as validation.
    pub fn with_validation_tail(mut self, n: usize) -> Self {
        let len = self.len();
        for (i, s) in self.split.iter_mut().enumerate() {
            *s = if i + n >= len { Split::Validation } else { Split::Train };
        }
        self
    }

    pub fn train(&self) -> Self {
        self.select(|i| self.split[i] == Split::Train)
    }

    pub fn validation(&self) -> Self {
        self.select(|i| self.split[i] == Split::Validation)
    }

    /// First `n` samples (all of them when `n >= len`).
    pub fn prefix(&self, n: usize) -> Self {
        self.select(|i| i < n)
    }
}

/// Generates `count` samples of `task` from `scene.seed`.
///
/// Each sample draws from its own ChaCha stream (stream = sample index), so
/// sample `i` does not depend on how many samples are generated. For channel
/// mapping with `subset_size`, one antenna subset is drawn per dataset and
/// applied to every input.
pub fn generate_dataset(
    scene: &Scene,
    count: usize,
    task: Task,
    noise_std: f64,
    subset_size: Option<usize>,
) -> Result<LabeledDataset> {
    scene.validate()?;
    if !(noise_std >= 0.0) {
        return Err(Error::InvalidArgument("noise_std must be >= 0".into()));
    }
    let n_ant = scene.n_antennas();
    let subset = match (task, subset_size) {
        (Task::ChannelMapping, Some(m)) => {
            if m == 0 || m > n_ant {
                return Err(Error::InvalidSubset(format!(
                    "subset size {m} not in 1..={n_ant}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
            rng.set_stream(DATASET_STREAM);
            let mut idx = index::sample(&mut rng, n_ant, m).into_vec();
            idx.sort_unstable();
            Some(idx)
        }
        (Task::Positioning, Some(_)) => {
            return Err(Error::InvalidArgument("antenna subsets apply to channel mapping only".into()))
        }
        (_, None) => None,
    };

    let region = scene.user_region;
    let mut ds = LabeledDataset::empty(task, n_ant, scene.n_subcarriers).with_subset(subset.clone());
    for i in 0..count {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        rng.set_stream(i as u64);
        let mut p = [0.0; 3];
        for (a, coord) in p.iter_mut().enumerate() {
            let u: f64 = rng.gen();
            *coord = region.min[a] + u * (region.max[a] - region.min[a]);
        }
        let uplink = synth_channel(scene, UserPosition(p), scene.carrier_uplink_hz)?;
        let input = match &subset {
            Some(idx) => antenna_subset(&uplink, idx)?,
            None => uplink,
        };
        let input = if noise_std > 0.0 {
            let sd = noise_std / 2f64.sqrt();
            let noisy = input
                .values()
                .as_slice()
                .iter()
                .map(|z| {
                    let re: f64 = rng.sample(StandardNormal);
                    let im: f64 = rng.sample(StandardNormal);
                    z + Complex64::new(sd * re, sd * im)
                })
                .collect();
            ChannelVector::new(CVec::new(noisy)?, input.n_antennas(), input.n_subcarriers())?
        } else {
            input
        };
        let target = match task {
            Task::Positioning => p.to_vec(),
            Task::ChannelMapping => {
                synth_channel(scene, UserPosition(p), scene.carrier_downlink_hz)?
                    .values()
                    .to_stacked()
            }
        };
        ds.inputs.push(input);
        ds.targets.push(target);
        ds.split.push(Split::Train);
    }
    Ok(ds)
}
