use std::collections::BTreeMap;

use fcdlif_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::FrameSchedule;

/// Physical unit of voxel or curve values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    /// Standardized uptake value, g/ml.
    Suv,
    MbqPerMl,
    /// Raw arterial-line detector signal.
    Detector,
}

impl Units {
    pub fn tag(self) -> &'static str {
        match self {
            Units::Suv => "SUV_g_per_ml",
            Units::MbqPerMl => "MBq_per_ml",
            Units::Detector => "detector",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "SUV_g_per_ml" => Some(Units::Suv),
            "MBq_per_ml" => Some(Units::MbqPerMl),
            "detector" => Some(Units::Detector),
            _ => None,
        }
    }
}

/// Dynamic PET volume stored `[T, X, Y, Z]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicPetImage {
    spatial: [usize; 3],
    pub voxel_mm: [f32; 3],
    schedule: FrameSchedule,
    pub units: Units,
    pub metadata: BTreeMap<String, String>,
    data: Vec<f32>,
}

impl DynamicPetImage {
    pub fn new(spatial: [usize; 3], voxel_mm: [f32; 3], schedule: FrameSchedule, data: Vec<f32>) -> Result<Self> {
        if spatial.contains(&0) {
            return Err(Error::Config(format!("empty spatial extent {spatial:?}")));
        }
        let expected = schedule.len() * spatial.iter().product::<usize>();
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                left: expected,
                right: data.len(),
            });
        }
        Ok(Self {
            spatial,
            voxel_mm,
            schedule,
            units: Units::Suv,
            metadata: BTreeMap::new(),
            data,
        })
    }

    pub fn frames(&self) -> usize {
        self.schedule.len()
    }

    pub fn spatial(&self) -> [usize; 3] {
        self.spatial
    }

    pub fn voxels(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn schedule(&self) -> &FrameSchedule {
        &self.schedule
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let v = self.voxels();
        &self.data[t * v..(t + 1) * v]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let v = self.voxels();
        &mut self.data[t * v..(t + 1) * v]
    }

    /// Time-activity curve of one voxel (flat spatial index).
    pub fn voxel_tac(&self, voxel: usize) -> Vec<f64> {
        let v = self.voxels();
        (0..self.frames()).map(|t| self.data[t * v + voxel] as f64).collect()
    }

    /// Same image with different voxel values.
    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        let mut out = Self::new(self.spatial, self.voxel_mm, self.schedule.clone(), data)?;
        out.units = self.units;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Keeps frames `range`.
    pub fn select_frames(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let schedule = self.schedule.slice(range.clone())?;
        let v = self.voxels();
        let data = self.data[range.start * v..range.end * v].to_vec();
        let mut out = Self::new(self.spatial, self.voxel_mm, schedule, data)?;
        out.units = self.units;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Prepends a copy of the first frame, lasting `duration` seconds.
    pub fn prepend_first_frame(&self, duration: f64) -> Result<Self> {
        let schedule = self.schedule.with_leading_frame(duration)?;
        let mut data = self.frame(0).to_vec();
        data.extend_from_slice(&self.data);
        let mut out = Self::new(self.spatial, self.voxel_mm, schedule, data)?;
        out.units = self.units;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    /// Frames as a batch of single-channel volumes `[T, 1, X, Y, Z]`.
    pub fn to_batch_tensor(&self) -> Tensor {
        let [x, y, z] = self.spatial;
        Tensor::new(vec![self.frames(), 1, x, y, z], self.data.clone()).expect("image data matches its shape")
    }
}

/// Arterial concentration per frame, measured (AIF) or predicted (DLIF).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFunction {
    pub mid_times_s: Vec<f64>,
    pub values: Vec<f64>,
}

impl InputFunction {
    pub fn new(mid_times_s: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if mid_times_s.len() != values.len() {
            return Err(Error::LengthMismatch {
                left: mid_times_s.len(),
                right: values.len(),
            });
        }
        Ok(Self { mid_times_s, values })
    }

    pub fn on_schedule(schedule: &FrameSchedule, values: Vec<f64>) -> Result<Self> {
        Self::new(schedule.mid_times(), values)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            mid_times_s: self.mid_times_s[range.clone()].to_vec(),
            values: self.values[range].to_vec(),
        }
    }
}
