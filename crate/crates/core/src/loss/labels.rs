use crate::error::{Error, Result};

/// Integer class ids per voxel, shape `[N, D, H, W]`; class 0 is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVolume {
    dims: [usize; 4],
    data: Vec<u32>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 4], data: Vec<u32>, num_classes: usize) -> Result<Self> {
        if dims.contains(&0) || dims.iter().product::<usize>() != data.len() {
            return Err(Error::shape("labels", format!("{} labels for dims {dims:?}", data.len())));
        }
        if let Some(bad) = data.iter().find(|&&c| c as usize >= num_classes) {
            return Err(Error::invalid("labels", format!("class {bad} outside [0, {num_classes})")));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.dims[1], self.dims[2], self.dims[3]]
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    /// Labels of batch item `n`.
    pub fn case(&self, n: usize) -> &[u32] {
        let v = self.dims[1] * self.dims[2] * self.dims[3];
        &self.data[n * v..(n + 1) * v]
    }

    /// Nearest-neighbour subsampling by an integer factor per axis: coarse
    /// voxel `i` takes the label of fine voxel `i * f`.
    pub fn downsample(&self, factor: [usize; 3]) -> Result<Self> {
        let [n, d, h, w] = self.dims;
        if (0..3).any(|a| factor[a] == 0 || self.spatial()[a] % factor[a] != 0) {
            return Err(Error::shape("labels", format!("{:?} not divisible by {factor:?}", self.spatial())));
        }
        let (cd, ch, cw) = (d / factor[0], h / factor[1], w / factor[2]);
        let mut data = Vec::with_capacity(n * cd * ch * cw);
        for ni in 0..n {
            for z in 0..cd {
                for y in 0..ch {
                    let row = ((ni * d + z * factor[0]) * h + y * factor[1]) * w;
                    data.extend((0..cw).map(|x| self.data[row + x * factor[2]]));
                }
            }
        }
        Ok(Self {
            dims: [n, cd, ch, cw],
            data,
        })
    }
}
