//! Domain value types: images, identity vectors, feature maps and the
//! generative description of a synthetic face.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// An `H x W x 3` image with every entry in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    /// Interleaved RGB, row-major.
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(
                format!("{height}x{width}x3 = {} values", height * width * 3),
                format!("{} values", data.len()),
            ));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !(v.is_finite() && (-1.0..=1.0).contains(*v)))
        {
            return Err(Error::InvalidInput(format!(
                "image value {bad} outside [-1, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width * 3])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor<R: Real>(&self) -> Tensor<R> {
        let hw = self.height * self.width;
        let mut out = vec![R::zero(); 3 * hw];
        for (p, px) in self.data.chunks(3).enumerate() {
            for c in 0..3 {
                out[c * hw + p] = R::of(px[c] as f64);
            }
        }
        Tensor::from_vec(&[1, 3, self.height, self.width], out)
    }

    /// `[N, 3, H, W]` tensor of equally sized images.
    pub fn batch<R: Real>(images: &[&ImageTensor]) -> Result<Tensor<R>> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        if let Some(odd) = images
            .iter()
            .find(|i| (i.height, i.width) != (first.height, first.width))
        {
            return Err(Error::shape(
                format!("{}x{}", first.height, first.width),
                format!("{}x{}", odd.height, odd.width),
            ));
        }
        let parts: Vec<Tensor<R>> = images.iter().map(|i| i.to_tensor()).collect();
        Ok(Tensor::stack(&parts))
    }

    /// Splits a `[N, 3, H, W]` tensor into images. Values are clamped into
    /// `[-1, 1]` to absorb rounding at the edges of the range.
    pub fn unbatch<R: Real>(t: &Tensor<R>) -> Result<Vec<ImageTensor>> {
        let (n, c, h, w) = t.dims4();
        if c != 3 {
            return Err(Error::shape("3 channels", format!("{c} channels")));
        }
        let hw = h * w;
        (0..n)
            .map(|i| {
                let plane = &t.data()[i * 3 * hw..(i + 1) * 3 * hw];
                let mut data = Vec::with_capacity(3 * hw);
                for p in 0..hw {
                    for ch in 0..3 {
                        let v = plane[ch * hw + p].as_f64();
                        if !v.is_finite() {
                            return Err(Error::InvalidInput("non-finite image value".into()));
                        }
                        data.push(v.clamp(-1.0, 1.0) as f32);
                    }
                }
                ImageTensor::new(h, w, data)
            })
            .collect()
    }

    pub fn mean_abs_diff(&self, other: &ImageTensor) -> Result<f64> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(Error::shape(
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", other.height, other.width),
            ));
        }
        let total: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs() as f64)
            .sum();
        Ok(total / self.data.len() as f64)
    }
}

/// A unit-L2 identity embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct IdentityVector(Vec<f32>);

impl IdentityVector {
    /// Normalizes `v` to unit length; the zero vector is rejected.
    pub fn normalized(v: &[f64]) -> Result<Self> {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::InvalidInput(
                "identity vector has zero or non-finite norm".into(),
            ));
        }
        Ok(Self(v.iter().map(|x| (x / norm) as f32).collect()))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&x| (x as f64) * (x as f64))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine(&self, other: &IdentityVector) -> f64 {
        let dot: f64 = self
            .0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| a as f64 * b as f64)
            .sum();
        dot / (self.norm() * other.norm())
    }

    /// `[N, d]` tensor.
    pub fn batch<R: Real>(vs: &[&IdentityVector]) -> Tensor<R> {
        let d = vs.first().map_or(0, |v| v.dim());
        let data = vs
            .iter()
            .flat_map(|v| v.0.iter().map(|&x| R::of(x as f64)))
            .collect();
        Tensor::from_vec(&[vs.len(), d], data)
    }
}

/// A single-sample `C x H x W` feature tensor with finite entries.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap<R: Real = f32>(Tensor<R>);

impl<R: Real> FeatureMap<R> {
    pub fn new(t: Tensor<R>) -> Result<Self> {
        let t = match t.shape().len() {
            3 => t,
            4 if t.shape()[0] == 1 => {
                let s = t.shape()[1..].to_vec();
                t.reshape(&s)
            }
            _ => return Err(Error::shape("C x H x W", format!("{:?}", t.shape()))),
        };
        if !t.is_finite() {
            return Err(Error::InvalidInput(
                "feature map has non-finite entries".into(),
            ));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor<R> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<R> {
        self.0
    }

    /// `(C, H, W)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.0.shape();
        (s[0], s[1], s[2])
    }

    /// `[1, C, H, W]` view for the batched operators.
    pub fn batched(&self) -> Tensor<R> {
        let (c, h, w) = self.dims();
        self.0.clone().reshape(&[1, c, h, w])
    }
}

/// Identity-determined geometry and colouring of a synthetic face.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityParams {
    /// Head semi-axes as fractions of the image side.
    pub head_rx: f64,
    pub head_ry: f64,
    pub skin: [f64; 3],
    pub hair: [f64; 3],
    /// Fraction of the head height covered by hair from the top.
    pub hairline: f64,
    /// Horizontal eye offset from the face centre, fraction of `head_rx`.
    pub eye_spacing: f64,
    pub eye_size: f64,
    pub iris: [f64; 3],
    pub nose_length: f64,
    pub mouth_width: f64,
    pub brow_tilt: f64,
}

/// An image with its identity label.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImage {
    pub image: ImageTensor,
    pub identity: usize,
}

/// Generative parameters of one synthetic face: identity plus attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FaceSpec {
    pub identity_id: usize,
    pub identity_params: IdentityParams,
    /// Degrees in `[-45, 45]`.
    pub pose_yaw: f64,
    /// `[0, 1]`, neutral to smiling.
    pub expression: f64,
    /// `[0, 1]`, strength of the lateral light gradient.
    pub lighting: f64,
}

impl FaceSpec {
    /// Attributes scaled to `[0, 1]` each: yaw, expression, lighting.
    pub fn attributes(&self) -> [f64; 3] {
        [
            (self.pose_yaw + 45.0) / 90.0,
            self.expression,
            self.lighting,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_range_is_enforced() {
        assert!(ImageTensor::new(1, 1, vec![0.0, 1.0, -1.0]).is_ok());
        assert!(ImageTensor::new(1, 1, vec![0.0, 1.5, -1.0]).is_err());
        assert!(ImageTensor::new(1, 1, vec![0.0, f32::NAN, -1.0]).is_err());
        assert!(ImageTensor::new(2, 1, vec![0.0; 3]).is_err());
    }

    #[test]
    fn tensor_layout_round_trips() {
        let data: Vec<f32> = (0..2 * 3 * 3).map(|i| i as f32 / 18.0).collect();
        let img = ImageTensor::new(2, 3, data).unwrap();
        let t: Tensor<f32> = img.to_tensor();
        assert_eq!(t.shape(), &[1, 3, 2, 3]);
        // channel-major: red plane first
        assert_eq!(t.data()[1], img.pixel(0, 1)[0]);
        assert_eq!(ImageTensor::unbatch(&t).unwrap()[0], img);
    }

    #[test]
    fn identity_vectors_are_unit() {
        let v = IdentityVector::normalized(&[3.0, 4.0]).unwrap();
        assert!((v.norm() - 1.0).abs() < 1e-6);
        assert!(IdentityVector::normalized(&[0.0, 0.0]).is_err());
    }
}
