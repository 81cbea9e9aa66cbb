//! The three networks: frozen binary classifier, encoder–decoder explainer and
//! spectrally normalised discriminator. Networks operate in the model range
//! `[−1, 1]`; stored images live in `[0, 1]`.

mod checkpoint;
mod classifier;
mod discriminator;
mod generator;
mod params;

use autograd::{Float, Tensor};

pub use checkpoint::{load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpointable, FORMAT_VERSION};
pub use classifier::{sigmoid, Classifier, ClassifierOutput, ClassifierSpec};
pub use discriminator::{Discriminator, DiscriminatorSpec};
pub use generator::{Generator, GeneratorSpec};
pub use params::ParamSet;

use crate::grid::Image;
use crate::{Error, Result};

/// Images per inference batch.
pub const INFERENCE_BATCH: usize = 32;

pub fn to_model_range(v: f64) -> f64 {
    2.0 * v - 1.0
}

pub fn from_model_range(v: f64) -> f64 {
    ((v + 1.0) * 0.5).clamp(0.0, 1.0)
}

/// Stack equally sized images into an `[N, 1, H, W]` tensor in model range.
pub fn batch_tensor<T: Float>(images: &[&Image]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| Error::Shape("empty image batch".into()))?;
    let (h, w) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        img.check_same((h, w))?;
        data.extend(img.data().iter().map(|&v| T::of(to_model_range(v))));
    }
    Ok(Tensor::new(&[images.len(), 1, h, w], data))
}

/// Split an `[N, 1, H, W]` model-range tensor back into `[0, 1]` images.
pub fn tensor_images<T: Float>(t: &Tensor<T>) -> Vec<Image> {
    let (n, c, h, w) = t.dims4();
    assert_eq!(c, 1, "single-channel tensor expected");
    t.data()
        .chunks(h * w)
        .take(n)
        .map(|px| Image::new(h, w, px.iter().map(|v| from_model_range(v.as_f64())).collect()).expect("sized"))
        .collect()
}

fn check_input_size(images: &[&Image], size: usize) -> Result<()> {
    for img in images {
        if img.dims() != (size, size) {
            return Err(Error::Shape(format!("image is {:?}, model expects {size}×{size}", img.dims())));
        }
    }
    Ok(())
}
