//! Cross-correlates a template over a search map, fuses two responses and
//! upsamples the result.
use ndarray::Array3;
use siampf::correlation::{fuse, upsample_response, xcorr, FusionConfig};
use siampf::FeatureMap;

fn main() -> siampf::Result<()> {
    let mut search = Array3::<f64>::zeros((2, 9, 9));
    search[[0, 5, 3]] = 1.0;
    search[[1, 5, 3]] = 1.0;
    search[[1, 2, 6]] = 0.8;
    let template = FeatureMap::new(Array3::from_elem((2, 1, 1), 1.0))?;
    let r_v = xcorr(&template, &FeatureMap::new(search.clone())?, 0.0)?;
    let mut only_second = search;
    only_second.index_axis_mut(ndarray::Axis(0), 0).fill(0.0);
    let r_a = xcorr(&template, &FeatureMap::new(only_second)?, 0.1)?;
    let fused = fuse(&r_v, &r_a, &FusionConfig::default())?;
    println!("r_v peak {:?}  r_a peak {:?}  fused peak {:?}", r_v.argmax(), r_a.argmax(), fused.argmax());
    let up = upsample_response(&fused, 72)?;
    let (r, c, v) = up.argmax();
    println!("upsampled to {}x{}: peak ({r},{c}) = {v:.3}", up.height(), up.width());
    Ok(())
}
