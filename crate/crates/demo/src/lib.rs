//! WebAssembly bindings for the browser demo in `www/`.

mod scenes;

pub use scenes::{alignment_curve, debias_cloud, subspace_overlap, CLOUD_POINTS, LAYER_FRACTIONS};

use wasm_bindgen::prelude::*;

fn js(e: ortholens::Error) -> JsError {
    JsError::new(&format!("{}: {e}", e.code()))
}

#[wasm_bindgen(js_name = alignmentCurve)]
pub fn alignment_curve_js(seed: u32, drop_k: usize) -> Result<Vec<f64>, JsError> {
    alignment_curve(seed.into(), drop_k).map_err(js)
}

#[wasm_bindgen(js_name = debiasCloud)]
pub fn debias_cloud_js(seed: u32, k: usize) -> Result<Vec<f64>, JsError> {
    debias_cloud(seed.into(), k).map_err(js)
}

#[wasm_bindgen(js_name = subspaceOverlap)]
pub fn subspace_overlap_js(seed: u32, top: usize, angle: f64) -> Result<Vec<f64>, JsError> {
    subspace_overlap(seed.into(), top, angle).map_err(js)
}
