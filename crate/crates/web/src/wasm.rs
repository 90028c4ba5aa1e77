use wasm_bindgen::prelude::*;

use crate::{colormap, label_color, Demo};

fn js(e: fieldfuse::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Explorer {
    demo: Demo,
}

#[wasm_bindgen]
impl Explorer {
    #[wasm_bindgen(constructor)]
    pub fn new(points: usize, views: usize, seed: u64) -> Result<Explorer, JsError> {
        Ok(Self {
            demo: Demo::new(points, views, seed).map_err(js)?,
        })
    }

    #[wasm_bindgen(js_name = numPoints)]
    pub fn num_points(&self) -> usize {
        self.demo.num_points()
    }

    #[wasm_bindgen(js_name = classNames)]
    pub fn class_names(&self) -> Vec<String> {
        self.demo.class_names().to_vec()
    }

    pub fn positions(&self) -> Vec<f32> {
        self.demo.positions()
    }

    pub fn seen(&self) -> usize {
        self.demo.seen()
    }

    pub fn accuracy(&self) -> Result<f64, JsError> {
        self.demo.accuracy().map_err(js)
    }

    /// RGB triple per point for a text query.
    pub fn query(&self, text: &str) -> Result<Vec<u8>, JsError> {
        let scores = self.demo.query(text).map_err(js)?;
        Ok(scores.into_iter().flat_map(colormap).collect())
    }

    /// RGB triple per point for a label list.
    pub fn segment(&self, labels: &str, engineer: bool) -> Result<Vec<u8>, JsError> {
        let labels = self.demo.segment(labels, engineer).map_err(js)?;
        Ok(labels.into_iter().flat_map(label_color).collect())
    }

    pub fn refuse(&mut self, sigma: f64, pool: &str) -> Result<(), JsError> {
        self.demo.refuse(sigma, pool).map_err(js)
    }
}

#[wasm_bindgen(js_name = labelColor)]
pub fn label_color_js(label: u16) -> Vec<u8> {
    label_color(label).to_vec()
}
