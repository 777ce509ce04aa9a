//! WebAssembly front end: generate toy marginals, train an adversarial
//! interpolant a few steps at a time and inspect its curves and per-time EMD.
//!
//! Every exported method has a `try_` twin returning `Result<_, String>` so the
//! logic runs and is tested natively.

use ali_core::ali_train::{AliTrainConfig, AliTrainer};
use ali_core::coupling::{minibatch_ot, Batch};
use ali_core::data::{gen_gaussian_sequence, gen_knot, KnotSpec, MarginalDataset};
use ali_core::eval::{emd, GroundCost};
use ali_core::interpolants::TimeEmbedding;
use wasm_bindgen::prelude::*;

const BENT_PATH: [[f64; 2]; 5] = [[0.0, 0.0], [1.0, 1.0], [2.0, 1.5], [3.0, 1.0], [4.0, 0.0]];

fn dataset(kind: &str, seed: u64, noise: f64) -> Result<MarginalDataset, String> {
    let ds = match kind {
        "gaussian" => {
            let means: Vec<Vec<f64>> = BENT_PATH.iter().map(|m| m.to_vec()).collect();
            gen_gaussian_sequence(&means, noise, 64, seed)
        }
        "knot" => gen_knot(&KnotSpec { k: 48, samples: 16, sigma: noise, seed }),
        other => return Err(format!("unknown dataset {other:?} (expected gaussian or knot)")),
    };
    ds.map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub struct Session {
    data: MarginalDataset,
    trainer: AliTrainer,
}

impl Session {
    pub fn try_new(kind: &str, seed: u64, noise: f64) -> Result<Session, String> {
        let data = dataset(kind, seed, noise)?;
        let cfg = AliTrainConfig {
            batch_size: 64,
            lr_gen: 1e-3,
            lr_disc: 1e-3,
            gen_hidden: vec![32, 32],
            disc_hidden: vec![32, 32],
            time_embedding: TimeEmbedding::new(if kind == "knot" { 3 } else { 0 }),
            seed,
            ..AliTrainConfig::default()
        };
        let trainer = AliTrainer::new(cfg, &data).map_err(|e| e.to_string())?;
        Ok(Session { data, trainer })
    }

    /// Mean generator loss over `steps` adversarial updates.
    pub fn try_train(&mut self, steps: u32) -> Result<f64, String> {
        let mut total = 0.0;
        for _ in 0..steps {
            total += self.trainer.step(&self.data).map_err(|e| e.to_string())?.loss_gen;
        }
        Ok(total / steps.max(1) as f64)
    }

    /// OT-paired endpoint samples, `(x0, x1)`.
    fn pairs(&self, n: usize) -> Result<(ali_core::Tensor, ali_core::Tensor), String> {
        let (a, b) = (self.data.batch(0), self.data.batch(self.data.len() - 1));
        let m = n.min(a.len()).min(b.len());
        let idx: Vec<usize> = (0..m).collect();
        let (a, b) = (a.select(&idx), b.select(&idx));
        Ok(minibatch_ot(&a, &b).map_err(|e| e.to_string())?.gather(&a, &b))
    }

    /// `pairs` curves of `samples` points each, flattened as `x, y` rows.
    pub fn try_curves(&self, pairs: usize, samples: usize) -> Result<Vec<f64>, String> {
        if samples < 2 {
            return Err("a curve needs at least two samples".into());
        }
        let (x0, x1) = self.pairs(pairs)?;
        let mut out = vec![0.0; x0.rows() * samples * 2];
        for s in 0..samples {
            let t = s as f64 / (samples - 1) as f64;
            let g = self.trainer.gen.eval(&x0, &x1, &vec![t; x0.rows()]).map_err(|e| e.to_string())?;
            for r in 0..x0.rows() {
                let at = (r * samples + s) * 2;
                out[at..at + 2].copy_from_slice(g.row(r));
            }
        }
        Ok(out)
    }

    /// `t, emd` for every intermediate marginal against the interpolant's
    /// pushforward of OT-paired endpoints.
    pub fn try_emd_table(&self) -> Result<Vec<f64>, String> {
        let (x0, x1) = self.pairs(usize::MAX)?;
        let mut out = Vec::new();
        for k in 1..self.data.len() - 1 {
            let t = self.data.times()[k];
            let g = self.trainer.gen.eval(&x0, &x1, &vec![t; x0.rows()]).map_err(|e| e.to_string())?;
            let g = Batch::new(g).map_err(|e| e.to_string())?;
            out.push(t);
            out.push(emd(&g, self.data.batch(k), GroundCost::Euclidean).map_err(|e| e.to_string())?);
        }
        Ok(out)
    }
}

#[wasm_bindgen]
impl Session {
    #[wasm_bindgen(constructor)]
    pub fn new(kind: &str, seed: u64, noise: f64) -> Result<Session, JsError> {
        Session::try_new(kind, seed, noise).map_err(|e| JsError::new(&e))
    }

    /// Every sample as `t, x, y` rows.
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.total_samples() * 3);
        for (t, b) in self.data.iter() {
            for row in b.points().iter_rows() {
                out.push(t);
                out.extend_from_slice(row);
            }
        }
        out
    }

    pub fn iteration(&self) -> u64 {
        self.trainer.iteration()
    }

    pub fn train(&mut self, steps: u32) -> Result<f64, JsError> {
        self.try_train(steps).map_err(|e| JsError::new(&e))
    }

    pub fn curves(&self, pairs: usize, samples: usize) -> Result<Vec<f64>, JsError> {
        self.try_curves(pairs, samples).map_err(|e| JsError::new(&e))
    }

    #[wasm_bindgen(js_name = emdTable)]
    pub fn emd_table(&self) -> Result<Vec<f64>, JsError> {
        self.try_emd_table().map_err(|e| JsError::new(&e))
    }
}
