//! Mini-batch training with per-sample tapes and a stale-read memory bank.

use std::io::Write;

use log::{debug, info};
use serde::{Deserialize, Serialize};

use cycleacr_core::head::MemoryBank;
use cycleacr_core::model::Model;
use cycleacr_core::optim::Sgd;
use cycleacr_core::{Real, Rng, Tensor};

use crate::config::RunConfig;
use crate::data::{Clip, Dataset};
use crate::eval::{evaluate, EvalReport};
use crate::io::Checkpoint;
use crate::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub lr: Real,
    pub loss: Real,
    pub val_map: Option<Real>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<Real> {
        self.rows.last().map(|r| r.loss)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| HarnessError::Io {
            path: "train log".into(),
            source: e,
        })?;
        Ok(())
    }
}

pub struct Trained {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    pub last_eval: Option<EvalReport>,
}

/// One forward/backward over a clip. Gradients are added into the model's
/// store scaled by `scale`; returns the clip loss and its relation output.
fn accumulate(model: &mut Model, clip: &Clip, bank: Option<&Tensor>, rng: Rng, scale: Real) -> Result<Option<(Real, Tensor)>> {
    let (loss, grads, enhanced) = {
        let mut s = model.session(rng, true);
        let out = model.forward(&mut s, &clip.pooled, bank)?;
        let Some(loss) = model.loss(&mut s, &out, &clip.labels)? else {
            return Ok(None);
        };
        let grads = s.tape.backward(loss)?;
        let enhanced = s.tape.value(out.enhanced.expect("actors present")).clone();
        (s.tape.value(loss).data()[0], grads, enhanced)
    };
    grads.accumulate_into(&mut model.store, scale);
    Ok(Some((loss, enhanced)))
}

/// Train from scratch on `train`, optionally validating on `val`.
pub fn train(cfg: &RunConfig, train: &Dataset, val: Option<&Dataset>) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(HarnessError::Data("training set is empty".into()));
    }
    if train.num_classes != cfg.model.num_classes {
        return Err(HarnessError::Config(format!(
            "data has {} classes, model {}",
            train.num_classes, cfg.model.num_classes
        )));
    }
    let root = Rng::new(cfg.seed);
    let mut model = Model::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = Sgd::new(cfg.optim.clone());
    let mut bank = MemoryBank::new(model.channels());
    let mut order_rng = root.fork(1);
    let mut order: Vec<usize> = Vec::new();
    let mut log = TrainLog::default();
    let mut last_eval = None;

    for step in 0..cfg.max_steps {
        let mut batch_loss = 0.0;
        for j in 0..cfg.batch_size {
            if order.is_empty() {
                order = (0..train.len()).collect();
                order_rng.shuffle(&mut order);
            }
            let clip = &train.clips[order.pop().expect("refilled above")];
            let neighbours = cfg.model.use_bank.then(|| bank.query_tensor(&clip.video_id, clip.clip_time_s));
            let drop_rng = root.fork(1000 + (step * cfg.batch_size + j) as u64);
            let scale = 1.0 / cfg.batch_size as Real;
            match accumulate(&mut model, clip, neighbours.as_ref(), drop_rng, scale) {
                Ok(Some((loss, enhanced))) => {
                    batch_loss += loss * scale;
                    if cfg.model.use_bank {
                        bank.update(&clip.video_id, clip.clip_time_s, &enhanced, &clip.pooled.actor_ids())?;
                    }
                }
                Ok(None) => {}
                Err(HarnessError::Core(cycleacr_core::Error::NonFinite(what))) => {
                    return Err(HarnessError::Diverged {
                        step,
                        detail: format!("non-finite value in {what} on clip {} @ {}s", clip.video_id, clip.clip_time_s),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        if !batch_loss.is_finite() {
            return Err(HarnessError::Diverged {
                step,
                detail: format!("loss is {batch_loss}"),
            });
        }
        let lr = opt.step(&mut model.store);
        let mut row = LogRow {
            step,
            lr,
            loss: batch_loss,
            val_map: None,
        };
        if let Some(val) = val {
            if cfg.eval_every > 0 && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.max_steps) {
                let report = evaluate(&model, val, cfg.confidence_threshold)?;
                info!("step {step}: loss {batch_loss:.5} val mAP {:.4}", report.map);
                row.val_map = Some(report.map);
                last_eval = Some(report);
            }
        }
        debug!("step {step}: lr {lr:.5} loss {batch_loss:.6}");
        log.rows.push(row);
    }
    Ok(Trained {
        checkpoint: Checkpoint {
            config: cfg.clone(),
            model,
            bank,
        },
        log,
        last_eval,
    })
}
