//! Predictor-call trace recording and replay.
//!
//! Format: header `SGTR`, u32 version, u64 config digest, then a record per
//! predictor call: `[u32 step, u32 tile_index, u32 timestep, SGTN input
//! tile, SGTN output tile, f64 cost_units]` until end of file. Integers and
//! floats are little-endian. Full-canvas (untiled) calls use the sentinel
//! tile index `u32::MAX`.
//!
//! Records are keyed by `(step, tile)`; the recorder buffers concurrent
//! appends in an ordered map so the file layout is independent of worker
//! scheduling. Replay serves each request from the matching record and
//! reproduces the recorded cost stamps; a missing record, a timestep or
//! dimension mismatch, or a truncated file is a replay error naming the
//! step and tile.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;
use std::sync::Mutex;

use crate::canvas::{read_sgtn, write_sgtn, LatentCanvas};
use crate::error::{Error, Result};
use crate::predictor::{NoisePredictor, PredictRequest, Prediction};

const TRACE_MAGIC: &[u8; 4] = b"SGTR";
const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub step: u32,
    pub tile_index: u32,
    pub timestep: u32,
    pub input: LatentCanvas,
    pub output: LatentCanvas,
    pub cost_units: f64,
}

/// Shared sink collecting records from one or more wrapped backends.
#[derive(Default)]
pub struct TraceSink {
    records: Mutex<BTreeMap<(u32, u32), TraceRecord>>,
}

impl TraceSink {
    pub fn new() -> Arc<TraceSink> {
        Arc::new(TraceSink::default())
    }

    fn push(&self, rec: TraceRecord) {
        self.records
            .lock()
            .expect("trace sink poisoned")
            .insert((rec.step, rec.tile_index), rec);
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("trace sink poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Write the trace, records ordered by `(step, tile)`.
    pub fn write_to(&self, config_digest: u64, mut w: impl Write) -> Result<()> {
        w.write_all(TRACE_MAGIC)?;
        w.write_all(&TRACE_VERSION.to_le_bytes())?;
        w.write_all(&config_digest.to_le_bytes())?;
        let records = self.records.lock().expect("trace sink poisoned");
        for rec in records.values() {
            w.write_all(&rec.step.to_le_bytes())?;
            w.write_all(&rec.tile_index.to_le_bytes())?;
            w.write_all(&rec.timestep.to_le_bytes())?;
            write_sgtn(&rec.input, &mut w)?;
            write_sgtn(&rec.output, &mut w)?;
            w.write_all(&rec.cost_units.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, config_digest: u64, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_to(config_digest, std::io::BufWriter::new(file))
    }
}

/// Backend wrapper that records every call into a [`TraceSink`].
pub struct RecordingPredictor {
    inner: Box<dyn NoisePredictor>,
    sink: Arc<TraceSink>,
}

impl RecordingPredictor {
    pub fn new(inner: Box<dyn NoisePredictor>, sink: Arc<TraceSink>) -> Self {
        RecordingPredictor { inner, sink }
    }
}

impl NoisePredictor for RecordingPredictor {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        let pred = self.inner.predict(req)?;
        self.sink.push(TraceRecord {
            step: req.tile_ref.step as u32,
            tile_index: req.tile_ref.index as u32,
            timestep: req.timestep as u32,
            input: req.tile_latent.clone(),
            output: pred.noise.clone(),
            cost_units: pred.cost_units,
        });
        Ok(pred)
    }

    fn cost_model(&self) -> crate::predictor::CostModel {
        self.inner.cost_model()
    }
}

/// A parsed trace: every record plus the header digest.
pub struct Trace {
    pub config_digest: u64,
    pub records: BTreeMap<(u32, u32), TraceRecord>,
}

impl Trace {
    pub fn read_from(mut r: impl Read) -> Result<Trace> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TRACE_MAGIC {
            return Err(Error::Replay {
                step: 0,
                tile: 0,
                msg: format!("not an SGTR trace (magic {magic:?})"),
            });
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf)?;
        let version = u32::from_le_bytes(u32buf);
        if version != TRACE_VERSION {
            return Err(Error::Replay {
                step: 0,
                tile: 0,
                msg: format!("unsupported trace version {version}"),
            });
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let config_digest = u64::from_le_bytes(u64buf);

        let mut records = BTreeMap::new();
        loop {
            // Records run to EOF; a partial header or body is truncation.
            match r.read_exact(&mut u32buf) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
                Err(e) => return Err(e.into()),
            }
            let step = u32::from_le_bytes(u32buf);
            let truncated = |what: &str, tile: u32| Error::Replay {
                step,
                tile,
                msg: format!("trace truncated while reading {what}"),
            };
            r.read_exact(&mut u32buf)
                .map_err(|_| truncated("tile index", 0))?;
            let tile_index = u32::from_le_bytes(u32buf);
            r.read_exact(&mut u32buf)
                .map_err(|_| truncated("timestep", tile_index))?;
            let timestep = u32::from_le_bytes(u32buf);
            let input = read_sgtn(&mut r).map_err(|_| truncated("input tile", tile_index))?;
            let output = read_sgtn(&mut r).map_err(|_| truncated("output tile", tile_index))?;
            r.read_exact(&mut u64buf)
                .map_err(|_| truncated("cost units", tile_index))?;
            let cost_units = f64::from_le_bytes(u64buf);
            records.insert(
                (step, tile_index),
                TraceRecord {
                    step,
                    tile_index,
                    timestep,
                    input,
                    output,
                    cost_units,
                },
            );
        }
        Ok(Trace {
            config_digest,
            records,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Trace> {
        let file = std::fs::File::open(path)?;
        Trace::read_from(std::io::BufReader::new(file))
    }
}

/// Backend serving predictions from a recorded trace.
pub struct ReplayPredictor {
    trace: Trace,
}

impl ReplayPredictor {
    pub fn new(trace: Trace) -> Self {
        ReplayPredictor { trace }
    }

    pub fn config_digest(&self) -> u64 {
        self.trace.config_digest
    }
}

impl NoisePredictor for ReplayPredictor {
    fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
        let step = req.tile_ref.step as u32;
        let tile = req.tile_ref.index as u32;
        let rec = self.trace.records.get(&(step, tile)).ok_or(Error::Replay {
            step,
            tile,
            msg: "no record for this step/tile".to_string(),
        })?;
        if rec.timestep as usize != req.timestep {
            return Err(Error::Replay {
                step,
                tile,
                msg: format!(
                    "timestep mismatch: trace has {}, request has {}",
                    rec.timestep, req.timestep
                ),
            });
        }
        if !rec.input.same_dims(req.tile_latent) {
            return Err(Error::Replay {
                step,
                tile,
                msg: format!(
                    "tile dims mismatch: trace has {:?}, request has {:?}",
                    rec.input.dims(),
                    req.tile_latent.dims()
                ),
            });
        }
        Ok(Prediction {
            noise: rec.output.clone(),
            cost_units: rec.cost_units,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::canvas::Space;
    use crate::predictor::CostModel;
    use crate::tiling::TileRef;

    struct ConstPredictor(f32);

    impl NoisePredictor for ConstPredictor {
        fn predict(&self, req: &PredictRequest<'_>) -> Result<Prediction> {
            Ok(Prediction {
                noise: req.tile_latent.map(|v| v + self.0),
                cost_units: 1.5,
            })
        }

        fn cost_model(&self) -> CostModel {
            CostModel {
                units_per_call: 1.5,
                stall_ms: 0,
            }
        }
    }

    fn req(tile: &LatentCanvas, step: usize, index: usize, t: usize) -> PredictRequest<'_> {
        PredictRequest {
            tile_latent: tile,
            timestep: t,
            tile_ref: TileRef {
                index,
                origin_y: 0,
                origin_x: 0,
                h: tile.height,
                w: tile.width,
                step,
            },
            conditioning_id: 0,
        }
    }

    #[test]
    fn record_then_replay_reproduces_outputs_and_costs() {
        let sink = TraceSink::new();
        let rec = RecordingPredictor::new(Box::new(ConstPredictor(0.5)), sink.clone());
        let tile = LatentCanvas::filled(1, 1, 2, 2, Space::Latent, 1.0);
        let mut outputs = Vec::new();
        for step in 0..3u32 {
            for index in 0..2u32 {
                let r = req(&tile, step as usize, index as usize, 90 - step as usize);
                outputs.push(rec.predict(&r).unwrap());
            }
        }
        assert_eq!(sink.len(), 6);

        let mut buf = Vec::new();
        sink.write_to(0xabcd, &mut buf).unwrap();
        let trace = Trace::read_from(buf.as_slice()).unwrap();
        assert_eq!(trace.config_digest, 0xabcd);
        let replay = ReplayPredictor::new(trace);
        for step in 0..3u32 {
            for index in 0..2u32 {
                let r = req(&tile, step as usize, index as usize, 90 - step as usize);
                let p = replay.predict(&r).unwrap();
                assert_eq!(p.noise.data(), outputs[0].noise.data());
                assert_eq!(p.cost_units, 1.5);
            }
        }
    }

    #[test]
    fn replay_missing_record_errors_with_location() {
        let sink = TraceSink::new();
        let mut buf = Vec::new();
        sink.write_to(1, &mut buf).unwrap();
        let replay = ReplayPredictor::new(Trace::read_from(buf.as_slice()).unwrap());
        let tile = LatentCanvas::zeros(1, 1, 2, 2, Space::Latent);
        let err = replay.predict(&req(&tile, 4, 7, 10)).unwrap_err();
        match err {
            Error::Replay { step, tile, .. } => {
                assert_eq!(step, 4);
                assert_eq!(tile, 7);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn replay_rejects_dim_and_timestep_mismatch() {
        let sink = TraceSink::new();
        let rec = RecordingPredictor::new(Box::new(ConstPredictor(0.0)), sink.clone());
        let tile = LatentCanvas::zeros(1, 1, 4, 4, Space::Latent);
        rec.predict(&req(&tile, 0, 0, 50)).unwrap();
        let mut buf = Vec::new();
        sink.write_to(2, &mut buf).unwrap();
        let replay = ReplayPredictor::new(Trace::read_from(buf.as_slice()).unwrap());

        // Different tile geometry (a different grid) is a replay error.
        let small = LatentCanvas::zeros(1, 1, 2, 2, Space::Latent);
        assert!(matches!(
            replay.predict(&req(&small, 0, 0, 50)),
            Err(Error::Replay { .. })
        ));
        // Different timestep is a replay error.
        assert!(matches!(
            replay.predict(&req(&tile, 0, 0, 49)),
            Err(Error::Replay { .. })
        ));
    }

    #[test]
    fn truncated_trace_is_a_replay_error() {
        let sink = TraceSink::new();
        let rec = RecordingPredictor::new(Box::new(ConstPredictor(0.0)), sink.clone());
        let tile = LatentCanvas::zeros(1, 1, 2, 2, Space::Latent);
        rec.predict(&req(&tile, 0, 0, 50)).unwrap();
        let mut buf = Vec::new();
        sink.write_to(3, &mut buf).unwrap();
        buf.truncate(buf.len() - 5);
        assert!(matches!(
            Trace::read_from(buf.as_slice()),
            Err(Error::Replay { .. })
        ));
    }
}
