use crate::bindings::Ports;
use crate::config::FilterConfig;
use crate::error::{Error, Result};
use crate::record::{Manifest, ReasonCode, Record};
use crate::stage::{run_records, with_workers, Outcome, RecordStage, StageAbort, StageOutput};

use super::{
    check_entropy, check_flat, check_geometry, check_sharpness, score_image_safety, to_grayscale, Geometry,
    LoadError,
};

pub const IMAGE_STAGE: &str = "visual_diversify";
const LABEL: &str = "Visual Diversification";

/// Visual diversification substeps in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageStep {
    /// Decoding plus aspect ratio and minimum edge.
    Geometry,
    Flat,
    LowTextual,
    /// Laplacian variance; images under 3x3 are rejected here too.
    Blurry,
    Entropy,
    Safety,
}

impl ImageStep {
    pub const ALL: [ImageStep; 6] = [
        ImageStep::Geometry,
        ImageStep::Flat,
        ImageStep::LowTextual,
        ImageStep::Blurry,
        ImageStep::Entropy,
        ImageStep::Safety,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ImageStep::Geometry => "Visual Fidelity (Geometry)",
            ImageStep::Flat => "Visual Fidelity (Flat)",
            ImageStep::LowTextual => "Visual Fidelity (Low-textual images)",
            ImageStep::Blurry => "Visual Fidelity (Blurry images)",
            ImageStep::Entropy => "Information Density",
            ImageStep::Safety => "Content Safety",
        }
    }
}

pub struct ImageStage<'a> {
    cfg: &'a FilterConfig,
    ports: &'a Ports,
}

impl<'a> ImageStage<'a> {
    pub fn new(cfg: &'a FilterConfig, ports: &'a Ports) -> Self {
        Self { cfg, ports }
    }

    fn geometry(&self) -> Geometry {
        Geometry {
            min_ratio: self.cfg.min_aspect_ratio,
            max_ratio: self.cfg.max_aspect_ratio,
            min_edge: self.cfg.min_edge,
        }
    }
}

impl RecordStage for ImageStage<'_> {
    fn name(&self) -> &'static str {
        IMAGE_STAGE
    }

    fn substeps(&self) -> Vec<(&'static str, &'static str)> {
        ImageStep::ALL.iter().map(|s| (LABEL, s.label())).collect()
    }

    fn process(&self, rec: &Record) -> Result<Outcome> {
        let (cfg, ports) = (self.cfg, self.ports);
        let reject = |step: ImageStep, reason| Outcome::reject(IMAGE_STAGE, rec.clone(), step as usize, reason);
        let img = match ports.decoder.load(&rec.image_ref) {
            Ok(img) => img,
            Err(LoadError::Decode(m)) => {
                log::debug!("{}: {m}", rec.id);
                return reject(ImageStep::Geometry, ReasonCode::DecodeFailure);
            }
            Err(e @ LoadError::Systemic(_)) => return Err(Error::from(e)),
        };
        let gray = to_grayscale(&img);
        let port = |e: crate::error::PortFailure| e.for_record(&rec.id);
        for step in ImageStep::ALL {
            let v = match step {
                ImageStep::Geometry => check_geometry(img.width(), img.height(), self.geometry()),
                ImageStep::Flat => check_flat(&gray, cfg.min_pixel_std),
                ImageStep::LowTextual => {
                    crate::text::apply_ceiling(
                        ports.low_textual.score(&rec.id, &rec.image_ref, &img),
                        cfg.low_textual_ceiling,
                        cfg.strict_ports,
                        ReasonCode::LowTextual,
                    )
                    .map_err(port)?
                    .1
                }
                ImageStep::Blurry => check_sharpness(&gray, cfg.min_laplacian_var),
                ImageStep::Entropy => check_entropy(&gray, cfg.min_image_entropy),
                ImageStep::Safety => {
                    score_image_safety(
                        &rec.id,
                        &rec.image_ref,
                        &img,
                        ports.image_safety.as_ref(),
                        cfg.image_safety_ceiling,
                        cfg.strict_ports,
                    )
                    .map_err(port)?
                    .1
                }
            };
            if let Some(reason) = v.reason {
                return reject(step, reason);
            }
        }
        Outcome::keep(IMAGE_STAGE, rec.clone())
    }
}

/// Runs visual diversification over a manifest on `cfg.workers` threads.
pub fn run_image_stage(m: &Manifest, cfg: &FilterConfig, ports: &Ports) -> Result<(Manifest, StageOutput), StageAbort> {
    let stage = ImageStage::new(cfg, ports);
    let out = with_workers(cfg.workers, || run_records(&stage, &m.records))??;
    let survivors = Manifest::new(m.batch_id, out.kept.clone())?;
    Ok((survivors, out))
}
