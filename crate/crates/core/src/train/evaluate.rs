use crate::error::{Error, Result};
use crate::image::{load_image, DatasetManifest};
use crate::loss::{psnr, ssim_value};
use crate::net::{ForwardOptions, Model};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Derains one `3 x H x W` image in eval mode; the result is clamped to [0, 1].
pub fn derain(model: &Model, store: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let input = image.clone().unsqueeze0();
    let out = model.predict(store, &input, ForwardOptions::default())?;
    out.prediction.map(|v| v.clamp(0.0, 1.0)).index0(0)
}

/// Metrics for one manifest entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub path: String,
    pub psnr_in: f64,
    pub psnr_out: f64,
    pub ssim_in: f64,
    pub ssim_out: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Column means, labelled `mean`.
    pub mean: EvalRow,
}

fn fmt(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Config(format!("cannot format report: {e}"));
        w.write_record(["path", "psnr_in", "psnr_out", "ssim_in", "ssim_out"])
            .map_err(err)?;
        for r in self.rows.iter().chain(std::iter::once(&self.mean)) {
            w.write_record([
                r.path.clone(),
                fmt(r.psnr_in),
                fmt(r.psnr_out),
                fmt(r.ssim_in),
                fmt(r.ssim_out),
            ])
            .map_err(err)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Config(format!("cannot format report: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// One-line summary using the same number formatting as the CSV.
    pub fn summary(&self) -> String {
        let m = &self.mean;
        format!(
            "mean psnr_in {} psnr_out {} ssim_in {} ssim_out {}",
            fmt(m.psnr_in),
            fmt(m.psnr_out),
            fmt(m.ssim_in),
            fmt(m.ssim_out)
        )
    }
}

/// Input and output PSNR/SSIM against the clean image for every entry.
pub fn evaluate(
    model: &Model,
    store: &ParamStore<f32>,
    manifest: &DatasetManifest,
) -> Result<EvalReport> {
    if manifest.is_empty() {
        return Err(Error::Config("manifest has no entries".into()));
    }
    manifest.check_files()?;
    let mut rows = Vec::with_capacity(manifest.len());
    for (rainy_path, clean_path) in &manifest.entries {
        let rainy: Tensor<f32> = load_image(rainy_path)?;
        let clean: Tensor<f32> = load_image(clean_path)?;
        if rainy.shape() != clean.shape() {
            return Err(Error::Image {
                path: rainy_path.clone(),
                message: format!(
                    "size {:?} differs from clean image {:?}",
                    rainy.shape(),
                    clean.shape()
                ),
            });
        }
        let out = derain(model, store, &rainy)?;
        rows.push(EvalRow {
            path: rainy_path.display().to_string(),
            psnr_in: psnr(&rainy, &clean, 1.0)?,
            psnr_out: psnr(&out, &clean, 1.0)?,
            ssim_in: ssim_value(&rainy, &clean)?,
            ssim_out: ssim_value(&out, &clean)?,
        });
    }
    let n = rows.len() as f64;
    let mean_of = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = EvalRow {
        path: "mean".into(),
        psnr_in: mean_of(|r| r.psnr_in),
        psnr_out: mean_of(|r| r.psnr_out),
        ssim_in: mean_of(|r| r.ssim_in),
        ssim_out: mean_of(|r| r.ssim_out),
    };
    Ok(EvalReport { rows, mean })
}
