use super::dataset::{DownstreamDataset, PreparedDataset};
use super::FusionError;
use crate::numerics::Real;
use crate::v2lc::{extract_lc_features, Utterance, V2LCModel, Vocab};

/// Extracts synthetic live-comment features once per sample from its media
/// block with a frozen V2LC model.
pub fn attach_lc_features<T: Real>(
    prepared: &mut PreparedDataset<T>,
    dataset: &DownstreamDataset,
    model: &V2LCModel<T>,
    vocab: &Vocab,
) -> Result<(), FusionError> {
    if prepared.samples.len() != dataset.samples.len() {
        return Err(FusionError::BadDataset("prepared and raw datasets differ in length".into()));
    }
    for (p, raw) in prepared.samples.iter_mut().zip(&dataset.samples) {
        let media = raw.media.as_ref().ok_or_else(|| FusionError::MissingMedia(raw.id.clone()))?;
        let utterance = Utterance { transcript: media.transcript.clone(), frames: media.frames.clone() };
        p.lc = Some(extract_lc_features(model, vocab, &utterance)?);
    }
    prepared.dims.lc_dim = Some(model.config.d_model);
    Ok(())
}
