//! Deterministic fixtures shared by the benchmarks in `benches/`.

use dq_core::embed::{mock_provider, EmbeddingStore, Modality};
use dq_core::image::ImageBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform-noise grayscale image.
pub fn noise_image(width: u32, height: u32, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width as usize * height as usize).map(|_| rng.random::<u8>()).collect();
    ImageBuffer::gray(width, height, data).expect("sizes match")
}

/// Store with `n` records (`r00000`, ...) carrying image and text vectors.
/// Every fifth record's image vector is a copy of its predecessor's, so
/// dedup has work to do.
pub fn mock_store(n: usize, dim: usize, seed: u64) -> (EmbeddingStore, Vec<String>) {
    let ids: Vec<String> = (0..n).map(|i| format!("r{i:05}")).collect();
    let mut store = EmbeddingStore::new(dim);
    for (i, id) in ids.iter().enumerate() {
        let src = if i % 5 == 4 { &ids[i - 1] } else { id };
        store.insert_vector(&relabel(mock_provider(src, Modality::Image, dim, seed), id)).expect("dims match");
        store.insert_vector(&mock_provider(id, Modality::Text, dim, seed)).expect("dims match");
    }
    (store, ids)
}

fn relabel(mut v: dq_core::embed::EmbeddingVector, id: &str) -> dq_core::embed::EmbeddingVector {
    v.record_id = id.to_string();
    v
}

/// Whitespace-separated captions of `words` tokens drawn from a small vocabulary.
pub fn captions(n: usize, words: usize, seed: u64) -> Vec<String> {
    const VOCAB: &[&str] = &["城市", "夜景", "灯光", "街道", "建筑", "山脉", "湖泊", "森林", "天空", "云朵", "的", "是"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..words).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" "))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(noise_image(16, 9, 3), noise_image(16, 9, 3));
        assert_ne!(noise_image(16, 9, 3), noise_image(16, 9, 4));
        assert_eq!(captions(4, 6, 1), captions(4, 6, 1));
        assert_eq!(captions(1, 6, 1)[0].split(' ').count(), 6);
    }
}
