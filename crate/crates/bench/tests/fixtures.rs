use dq_bench::{mock_store, noise_image};
use dq_core::dedup::find_duplicate_pairs;
use dq_core::embed::Modality;
use dq_core::image::{check_sharpness, image_entropy};

#[test]
fn noise_images_pass_the_image_filters() {
    let img = noise_image(256, 256, 1);
    assert!(image_entropy(&img) > 7.9);
    assert!(check_sharpness(&img, 1000.0).reason.is_none());
}

#[test]
fn mock_store_plants_one_duplicate_per_five() {
    let (store, ids) = mock_store(50, 16, 9);
    assert_eq!(store.len(), 100);
    assert!(ids.iter().all(|id| store.contains(id, Modality::Text)));
    let pairs = find_duplicate_pairs(&store, &ids, 0.1).unwrap();
    assert_eq!(pairs.len(), 10);
    assert!(pairs.iter().all(|(a, b)| b[1..].parse::<usize>().unwrap() - a[1..].parse::<usize>().unwrap() == 1));
}
