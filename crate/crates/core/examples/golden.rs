use sha2::{Digest, Sha256};
use spatial_psl_core::nn::extract_object_features;
use spatial_psl_core::scene::{generate_scene, render, GenConfig, SceneMode, PALETTE};

fn main() {
    let scene = generate_scene(42, SceneMode::SortOfClevr, &GenConfig::default()).unwrap();
    println!("scene 42: {:?}", scene.objects.iter().map(|o| (o.id.clone(), o.shape, o.color, o.center)).collect::<Vec<_>>());
    let img = render(&scene).unwrap();
    // sanity: every palette color appears, background dominates
    for c in PALETTE {
        let rgb = c.rgb();
        assert!(img.pixels.chunks(3).any(|p| p == rgb), "{c:?} missing");
    }
    let bg = img.pixels.chunks(3).filter(|p| *p == [200, 200, 200]).count();
    println!("background fraction: {:.3}", bg as f64 / 4096.0);
    let mut h = Sha256::new();
    h.update(img.to_ppm());
    println!("ppm sha256: {}", hex(&h.finalize()));
    let feats = extract_object_features(&img, 8, None).unwrap();
    println!("cell (0,0): {:?}", feats[0]);
    // find a cell overlapping the first object
    let o = &scene.objects[0];
    let cell = (o.center.1 as usize / 8) * 8 + (o.center.0 as usize / 8);
    println!("cell {} (contains o0): {:?}", cell, feats[cell]);
    let sum: f64 = feats.iter().flat_map(|f| f.iter()).sum();
    println!("feature sum: {sum:.12}");
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
