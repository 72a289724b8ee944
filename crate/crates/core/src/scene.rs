//! Synthetic scene graphs: 2D raster scenes with 6 uniquely colored objects,
//! graph-only multi-attribute scenes, and derived spatial relations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::img::RGBImage;

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("placement failed after {retries} retries (seed {seed})")]
    PlacementFailed { seed: u64, retries: usize },
    #[error("rendering is only supported for raster scenes")]
    RenderUnsupported,
    #[error("spatial relations need at least 2 objects, got {0}")]
    TooFewObjects(usize),
}

pub const IMAGE_SIZE: usize = 64;
pub const OBJECT_RADIUS: i32 = 5;
pub const MIN_GAP: i32 = 2;
pub const SORT_OF_CLEVR_OBJECTS: usize = 6;

/// Background gray used by the rasterizer.
pub const BACKGROUND: [u8; 3] = [200, 200, 200];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneMode {
    SortOfClevr,
    ClevrLite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Circle,
    Rectangle,
    Cube,
    Sphere,
    Cylinder,
}

impl Shape {
    pub fn word(&self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Rectangle => "rectangle",
            Shape::Cube => "cube",
            Shape::Sphere => "sphere",
            Shape::Cylinder => "cylinder",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
    Gray,
}

pub const PALETTE: [Color; 6] = [
    Color::Red,
    Color::Green,
    Color::Blue,
    Color::Yellow,
    Color::Orange,
    Color::Gray,
];

impl Color {
    pub fn word(&self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::Orange => "orange",
            Color::Gray => "gray",
        }
    }

    pub fn rgb(&self) -> [u8; 3] {
        match self {
            Color::Red => [220, 40, 40],
            Color::Green => [40, 170, 70],
            Color::Blue => [50, 80, 220],
            Color::Yellow => [230, 220, 50],
            Color::Orange => [250, 150, 30],
            Color::Gray => [90, 90, 90],
        }
    }

    pub fn index(&self) -> usize {
        PALETTE.iter().position(|c| c == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub fn word(&self) -> &'static str {
        match self {
            Size::Small => "small",
            Size::Large => "large",
        }
    }

    pub fn radius(&self) -> i32 {
        match self {
            Size::Small => 4,
            Size::Large => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Material {
    Metal,
    Matte,
}

impl Material {
    pub fn word(&self) -> &'static str {
        match self {
            Material::Metal => "metal",
            Material::Matte => "matte",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub shape: Shape,
    pub color: Color,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub size: Option<Size>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub material: Option<Material>,
    pub center: (i32, i32),
    pub radius: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: u64,
    pub mode: SceneMode,
    pub image_size: usize,
    pub objects: Vec<SceneObject>,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_by_color(&self, color: Color) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.color == color)
    }
}

#[derive(Debug, Clone)]
pub struct GenConfig {
    pub max_retries: usize,
    pub clevr_min_objects: usize,
    pub clevr_max_objects: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            max_retries: 2000,
            clevr_min_objects: 4,
            clevr_max_objects: 10,
        }
    }
}

/// Sample a placement avoiding the image midline (so left/right and
/// top/bottom answers are never ambiguous), coordinates already used by
/// placed objects (directional relations stay strict), and: when `gap` is
/// given: centers closer than the two radii plus the gap.
fn place(
    rng: &mut ChaCha8Rng,
    placed: &[(i32, i32)],
    radii: &[i32],
    radius: i32,
    gap: Option<i32>,
    max_retries: usize,
) -> Option<(i32, i32)> {
    let lo = radius;
    let hi = (IMAGE_SIZE as i32 - 1) - radius;
    let mid = IMAGE_SIZE as i32 / 2;
    'retry: for _ in 0..max_retries {
        let x = rng.gen_range(lo..=hi);
        let y = rng.gen_range(lo..=hi);
        if x == mid || y == mid {
            continue;
        }
        for (k, &(px, py)) in placed.iter().enumerate() {
            if px == x || py == y {
                continue 'retry;
            }
            if let Some(g) = gap {
                let d2 = (px - x).pow(2) + (py - y).pow(2);
                let need = radii[k] + radius + g;
                if d2 < need * need {
                    continue 'retry;
                }
            }
        }
        return Some((x, y));
    }
    None
}

/// Deterministically generate a scene from a seed.
pub fn generate_scene(seed: u64, mode: SceneMode, config: &GenConfig) -> Result<Scene, SceneError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects = Vec::new();
    let mut placed: Vec<(i32, i32)> = Vec::new();
    let mut radii: Vec<i32> = Vec::new();

    match mode {
        SceneMode::SortOfClevr => {
            for (i, color) in PALETTE.iter().enumerate() {
                let shape = if rng.gen_bool(0.5) {
                    Shape::Circle
                } else {
                    Shape::Rectangle
                };
                let radius = OBJECT_RADIUS;
                let center = place(
                    &mut rng,
                    &placed,
                    &radii,
                    radius,
                    Some(MIN_GAP),
                    config.max_retries,
                )
                .ok_or(SceneError::PlacementFailed {
                    seed,
                    retries: config.max_retries,
                })?;
                placed.push(center);
                radii.push(radius);
                objects.push(SceneObject {
                    id: format!("o{i}"),
                    shape,
                    color: *color,
                    size: None,
                    material: None,
                    center,
                    radius,
                });
            }
        }
        SceneMode::ClevrLite => {
            let n = rng.gen_range(config.clevr_min_objects..=config.clevr_max_objects);
            for i in 0..n {
                let shape = match rng.gen_range(0..3) {
                    0 => Shape::Cube,
                    1 => Shape::Sphere,
                    _ => Shape::Cylinder,
                };
                let color = PALETTE[rng.gen_range(0..PALETTE.len())];
                let size = if rng.gen_bool(0.5) {
                    Size::Small
                } else {
                    Size::Large
                };
                let material = if rng.gen_bool(0.5) {
                    Material::Metal
                } else {
                    Material::Matte
                };
                let radius = size.radius();
                // graph-only mode: objects only need distinct coordinates
                let center = place(&mut rng, &placed, &radii, radius, None, config.max_retries)
                    .ok_or(SceneError::PlacementFailed {
                        seed,
                        retries: config.max_retries,
                    })?;
                placed.push(center);
                radii.push(radius);
                objects.push(SceneObject {
                    id: format!("o{i}"),
                    shape,
                    color,
                    size: Some(size),
                    material: Some(material),
                    center,
                    radius,
                });
            }
        }
    }

    Ok(Scene {
        scene_id: seed,
        mode,
        image_size: IMAGE_SIZE,
        objects,
    })
}

/// Rasterize a scene: gray background, filled circles and axis-aligned
/// squares in the object color.
pub fn render(scene: &Scene) -> Result<RGBImage, SceneError> {
    if scene.mode != SceneMode::SortOfClevr {
        return Err(SceneError::RenderUnsupported);
    }
    let n = scene.image_size;
    let mut img = RGBImage::filled(n, n, BACKGROUND);
    for obj in &scene.objects {
        let (cx, cy) = obj.center;
        let r = obj.radius;
        let rgb = obj.color.rgb();
        for y in (cy - r).max(0)..=(cy + r).min(n as i32 - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(n as i32 - 1) {
                let inside = match obj.shape {
                    Shape::Circle => (x - cx).pow(2) + (y - cy).pow(2) <= r * r,
                    _ => true, // the bounding box is the square
                };
                if inside {
                    img.set(x as usize, y as usize, rgb);
                }
            }
        }
    }
    Ok(img)
}

/// Pairwise directional relations plus distance-ranked neighbor lists.
#[derive(Debug, Clone)]
pub struct RelationTable {
    ids: Vec<String>,
    xs: Vec<i32>,
    ys: Vec<i32>,
    /// `by_distance[i]` lists the other object indices nearest first.
    by_distance: Vec<Vec<usize>>,
}

impl RelationTable {
    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    fn idx(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn left_of(&self, a: &str, b: &str) -> bool {
        match (self.idx(a), self.idx(b)) {
            (Some(i), Some(j)) => self.xs[i] < self.xs[j],
            _ => false,
        }
    }

    pub fn right_of(&self, a: &str, b: &str) -> bool {
        self.left_of(b, a)
    }

    pub fn above(&self, a: &str, b: &str) -> bool {
        match (self.idx(a), self.idx(b)) {
            (Some(i), Some(j)) => self.ys[i] < self.ys[j],
            _ => false,
        }
    }

    pub fn below(&self, a: &str, b: &str) -> bool {
        self.above(b, a)
    }

    /// Nearest other object id.
    pub fn nearest(&self, id: &str) -> &str {
        let i = self.idx(id).expect("unknown object id");
        &self.ids[self.by_distance[i][0]]
    }

    /// Furthest other object id.
    pub fn furthest(&self, id: &str) -> &str {
        let i = self.idx(id).expect("unknown object id");
        &self.ids[*self.by_distance[i].last().unwrap()]
    }

    pub fn neighbors_by_distance(&self, id: &str) -> Vec<&str> {
        let i = self.idx(id).expect("unknown object id");
        self.by_distance[i]
            .iter()
            .map(|&j| self.ids[j].as_str())
            .collect()
    }
}

pub fn spatial_relations(scene: &Scene) -> Result<RelationTable, SceneError> {
    if scene.objects.len() < 2 {
        return Err(SceneError::TooFewObjects(scene.objects.len()));
    }
    let ids: Vec<String> = scene.objects.iter().map(|o| o.id.clone()).collect();
    let xs: Vec<i32> = scene.objects.iter().map(|o| o.center.0).collect();
    let ys: Vec<i32> = scene.objects.iter().map(|o| o.center.1).collect();
    let n = ids.len();
    let mut by_distance = Vec::with_capacity(n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by_key(|&j| {
            let d2 = (xs[i] - xs[j]).pow(2) + (ys[i] - ys[j]).pow(2);
            (d2, j) // ties broken by object index (equivalently id order)
        });
        by_distance.push(others);
    }
    Ok(RelationTable {
        ids,
        xs,
        ys,
        by_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let cfg = GenConfig::default();
        let a = generate_scene(42, SceneMode::SortOfClevr, &cfg).unwrap();
        let b = generate_scene(42, SceneMode::SortOfClevr, &cfg).unwrap();
        assert_eq!(a, b);
        let ja = serde_json::to_string(&a).unwrap();
        let jb = serde_json::to_string(&b).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn sort_of_clevr_has_six_distinct_colors() {
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let s = generate_scene(seed, SceneMode::SortOfClevr, &cfg).unwrap();
            assert_eq!(s.objects.len(), SORT_OF_CLEVR_OBJECTS);
            let mut colors: Vec<Color> = s.objects.iter().map(|o| o.color).collect();
            colors.sort_by_key(|c| c.index());
            colors.dedup();
            assert_eq!(colors.len(), 6);
        }
    }

    #[test]
    fn pairwise_gaps_hold() {
        let cfg = GenConfig::default();
        for seed in 0..100 {
            let s = generate_scene(seed, SceneMode::SortOfClevr, &cfg).unwrap();
            for i in 0..s.objects.len() {
                for j in (i + 1)..s.objects.len() {
                    let a = &s.objects[i];
                    let b = &s.objects[j];
                    let d2 = (a.center.0 - b.center.0).pow(2) + (a.center.1 - b.center.1).pow(2);
                    let need = a.radius + b.radius + MIN_GAP;
                    assert!(
                        d2 >= need * need,
                        "seed {seed}: objects {i},{j} too close (d2={d2})"
                    );
                }
            }
        }
    }

    #[test]
    fn centers_respect_margin() {
        let cfg = GenConfig::default();
        for seed in 0..50 {
            for mode in [SceneMode::SortOfClevr, SceneMode::ClevrLite] {
                let s = generate_scene(seed, mode, &cfg).unwrap();
                for o in &s.objects {
                    assert!(o.center.0 >= o.radius);
                    assert!(o.center.0 <= IMAGE_SIZE as i32 - 1 - o.radius);
                    assert!(o.center.1 >= o.radius);
                    assert!(o.center.1 <= IMAGE_SIZE as i32 - 1 - o.radius);
                }
            }
        }
    }

    #[test]
    fn clevr_lite_object_counts() {
        let cfg = GenConfig::default();
        for seed in 0..50 {
            let s = generate_scene(seed, SceneMode::ClevrLite, &cfg).unwrap();
            assert!(s.objects.len() >= cfg.clevr_min_objects);
            assert!(s.objects.len() <= cfg.clevr_max_objects);
            for o in &s.objects {
                assert!(o.size.is_some());
                assert!(o.material.is_some());
            }
        }
    }

    #[test]
    fn render_rejects_graph_only_scenes() {
        let cfg = GenConfig::default();
        let s = generate_scene(1, SceneMode::ClevrLite, &cfg).unwrap();
        assert_eq!(render(&s), Err(SceneError::RenderUnsupported));
    }

    #[test]
    fn render_empty_scene_is_background() {
        let s = Scene {
            scene_id: 0,
            mode: SceneMode::SortOfClevr,
            image_size: IMAGE_SIZE,
            objects: vec![],
        };
        let img = render(&s).unwrap();
        assert!(img
            .pixels
            .chunks(3)
            .all(|p| p == BACKGROUND));
    }

    #[test]
    fn render_single_circle_center_pixel() {
        let s = Scene {
            scene_id: 0,
            mode: SceneMode::SortOfClevr,
            image_size: IMAGE_SIZE,
            objects: vec![SceneObject {
                id: "o0".into(),
                shape: Shape::Circle,
                color: Color::Red,
                size: None,
                material: None,
                center: (32, 32),
                radius: 5,
            }],
        };
        let img = render(&s).unwrap();
        assert_eq!(img.get(32, 32), Color::Red.rgb());
        // corner of the bounding box is outside the circle
        assert_eq!(img.get(27, 27), BACKGROUND);
        // a rectangle would fill it
        let mut s2 = s.clone();
        s2.objects[0].shape = Shape::Rectangle;
        let img2 = render(&s2).unwrap();
        assert_eq!(img2.get(27, 27), Color::Red.rgb());
    }

    fn three_object_fixture() -> Scene {
        Scene {
            scene_id: 0,
            mode: SceneMode::SortOfClevr,
            image_size: IMAGE_SIZE,
            objects: vec![
                SceneObject {
                    id: "a".into(),
                    shape: Shape::Circle,
                    color: Color::Red,
                    size: None,
                    material: None,
                    center: (10, 20),
                    radius: 5,
                },
                SceneObject {
                    id: "b".into(),
                    shape: Shape::Rectangle,
                    color: Color::Green,
                    size: None,
                    material: None,
                    center: (50, 22),
                    radius: 5,
                },
                SceneObject {
                    id: "c".into(),
                    shape: Shape::Circle,
                    color: Color::Blue,
                    size: None,
                    material: None,
                    center: (12, 55),
                    radius: 5,
                },
            ],
        }
    }

    #[test]
    fn directional_relations_and_antisymmetry() {
        let t = spatial_relations(&three_object_fixture()).unwrap();
        assert!(t.left_of("a", "b"));
        assert!(t.right_of("b", "a"));
        assert!(!t.left_of("b", "a"));
        assert!(t.above("a", "c"));
        assert!(t.below("c", "a"));
    }

    #[test]
    fn equal_coordinates_yield_no_relation() {
        let mut s = three_object_fixture();
        s.objects[1].center = (10, 40); // same x as "a"
        let t = spatial_relations(&s).unwrap();
        assert!(!t.left_of("a", "b"));
        assert!(!t.right_of("a", "b"));
    }

    #[test]
    fn neighbor_ranking_matches_brute_force() {
        let t = spatial_relations(&three_object_fixture()).unwrap();
        // d(a,b)^2 = 40^2 + 2^2 = 1604; d(a,c)^2 = 2^2 + 35^2 = 1229
        assert_eq!(t.nearest("a"), "c");
        assert_eq!(t.furthest("a"), "b");
        assert_eq!(t.neighbors_by_distance("a"), vec!["c", "b"]);
    }

    #[test]
    fn relation_properties_over_random_scenes() {
        let cfg = GenConfig::default();
        for seed in 0..1000 {
            let mode = if seed % 2 == 0 {
                SceneMode::SortOfClevr
            } else {
                SceneMode::ClevrLite
            };
            let s = generate_scene(seed, mode, &cfg).unwrap();
            let t = spatial_relations(&s).unwrap();
            for a in &s.objects {
                for b in &s.objects {
                    if a.id == b.id {
                        continue;
                    }
                    assert_eq!(t.left_of(&a.id, &b.id), t.right_of(&b.id, &a.id));
                    assert_eq!(t.above(&a.id, &b.id), t.below(&b.id, &a.id));
                    // distinct coordinates by construction: exactly one holds
                    assert!(t.left_of(&a.id, &b.id) ^ t.left_of(&b.id, &a.id));
                    assert!(t.above(&a.id, &b.id) ^ t.above(&b.id, &a.id));
                }
            }
        }
    }

    #[test]
    fn too_few_objects_rejected() {
        let mut s = three_object_fixture();
        s.objects.truncate(1);
        assert_eq!(
            spatial_relations(&s).unwrap_err(),
            SceneError::TooFewObjects(1)
        );
    }
}
