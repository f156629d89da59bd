//! Synthetic traffic clips with exact ground truth.
//!
//! Layout on the default 160×120 canvas, top to bottom: a right-bound lane,
//! a sidewalk, a central band where scripted collisions happen, a second
//! sidewalk and a left-bound lane. Lane traffic never overlaps; the only
//! overlapping boxes are collision pairs, which meet head-on at the planted
//! onset frame, stay frozen for the event and then vanish.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::category::Category;
use crate::data::annotations::{
    frame_path, write_video_annotations, AccidentEvent, Track, TrackEntry, VideoRecord,
};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
    /// Chance that a clip contains a scripted collision.
    pub collision_probability: f64,
    /// Inclusive range for the collision onset frame.
    pub onset_min: usize,
    pub onset_max: usize,
    /// Frames the colliding pair stays frozen after onset.
    pub event_duration: usize,
    /// Mean extra spacing between lane objects, in frames.
    pub traffic_gap: usize,
    /// Half-width of the uniform background noise.
    pub noise: u8,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 160,
            height: 120,
            frames: 260,
            fps: 10.0,
            collision_probability: 1.0,
            onset_min: 90,
            onset_max: 130,
            event_duration: 15,
            traffic_gap: 40,
            noise: 20,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 120 || self.height < 100 {
            return Err(Error::Config("synthetic canvas must be at least 120x100".into()));
        }
        if !(0.0..=1.0).contains(&self.collision_probability) {
            return Err(Error::Config("collision_probability must lie in [0, 1]".into()));
        }
        if self.onset_min > self.onset_max || self.onset_max + self.event_duration >= self.frames {
            return Err(Error::Config("collision onsets must fit inside the clip".into()));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config("fps must be positive".into()));
        }
        Ok(())
    }
}

pub fn category_size(c: Category) -> (usize, usize) {
    match c {
        Category::Person => (8, 16),
        Category::Car => (22, 12),
        Category::Bus => (36, 18),
        Category::TwoWheeler => (12, 10),
        Category::ThreeWheeler => (16, 12),
        Category::Others => (12, 12),
    }
}

pub fn category_color(c: Category) -> [u8; 3] {
    match c {
        Category::Person => [220, 60, 60],
        Category::Car => [50, 90, 220],
        Category::Bus => [230, 200, 40],
        Category::TwoWheeler => [60, 200, 80],
        Category::ThreeWheeler => [200, 80, 200],
        Category::Others => [60, 210, 210],
    }
}

/// A generated clip. Frames are rendered on demand from the seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub record: VideoRecord,
    pub seed: u64,
    pub noise: u8,
}

impl SyntheticVideo {
    pub fn frame(&self, index: usize) -> RgbImage {
        render_frame(&self.record, self.seed, self.noise, index)
    }

    /// Writes annotations, events and every frame as PNG under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_video_annotations(dir, &self.record)?;
        let frames = dir.join(crate::data::annotations::FRAMES_DIR);
        std::fs::create_dir_all(&frames).map_err(|e| Error::io(frames.display().to_string(), e))?;
        crate::par::map_range(self.record.frame_count, |i| {
            self.frame(i).save(frame_path(dir, i)).map_err(Error::from)
        })
        .into_iter()
        .collect()
    }
}

struct Mover {
    category: Category,
    y_center: usize,
    /// left edge at `t0`
    x0: i64,
    t0: i64,
    /// +1 or -1
    dir: i64,
    /// pixels moved per `period` frames
    period: i64,
}

impl Mover {
    fn bbox_at(&self, t: i64, width: usize) -> Option<BoundingBox> {
        if t < self.t0 {
            return None;
        }
        let (w, h) = category_size(self.category);
        let x1 = self.x0 + self.dir * ((t - self.t0) / self.period);
        if x1 < 0 || x1 + w as i64 > width as i64 {
            return None;
        }
        let y1 = (self.y_center - h / 2) as f64;
        Some(BoundingBox { x1: x1 as f64, y1, x2: (x1 + w as i64) as f64, y2: y1 + h as f64 })
    }
}

const VEHICLES: [(Category, u32); 5] = [
    (Category::Car, 40),
    (Category::Bus, 15),
    (Category::TwoWheeler, 20),
    (Category::ThreeWheeler, 15),
    (Category::Others, 10),
];
const WALKERS: [(Category, u32); 2] = [(Category::Person, 80), (Category::Others, 20)];

fn pick(rng: &mut impl Rng, table: &[(Category, u32)]) -> Category {
    let total: u32 = table.iter().map(|e| e.1).sum();
    let mut r = rng.random_range(0..total);
    for &(c, w) in table {
        if r < w {
            return c;
        }
        r -= w;
    }
    unreachable!()
}

fn lane_traffic(
    rng: &mut impl Rng,
    config: &SynthConfig,
    y_center: usize,
    dir: i64,
    period: i64,
    table: &[(Category, u32)],
) -> Vec<Mover> {
    let mut out = Vec::new();
    let crossing = config.width as i64 * period;
    let mut t = -rng.random_range(0..crossing);
    while t < config.frames as i64 {
        let category = pick(rng, table);
        let (w, _) = category_size(category);
        let x0 = if dir > 0 { 0 } else { (config.width - w) as i64 };
        out.push(Mover { category, y_center, x0, t0: t, dir, period });
        // the next object may enter once this one has cleared its own width
        // plus a margin; equal speeds keep the gap from closing
        let max_w = category_size(Category::Bus).0 as i64;
        t += (max_w + 6) * period + rng.random_range(0..=config.traffic_gap as i64 * 2);
    }
    out
}

/// Generates `count` clips. Clip `i` depends only on `(seed, i)`.
pub fn synth_videos(count: usize, seed: u64, config: &SynthConfig) -> Result<Vec<SyntheticVideo>> {
    config.validate()?;
    Ok((0..count).map(|i| synth_video(i, seed, config)).collect())
}

fn synth_video(index: usize, seed: u64, config: &SynthConfig) -> SyntheticVideo {
    let video_seed = seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(video_seed);
    let h = config.height;
    let rows = [h * 15 / 100, h * 34 / 100, h / 2, h * 66 / 100, h * 85 / 100];
    let mut movers = Vec::new();
    movers.extend(lane_traffic(&mut rng, config, rows[0], 1, 1, &VEHICLES));
    movers.extend(lane_traffic(&mut rng, config, rows[1], -1, 3, &WALKERS));
    movers.extend(lane_traffic(&mut rng, config, rows[3], 1, 3, &WALKERS));
    movers.extend(lane_traffic(&mut rng, config, rows[4], -1, 1, &VEHICLES));

    let mut tracks: Vec<Track> = Vec::new();
    for m in &movers {
        let entries: Vec<TrackEntry> = (0..config.frames)
            .filter_map(|t| {
                m.bbox_at(t as i64, config.width).map(|bbox| TrackEntry {
                    frame: t,
                    bbox,
                    lost: false,
                    occluded: false,
                    generated: false,
                })
            })
            .collect();
        if !entries.is_empty() {
            tracks.push(Track { id: tracks.len() as u64, category: m.category, entries });
        }
    }

    let mut events = Vec::new();
    if rng.random_bool(config.collision_probability) {
        let onset = rng.random_range(config.onset_min..=config.onset_max);
        let (pair, event) = collision_pair(&mut rng, config, rows[2], onset);
        for (category, entries) in pair {
            tracks.push(Track { id: tracks.len() as u64, category, entries });
        }
        events.push(event);
    }

    SyntheticVideo {
        record: VideoRecord {
            id: format!("synth_{index:04}"),
            frame_count: config.frames,
            fps: Some(config.fps),
            width: config.width,
            height: config.height,
            tracks,
            events,
        },
        seed: video_seed,
        noise: config.noise,
    }
}

/// Two vehicles driving head-on along row `y` whose boxes first share
/// positive area exactly at `onset`.
fn collision_pair(
    rng: &mut impl Rng,
    config: &SynthConfig,
    y: usize,
    onset: usize,
) -> ([(Category, Vec<TrackEntry>); 2], AccidentEvent) {
    let small = [
        (Category::Car, 40),
        (Category::TwoWheeler, 25),
        (Category::ThreeWheeler, 20),
        (Category::Others, 15),
    ];
    let (ca, cb) = (pick(rng, &small), pick(rng, &small));
    let (wa, ha) = category_size(ca);
    let (wb, hb) = category_size(cb);
    let approach = rng.random_range(35..=45).min(onset);
    let lo = approach + wa;
    let hi = config.width - approach - wb;
    let c = rng.random_range(lo..=hi.max(lo)) as i64;
    let f = onset as i64;
    let end = onset + config.event_duration;
    // right edge of A is c + 1 - (f - t); left edge of B is c + (f - t):
    // a one pixel gap at f - 1, one pixel of overlap at f
    let boxes = |t: i64| {
        let k = (f - t.min(f)).max(0);
        let a = BoundingBox {
            x1: (c + 1 - k - wa as i64) as f64,
            y1: (y - ha / 2) as f64,
            x2: (c + 1 - k) as f64,
            y2: (y - ha / 2 + ha) as f64,
        };
        let b = BoundingBox {
            x1: (c + k) as f64,
            y1: (y - hb / 2) as f64,
            x2: (c + k + wb as i64) as f64,
            y2: (y - hb / 2 + hb) as f64,
        };
        (a, b)
    };
    let entry = |frame, bbox| TrackEntry { frame, bbox, lost: false, occluded: false, generated: false };
    let (mut ea, mut eb) = (Vec::new(), Vec::new());
    for t in (onset - approach)..=end {
        let (a, b) = boxes(t as i64);
        ea.push(entry(t, a));
        eb.push(entry(t, b));
    }
    ([(ca, ea), (cb, eb)], AccidentEvent { start: onset, end })
}

fn noise_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (frame as u64).wrapping_mul(0xd134_2543_de82_ef95))
}

fn fill_background(img: &mut RgbImage, rng: &mut impl Rng, noise: u8) {
    for p in img.pixels_mut() {
        let v = 110i16 + rng.random_range(-(noise as i16)..=noise as i16);
        *p = Rgb([v as u8; 3]);
    }
}

/// Draws a filled box with a darker one pixel border. Pixels whose centers
/// fall inside the box are painted.
pub fn draw_object(img: &mut RgbImage, bbox: &BoundingBox, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let x0 = bbox.x1.round().max(0.0) as u32;
    let y0 = bbox.y1.round().max(0.0) as u32;
    let x1 = (bbox.x2.round() as u32).min(w);
    let y1 = (bbox.y2.round() as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x == x0 || y == y0 || x + 1 == x1 || y + 1 == y1;
            let c = if edge { color.map(|v| v / 2) } else { color };
            img.put_pixel(x, y, Rgb(c));
        }
    }
}

pub fn render_frame(record: &VideoRecord, seed: u64, noise: u8, frame: usize) -> RgbImage {
    let mut img = RgbImage::new(record.width as u32, record.height as u32);
    fill_background(&mut img, &mut noise_rng(seed, frame), noise);
    for t in &record.tracks {
        if let Ok(i) = t.entries.binary_search_by_key(&frame, |e| e.frame) {
            draw_object(&mut img, &t.entries[i].bbox, category_color(t.category));
        }
    }
    img
}

/// A still image whose small Person and Others objects share one body and
/// differ only in a ring drawn well outside the object, beyond what a
/// detector sees when it pools the box alone.
pub fn context_scene(seed: u64, width: usize, height: usize) -> (RgbImage, Vec<(BoundingBox, Category)>) {
    const BODY: (usize, usize) = (6, 10);
    const BODY_COLOR: [u8; 3] = [220, 60, 60];
    const RING_GAP: usize = 30;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(width as u32, height as u32);
    fill_background(&mut img, &mut rng, 20);
    let mut objects: Vec<(BoundingBox, Category)> = Vec::new();
    let wanted = rng.random_range(1..=2);
    let mut attempts = 0;
    while objects.len() < wanted && attempts < 100 {
        attempts += 1;
        let x = rng.random_range(8..width - BODY.0 - 8) as f64;
        let y = rng.random_range(8..height - BODY.1 - 8) as f64;
        let b = BoundingBox { x1: x, y1: y, x2: x + BODY.0 as f64, y2: y + BODY.1 as f64 };
        // keep each object's ring and neighbourhood to itself
        if objects.iter().any(|(o, _)| (o.center().0 - b.center().0).abs() < 2.0 * RING_GAP as f64 + 10.0) {
            continue;
        }
        let c = if rng.random_bool(0.5) { Category::Person } else { Category::Others };
        objects.push((b, c));
    }
    for (b, c) in &objects {
        if *c == Category::Person {
            let ring = b.expand(RING_GAP as f64, RING_GAP as f64);
            draw_ring(&mut img, &ring, [250, 250, 250]);
        }
    }
    for (b, _) in &objects {
        draw_object(&mut img, b, BODY_COLOR);
    }
    (img, objects)
}

fn draw_ring(img: &mut RgbImage, b: &BoundingBox, color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let (x0, y0, x1, y1) = (b.x1 as i64, b.y1 as i64, b.x2 as i64, b.y2 as i64);
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
            img.put_pixel(x as u32, y as u32, Rgb(color));
        }
    };
    for t in 0..2 {
        for x in x0..x1 {
            put(x, y0 + t);
            put(x, y1 - 1 - t);
        }
        for y in y0..y1 {
            put(x0 + t, y);
            put(x1 - 1 - t, y);
        }
    }
}
