//! In-memory video clips and their on-disk layout.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<video>/frames/000000.png ...   RGB8
//! <root>/<video>/masks/000000.png ...    16-bit; bit k set where object k+1 is
//! <root>/<video>/gt.txt                  frame,id,x,y,w,h
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, save_annotations};
use super::frame::{Frame, FrameSequence};
use super::geometry::{median_box_height, BoundingBox, Track};
use super::mask::BinaryMask;
use crate::error::{invalid, io_err, Error, Result};

/// Highest object id representable in a mask file.
pub const MAX_MASK_OBJECTS: i64 = 16;

/// One video with its annotations: the unit data is drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub name: String,
    pub frames: FrameSequence,
    pub tracks: Vec<Track>,
    /// Ground-truth object masks, `object id -> frame -> mask`.
    pub masks: BTreeMap<i64, BTreeMap<usize, BinaryMask>>,
    pub roi: BoundingBox,
}

impl VideoClip {
    pub fn track(&self, object_id: i64) -> Option<&Track> {
        self.tracks.iter().find(|t| t.object_id == object_id)
    }

    pub fn mask(&self, object_id: i64, frame: usize) -> Option<&BinaryMask> {
        self.masks.get(&object_id).and_then(|m| m.get(&frame))
    }

    pub fn frame(&self, index: usize) -> Option<&Frame> {
        self.frames.by_index(index)
    }

    pub fn median_object_height(&self) -> Option<f64> {
        median_box_height(&self.tracks)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub name: String,
    pub frames_dir: String,
    pub annotations: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks_dir: Option<String>,
    pub roi: BoundingBox,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub videos: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn frame_file_name(index: usize) -> String {
    format!("{:06}.png", index)
}

fn to_u8(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn write_frame_png(frame: &Frame, path: &Path) -> Result<()> {
    let img =
        ImageBuffer::<Rgb<u8>, _>::from_fn(frame.width() as u32, frame.height() as u32, |x, y| {
            let p = frame.pixel(y as usize, x as usize);
            Rgb([to_u8(p[0]), to_u8(p[1]), to_u8(p[2])])
        });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_frame_png(path: &Path, index: usize) -> Result<Frame> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.as_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Frame::new(h as usize, w as usize, pixels, index)
}

/// Writes frames as `%06d.png` files under `dir`.
pub fn write_frame_dir(frames: &FrameSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for f in frames.frames() {
        write_frame_png(f, &dir.join(frame_file_name(f.index())))?;
    }
    Ok(())
}

fn indexed_pngs(dir: &Path) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default();
        let index: usize = stem.parse().map_err(|_| {
            invalid(format!(
                "frame file {} is not a frame number",
                path.display()
            ))
        })?;
        out.push((index, path));
    }
    out.sort();
    Ok(out)
}

pub fn read_frame_dir(dir: &Path, fps: f64) -> Result<FrameSequence> {
    let frames = indexed_pngs(dir)?
        .into_iter()
        .map(|(i, p)| read_frame_png(&p, i))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, fps)
}

fn write_mask_dir(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let Some((h, w)) = clip.frames.frame_size() else {
        return Ok(());
    };
    for f in clip.frames.frames() {
        let mut bits = vec![0u16; h * w];
        for (&id, per_frame) in &clip.masks {
            if !(1..=MAX_MASK_OBJECTS).contains(&id) {
                return Err(invalid(format!(
                    "object id {} cannot be stored in a mask file",
                    id
                )));
            }
            if let Some(m) = per_frame.get(&f.index()) {
                for (b, &on) in bits.iter_mut().zip(m.bits()) {
                    if on {
                        *b |= 1 << (id - 1);
                    }
                }
            }
        }
        let img: ImageBuffer<Luma<u16>, Vec<u16>> =
            ImageBuffer::from_raw(w as u32, h as u32, bits).expect("mask buffer size");
        let path = dir.join(frame_file_name(f.index()));
        img.save(&path)
            .map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

fn read_mask_dir(
    dir: &Path,
    tracks: &[Track],
) -> Result<BTreeMap<i64, BTreeMap<usize, BinaryMask>>> {
    let mut out: BTreeMap<i64, BTreeMap<usize, BinaryMask>> = BTreeMap::new();
    for (index, path) in indexed_pngs(dir)? {
        let img = image::open(&path)
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .to_luma16();
        let (w, h) = img.dimensions();
        for t in tracks {
            if !(1..=MAX_MASK_OBJECTS).contains(&t.object_id) || !t.boxes.contains_key(&index) {
                continue;
            }
            let bit = 1u16 << (t.object_id - 1);
            let bits = img.as_raw().iter().map(|v| v & bit != 0).collect();
            out.entry(t.object_id)
                .or_default()
                .insert(index, BinaryMask::new(h as usize, w as usize, bits)?);
        }
    }
    Ok(out)
}

/// Writes clips and a manifest under `root`.
pub fn write_dataset(clips: &[VideoClip], root: &Path) -> Result<Manifest> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    let mut videos = Vec::with_capacity(clips.len());
    for clip in clips {
        let base = root.join(&clip.name);
        let entry = ManifestEntry {
            name: clip.name.clone(),
            frames_dir: format!("{}/frames", clip.name),
            annotations: format!("{}/gt.txt", clip.name),
            masks_dir: Some(format!("{}/masks", clip.name)),
            roi: clip.roi,
            fps: clip.frames.fps(),
        };
        write_frame_dir(&clip.frames, &base.join("frames"))?;
        write_mask_dir(clip, &base.join("masks"))?;
        save_annotations(&clip.tracks, &root.join(&entry.annotations))?;
        videos.push(entry);
    }
    let manifest = Manifest { version: 1, videos };
    write_json(&root.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(root: &Path) -> Result<Manifest> {
    let path = root.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
    if manifest.version != 1 {
        return Err(invalid(format!(
            "unsupported manifest version {}",
            manifest.version
        )));
    }
    Ok(manifest)
}

pub fn read_clip(root: &Path, entry: &ManifestEntry) -> Result<VideoClip> {
    let frames = read_frame_dir(&root.join(&entry.frames_dir), entry.fps)?;
    let tracks = load_annotations(&root.join(&entry.annotations))?;
    let n = frames.len();
    for t in &tracks {
        if let Some((&last, _)) = t.boxes.iter().next_back() {
            if frames.by_index(last).is_none() {
                return Err(invalid(format!(
                    "{}: object {} annotated in frame {} beyond the {} frames",
                    entry.name, t.object_id, last, n
                )));
            }
        }
    }
    let masks = match &entry.masks_dir {
        Some(d) => read_mask_dir(&root.join(d), &tracks)?,
        None => BTreeMap::new(),
    };
    Ok(VideoClip {
        name: entry.name.clone(),
        frames,
        tracks,
        masks,
        roi: entry.roi,
    })
}

pub fn read_dataset(root: &Path) -> Result<Vec<VideoClip>> {
    let manifest = read_manifest(root)?;
    manifest.videos.iter().map(|e| read_clip(root, e)).collect()
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}
