//! Keyframe re-aging for video.
//!
//! One user-chosen keyframe is re-aged through the personalized path; its
//! face then replaces the face in every frame through the face swapper and
//! is pasted back at the aligner's crop box. Frames are read from and
//! written to `frame_%06d.png` directories.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::{personalized_reage, AdapterNetwork};
use crate::backends::{BackendBundle, SwapOutcome};
use crate::error::{Error, Result};
use crate::image::ImageTensor;
use crate::latent::{AgeYears, IdentityEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoJob {
    pub frames_dir: PathBuf,
    pub keyframe: usize,
    pub target_age: AgeYears,
    /// Checkpoint directory of the adapter; `None` re-ages with the global path.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameStatus {
    Swapped,
    /// The swapper found no face; the frame is copied unchanged.
    NoFace,
    /// The aligner or swapper failed on this frame; copied unchanged.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub status: FrameStatus,
    /// Cosine between this frame's face and the re-aged keyframe face,
    /// before and after swapping.
    pub cosine_before: Option<f64>,
    pub cosine_after: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoSummary {
    pub keyframe: usize,
    pub target_age: f64,
    pub frame_count: usize,
    pub warning_count: usize,
    /// Mean squared distance of frame identity embeddings from their mean,
    /// over the swapped frames. A jitter proxy, not a temporal metric.
    pub identity_variance_in: Option<f64>,
    pub identity_variance_out: Option<f64>,
    pub frames: Vec<FrameReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoOutput {
    pub frames: Vec<ImageTensor>,
    pub summary: VideoSummary,
}

/// The keyframe's aligned face, re-aged to `target_age`.
pub fn reage_keyframe(
    bundle: &BackendBundle,
    net: Option<&AdapterNetwork>,
    keyframe: &ImageTensor,
    target_age: AgeYears,
) -> Result<ImageTensor> {
    let aligned = bundle
        .align_face(keyframe)
        .map_err(|e| Error::Video(format!("keyframe alignment failed: {e}")))?;
    Ok(personalized_reage(bundle, net, &aligned.face, target_age)?.0)
}

fn embedding_variance(embeddings: &[IdentityEmbedding]) -> Option<f64> {
    let first = embeddings.first()?;
    let mut mean = first.vector().clone() * 0.0;
    for e in embeddings {
        mean += e.vector();
    }
    mean /= embeddings.len() as f64;
    let total: f64 = embeddings
        .iter()
        .map(|e| (e.vector() - &mean).mapv(|v| v * v).sum())
        .sum();
    Some(total / embeddings.len() as f64)
}

fn swap_frame(
    bundle: &BackendBundle,
    source: &ImageTensor,
    source_embedding: &IdentityEmbedding,
    frame: &ImageTensor,
) -> Result<(Option<ImageTensor>, Option<(f64, f64, IdentityEmbedding, IdentityEmbedding)>)> {
    let aligned = bundle.align_face(frame)?;
    let outcome = bundle.swap_face(source, &aligned.face)?;
    let SwapOutcome::Swapped(face) = outcome else {
        return Ok((None, None));
    };
    let out = bundle.aligner.paste_back(frame, &face, aligned.crop)?;
    let e_in = bundle.embed_identity(&aligned.face)?;
    let e_out = bundle.embed_identity(&bundle.align_face(&out)?.face)?;
    let before = e_in.cosine(source_embedding)?;
    let after = e_out.cosine(source_embedding)?;
    Ok((Some(out), Some((before, after, e_in, e_out))))
}

/// Re-ages `frames[keyframe]` and swaps the result into every frame.
pub fn reage_video(
    bundle: &BackendBundle,
    net: Option<&AdapterNetwork>,
    frames: &[ImageTensor],
    keyframe: usize,
    target_age: AgeYears,
) -> Result<VideoOutput> {
    if keyframe >= frames.len() {
        return Err(Error::Video(format!(
            "keyframe {keyframe} is outside the {} frames",
            frames.len()
        )));
    }
    let source = reage_keyframe(bundle, net, &frames[keyframe], target_age)?;
    let source_embedding = bundle.embed_identity(&source)?;

    let mut out = Vec::with_capacity(frames.len());
    let mut reports = Vec::with_capacity(frames.len());
    let (mut ins, mut outs) = (Vec::new(), Vec::new());
    for (index, frame) in frames.iter().enumerate() {
        match swap_frame(bundle, &source, &source_embedding, frame) {
            Ok((Some(swapped), Some((before, after, e_in, e_out)))) => {
                ins.push(e_in);
                outs.push(e_out);
                out.push(swapped);
                reports.push(FrameReport {
                    index,
                    status: FrameStatus::Swapped,
                    cosine_before: Some(before),
                    cosine_after: Some(after),
                    message: None,
                });
            }
            Ok(_) => {
                log::warn!("frame {index}: no face found, passing through");
                out.push(frame.clone());
                reports.push(FrameReport {
                    index,
                    status: FrameStatus::NoFace,
                    cosine_before: None,
                    cosine_after: None,
                    message: None,
                });
            }
            Err(e) => {
                log::warn!("frame {index}: {e}, passing through");
                out.push(frame.clone());
                reports.push(FrameReport {
                    index,
                    status: FrameStatus::Failed,
                    cosine_before: None,
                    cosine_after: None,
                    message: Some(e.to_string()),
                });
            }
        }
    }
    let warning_count = reports.iter().filter(|r| r.status != FrameStatus::Swapped).count();
    Ok(VideoOutput {
        frames: out,
        summary: VideoSummary {
            keyframe,
            target_age: target_age.years(),
            frame_count: frames.len(),
            warning_count,
            identity_variance_in: embedding_variance(&ins),
            identity_variance_out: embedding_variance(&outs),
            frames: reports,
        },
    })
}

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Frame paths of `dir` named `frame_<n>.png`, in numeric order.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let number = name
            .strip_prefix("frame_")
            .and_then(|r| r.strip_suffix(".png"))
            .and_then(|n| n.parse::<u64>().ok());
        if let Some(n) = number {
            found.push((n, path));
        }
    }
    if found.is_empty() {
        return Err(Error::Video(format!("no frame_*.png files in {}", dir.display())));
    }
    found.sort();
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn read_frames(dir: &Path) -> Result<Vec<ImageTensor>> {
    list_frames(dir)?.iter().map(|p| ImageTensor::load(p)).collect()
}

pub fn write_frames(dir: &Path, frames: &[ImageTensor]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in frames.iter().enumerate() {
        f.save_png(&dir.join(frame_name(i)))?;
    }
    Ok(())
}

/// Reads the job's frames, re-ages them and writes the output frames plus
/// `summary.json` to the job's output directory.
pub fn run_video_job(bundle: &BackendBundle, net: Option<&AdapterNetwork>, job: &VideoJob) -> Result<VideoSummary> {
    let frames = read_frames(&job.frames_dir)?;
    let output = reage_video(bundle, net, &frames, job.keyframe, job.target_age)?;
    write_frames(&job.out_dir, &output.frames)?;
    let path = job.out_dir.join("summary.json");
    let json = serde_json::to_string_pretty(&output.summary).map_err(|e| Error::Serde(e.to_string()))?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(output.summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adapter::AdapterShape;
    use crate::synth::{video_fixture, ToyPerson};

    fn age(v: f64) -> AgeYears {
        AgeYears::new(v).unwrap()
    }

    #[test]
    fn keyframe_at_init_matches_global() {
        let b = BackendBundle::toy(2);
        let frames = video_fixture(&b, &ToyPerson::new(1), age(30.0), 3, None).unwrap();
        let net = AdapterNetwork::new(AdapterShape::reduced(16), 0);
        let k = reage_keyframe(&b, Some(&net), &frames[1], age(70.0)).unwrap();
        assert_eq!(k, b.global_reage(&frames[1], age(70.0)).unwrap());
        assert_eq!((k.height(), k.width()), (b.resolution(), b.resolution()));
    }

    #[test]
    fn single_frame_is_blend_of_keyframe() {
        let b = BackendBundle::toy(2);
        let frames = video_fixture(&b, &ToyPerson::new(1), age(30.0), 1, None).unwrap();
        let out = reage_video(&b, None, &frames, 0, age(60.0)).unwrap();
        let source = b.global_reage(&frames[0], age(60.0)).unwrap();
        let SwapOutcome::Swapped(expected) = b.swap_face(&source, &frames[0]).unwrap() else {
            panic!("face expected")
        };
        assert_eq!(out.frames[0], expected);
        assert_eq!(out.summary.warning_count, 0);
    }

    #[test]
    fn no_face_frame_passes_through() {
        let b = BackendBundle::toy(2);
        let frames = video_fixture(&b, &ToyPerson::new(1), age(30.0), 5, Some(2)).unwrap();
        let out = reage_video(&b, None, &frames, 0, age(65.0)).unwrap();
        assert_eq!(out.frames.len(), 5);
        assert_eq!(out.frames[2], frames[2]);
        assert_eq!(out.summary.warning_count, 1);
        assert_eq!(out.summary.frames[2].status, FrameStatus::NoFace);
        for r in out.summary.frames.iter().filter(|r| r.status == FrameStatus::Swapped) {
            assert!(r.cosine_after.unwrap() > r.cosine_before.unwrap(), "{r:?}");
        }
        assert!(out.summary.identity_variance_out.unwrap() <= out.summary.identity_variance_in.unwrap());
    }

    #[test]
    fn bad_keyframe_index_is_rejected() {
        let b = BackendBundle::toy(2);
        let frames = video_fixture(&b, &ToyPerson::new(1), age(30.0), 2, None).unwrap();
        assert!(matches!(reage_video(&b, None, &frames, 2, age(50.0)), Err(Error::Video(_))));
    }

    #[test]
    fn job_reads_and_writes_numbered_frames() {
        let b = BackendBundle::toy(2);
        let frames = video_fixture(&b, &ToyPerson::new(1), age(30.0), 3, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in");
        fs::create_dir_all(&input).unwrap();
        // Unpadded names still sort numerically.
        for (i, f) in frames.iter().enumerate() {
            f.save_png(&input.join(format!("frame_{}.png", i * 5))).unwrap();
        }
        fs::write(input.join("notes.txt"), "x").unwrap();
        let job = VideoJob {
            frames_dir: input,
            keyframe: 1,
            target_age: age(50.0),
            checkpoint: None,
            out_dir: dir.path().join("out"),
        };
        let summary = run_video_job(&b, None, &job).unwrap();
        assert_eq!(summary.frame_count, 3);
        let written = list_frames(&job.out_dir).unwrap();
        assert_eq!(written[2].file_name().unwrap(), "frame_000002.png");
        let back: VideoSummary =
            serde_json::from_str(&fs::read_to_string(job.out_dir.join("summary.json")).unwrap()).unwrap();
        assert_eq!(back, summary);
    }
}
