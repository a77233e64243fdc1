//! Scene file I/O, training-window extraction, dataset splits, and the
//! synthetic coupled-motion generator.

mod format;
mod split;
mod synthetic;

pub use format::{
    load_motion_file, load_motion_file_from_path, save_motion_file, save_motion_file_to_path,
    MotionFile, SceneRecord, FORMAT_VERSION,
};
pub use split::{split, SplitMode};
pub use synthetic::{synth_coupled, SyntheticConfig};

use crate::error::Result;
use crate::pose::Scene;

/// One training sample: T frames of history and the following frames to
/// predict.
#[derive(Clone, Debug)]
pub struct SceneWindow {
    pub history: Scene,
    pub future: Scene,
}

/// Slide a `(history, future)` window over the scene at the given stride.
///
/// Returns an empty list (not an error) when the scene is too short;
/// otherwise `floor((len - history - horizon) / stride) + 1` windows.
pub fn make_windows(
    scene: &Scene,
    history: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<SceneWindow>> {
    if stride == 0 {
        return Err(crate::error::Error::Config("stride must be positive".into()));
    }
    let needed = history + horizon;
    let len = scene.len();
    let mut out = Vec::new();
    if len < needed {
        return Ok(out);
    }
    let mut start = 0;
    while start + needed <= len {
        out.push(SceneWindow {
            history: scene.segment(start, start + history),
            future: scene.segment(start + history, start + needed),
        });
        start += stride;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use crate::pose::PoseSequence;

    fn scene_of_len(len: usize) -> Scene {
        let mk = |offset: f64| {
            let data = (0..len * 2 * 3).map(|i| i as f64 + offset).collect();
            PoseSequence::new(Tensor::new(vec![len, 2, 3], data).unwrap(), 25.0).unwrap()
        };
        Scene::new(vec![mk(0.0), mk(1000.0)]).unwrap()
    }

    #[test]
    fn exact_length_yields_one_window() {
        let scene = scene_of_len(7);
        let windows = make_windows(&scene, 5, 2, 1).unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0].history.len(), 5);
        assert_eq!(windows[0].future.len(), 2);
    }

    #[test]
    fn two_extra_frames_yield_three_windows() {
        let scene = scene_of_len(9);
        let windows = make_windows(&scene, 5, 2, 1).unwrap();
        assert_eq!(windows.len(), 3);
    }

    #[test]
    fn windows_are_contiguous_and_non_overlapping_per_pair() {
        let scene = scene_of_len(10);
        let windows = make_windows(&scene, 4, 3, 2).unwrap();
        for (i, w) in windows.iter().enumerate() {
            let start = i * 2;
            // History's first element matches the scene at the start index.
            let expect = scene.persons[0].joint(start, 0);
            assert_eq!(w.history.persons[0].joint(0, 0), expect);
            // Future begins exactly where history ends.
            let expect = scene.persons[0].joint(start + 4, 0);
            assert_eq!(w.future.persons[0].joint(0, 0), expect);
        }
    }

    #[test]
    fn too_short_scene_gives_empty_list() {
        let scene = scene_of_len(4);
        assert!(make_windows(&scene, 5, 2, 1).unwrap().is_empty());
    }

    #[test]
    fn stride_one_covers_every_start_index_once() {
        let scene = scene_of_len(12);
        let windows = make_windows(&scene, 5, 3, 1).unwrap();
        assert_eq!(windows.len(), 12 - 5 - 3 + 1);
        for (i, w) in windows.iter().enumerate() {
            assert_eq!(w.history.persons[0].joint(0, 0), scene.persons[0].joint(i, 0));
        }
    }
}
