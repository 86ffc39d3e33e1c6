use super::frame::Frame;
use crate::error::{Error, Result};

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Rect { x0, y0, x1, y1 }
    }
}

/// Locates at most one face region in a frame.
pub trait FaceDetector: Send + Sync {
    fn detect(&self, frame: &Frame) -> Option<Rect>;
}

/// Reports the whole frame as the face.
#[derive(Debug, Clone, Copy, Default)]
pub struct FullFrameDetector;

impl FaceDetector for FullFrameDetector {
    fn detect(&self, frame: &Frame) -> Option<Rect> {
        Some(Rect::new(0, 0, frame.width(), frame.height()))
    }
}

/// Always reports the same rectangle.
#[derive(Debug, Clone, Copy)]
pub struct FixedRectDetector(pub Rect);

impl FaceDetector for FixedRectDetector {
    fn detect(&self, _frame: &Frame) -> Option<Rect> {
        Some(self.0)
    }
}

/// Never finds a face.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoFaceDetector;

impl FaceDetector for NoFaceDetector {
    fn detect(&self, _frame: &Frame) -> Option<Rect> {
        None
    }
}

/// Copies the detected face region; `Ok(None)` when the detector finds nothing.
pub fn crop_face(frame: &Frame, detector: &dyn FaceDetector) -> Result<Option<Frame>> {
    let Some(r) = detector.detect(frame) else {
        return Ok(None);
    };
    if r.x0 >= r.x1 || r.y0 >= r.y1 || r.x1 > frame.width() || r.y1 > frame.height() {
        return Err(Error::Input(format!(
            "face rectangle {r:?} does not fit a {}×{} frame",
            frame.height(),
            frame.width()
        )));
    }
    let c = frame.channels();
    let mut px = Vec::with_capacity((r.y1 - r.y0) * (r.x1 - r.x0) * c);
    for y in r.y0..r.y1 {
        let row = (y * frame.width() + r.x0) * c;
        px.extend_from_slice(&frame.pixels()[row..row + (r.x1 - r.x0) * c]);
    }
    Frame::new(r.y1 - r.y0, r.x1 - r.x0, c, px).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Frame {
        Frame::from_fn(8, 8, |y, x| (y * 8 + x) as f64 / 63.0).unwrap()
    }

    #[test]
    fn full_frame_is_identity() {
        let f = ramp();
        assert_eq!(crop_face(&f, &FullFrameDetector).unwrap().unwrap(), f);
    }

    #[test]
    fn fixed_rect_slices() {
        let f = ramp();
        let c = crop_face(&f, &FixedRectDetector(Rect::new(2, 2, 6, 6)))
            .unwrap()
            .unwrap();
        assert_eq!((c.height(), c.width()), (4, 4));
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(c.get(y, x, 0), f.get(y + 2, x + 2, 0));
            }
        }
    }

    #[test]
    fn no_face_is_not_an_error() {
        assert!(crop_face(&ramp(), &NoFaceDetector).unwrap().is_none());
    }

    #[test]
    fn out_of_bounds_rect_is_an_error() {
        let det = FixedRectDetector(Rect::new(4, 4, 9, 6));
        assert!(crop_face(&ramp(), &det).is_err());
    }
}
