use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::geom::{pose_interpolate, Pose};

/// Propagated IMU poses at sample rate, oldest first. Entries older than
/// `span` seconds behind the newest are dropped.
#[derive(Debug, Clone)]
pub struct PoseBuffer {
    span: f64,
    poses: VecDeque<Pose>,
}

impl PoseBuffer {
    pub fn new(span: f64) -> Self {
        Self { span, poses: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn clear(&mut self) {
        self.poses.clear();
    }

    pub fn start(&self) -> Option<f64> {
        self.poses.front().map(|p| p.stamp)
    }

    pub fn end(&self) -> Option<f64> {
        self.poses.back().map(|p| p.stamp)
    }

    /// Appends a pose. A pose with the newest stamp replaces it; older
    /// stamps are rejected.
    pub fn push(&mut self, pose: Pose) -> Result<()> {
        if let Some(last) = self.poses.back_mut() {
            if pose.stamp < last.stamp {
                return Err(Error::NonMonotone { index: self.poses.len() });
            }
            if pose.stamp == last.stamp {
                *last = pose;
                return Ok(());
            }
        }
        self.poses.push_back(pose);
        let newest = pose.stamp;
        while self.poses.len() > 2 && self.poses[1].stamp < newest - self.span {
            self.poses.pop_front();
        }
        Ok(())
    }

    pub fn extend<I: IntoIterator<Item = Pose>>(&mut self, poses: I) -> Result<()> {
        for p in poses {
            self.push(p)?;
        }
        Ok(())
    }

    /// Interpolated pose at `t`; fails outside the buffered span.
    pub fn query(&self, t: f64) -> Result<Pose> {
        let (start, end) = match (self.start(), self.end()) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(Error::OutOfRange { t, start: f64::NAN, end: f64::NAN }),
        };
        if !(t >= start && t <= end) {
            return Err(Error::OutOfRange { t, start, end });
        }
        let k = self.poses.partition_point(|p| p.stamp <= t);
        if k == self.poses.len() || self.poses[k - 1].stamp == t {
            return Ok(self.poses[k - 1]);
        }
        pose_interpolate(&self.poses[k - 1], &self.poses[k], t)
    }
}
