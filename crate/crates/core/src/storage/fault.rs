//! Crash injection for the commit path.
//!
//! A [`FaultPlan`] makes the commit thread stop dead at one point of one
//! commit, leaving the directory exactly as a process kill would. Only used
//! by tests.

/// Points in a commit where the thread can be stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CrashPoint {
    /// Half of a chunk file has been written.
    MidChunkWrite,
    /// Chunk bytes written, not yet fsynced.
    AfterChunkWrite,
    AfterChunkSync,
    /// Half of `manifest.tmp` has been written.
    MidManifestWrite,
    AfterManifestTempWrite,
    AfterManifestTempSync,
    /// The new manifest has been renamed into place.
    AfterManifestRename,
}

impl CrashPoint {
    pub const ALL: [CrashPoint; 7] = [
        CrashPoint::MidChunkWrite,
        CrashPoint::AfterChunkWrite,
        CrashPoint::AfterChunkSync,
        CrashPoint::MidManifestWrite,
        CrashPoint::AfterManifestTempWrite,
        CrashPoint::AfterManifestTempSync,
        CrashPoint::AfterManifestRename,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaultPlan {
    pub point: CrashPoint,
    /// Zero-based index of the commit (a drain that writes data) to crash in.
    pub on_commit: u64,
}

#[derive(Debug)]
pub(crate) struct Injected(pub CrashPoint);

pub(crate) struct FaultState {
    plan: Option<FaultPlan>,
    commit: u64,
}

impl FaultState {
    pub(crate) fn new(plan: Option<FaultPlan>) -> Self {
        FaultState { plan, commit: 0 }
    }

    pub(crate) fn next_commit(&mut self) {
        self.commit += 1;
    }

    pub(crate) fn hit(&self, point: CrashPoint) -> bool {
        self.plan.is_some_and(|p| p.point == point && p.on_commit == self.commit)
    }

    pub(crate) fn check(&self, point: CrashPoint) -> Result<(), Injected> {
        if self.hit(point) {
            Err(Injected(point))
        } else {
            Ok(())
        }
    }
}
