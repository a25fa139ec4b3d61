from __future__ import annotations


class SemobsError(Exception):
    """Base class for every error raised by this package."""


# ingest
class ManifestError(SemobsError):
    pass


class MalformedRecord(ManifestError):
    def __init__(self, line_no: int, detail: str):
        self.line_no = line_no
        self.detail = detail
        super().__init__(f"line {line_no}: {detail}")


class DuplicateFrame(ManifestError):
    def __init__(self, clip_id: str, frame_index: int, line_no: int | None = None):
        self.clip_id = clip_id
        self.frame_index = frame_index
        self.line_no = line_no
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"duplicate frame {clip_id}#{frame_index}{where}")


class NonMonotonicTimestamp(ManifestError):
    def __init__(self, clip_id: str, frame_index: int):
        self.clip_id = clip_id
        self.frame_index = frame_index
        super().__init__(f"timestamp decreases at {clip_id}#{frame_index}")


class InvalidConfig(SemobsError):
    pass


class ClipTooShort(UserWarning):
    """Warning category: the clip cannot hold a single window."""


# prompting
class UnknownTier(SemobsError):
    pass


class MissingContextKey(SemobsError):
    pass


# backend
class BackendError(SemobsError):
    retryable = False


class BackendUnavailable(BackendError):
    retryable = True


class TransportError(BackendError):
    retryable = True


class MalformedResponse(BackendError):
    retryable = False


class MissingRecord(BackendError):
    def __init__(self, clip_id: str, window_index: int):
        self.clip_id = clip_id
        self.window_index = window_index
        super().__init__(f"no recorded output for {clip_id}/{window_index}")


class MissingLabel(BackendError):
    pass


# orchestrator
class NegativeComponent(SemobsError):
    pass


# metrics
class MissingGroundTruth(SemobsError):
    def __init__(self, record: dict):
        self.record = record
        super().__init__(f"record has no usable gt: {record!r}"[:200])


class EmptyLog(SemobsError):
    pass


# safety gate
class FingerprintMismatch(SemobsError):
    pass
