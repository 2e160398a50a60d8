"""Surface-EMG processing: rectification, linear envelope, frame-rate
resampling, and per-participant amplitude normalization, plus the CSV/JSON
interchange formats for raw signals, frame-aligned envelopes, and recorded
normalization maxima.

The channel layout is the 22-electrode facial montage F01..F22 (left/right
pairs over medial and lateral frontalis, corrugator, orbicularis oculi,
levator labii, zygomaticus, orbicularis oris, depressor anguli, mentalis,
masseter, and the suprahyoid group).  Time is always axis 0; channels axis 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

N_CHANNELS = 22
CHANNEL_NAMES = tuple(f"F{i:02d}" for i in range(1, N_CHANNELS + 1))


def rectify(x: np.ndarray) -> np.ndarray:
    """Full-wave rectification."""
    return np.abs(x)


def linear_envelope(
    x: np.ndarray, sample_rate: float, cutoff_hz: float = 4.0, order: int = 4
) -> np.ndarray:
    """Zero-phase low-pass of a rectified signal (the classic linear envelope).

    A forward-backward Butterworth (designed at ``order``, so double that
    effective roll-off) in second-order sections; negative filter ringing is
    clamped to zero since an envelope is nonnegative by definition.

    Parameters
    ----------
    x : array, shape (T,) or (T, C)
        Rectified signal, time on axis 0.
    sample_rate : float
        Sampling rate of ``x`` in Hz.
    cutoff_hz : float
        Low-pass corner frequency.
    order : int
        Butterworth design order (applied twice by filtfilt).
    """
    if cutoff_hz <= 0 or cutoff_hz >= sample_rate / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz out of range for fs={sample_rate}")
    sos = sps.butter(order, cutoff_hz, btype="low", fs=sample_rate, output="sos")
    out = sps.sosfiltfilt(sos, np.asarray(x, dtype=np.float64), axis=0)
    return np.clip(out, 0.0, None)


def resample_count(n_in: int, rate_in: float, rate_out: float) -> int:
    """Output length when resampling ``n_in`` samples between the two rates."""
    return int(round(n_in * rate_out / rate_in))


def fft_resample(x: np.ndarray, n_out: int) -> np.ndarray:
    """Fourier-domain resampling along axis 0.

    Strictly linear in its input (no clipping, no renormalization) so that
    ``fft_resample(a*x + b*y) == a*fft_resample(x) + b*fft_resample(y)`` to
    machine precision; envelope nonnegativity is restored by the callers
    that need it.
    """
    x = np.asarray(x, dtype=np.float64)
    if n_out <= 0:
        raise ValueError(f"n_out must be positive, got {n_out}")
    return sps.resample(x, n_out, axis=0)


def envelope_frames(
    raw: np.ndarray,
    sample_rate: float,
    frame_rate: float,
    cutoff_hz: float = 4.0,
    order: int = 4,
) -> np.ndarray:
    """Full pipeline: rectify -> linear envelope -> resample to frame rate.

    Returns the frame-aligned envelope, shape (F, C) with
    ``F = round(T * frame_rate / sample_rate)``, clipped to be nonnegative
    (Fourier resampling may undershoot near burst edges).
    """
    env = linear_envelope(rectify(raw), sample_rate, cutoff_hz, order)
    n_out = resample_count(env.shape[0], sample_rate, frame_rate)
    return np.clip(fft_resample(env, n_out), 0.0, None)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


@dataclass
class EmgNormalization:
    """Per-channel maxima for one participant (the denormalization record)."""

    channel_max: np.ndarray  # (C,)
    degenerate: np.ndarray  # (C,) bool: channel was all-zero across the session


def channel_maxima(envelopes: list[np.ndarray]) -> EmgNormalization:
    """Per-channel maximum over all of a participant's envelope arrays."""
    if not envelopes:
        raise ValueError("need at least one envelope array")
    stacked = np.concatenate([np.asarray(e, dtype=np.float64) for e in envelopes], axis=0)
    maxima = stacked.max(axis=0)
    degenerate = maxima <= 0.0
    maxima = np.where(degenerate, 0.0, maxima)
    return EmgNormalization(channel_max=maxima, degenerate=degenerate)


def normalize(envelope: np.ndarray, norm: EmgNormalization) -> np.ndarray:
    """Scale each channel so the participant's session maximum is 1.

    Degenerate (all-zero) channels stay zero rather than dividing by zero.
    """
    div = np.where(norm.degenerate, 1.0, norm.channel_max)
    return np.asarray(envelope, dtype=np.float64) / div


def denormalize(envelope: np.ndarray, norm: EmgNormalization) -> np.ndarray:
    """Exact inverse of :func:`normalize` (degenerate channels map to zero)."""
    mul = np.where(norm.degenerate, 0.0, norm.channel_max)
    return np.asarray(envelope, dtype=np.float64) * mul


# ---------------------------------------------------------------------------
# interchange formats
# ---------------------------------------------------------------------------


@dataclass
class RawEmgTable:
    participant: str
    session: str
    task: np.ndarray  # (T,) str: task label per sample
    values: np.ndarray  # (T, 22) float64, microvolts


@dataclass
class EnvelopeTable:
    participant: str
    session: str
    task: np.ndarray  # (F,) str
    values: np.ndarray  # (F, 22) float64


def _write_table(path: str, participant: str, session: str, task: np.ndarray, values: np.ndarray, index_name: str) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[1] != N_CHANNELS:
        raise ValueError(f"expected (T, {N_CHANNELS}) values, got {values.shape}")
    if len(task) != values.shape[0]:
        raise ValueError("task labels and values disagree in length")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["participant", "session", "task", index_name, *CHANNEL_NAMES])
        for i in range(values.shape[0]):
            writer.writerow([participant, session, task[i], i, *[repr(float(v)) for v in values[i]]])


def _read_table(path: str, index_name: str) -> tuple[str, str, np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        expected = ["participant", "session", "task", index_name, *CHANNEL_NAMES]
        if header != expected:
            raise ValueError(f"unexpected header in {path}: {header[:6]}...")
        participants, sessions, tasks, rows = set(), set(), [], []
        for i, row in enumerate(reader):
            participants.add(row[0])
            sessions.add(row[1])
            tasks.append(row[2])
            if int(row[3]) != i:
                raise ValueError(f"non-contiguous {index_name} at row {i} in {path}")
            rows.append([float(v) for v in row[4:]])
    if len(participants) != 1 or len(sessions) != 1:
        raise ValueError(f"{path} mixes participants/sessions")
    return participants.pop(), sessions.pop(), np.asarray(tasks), np.asarray(rows, dtype=np.float64)


def write_raw_csv(path: str, table: RawEmgTable) -> None:
    _write_table(path, table.participant, table.session, table.task, table.values, "sample_idx")


def read_raw_csv(path: str) -> RawEmgTable:
    participant, session, task, values = _read_table(path, "sample_idx")
    return RawEmgTable(participant=participant, session=session, task=task, values=values)


def write_envelope_csv(path: str, table: EnvelopeTable) -> None:
    _write_table(path, table.participant, table.session, table.task, table.values, "frame_idx")


def read_envelope_csv(path: str) -> EnvelopeTable:
    participant, session, task, values = _read_table(path, "frame_idx")
    return EnvelopeTable(participant=participant, session=session, task=task, values=values)


def write_normalization(path: str, participant: str, norm: EmgNormalization) -> None:
    payload = {
        "participant": participant,
        "channel_max": {name: float(norm.channel_max[i]) for i, name in enumerate(CHANNEL_NAMES)},
        "degenerate_channels": [name for i, name in enumerate(CHANNEL_NAMES) if norm.degenerate[i]],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_normalization(path: str) -> tuple[str, EmgNormalization]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    maxima = np.asarray([payload["channel_max"][name] for name in CHANNEL_NAMES], dtype=np.float64)
    degenerate = np.asarray([name in set(payload["degenerate_channels"]) for name in CHANNEL_NAMES])
    return payload["participant"], EmgNormalization(channel_max=maxima, degenerate=degenerate)
