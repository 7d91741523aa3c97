"""
Log mel-spectrogram extraction: framing, Hamming window, radix-2 FFT power
spectrum, triangular mel filterbank, natural log with a floor.

Also reads mono WAV files and reads/writes the per-clip feature cache
(``<u32 T><u32 M>`` little-endian header, then T*M float32 row-major).
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, InvalidInputError

LOG_FLOOR = 1e-10


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    clip_id: str = ""
    class_id: Optional[int] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be positive, got {self.sample_rate}")


@dataclass(frozen=True)
class DSPConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 128
    fmin: float = 0.0
    fmax: Optional[float] = None  # None -> sample_rate / 2


@dataclass
class LogMelSpectrogram:
    values: np.ndarray  # (T, M)
    frame_ms: float
    hop_ms: float

    @property
    def n_mels(self) -> int:
        return self.values.shape[1]

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


def hamming_window(n: int) -> np.ndarray:
    """w[k] = 0.54 - 0.46 cos(2 pi k / (n - 1)), symmetric."""
    if n < 2:
        raise InvalidInputError(f"window length must be ≥ 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def frame_signal(clip: AudioClip, frame_ms: float = 25.0, hop_ms: float = 10.0) -> np.ndarray:
    """Overlapping frames as a (T, frame_len) read-only view; the tail shorter than a frame is dropped."""
    frame_len = ms_to_samples(frame_ms, clip.sample_rate)
    hop = ms_to_samples(hop_ms, clip.sample_rate)
    if frame_len < 1 or hop < 1:
        raise InvalidInputError("frame and hop must each cover at least one sample")
    n = clip.samples.shape[0]
    if n < frame_len:
        raise InvalidInputError(f"clip has {n} samples, shorter than one frame ({frame_len})")
    count = 1 + (n - frame_len) // hop
    return np.lib.stride_tricks.sliding_window_view(clip.samples, frame_len)[::hop][:count]


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def fft(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis (length must be a power of two)."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1):
        raise InvalidInputError(f"FFT length must be a power of two, got {n}")
    if n == 1:
        return x.copy()
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = x[..., rev]
    lead = a.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(*lead, n // size, size)
        even = a[..., :half]
        odd = a[..., half:] * tw
        a = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return a.reshape(*lead, n)


def power_spectrum(frames: np.ndarray, nfft: Optional[int] = None) -> np.ndarray:
    """|DFT|^2 at bins 0..nfft/2 of (zero-padded) real frames along the last axis."""
    frames = np.asarray(frames, dtype=np.float64)
    n = frames.shape[-1]
    nfft = next_pow2(n) if nfft is None else nfft
    if nfft < n or nfft & (nfft - 1):
        raise InvalidInputError(f"nfft must be a power of two ≥ frame length, got {nfft}")
    if nfft > n:
        pad = [(0, 0)] * (frames.ndim - 1) + [(0, nfft - n)]
        frames = np.pad(frames, pad)
    spec = fft(frames)[..., : nfft // 2 + 1]
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(nfft: int, n_mels: int, sample_rate: int, fmin: float = 0.0,
                   fmax: Optional[float] = None) -> np.ndarray:
    """(n_mels, nfft/2+1) triangular filters, peaks equally spaced in mel, each row scaled to max 1.

    A filter narrower than the bin spacing can fall between bins and stays all-zero.
    """
    fmax = sample_rate / 2.0 if fmax is None else fmax
    if n_mels < 1:
        raise InvalidInputError("n_mels must be ≥ 1")
    if not (0.0 <= fmin < fmax <= sample_rate / 2.0):
        raise InvalidInputError(f"need 0 <= fmin < fmax <= sr/2, got fmin={fmin} fmax={fmax} sr={sample_rate}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    freqs = np.arange(nfft // 2 + 1) * sample_rate / nfft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    up = (freqs - lo) / (mid - lo)
    down = (hi - freqs) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    peak = fb.max(axis=1, keepdims=True)
    np.divide(fb, peak, out=fb, where=peak > 0)
    return fb


def log_mel(clip: AudioClip, config: DSPConfig = DSPConfig()) -> LogMelSpectrogram:
    frames = frame_signal(clip, config.frame_ms, config.hop_ms)
    n = frames.shape[1]
    nfft = next_pow2(n)
    pspec = power_spectrum(frames * hamming_window(n), nfft)
    fb = mel_filterbank(nfft, config.n_mels, clip.sample_rate, config.fmin, config.fmax)
    energies = pspec @ fb.T
    return LogMelSpectrogram(np.log(np.maximum(energies, LOG_FLOOR)), config.frame_ms, config.hop_ms)


# ---------------------------------------------------------------------------
# file I/O
# ---------------------------------------------------------------------------

def read_wav(path: Union[str, Path], clip_id: Optional[str] = None, class_id: Optional[int] = None) -> AudioClip:
    """Read a mono 16-bit PCM or 32-bit float WAV into samples in [-1, 1]."""
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise FormatError(f"{path}: expected a single channel, got {data.shape[1]}")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample format {data.dtype}")
    return AudioClip(samples, int(rate), clip_id or Path(path).stem, class_id)


def write_wav(path: Union[str, Path], clip: AudioClip, subformat: str = "pcm16") -> None:
    """Write mono samples as 16-bit PCM (clipped to [-1, 1]) or 32-bit float."""
    if subformat == "pcm16":
        data = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype(np.int16)
    elif subformat == "float32":
        data = clip.samples.astype(np.float32)
    else:
        raise InvalidInputError(f"unknown WAV subformat {subformat!r}")
    wavfile.write(str(path), clip.sample_rate, data)


_CACHE_HEADER = struct.Struct("<II")


def write_feature_cache(path: Union[str, Path], spect: LogMelSpectrogram) -> None:
    t, m = spect.values.shape
    with open(path, "wb") as fh:
        fh.write(_CACHE_HEADER.pack(t, m))
        fh.write(np.ascontiguousarray(spect.values, dtype="<f4").tobytes())


def read_feature_cache(path: Union[str, Path], frame_ms: float = 25.0, hop_ms: float = 10.0) -> LogMelSpectrogram:
    raw = Path(path).read_bytes()
    if len(raw) < _CACHE_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    t, m = _CACHE_HEADER.unpack_from(raw)
    body = raw[_CACHE_HEADER.size:]
    if len(body) != 4 * t * m:
        raise FormatError(f"{path}: expected {t}x{m} floats, found {len(body)} bytes")
    values = np.frombuffer(body, dtype="<f4").reshape(t, m).astype(np.float64)
    return LogMelSpectrogram(values, frame_ms, hop_ms)
