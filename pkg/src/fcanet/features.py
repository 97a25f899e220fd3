"""Audio I/O and MFCC feature extraction.

The front end turns a one-second 16 kHz mono clip into a (40, 101) MFCC
matrix:

* centered STFT — the signal is reflect-padded by n_fft//2 on both sides,
  framed with hop 160, windowed with a periodic Hann of length 400,
* power spectrum of the real FFT (201 bins),
* 64 triangular mel filters (HTK mel scale, 20–8000 Hz, peak 1, no area
  normalization),
* natural log with a 1e-10 floor, then an orthonormal DCT-II keeping the
  first 40 coefficients.

All DSP runs in float64; the model-facing feature map is cast at the end.
"""

import wave
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ArgumentError, ConfigError, DataError

INT16_FULL_SCALE = 32768.0
# keep quantized peaks inside int16 so WAV round-trips are exact
PEAK_LIMIT = 32767.0 / 32768.0


@dataclass(frozen=True)
class MfccParams:
    sample_rate: int = 16000
    n_mfcc: int = 40
    n_fft: int = 400
    hop_length: int = 160
    n_mels: int = 64
    f_min: float = 20.0
    f_max: float = 8000.0

    def __post_init__(self):
        if self.sample_rate <= 0 or self.n_fft <= 0 or self.hop_length <= 0:
            raise ConfigError("mfcc params: rates and sizes must be positive")
        if not (0 < self.n_mfcc <= self.n_mels):
            raise ConfigError(
                f"mfcc params: need 0 < n_mfcc <= n_mels, got "
                f"{self.n_mfcc} vs {self.n_mels}")
        if not (0 <= self.f_min < self.f_max <= self.sample_rate / 2):
            raise ConfigError(
                f"mfcc params: need 0 <= f_min < f_max <= Nyquist, got "
                f"[{self.f_min}, {self.f_max}] at {self.sample_rate} Hz")

    @property
    def clip_samples(self) -> int:
        """Samples in the canonical one-second clip."""
        return self.sample_rate

    def n_frames(self, n_samples: Optional[int] = None) -> int:
        n = self.clip_samples if n_samples is None else n_samples
        return 1 + n // self.hop_length


# ---------------------------------------------------------------------------
# WAV I/O (stdlib `wave`; 16-bit mono PCM only)


def read_wav(path, expected_rate: Optional[int] = None) -> np.ndarray:
    """Read a mono 16-bit PCM WAV as float64 in [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError, OSError) as exc:
        raise DataError(f"cannot read WAV {path}: {exc}") from exc
    if channels != 1 or width != 2:
        raise DataError(
            f"{path}: expected mono 16-bit PCM, got {channels} ch / "
            f"{8 * width} bit")
    if expected_rate is not None and rate != expected_rate:
        raise DataError(f"{path}: sample rate {rate}, expected {expected_rate}")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / INT16_FULL_SCALE


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write float samples as mono 16-bit PCM (values clipped to int16)."""
    q = np.clip(np.round(np.asarray(samples) * INT16_FULL_SCALE),
                -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(sample_rate))
        wf.writeframes(q.tobytes())


def pad_or_trim(samples: np.ndarray, length: int) -> np.ndarray:
    """Zero-pad on the right, or drop trailing samples, to exactly `length`."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ArgumentError(f"pad_or_trim: expected 1-d samples, got {x.shape}")
    if x.size >= length:
        return x[:length].copy()
    return np.concatenate([x, np.zeros(length - x.size)])


# ---------------------------------------------------------------------------
# spectrogram pipeline


def hann_periodic(n: int) -> np.ndarray:
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * k / n)


def stft_power(samples: np.ndarray, params: MfccParams) -> np.ndarray:
    """Power spectrogram, shape (n_fft//2 + 1, n_frames)."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise ArgumentError(f"stft_power: expected 1-d samples, got {x.shape}")
    n_fft, hop = params.n_fft, params.hop_length
    if x.size < 1:
        raise DataError("stft_power: empty signal")
    pad = n_fft // 2
    xp = np.pad(x, pad, mode="reflect")
    n_frames = params.n_frames(x.size)
    frames = np.lib.stride_tricks.sliding_window_view(xp, n_fft)[::hop]
    frames = frames[:n_frames] * hann_periodic(n_fft)
    spec = np.fft.rfft(frames, axis=1)
    return (spec.real ** 2 + spec.imag ** 2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(params: MfccParams) -> np.ndarray:
    """Triangular filters (n_mels, n_fft//2 + 1); peak value 1 per filter."""
    n_bins = params.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * params.sample_rate / params.n_fft
    pts = mel_to_hz(np.linspace(hz_to_mel(params.f_min), hz_to_mel(params.f_max),
                                params.n_mels + 2))
    fb = np.zeros((params.n_mels, n_bins))
    for m in range(params.n_mels):
        lo, center, hi = pts[m], pts[m + 1], pts[m + 2]
        rise = (bin_hz - lo) / (center - lo)
        fall = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
    return fb


def mel_spectrogram(samples: np.ndarray, params: MfccParams) -> np.ndarray:
    """Mel-filtered power, shape (n_mels, n_frames)."""
    return mel_filterbank(params) @ stft_power(samples, params)


def dct_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Orthonormal DCT-II matrix (n_out, n_in)."""
    n = np.arange(n_in)
    k = np.arange(n_out)[:, None]
    mat = np.cos(np.pi * (n + 0.5) * k / n_in)
    mat *= np.sqrt(2.0 / n_in)
    mat[0] *= np.sqrt(0.5)
    return mat


def mfcc_from_mel(mel: np.ndarray, params: MfccParams) -> np.ndarray:
    mel = np.asarray(mel, dtype=np.float64)
    if np.any(mel < 0):
        raise ArgumentError("mfcc_from_mel: mel energies must be nonnegative")
    return dct_matrix(params.n_mfcc, params.n_mels) @ np.log(mel + 1e-10)


def mfcc(samples: np.ndarray, params: MfccParams) -> np.ndarray:
    """MFCC matrix, shape (n_mfcc, n_frames)."""
    return mfcc_from_mel(mel_spectrogram(samples, params), params)


def feature_map(samples: np.ndarray, params: MfccParams,
                dtype=np.float32) -> np.ndarray:
    """Model input: MFCCs as a one-channel image (1, n_mfcc, n_frames)."""
    return mfcc(samples, params).astype(dtype)[None]


# ---------------------------------------------------------------------------
# waveform / feature augmentation


def time_shift(samples: np.ndarray, shift: int) -> np.ndarray:
    """Shift by `shift` samples (positive delays; vacated region is zero)."""
    x = np.asarray(samples)
    out = np.zeros_like(x)
    if shift == 0:
        out[:] = x
    elif shift > 0:
        if shift < x.size:
            out[shift:] = x[:-shift]
    else:
        if -shift < x.size:
            out[:shift] = x[-shift:]
    return out


def spec_augment(feat: np.ndarray, rng: np.random.Generator,
                 max_width: int = 25) -> np.ndarray:
    """Zero one random frequency stripe and one random time stripe.

    Widths are drawn uniformly from 0..max_width (0 = no mask on that axis).
    Operates on the last two axes of `feat`; returns a masked copy.
    """
    out = np.array(feat, copy=True)
    n_f, n_t = out.shape[-2], out.shape[-1]
    wf = int(rng.integers(0, min(max_width, n_f) + 1))
    if wf > 0:
        f0 = int(rng.integers(0, n_f - wf + 1))
        out[..., f0:f0 + wf, :] = 0.0
    wt = int(rng.integers(0, min(max_width, n_t) + 1))
    if wt > 0:
        t0 = int(rng.integers(0, n_t - wt + 1))
        out[..., :, t0:t0 + wt] = 0.0
    return out
