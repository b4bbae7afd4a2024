"""
Signal I/O - datasets, simple file formats and the audio frontend.
Responsibilities:
- SeparationDataset container, validation and EGT1 persistence
- IDX (MNIST) loading with the observed/unobserved digit split protocol
- Binary PGM (P5) images, mono 16-bit WAV audio
- STFT / inverse STFT with Hann windows and overlap-add
- Bilinear upsampling and block-mean downsampling of 2-D grids
"""

import gzip
import json
import logging
import struct
import wave
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from utils.errors import FormatError, ShapeMismatchError
from utils.tensor_engine import load_tensor, save_tensor

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
LOW_DIGITS = (0, 1, 2, 3, 4)
HIGH_DIGITS = (5, 6, 7, 8, 9)
HELD_OUT_SHARE = 0.2

DATASET_ARRAYS = ('observed_b', 'mixtures_y', 'eval_x', 'eval_b', 'eval_y', 'mixture_x')

PathLike = Union[str, Path]


@dataclass
class SeparationDataset:
    """
    Observed-source samples, training mixtures and optional held-out triples.

    Arrays are stacked as (n, *sample_shape). mixture_x holds the true
    unobserved component of each training mixture; it is only read by the
    supervised upper bound and by diagnostics, never by semi-supervised methods.
    """

    observed_b: np.ndarray
    mixtures_y: np.ndarray
    eval_x: Optional[np.ndarray] = None
    eval_b: Optional[np.ndarray] = None
    eval_y: Optional[np.ndarray] = None
    mixture_x: Optional[np.ndarray] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.observed_b.shape[1:])

    @property
    def has_eval(self) -> bool:
        return self.eval_y is not None and self.eval_x is not None and self.eval_b is not None

    def validate(self) -> None:
        """Check shared shapes, non-negativity and exact eval additivity."""
        for name in DATASET_ARRAYS:
            array = getattr(self, name)
            if array is None:
                continue
            if tuple(array.shape[1:]) != self.sample_shape:
                raise ShapeMismatchError(f"{name} samples have shape {array.shape[1:]}, expected {self.sample_shape}")
            if array.shape[0] == 0:
                raise ValueError(f"{name} is empty")
            if np.any(array < 0):
                raise ValueError(f"{name} contains negative values")

        if self.has_eval and not np.array_equal(self.eval_y, self.eval_x + self.eval_b):
            raise ValueError("Eval triples violate y = x + b")
        if self.mixture_x is not None and self.mixture_x.shape[0] != self.mixtures_y.shape[0]:
            raise ShapeMismatchError("mixture_x count does not match mixtures_y")

    def summary(self) -> Dict[str, Any]:
        return {
            'name': self.meta.get('name', 'dataset'),
            'sample_shape': list(self.sample_shape),
            'n_b': int(self.observed_b.shape[0]),
            'n_y': int(self.mixtures_y.shape[0]),
            'n_eval': int(self.eval_y.shape[0]) if self.eval_y is not None else 0,
        }


def save_dataset(dataset: SeparationDataset, directory: PathLike) -> str:
    """Write every array as EGT1 plus a manifest.json (no timestamps, sorted keys)."""
    output_dir = Path(directory)
    output_dir.mkdir(parents=True, exist_ok=True)

    files = {}
    for name in DATASET_ARRAYS:
        array = getattr(dataset, name)
        if array is not None:
            save_tensor(output_dir / f"{name}.egt", array)
            files[name] = f"{name}.egt"

    manifest = {'meta': dataset.meta, 'counts': dataset.summary(), 'files': files}
    with open(output_dir / "manifest.json", 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)

    logger.info(f"Saved dataset '{dataset.meta.get('name', 'dataset')}' to {output_dir}")
    return str(output_dir)


def load_dataset(directory: PathLike) -> SeparationDataset:
    """Load a dataset directory written by save_dataset."""
    input_dir = Path(directory)
    manifest_path = input_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"Dataset manifest not found: {manifest_path}")

    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)

    arrays = {name: load_tensor(input_dir / filename) for name, filename in manifest['files'].items()}
    dataset = SeparationDataset(meta=manifest.get('meta', {}), **arrays)
    dataset.validate()
    return dataset


# -- IDX ---------------------------------------------------------------------------

def read_idx(path: PathLike, expected_magic: int) -> np.ndarray:
    """
    Read a big-endian IDX file (optionally gzipped) of unsigned bytes.

    Returns:
        uint8 array shaped by the header dimensions
    """
    path = str(path)
    opener = gzip.open if path.endswith('.gz') else open
    with opener(path, 'rb') as f:
        raw = f.read()

    if len(raw) < 4:
        raise FormatError("Truncated IDX magic", path=path, offset=len(raw))
    magic = struct.unpack_from('>I', raw, 0)[0]
    if magic != expected_magic:
        raise FormatError(f"Bad IDX magic 0x{magic:08x} (expected 0x{expected_magic:08x})", path=path, offset=0)

    rank = magic & 0xFF
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise FormatError("Truncated IDX dimensions", path=path, offset=len(raw))
    dims = struct.unpack_from(f'>{rank}I', raw, 4)

    payload = int(np.prod(dims, dtype=np.int64))
    if len(raw) < header_end + payload:
        raise FormatError(f"Truncated IDX payload (need {payload} bytes)", path=path, offset=len(raw))

    return np.frombuffer(raw, dtype=np.uint8, count=payload, offset=header_end).reshape(dims)


def _read_idx_pair(images_path: PathLike, labels_path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"Image count {images.shape[0]} does not match label count {labels.shape[0]}",
                          path=str(labels_path), offset=4)
    return images.astype(np.float64) / 255.0, labels


def load_idx(images_path: PathLike, labels_path: PathLike, observed: str = 'high',
             test_images_path: Optional[PathLike] = None, test_labels_path: Optional[PathLike] = None,
             n_b: int = 12000, n_y: int = 12000, n_eval: int = 5000, seed: int = 0) -> SeparationDataset:
    """
    Build the digit-split separation protocol from IDX archives.

    The observed digit set supplies n_b clean samples and, from the
    remaining images, n_y mixture components, each added to a random image
    of the other digit set. Eval triples come from the test archives when
    given, otherwise from training images not used above: the leftover
    observed-set images and a held-out fifth of the other digit set.

    Args:
        images_path: Training images (magic 0x00000803)
        labels_path: Training labels (magic 0x00000801)
        observed: 'low' (digits 0-4 observed) or 'high' (digits 5-9 observed)
        test_images_path: Optional test images
        test_labels_path: Optional test labels
        n_b: Observed sample count
        n_y: Training mixture count
        n_eval: Eval triple count
        seed: Sampling seed

    Returns:
        SeparationDataset with pixel values in [0, 1] per source
    """
    if observed not in ('low', 'high'):
        raise ValueError(f"observed must be 'low' or 'high', got '{observed}'")
    b_digits, x_digits = (LOW_DIGITS, HIGH_DIGITS) if observed == 'low' else (HIGH_DIGITS, LOW_DIGITS)
    rng = np.random.default_rng(seed)

    images, labels = _read_idx_pair(images_path, labels_path)
    b_pool = images[rng.permutation(np.flatnonzero(np.isin(labels, b_digits)))]
    x_pool = images[np.isin(labels, x_digits)]

    if b_pool.shape[0] < n_b + n_y:
        raise ValueError(f"Only {b_pool.shape[0]} observed-set images, need {n_b + n_y}")

    has_test_files = test_images_path is not None and test_labels_path is not None
    held_out_x = None
    if not has_test_files:
        # Without a test archive the eval X images come from a slice that
        # never enters a training mixture
        if x_pool.shape[0] < 2:
            raise ValueError(f"Only {x_pool.shape[0]} unobserved-set images, need at least 2 to hold one out")
        order = rng.permutation(x_pool.shape[0])
        held_out = max(1, int(x_pool.shape[0] * HELD_OUT_SHARE))
        held_out_x, x_pool = x_pool[order[:held_out]], x_pool[order[held_out:]]
        logger.info(f"No IDX test files: holding out {held_out} unobserved-set images for evaluation")

    observed_b = b_pool[:n_b]
    mixture_b = b_pool[n_b:n_b + n_y]
    mixture_x = x_pool[rng.integers(0, x_pool.shape[0], size=n_y)]

    if has_test_files:
        test_images, test_labels = _read_idx_pair(test_images_path, test_labels_path)
        eval_b_pool = test_images[rng.permutation(np.flatnonzero(np.isin(test_labels, b_digits)))]
        eval_x_pool = test_images[np.isin(test_labels, x_digits)]
    else:
        eval_b_pool = b_pool[n_b + n_y:]
        eval_x_pool = held_out_x

    if eval_b_pool.shape[0] < n_eval:
        raise ValueError(f"Only {eval_b_pool.shape[0]} images left for evaluation, need {n_eval}")
    eval_b = eval_b_pool[:n_eval]
    eval_x = eval_x_pool[rng.integers(0, eval_x_pool.shape[0], size=n_eval)]

    dataset = SeparationDataset(
        observed_b=observed_b,
        mixtures_y=mixture_b + mixture_x,
        eval_x=eval_x,
        eval_b=eval_b,
        eval_y=eval_x + eval_b,
        mixture_x=mixture_x,
        meta={
            'name': f"mnist-{observed}-observed",
            'family': 'mnist',
            'sample_shape': list(images.shape[1:]),
            'value_range': [0.0, 2.0],
            'seed': int(seed),
            'kind': 'image',
        },
    )
    dataset.validate()
    logger.info(f"Loaded IDX protocol: {dataset.summary()}")
    return dataset


# -- PGM ---------------------------------------------------------------------------

def save_pgm(image: np.ndarray, path: PathLike) -> str:
    """Write a 2-D array in [0, 1] as an 8-bit binary P5 graymap (round half up)."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ShapeMismatchError(f"PGM needs a 2-D image, got shape {image.shape}")
    if np.any(image < 0.0) or np.any(image > 1.0):
        raise ValueError(f"PGM values must lie in [0, 1] (min={image.min():.4g}, max={image.max():.4g})")

    pixels = np.floor(image * 255.0 + 0.5).astype(np.uint8)
    output_file = Path(path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    with open(output_file, 'wb') as f:
        f.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode('ascii'))
        f.write(pixels.tobytes())
    return str(output_file)


def load_pgm(path: PathLike) -> np.ndarray:
    """Read a binary P5 graymap into [0, 1]."""
    raw = Path(path).read_bytes()
    tokens = []
    offset = 0

    while len(tokens) < 4:
        while offset < len(raw) and raw[offset:offset + 1].isspace():
            offset += 1
        if offset >= len(raw):
            raise FormatError("Truncated PGM header", path=str(path), offset=offset)
        if raw[offset:offset + 1] == b'#':
            while offset < len(raw) and raw[offset:offset + 1] != b'\n':
                offset += 1
            continue
        start = offset
        while offset < len(raw) and not raw[offset:offset + 1].isspace():
            offset += 1
        tokens.append(raw[start:offset])

    if tokens[0] != b'P5':
        raise FormatError(f"Not a binary PGM (magic {tokens[0]!r})", path=str(path), offset=0)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("Malformed PGM header fields", path=str(path), offset=offset)
    if not 0 < maxval < 256 or width <= 0 or height <= 0:
        raise FormatError(f"Unsupported PGM geometry {width}x{height} maxval {maxval}", path=str(path), offset=offset)

    offset += 1  # single whitespace after maxval
    if len(raw) < offset + width * height:
        raise FormatError("Truncated PGM pixel data", path=str(path), offset=len(raw))

    pixels = np.frombuffer(raw, dtype=np.uint8, count=width * height, offset=offset)
    return pixels.reshape(height, width).astype(np.float64) / maxval


# -- WAV ---------------------------------------------------------------------------

def read_wav(path: PathLike) -> Tuple[np.ndarray, int]:
    """
    Read a mono 16-bit PCM WAV file.

    Returns:
        (samples in [-1, 1), sample rate)
    """
    with wave.open(str(path), 'rb') as f:
        if f.getnchannels() != 1:
            raise FormatError(f"Only mono WAV is supported, found {f.getnchannels()} channels", path=str(path))
        if f.getsampwidth() != 2:
            raise FormatError(f"Only 16-bit PCM WAV is supported, found {8 * f.getsampwidth()}-bit", path=str(path))
        rate = f.getframerate()
        frames = f.readframes(f.getnframes())
    return np.frombuffer(frames, dtype='<i2').astype(np.float64) / 32768.0, rate


def write_wav(path: PathLike, samples: np.ndarray, rate: int) -> str:
    """Write mono samples (clipped to [-1, 1]) as 16-bit PCM."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 1:
        raise ShapeMismatchError(f"Only mono audio is supported, got shape {samples.shape}")
    pcm = np.round(np.clip(samples, -1.0, 1.0) * 32767.0).astype('<i2')

    output_file = Path(path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(output_file), 'wb') as f:
        f.setnchannels(1)
        f.setsampwidth(2)
        f.setframerate(int(rate))
        f.writeframes(pcm.tobytes())
    return str(output_file)


# -- STFT --------------------------------------------------------------------------

def _check_frame(frame: int) -> None:
    if frame < 2 or frame & (frame - 1):
        raise ValueError(f"Frame length must be a power of two, got {frame}")


def hann_window(frame: int) -> np.ndarray:
    """Periodic Hann window."""
    n = np.arange(frame)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * n / frame)


def stft(signal: np.ndarray, frame: int = 512, hop: int = 256) -> Tuple[np.ndarray, np.ndarray]:
    """
    Short-time Fourier transform of a mono signal.

    The signal is zero-padded by frame // 2 on the left (and enough on
    the right to fill the last frame).

    Returns:
        (magnitude, phase), each (frame // 2 + 1, n_frames)
    """
    _check_frame(frame)
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim != 1:
        raise ShapeMismatchError(f"stft expects a mono signal, got shape {signal.shape}")

    half = frame // 2
    padded_length = len(signal) + 2 * half
    extra = (-(padded_length - frame)) % hop
    padded = np.concatenate([np.zeros(half), signal, np.zeros(half + extra)])

    frames = np.lib.stride_tricks.sliding_window_view(padded, frame)[::hop] * hann_window(frame)
    spectrum = np.fft.rfft(frames, axis=1).T
    return np.abs(spectrum), np.angle(spectrum)


def istft(magnitude: np.ndarray, phase: np.ndarray, hop: Optional[int] = None,
          length: Optional[int] = None) -> np.ndarray:
    """
    Weighted overlap-add inverse of stft.

    Args:
        magnitude: (n_bins, n_frames)
        phase: Same shape as magnitude
        hop: Hop size (default frame // 2)
        length: Optional output length in samples

    Returns:
        Reconstructed mono signal
    """
    if magnitude.shape != phase.shape:
        raise ShapeMismatchError(f"Magnitude {magnitude.shape} and phase {phase.shape} differ")
    frame = 2 * (magnitude.shape[0] - 1)
    _check_frame(frame)
    hop = frame // 2 if hop is None else hop
    window = hann_window(frame)

    frames = np.fft.irfft((magnitude * np.exp(1j * phase)).T, n=frame, axis=1) * window
    n_frames = frames.shape[0]
    output = np.zeros(frame + hop * (n_frames - 1))
    norm = np.zeros_like(output)
    for index in range(n_frames):
        start = index * hop
        output[start:start + frame] += frames[index]
        norm[start:start + frame] += window * window

    covered = norm > 1e-10
    output[covered] /= norm[covered]

    output = output[frame // 2:]
    return output[:length] if length is not None else output


# -- Grid resampling ---------------------------------------------------------------

def upsample_bilinear(grid: np.ndarray, target_shape: Tuple[int, int]) -> np.ndarray:
    """
    Bilinear interpolation of a 2-D grid onto a larger grid (corners aligned).

    Interpolated values stay inside the input's [min, max] range.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ShapeMismatchError(f"Upsampling needs a 2-D grid, got shape {grid.shape}")
    if target_shape[0] < grid.shape[0] or target_shape[1] < grid.shape[1]:
        raise ValueError(f"Target shape {tuple(target_shape)} is smaller than source {grid.shape}")
    if tuple(target_shape) == grid.shape:
        return grid.copy()

    def _coords(source: int, target: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if source == 1:
            zeros = np.zeros(target, dtype=int)
            return zeros, zeros, np.zeros(target)
        position = np.linspace(0.0, source - 1, target)
        lower = np.minimum(np.floor(position).astype(int), source - 2)
        return lower, lower + 1, position - lower

    r0, r1, fr = _coords(grid.shape[0], target_shape[0])
    c0, c1, fc = _coords(grid.shape[1], target_shape[1])
    top = grid[r0][:, c0] * (1.0 - fc) + grid[r0][:, c1] * fc
    bottom = grid[r1][:, c0] * (1.0 - fc) + grid[r1][:, c1] * fc
    return top * (1.0 - fr)[:, None] + bottom * fr[:, None]


def downsample_mean(grid: np.ndarray, target_shape: Tuple[int, int]) -> np.ndarray:
    """Block-average a (..., H, W) array to (..., h, w); H and W must be multiples of h and w."""
    height, width = grid.shape[-2:]
    rows, cols = target_shape
    if height % rows or width % cols:
        raise ValueError(f"Shape {(height, width)} is not a multiple of {tuple(target_shape)}")
    blocks = grid.reshape(*grid.shape[:-2], rows, height // rows, cols, width // cols)
    return blocks.mean(axis=(-3, -1))
