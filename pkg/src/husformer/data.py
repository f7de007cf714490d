"""Multi-modal datasets: the HSF1 binary format, batching, and a synthetic
generator whose label lives in cross-modal phase relations.

HSF1 layout (all integers little-endian)::

    b"HSF1"  u32 version  u32 n_modalities  u32 n_classes
    n_modalities x { u32 name_len, name (UTF-8), u32 channels, u32 input_dim }
    u32 n_samples
    n_samples x { per modality: channels*input_dim float64 (row-major), u16 label }

A converter from a public corpus would write one record per fixed window,
e.g. a raw 32-channel x 512-sample EEG window as a ``32 x 512`` modality.
"""

import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, DataError, FormatError

MAGIC = b"HSF1"
VERSION = 1


class ModalityShape(NamedTuple):
    name: str
    channels: int
    input_dim: int


class MultiModalSample(NamedTuple):
    arrays: tuple
    label: int


class Batch(NamedTuple):
    indices: np.ndarray
    inputs: list
    labels: np.ndarray


@dataclass
class Dataset:
    modalities: tuple
    arrays: list  # one (N, L_i, D_i) float64 array per modality
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.modalities = tuple(ModalityShape(*m) for m in self.modalities)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in self.arrays]
        n = len(self.labels)
        if len(self.arrays) != len(self.modalities):
            raise DataError(f"{len(self.arrays)} arrays for {len(self.modalities)} modalities")
        for m, a in zip(self.modalities, self.arrays):
            if a.shape != (n, m.channels, m.input_dim):
                raise DataError(
                    f"modality {m.name!r}: expected shape {(n, m.channels, m.input_dim)}, got {a.shape}"
                )
            if not np.all(np.isfinite(a)):
                raise DataError(f"modality {m.name!r} contains non-finite values")
        if self.num_classes < 2:
            raise DataError(f"num_classes must be >= 2, got {self.num_classes}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def sample(self, i):
        return MultiModalSample(tuple(a[i] for a in self.arrays), int(self.labels[i]))

    def batch(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return Batch(indices, [a[indices] for a in self.arrays], self.labels[indices])

    def subset(self, indices):
        b = self.batch(indices)
        return Dataset(self.modalities, b.inputs, b.labels, self.num_classes)

    def select_modalities(self, which):
        """Keep only the modalities at positions ``which`` (in that order)."""
        return Dataset(
            [self.modalities[i] for i in which], [self.arrays[i] for i in which],
            self.labels, self.num_classes,
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.modalities == other.modalities
            and self.num_classes == other.num_classes
            and self.labels.tobytes() == other.labels.tobytes()
            and all(a.tobytes() == b.tobytes() for a, b in zip(self.arrays, other.arrays))
        )


# -- HSF1 ----------------------------------------------------------------------


def to_bytes(dataset):
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<III", VERSION, len(dataset.modalities), dataset.num_classes))
    for m in dataset.modalities:
        name = m.name.encode("utf-8")
        out.write(struct.pack("<I", len(name)))
        out.write(name)
        out.write(struct.pack("<II", m.channels, m.input_dim))
    out.write(struct.pack("<I", len(dataset)))
    flat = [
        a.reshape(len(dataset), m.channels * m.input_dim).astype("<f8")
        for m, a in zip(dataset.modalities, dataset.arrays)
    ]
    for i in range(len(dataset)):
        for a in flat:
            out.write(a[i].tobytes())
        out.write(struct.pack("<H", int(dataset.labels[i])))
    return out.getvalue()


def write_dataset(dataset, path):
    Path(path).write_bytes(to_bytes(dataset))


class _Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated file: need {n} bytes for {what}, {len(self.buf) - self.pos} left",
                self.pos,
            )
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def from_bytes(buf):
    r = _Reader(buf)
    if r.take(4, "magic") != MAGIC:
        raise FormatError("bad magic, not an HSF1 file", 0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    n_mod = r.u32("modality count")
    n_classes = r.u32("class count")
    if n_classes < 2:
        raise FormatError(f"class count must be >= 2, got {n_classes}", 12)
    mods = []
    for _ in range(n_mod):
        name_len = r.u32("name length")
        start = r.pos
        try:
            name = r.take(name_len, "modality name").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"modality name is not UTF-8: {exc}", start) from None
        mods.append(ModalityShape(name, r.u32("channels"), r.u32("input_dim")))
    n = r.u32("sample count")
    sizes = [m.channels * m.input_dim for m in mods]
    record = sum(sizes) * 8 + 2
    expected = r.pos + n * record
    if len(buf) < expected:
        # report the first record that is cut short
        bad = r.pos + ((len(buf) - r.pos) // record) * record
        raise FormatError(f"truncated file: expected {expected} bytes, got {len(buf)}", bad)
    if len(buf) > expected:
        raise FormatError(f"{len(buf) - expected} trailing bytes after last record", expected)
    dtype = np.dtype([(f"m{i}", "<f8", (s,)) for i, s in enumerate(sizes)] + [("label", "<u2")])
    records = np.frombuffer(buf, dtype=dtype, count=n, offset=r.pos)
    labels = records["label"].astype(np.int64)
    bad = np.nonzero(labels >= n_classes)[0]
    if bad.size:
        i = int(bad[0])
        raise FormatError(
            f"record {i}: label {labels[i]} >= class count {n_classes}", r.pos + i * record + record - 2
        )
    arrays = [
        records[f"m{i}"].astype(np.float64).reshape(n, m.channels, m.input_dim)
        for i, m in enumerate(mods)
    ]
    return Dataset(mods, arrays, labels, n_classes)


def read_dataset(path):
    return from_bytes(Path(path).read_bytes())


# -- batching -------------------------------------------------------------------


def batch_iter(dataset, batch_size, shuffle=False, seed=None):
    """Yield ``ceil(N / batch_size)`` batches; the last may be short."""
    if batch_size < 1:
        raise ConfigurationError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield dataset.batch(order[start:start + batch_size])


# -- synthetic generator ----------------------------------------------------------


DEFAULT_CHANNELS = (2, 3, 1)
DEFAULT_INPUT_DIMS = (32, 24, 16)


def default_modalities(n_modalities):
    return [
        ModalityShape(
            f"m{i}",
            DEFAULT_CHANNELS[i % len(DEFAULT_CHANNELS)],
            DEFAULT_INPUT_DIMS[i % len(DEFAULT_INPUT_DIMS)],
        )
        for i in range(n_modalities)
    ]


def synthesize_dataset(n_modalities, specs=None, n_samples=2000, num_classes=3,
                       coupling=1.0, seed=0, noise=1.0):
    """Phase-coupled sinusoids with a uniformly drawn class per sample.

    Channel ``l`` of modality ``i`` is ``a_il * cos(2*pi*f_i*t/D_i + phi_i + w_il)``
    plus Gaussian noise of standard deviation ``noise``; amplitudes ``a``,
    channel offsets ``w`` and frequencies ``f`` are fixed per dataset. With a
    per-sample nuisance phase ``psi ~ U[0, 2*pi)`` and class ``y``::

        phi_i = coupling * psi + 2*pi*y * (coupling * i + (1 - coupling)) / c

    At ``coupling=0`` every modality's absolute phase encodes ``y``. At
    ``coupling=1`` each modality's phase is uniform whatever ``y`` is, so no
    modality alone is informative, while ``phi_i - phi_j = 2*pi*y*(i - j)/c``
    reveals ``y`` to any model that relates modalities.
    """
    if n_modalities < 1:
        raise ConfigurationError(f"n_modalities must be >= 1, got {n_modalities}")
    if num_classes < 2:
        raise ConfigurationError(f"num_classes must be >= 2, got {num_classes}")
    if n_samples < num_classes:
        raise ConfigurationError(f"n_samples ({n_samples}) must be >= num_classes ({num_classes})")
    if not 0.0 <= coupling <= 1.0:
        raise ConfigurationError(f"coupling must lie in [0, 1], got {coupling}")
    if noise < 0:
        raise ConfigurationError(f"noise must be >= 0, got {noise}")
    specs = default_modalities(n_modalities) if specs is None else [ModalityShape(*s) for s in specs]
    if len(specs) != n_modalities:
        raise ConfigurationError(f"{len(specs)} specs given for {n_modalities} modalities")

    rng = np.random.default_rng(seed)
    labels = rng.integers(0, num_classes, size=n_samples)
    psi = rng.uniform(0.0, 2.0 * math.pi, size=n_samples)
    arrays = []
    for i, m in enumerate(specs):
        freq = 1.0 + (i % 3)
        amp = rng.uniform(0.5, 1.5, size=m.channels)
        offset = rng.uniform(0.0, 2.0 * math.pi, size=m.channels)
        phi = coupling * psi + 2.0 * math.pi * labels * (coupling * i + (1.0 - coupling)) / num_classes
        t = np.arange(m.input_dim) / m.input_dim
        angle = (
            2.0 * math.pi * freq * t[None, None, :]
            + phi[:, None, None]
            + offset[None, :, None]
        )
        signal = amp[None, :, None] * np.cos(angle)
        arrays.append(signal + noise * rng.standard_normal(signal.shape))
    return Dataset(specs, arrays, labels, num_classes)


def write_manifest(path, **params):
    """Sidecar ``<dataset>.json`` recording how a synthetic file was made."""
    manifest = {"format": "HSF1", "version": VERSION, "generator": "phase-coupled-sinusoids", **params}
    Path(str(path) + ".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
