"""Synthetic FDD clustered-multipath channel sampler and dataset store.

Each user sees L discrete paths with an exponential power-delay profile,
a half-wavelength uniform linear array at the BS and isotropic random
unit vectors at the UE. Uplink and downlink share the path geometry
(delays, powers, angles, UE vectors) but draw independent complex gains,
which models FDD partial reciprocity: magnitudes correlate across the
band, phases do not.

Channels are normalized so the average per-subcarrier squared Frobenius
norm is n_rx * n_tx (unit element energy): configured SNRs are then
directly interpretable. Datasets are stored as float32 pairs in a binary
file with magic ``JFPC``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

__all__ = [
    "ChannelSample",
    "DatasetFormatError",
    "N_PATHS",
    "RMS_DELAY_S",
    "MAX_DELAY_S",
    "bs_steering",
    "freq_response",
    "sample_channel",
    "sample_seed",
    "generate_dataset",
    "write_dataset",
    "read_dataset",
]

# multipath model parameters (desk-scale stand-in for a geometry-based
# channel generator; see README)
N_PATHS = 6
RMS_DELAY_S = 0.5e-6
MAX_DELAY_S = 2.0e-6

DATASET_MAGIC = b"JFPC"
DATASET_VERSION = 1


class DatasetFormatError(IOError):
    """Malformed dataset file (bad magic/version/lengths)."""


@dataclass
class ChannelSample:
    """One draw of downlink and uplink CSI for all users.

    h_dl: (n_users, n_subcarriers, n_rx, n_tx) complex
    h_ul: (n_users, n_ul_subcarriers, n_tx, n_rx) complex
    seed: integer that reproduces this sample via default_rng(seed)
    """

    h_dl: np.ndarray
    h_ul: np.ndarray
    seed: int


def bs_steering(n_tx: int, angles: np.ndarray) -> np.ndarray:
    """Half-wavelength ULA steering vectors, one row per angle: (L, n_tx)."""
    return np.exp(-1j * np.pi * np.outer(np.sin(angles), np.arange(n_tx)))


def freq_response(gains, delays, rx_vecs, tx_vecs, freqs) -> np.ndarray:
    """Multipath frequency response sum_l g_l rx_l tx_l^H e^{-j2 pi f tau_l}.

    gains (L,), delays (L,) seconds, rx_vecs (L, n_rx), tx_vecs (L, n_tx),
    freqs (F,) Hz. Returns (F, n_rx, n_tx).
    """
    phase = np.exp(-2j * np.pi * np.outer(delays, freqs))  # (L, F)
    return np.einsum("l,lf,lr,lt->frt", gains, phase, rx_vecs, np.conj(tx_vecs))


def _unit_rows(rng: np.random.Generator, n_rows: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n_rows, dim)) + 1j * rng.standard_normal((n_rows, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_channel(cfg: SystemConfig, rng: np.random.Generator, seed: int = 0) -> ChannelSample:
    """Draw one multiuser FDD channel sample.

    Per user: L path delays uniform on [0, MAX_DELAY_S] with exponential
    power-delay profile (rms RMS_DELAY_S), BS departure angles uniform in
    (-pi/2, pi/2), Rayleigh path gains. The uplink reuses the geometry
    with fresh gains on the uplink subcarrier grid.
    """
    k, n_t, n_r = cfg.n_users, cfg.n_tx, cfg.n_rx
    f_dl = np.arange(cfg.n_subcarriers) * (cfg.bandwidth_hz / cfg.n_subcarriers)
    f_ul = np.arange(cfg.n_ul_subcarriers) * (cfg.bandwidth_hz / cfg.n_ul_subcarriers)
    h_dl = np.empty((k, cfg.n_subcarriers, n_r, n_t), dtype=np.complex128)
    h_ul = np.empty((k, cfg.n_ul_subcarriers, n_t, n_r), dtype=np.complex128)
    for u in range(k):
        delays = np.sort(rng.uniform(0.0, MAX_DELAY_S, N_PATHS))
        powers = np.exp(-delays / RMS_DELAY_S)
        powers /= powers.sum()
        angles = rng.uniform(-np.pi / 2, np.pi / 2, N_PATHS)
        a_bs = bs_steering(n_t, angles)  # (L, n_t)
        ue_vecs = _unit_rows(rng, N_PATHS, n_r)  # (L, n_r)
        # sqrt(n_rx * p_l) CN(0,1) gains give E||H^{(f)}||_F^2 = n_rx * n_tx
        scale = np.sqrt(powers * n_r / 2.0)
        g_dl = scale * (rng.standard_normal(N_PATHS) + 1j * rng.standard_normal(N_PATHS))
        g_ul = scale * (rng.standard_normal(N_PATHS) + 1j * rng.standard_normal(N_PATHS))
        h_dl[u] = freq_response(g_dl, delays, ue_vecs, a_bs, f_dl)
        # uplink direction: BS receives on the array, UE transmits
        h_ul[u] = freq_response(g_ul, delays, a_bs, ue_vecs, f_ul)
    return ChannelSample(h_dl=h_dl, h_ul=h_ul, seed=seed)


def sample_seed(master_seed: int, index: int) -> int:
    """Per-sample seed derived from (master seed, sample index).

    Splitmix-style: independent streams for every index, safe for
    parallel generation.
    """
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def generate_dataset(cfg: SystemConfig, count: int, master_seed: int, first_index: int = 0):
    """Generate `count` samples with per-sample seeds from `master_seed`.

    `first_index` offsets the per-sample seed stream so disjoint splits
    (train/val/test) can come from one master seed.
    """
    samples = []
    for i in range(count):
        s = sample_seed(master_seed, first_index + i)
        samples.append(sample_channel(cfg, np.random.default_rng(s), seed=s))
    return samples


# -- binary dataset format ------------------------------------------------------
#
# little-endian layout:
#   magic "JFPC" | u32 version
#   config echo: u32 x 11 (n_subcarriers, n_tx, n_rx, n_streams, n_users,
#                sc_per_rb, rb_per_subband, n_rb, n_subbands,
#                n_ul_subcarriers, latent_dim)
#   config echo: f64 x 5 (total_power, noise_power_dl, f_dl_hz, f_ul_hz,
#                bandwidth_hz)
#   u64 sample count
#   per sample: u64 seed | h_dl complex64 | h_ul complex64

_HDR_INTS = struct.Struct("<11I")
_HDR_FLOATS = struct.Struct("<5d")


def _sample_nbytes(cfg: SystemConfig) -> int:
    n_dl = cfg.n_users * cfg.n_subcarriers * cfg.n_rx * cfg.n_tx
    n_ul = cfg.n_users * cfg.n_ul_subcarriers * cfg.n_tx * cfg.n_rx
    return 8 + 8 * (n_dl + n_ul)


def write_dataset(path, cfg: SystemConfig, samples) -> None:
    """Write samples at float32 precision; see module header for layout."""
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(
            _HDR_INTS.pack(
                cfg.n_subcarriers,
                cfg.n_tx,
                cfg.n_rx,
                cfg.n_streams,
                cfg.n_users,
                cfg.sc_per_rb,
                cfg.rb_per_subband,
                cfg.n_rb,
                cfg.n_subbands,
                cfg.n_ul_subcarriers,
                cfg.latent_dim,
            )
        )
        fh.write(
            _HDR_FLOATS.pack(
                cfg.total_power, cfg.noise_power_dl, cfg.f_dl_hz, cfg.f_ul_hz, cfg.bandwidth_hz
            )
        )
        fh.write(struct.pack("<Q", len(samples)))
        dl_shape = (cfg.n_users, cfg.n_subcarriers, cfg.n_rx, cfg.n_tx)
        ul_shape = (cfg.n_users, cfg.n_ul_subcarriers, cfg.n_tx, cfg.n_rx)
        for s in samples:
            if s.h_dl.shape != dl_shape or s.h_ul.shape != ul_shape:
                raise DatasetFormatError(
                    f"sample shapes {s.h_dl.shape}/{s.h_ul.shape} do not match config "
                    f"{dl_shape}/{ul_shape}"
                )
            fh.write(struct.pack("<Q", int(s.seed) & 0xFFFFFFFFFFFFFFFF))
            fh.write(np.ascontiguousarray(s.h_dl, dtype="<c8").tobytes())
            fh.write(np.ascontiguousarray(s.h_ul, dtype="<c8").tobytes())


def read_dataset(path):
    """Read a dataset file; returns (SystemConfig, list[ChannelSample]).

    Arrays come back as complex64 (the storage precision), so a
    write/read round trip is bitwise exact.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise DatasetFormatError(f"{path}: bad magic {blob[:4]!r}, expected {DATASET_MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != DATASET_VERSION:
        raise DatasetFormatError(f"{path}: unsupported version {version}")
    try:
        ints = _HDR_INTS.unpack_from(blob, off)
        off += _HDR_INTS.size
        floats = _HDR_FLOATS.unpack_from(blob, off)
        off += _HDR_FLOATS.size
        (count,) = struct.unpack_from("<Q", blob, off)
        off += 8
    except struct.error as exc:
        raise DatasetFormatError(f"{path}: truncated header: {exc}") from exc
    cfg = SystemConfig(
        n_subcarriers=ints[0],
        n_tx=ints[1],
        n_rx=ints[2],
        n_streams=ints[3],
        n_users=ints[4],
        sc_per_rb=ints[5],
        rb_per_subband=ints[6],
        n_ul_subcarriers=ints[9],
        latent_dim=ints[10],
        total_power=floats[0],
        noise_power_dl=floats[1],
        f_dl_hz=floats[2],
        f_ul_hz=floats[3],
        bandwidth_hz=floats[4],
    )
    if cfg.n_rb != ints[7] or cfg.n_subbands != ints[8]:
        raise DatasetFormatError(
            f"{path}: header RB/subband counts ({ints[7]}, {ints[8]}) inconsistent with "
            f"dimensions ({cfg.n_rb}, {cfg.n_subbands})"
        )
    expected = off + count * _sample_nbytes(cfg)
    if len(blob) != expected:
        raise DatasetFormatError(
            f"{path}: header declares {count} samples ({expected} bytes), file has {len(blob)} bytes"
        )
    n_dl = cfg.n_users * cfg.n_subcarriers * cfg.n_rx * cfg.n_tx
    n_ul = cfg.n_users * cfg.n_ul_subcarriers * cfg.n_tx * cfg.n_rx
    dl_shape = (cfg.n_users, cfg.n_subcarriers, cfg.n_rx, cfg.n_tx)
    ul_shape = (cfg.n_users, cfg.n_ul_subcarriers, cfg.n_tx, cfg.n_rx)
    samples = []
    for _ in range(count):
        (seed,) = struct.unpack_from("<Q", blob, off)
        off += 8
        h_dl = np.frombuffer(blob, dtype="<c8", count=n_dl, offset=off).reshape(dl_shape)
        off += 8 * n_dl
        h_ul = np.frombuffer(blob, dtype="<c8", count=n_ul, offset=off).reshape(ul_shape)
        off += 8 * n_ul
        samples.append(ChannelSample(h_dl=h_dl.copy(), h_ul=h_ul.copy(), seed=int(seed)))
    return cfg, samples
