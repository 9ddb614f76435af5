"""UE trajectory simulation and windowed channel-table datasets.

A trajectory is one UE segment with fixed multipath geometry: per-path
angles scattered around the UE's orientation row, exponential delays,
Rician power split between the line-of-sight path and the rest, uniform
initial phases, and Doppler shifts from a constant velocity.  Tables are
sampled every T_0 slots, cut into stride-1 (history, future) windows, and
stored as float32 blobs next to a JSON sidecar.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel import (
    BsArray,
    CarrierConfig,
    FluidGrid,
    MultipathChannel,
    PathParams,
    channel_table_series,
    doppler_frequency,
)
from .ports import TableStack
from .seeds import rng_for

# Per-UE orientation rows [AOD, AOA, ZOD, ZOA] in degrees.  UE indices
# beyond the table wrap around.
ANGLE_ROWS_DEG = (
    (31.0, 149.0, 150.0, 30.0),
    (-38.0, 218.0, 227.0, -47.0),
    (1.0, 179.0, 99.0, 81.0),
    (10.0, 170.0, 36.0, 144.0),
    (149.0, 31.0, 53.0, 127.0),
    (129.0, 51.0, 71.0, 109.0),
    (-15.0, 195.0, 210.0, -30.0),
    (199.0, -19.0, 212.0, -32.0),
    (-43.0, 223.0, 76.0, 104.0),
    (7.0, 173.0, 23.0, 157.0),
)

META_COLUMNS = ("ue", "segment", "t_start_slot", "t0_slots", "speed_mps")

DATASET_FORMAT = "fluidport-dataset"
DATASET_VERSION = 1
SIDECAR_NAME = "dataset.json"


class DatasetIOError(RuntimeError):
    """Raised for unreadable, mismatched, or corrupted dataset files."""


class DegenerateSampleError(ValueError):
    """Raised when a window's spread is too small to normalize."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to regenerate a dataset from a seed."""

    ue_count: int = 10
    speed_kmh_min: float = 90.0
    speed_kmh_max: float = 150.0
    slot_ms: float = 1.0
    symbols_per_slot: int = 14
    t0_candidates: tuple = (5, 6, 10)
    csi_delay_ms: float = 4.0
    history_len: int = 8
    horizon: int = 8
    train_fraction: float = 0.75
    seed: int = 0
    carrier_hz: float = 39e9
    grid_m: int = 100
    grid_n: int = 50
    aperture_y: float = 10.0
    aperture_z: float = 20.0
    port_density: tuple = (5.0, 5.0)  # (rho_y, rho_z), recorded but unused
    n_paths: int = 37
    delay_spread_ns: float = 616.0
    k_factor_db: float = 13.3
    angle_spread_deg: float = 5.0
    # scatter of the departure angles; None reuses angle_spread_deg.  A
    # cluster far from the BS looks tight from there yet wide from the UE.
    departure_spread_deg: float = None
    segments_per_ue: int = 1
    instants_per_segment: int = 5445

    def __post_init__(self):
        if self.history_len < 1 or self.horizon < 1:
            raise ValueError("history_len and horizon must be >= 1")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie strictly inside (0, 1)")
        if self.ue_count < 1 or self.segments_per_ue < 1:
            raise ValueError("need at least one UE and one segment")
        if self.speed_kmh_min < 0 or self.speed_kmh_max < self.speed_kmh_min:
            raise ValueError("speed range must satisfy 0 <= min <= max")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.t0_candidates or any(t <= 0 for t in self.t0_candidates):
            raise ValueError("t0_candidates must be positive slot counts")
        if self.slot_ms <= 0:
            raise ValueError("slot_ms must be positive")
        if self.departure_spread_deg is not None and self.departure_spread_deg < 0:
            raise ValueError("departure_spread_deg must be >= 0")

    @property
    def slot_s(self) -> float:
        return self.slot_ms * 1e-3

    @property
    def carrier(self) -> CarrierConfig:
        return CarrierConfig(self.carrier_hz)

    @property
    def grid(self) -> FluidGrid:
        return FluidGrid.from_aperture(
            w_y=self.aperture_y,
            w_z=self.aperture_z,
            m=self.grid_m,
            n=self.grid_n,
            carrier=self.carrier,
        )

    def siso_bs(self) -> BsArray:
        lam = self.carrier.wavelength
        return BsArray(n_y=1, n_z=1, d_ty=lam / 2, d_tz=lam / 2)

    @property
    def windows_per_segment(self) -> int:
        return max(0, self.instants_per_segment - self.history_len - self.horizon + 1)

    @property
    def total_windows(self) -> int:
        return self.ue_count * self.segments_per_ue * self.windows_per_segment


@dataclass(frozen=True)
class Trajectory:
    """One UE segment: its channel plus the motion state that shaped it."""

    channel: MultipathChannel
    ue: int
    segment: int
    speed_mps: float
    heading_rad: float
    t0_slots: int


@dataclass(frozen=True)
class Stats:
    """Per-sample normalization constants: complex mean, pooled spread."""

    mu: complex
    sigma: float


@dataclass(frozen=True)
class WindowMeta:
    ue: int
    segment: int
    t_start_slot: float
    t0_slots: int
    speed_mps: float


@dataclass(frozen=True)
class WindowSample:
    history: np.ndarray  # (T, N, M) complex
    future: np.ndarray  # (F, N, M) complex
    reference: np.ndarray  # (F, N, M) complex, constant over (n, m)
    stats: Stats
    meta: WindowMeta

    def __post_init__(self):
        if self.stats.sigma <= 0:
            raise ValueError("sigma must be positive")


def generate_trajectory(
    scenario: ScenarioConfig, ue_index: int, segment: int = 0, bs: BsArray = None
) -> Trajectory:
    """Seeded multipath geometry for one UE segment.

    Draw order (fixed for reproducibility): speed, heading, T_0, then the
    per-path angle offsets, delays, and initial phases.  Path 0 is the
    line-of-sight path: exact orientation-row angles, zero delay, and the
    Rician power share K/(K+1).  The remaining paths scatter around the
    row with exponential delays and powers decaying on the delay-spread
    scale.  Amplitudes are normalized so total path power is 1.

    bs overrides the single-antenna default so evaluation can reuse the
    same seeded geometry under larger arrays.
    """
    if not 0 <= ue_index < scenario.ue_count:
        raise ValueError(f"ue_index {ue_index} outside 0..{scenario.ue_count - 1}")
    if not 0 <= segment < scenario.segments_per_ue:
        raise ValueError(f"segment {segment} outside 0..{scenario.segments_per_ue - 1}")

    rng = rng_for(scenario.seed, "trajectory", ue_index, segment)
    speed_kmh = rng.uniform(scenario.speed_kmh_min, scenario.speed_kmh_max)
    heading = rng.uniform(0.0, 2.0 * np.pi)
    t0 = int(scenario.t0_candidates[rng.integers(len(scenario.t0_candidates))])

    row = np.radians(ANGLE_ROWS_DEG[ue_index % len(ANGLE_ROWS_DEG)])
    aod, aoa, zod, zoa = row
    n_nlos = scenario.n_paths - 1
    tx_spread = (
        scenario.angle_spread_deg
        if scenario.departure_spread_deg is None
        else scenario.departure_spread_deg
    )
    # columns unpack as d_aod, d_aoa, d_zod, d_zoa: tx, rx, tx, rx
    sigmas = np.radians([tx_spread, scenario.angle_spread_deg] * 2)
    offsets = rng.normal(0.0, 1.0, size=(n_nlos, 4)) * sigmas
    ds_s = scenario.delay_spread_ns * 1e-9
    taus = np.sort(rng.exponential(ds_s, size=n_nlos)) if n_nlos else np.empty(0)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=scenario.n_paths)

    k_lin = 10.0 ** (scenario.k_factor_db / 10.0)
    if n_nlos:
        p_los = k_lin / (k_lin + 1.0)
        weights = np.exp(-taus / ds_s)
        p_nlos = weights / weights.sum() / (k_lin + 1.0)
    else:
        p_los = 1.0
        p_nlos = np.empty(0)

    speed_mps = speed_kmh / 3.6
    velocity = speed_mps * np.array([np.cos(heading), np.sin(heading), 0.0])
    carrier = scenario.carrier

    def build_path(theta_tx, phi_tx, theta_rx, phi_rx, tau, power, phase):
        return PathParams(
            theta_tx=theta_tx,
            phi_tx=phi_tx,
            theta_rx=theta_rx,
            phi_rx=phi_rx,
            tau=tau,
            alpha=math.sqrt(power),
            beta=complex(np.exp(1j * phase)),
            w=doppler_frequency(theta_rx, phi_rx, velocity, carrier),
        )

    paths = [build_path(zod, aod, zoa, aoa, 0.0, p_los, phases[0])]
    for p in range(n_nlos):
        d_aod, d_aoa, d_zod, d_zoa = offsets[p]
        paths.append(
            build_path(
                zod + d_zod,
                aod + d_aod,
                zoa + d_zoa,
                aoa + d_aoa,
                float(taus[p]),
                float(p_nlos[p]),
                phases[p + 1],
            )
        )

    channel = MultipathChannel(
        carrier=carrier,
        bs=bs if bs is not None else scenario.siso_bs(),
        grid=scenario.grid,
        paths=tuple(paths),
    )
    return Trajectory(
        channel=channel,
        ue=ue_index,
        segment=segment,
        speed_mps=speed_mps,
        heading_rad=float(heading),
        t0_slots=t0,
    )


def sample_tables(ch: MultipathChannel, t_grid, antenna: int = 1) -> TableStack:
    """Channel tables for one antenna at each instant of t_grid."""
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0:
        raise ValueError("t_grid must be a nonempty 1-D array of seconds")
    if t_grid.size > 1 and not np.all(np.diff(t_grid) > 0):
        raise ValueError("t_grid must be strictly increasing")
    return TableStack(channel_table_series(ch, antenna, t_grid), axis="time")


def compute_stats(history: np.ndarray) -> Stats:
    """Normalization constants from a history block.

    mu is the complex mean; sigma is the standard deviation of the pooled
    real/imag values after centering, so the normalized concatenation has
    zero mean and unit spread.
    """
    h = np.asarray(history)
    mu = complex(h.mean(dtype=np.complex128))
    var = float(np.mean(np.abs(h - mu) ** 2, dtype=np.float64)) / 2.0
    sigma = math.sqrt(var)
    if sigma < 1e-12:
        raise DegenerateSampleError(
            f"window spread {sigma:.3e} below 1e-12; cannot normalize"
        )
    return Stats(mu=mu, sigma=sigma)


def normalize(x: np.ndarray, stats: Stats = None):
    """(x - mu)/sigma with stats taken from x when not supplied."""
    if stats is None:
        stats = compute_stats(x)
    x_norm = (np.asarray(x, dtype=np.complex128) - stats.mu) / stats.sigma
    return x_norm, stats


def denormalize(x_norm: np.ndarray, stats: Stats) -> np.ndarray:
    return np.asarray(x_norm, dtype=np.complex128) * stats.sigma + stats.mu


def make_windows(
    stack, history_len: int, horizon: int, trajectory: Trajectory = None
) -> list:
    """Stride-1 (history, future) windows over a time-axis table stack.

    The reference channel per window is the port-(1,1) value at the last
    history instant, broadcast over the grid for every future step.  A
    stack shorter than history_len + horizon yields no windows.  Window
    times in meta assume the stack was sampled on the trajectory's T_0
    clock starting at slot 0.
    """
    tables = stack.tables if isinstance(stack, TableStack) else np.asarray(stack)
    if tables.ndim != 3:
        raise ValueError("expected a (S, N, M) time stack")
    s_len = tables.shape[0]
    shape = tables.shape[1:]
    total = history_len + horizon
    windows = []
    for k in range(s_len - total + 1):
        history = tables[k : k + history_len]
        future = tables[k + history_len : k + total]
        ref_val = tables[k + history_len - 1, 0, 0]
        reference = np.broadcast_to(ref_val, (horizon,) + shape)
        if trajectory is not None:
            meta = WindowMeta(
                ue=trajectory.ue,
                segment=trajectory.segment,
                t_start_slot=float(k * trajectory.t0_slots),
                t0_slots=trajectory.t0_slots,
                speed_mps=trajectory.speed_mps,
            )
        else:
            meta = WindowMeta(ue=0, segment=0, t_start_slot=float(k), t0_slots=1, speed_mps=0.0)
        windows.append(
            WindowSample(
                history=history,
                future=future,
                reference=reference,
                stats=compute_stats(history),
                meta=meta,
            )
        )
    return windows


@dataclass
class Dataset:
    """Columnar window store; complex64 tensors, float64 meta.

    meta columns follow META_COLUMNS.  reference holds the port-(1,1)
    scalar per future step; reference_tables() rebuilds the broadcast
    form.
    """

    history: np.ndarray  # (K, T, N, M) complex64
    future: np.ndarray  # (K, F, N, M) complex64
    reference: np.ndarray  # (K, F) complex64
    meta: np.ndarray  # (K, 5) float64
    train_idx: np.ndarray  # sorted uint32
    test_idx: np.ndarray  # sorted uint32
    scenario: ScenarioConfig = None

    def __len__(self) -> int:
        return self.history.shape[0]

    @property
    def grid_shape(self):
        return self.history.shape[2:]

    def reference_tables(self, k: int) -> np.ndarray:
        f = self.reference.shape[1]
        return np.broadcast_to(
            self.reference[k][:, None, None], (f,) + self.grid_shape
        )

    def sample(self, k: int) -> WindowSample:
        m = self.meta[k]
        return WindowSample(
            history=self.history[k],
            future=self.future[k],
            reference=self.reference_tables(k),
            stats=compute_stats(self.history[k]),
            meta=WindowMeta(
                ue=int(m[0]),
                segment=int(m[1]),
                t_start_slot=float(m[2]),
                t0_slots=int(m[3]),
                speed_mps=float(m[4]),
            ),
        )


def split_dataset(n_samples: int, train_fraction: float, seed: int):
    """Seed-deterministic shuffle split; train gets ceil(fraction * K)."""
    if n_samples < 1:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie strictly inside (0, 1)")
    n_train = int(math.ceil(train_fraction * n_samples))
    perm = rng_for(seed, "split").permutation(n_samples)
    train = np.sort(perm[:n_train]).astype(np.uint32)
    test = np.sort(perm[n_train:]).astype(np.uint32)
    return train, test


def generate_dataset(scenario: ScenarioConfig) -> Dataset:
    """All windows for all UE segments, split per scenario settings."""
    hist_parts, fut_parts, ref_parts, meta_rows = [], [], [], []
    t = scenario.history_len
    f = scenario.horizon
    for ue in range(scenario.ue_count):
        for seg in range(scenario.segments_per_ue):
            traj = generate_trajectory(scenario, ue, seg)
            t_grid = (
                np.arange(scenario.instants_per_segment)
                * traj.t0_slots
                * scenario.slot_s
            )
            stack = sample_tables(traj.channel, t_grid, antenna=1)
            for w in make_windows(stack, t, f, trajectory=traj):
                hist_parts.append(w.history.astype(np.complex64))
                fut_parts.append(w.future.astype(np.complex64))
                ref_parts.append(w.reference[:, 0, 0].astype(np.complex64))
                meta_rows.append(
                    [w.meta.ue, w.meta.segment, w.meta.t_start_slot, w.meta.t0_slots, w.meta.speed_mps]
                )
    if not hist_parts:
        raise ValueError("scenario produced no windows; increase instants_per_segment")
    k = len(hist_parts)
    train_idx, test_idx = split_dataset(k, scenario.train_fraction, scenario.seed)
    return Dataset(
        history=np.stack(hist_parts),
        future=np.stack(fut_parts),
        reference=np.stack(ref_parts),
        meta=np.array(meta_rows, dtype=np.float64),
        train_idx=train_idx,
        test_idx=test_idx,
        scenario=scenario,
    )


def _complex_to_pairs(x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape + (2,), dtype="<f4")
    out[..., 0] = x.real
    out[..., 1] = x.imag
    return out


def _pairs_to_complex(pairs: np.ndarray) -> np.ndarray:
    return (pairs[..., 0] + 1j * pairs[..., 1]).astype(np.complex64)


def _blob_entry(name: str, array: np.ndarray, dtype: str):
    raw = np.ascontiguousarray(array.astype(dtype, copy=False)).tobytes()
    digest = hashlib.sha256(raw).hexdigest()
    return raw, {
        "file": f"{name}-{digest[:12]}.bin",
        "sha256": digest,
        "shape": list(array.shape),
        "dtype": dtype,
    }


def save_dataset(ds: Dataset, out_dir) -> str:
    """Write blobs + sidecar into out_dir; returns the sidecar path.

    Output is fully deterministic for a given dataset: filenames carry
    content hashes and the sidecar has no timestamps.
    """
    os.makedirs(out_dir, exist_ok=True)
    tensors = {
        "history": (_complex_to_pairs(ds.history), "<f4"),
        "future": (_complex_to_pairs(ds.future), "<f4"),
        "reference": (_complex_to_pairs(ds.reference), "<f4"),
        "meta": (ds.meta, "<f8"),
        "split_train": (ds.train_idx, "<u4"),
        "split_test": (ds.test_idx, "<u4"),
    }
    blobs = {}
    for name, (arr, dtype) in tensors.items():
        raw, entry = _blob_entry(name, arr, dtype)
        blobs[name] = entry
        with open(os.path.join(out_dir, entry["file"]), "wb") as fh:
            fh.write(raw)
    combined = hashlib.sha256(
        "".join(blobs[name]["sha256"] for name in sorted(blobs)).encode()
    ).hexdigest()
    sidecar = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "scenario": asdict(ds.scenario) if ds.scenario else None,
        "counts": {
            "samples": len(ds),
            "train": int(ds.train_idx.size),
            "test": int(ds.test_idx.size),
        },
        "dim_order": ["sample", "time", "n", "m", "re/im"],
        "reference_layout": "port11-scalar",
        "meta_columns": list(META_COLUMNS),
        "blobs": blobs,
        "content_hash": combined,
    }
    path = os.path.join(out_dir, SIDECAR_NAME)
    with open(path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _read_blob(dirname: str, entry: dict) -> np.ndarray:
    path = os.path.join(dirname, entry["file"])
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as e:
        raise DatasetIOError(f"cannot read blob {path}: {e}") from e
    digest = hashlib.sha256(raw).hexdigest()
    if digest != entry["sha256"]:
        raise DatasetIOError(
            f"checksum mismatch for {entry['file']}: "
            f"expected {entry['sha256'][:12]}, got {digest[:12]}"
        )
    return np.frombuffer(raw, dtype=entry["dtype"]).reshape(entry["shape"])


def load_dataset(path):
    """Read a dataset dir or sidecar path; returns (Dataset, sidecar dict)."""
    path = str(path)
    if os.path.isdir(path):
        path = os.path.join(path, SIDECAR_NAME)
    try:
        with open(path) as fh:
            sidecar = json.load(fh)
    except OSError as e:
        raise DatasetIOError(f"cannot read dataset sidecar {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise DatasetIOError(f"malformed dataset sidecar {path}: {e}") from e
    if sidecar.get("format") != DATASET_FORMAT:
        raise DatasetIOError(f"{path} is not a {DATASET_FORMAT} sidecar")
    dirname = os.path.dirname(path)
    blobs = sidecar["blobs"]
    scenario = (
        ScenarioConfig(**_scenario_kwargs(sidecar["scenario"]))
        if sidecar.get("scenario")
        else None
    )
    ds = Dataset(
        history=_pairs_to_complex(_read_blob(dirname, blobs["history"])),
        future=_pairs_to_complex(_read_blob(dirname, blobs["future"])),
        reference=_pairs_to_complex(_read_blob(dirname, blobs["reference"])),
        meta=np.array(_read_blob(dirname, blobs["meta"]), dtype=np.float64),
        train_idx=np.array(_read_blob(dirname, blobs["split_train"]), dtype=np.uint32),
        test_idx=np.array(_read_blob(dirname, blobs["split_test"]), dtype=np.uint32),
        scenario=scenario,
    )
    return ds, sidecar


def _scenario_kwargs(raw: dict) -> dict:
    out = dict(raw)
    for key in ("t0_candidates", "port_density"):
        if key in out and isinstance(out[key], list):
            out[key] = tuple(out[key])
    return out
