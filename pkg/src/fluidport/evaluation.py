"""Test metrics and the baseline sweep.

For every (speed, BS array) cell a fresh seeded trajectory is generated,
channel tables are sampled on the T_0 clock, and forecast windows are
placed window_hop instants apart (disjoint by default, so the window
averages actually decorrelate).  Per future step each strategy commits to
a beamformer channel h_used and lands on a true channel h_true:

  stationary     the channel never ages; h_true = h_used = reference
  no_prediction  port stays at (1,1); h_used is the outdated reference,
                 h_true the current port-(1,1) channel
  port_llm       ports follow the model's predicted tables; h_used is the
                 reference the movement tries to preserve, h_true the true
                 channel at the selected port
  oracle_ports   like port_llm but selecting on the true future tables,
                 bounding what port movement alone can achieve

NMSE ratios are averaged per (window, future step) and reported in dB;
exact-zero means fall below the 1e-30 floor and are written as the -300
sentinel so CSVs stay numeric.
"""

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .channel import BsArray, channel_block
from .dataset import ScenarioConfig, generate_trajectory
from .model import PortLLM
from .ports import select_port_multi, write_port_trace
from .seeds import rng_for

KNOWN_BASELINES = ("stationary", "no_prediction", "port_llm", "oracle_ports")
DB_SENTINEL = -300.0
_RATIO_FLOOR = 1e-30

RESULTS_HEADER = (
    "baseline",
    "speed_kmh",
    "bs_ny",
    "bs_nz",
    "snr_db",
    "se_bps_hz",
    "nmse_t_db",
    "nmse_v_db",
    "n_snapshots",
)


@dataclass(frozen=True)
class EvalConfig:
    bs_arrays: tuple = ((2, 8), (8, 8), (32, 8))
    speeds_kmh: tuple = (90.0, 120.0, 150.0)
    snr_db: tuple = (0.0, 5.0, 10.0, 15.0, 20.0)
    n_ue: int = 1
    baselines: tuple = ("stationary", "no_prediction", "port_llm")
    n_windows: int = 13
    window_hop: int = 0  # instants between window starts; 0 = T + F (disjoint)
    seed: int = 0

    def __post_init__(self):
        if not self.snr_db:
            raise ValueError("snr_db grid must be nonempty")
        if list(self.snr_db) != sorted(self.snr_db):
            raise ValueError("snr_db grid must be sorted ascending")
        if not self.bs_arrays or any(ny < 1 or nz < 1 for ny, nz in self.bs_arrays):
            raise ValueError("bs_arrays must be nonempty with positive dims")
        unknown = set(self.baselines) - set(KNOWN_BASELINES)
        if unknown:
            raise ValueError(f"unknown baselines: {sorted(unknown)}")
        if self.n_ue < 1 or self.n_windows < 1:
            raise ValueError("n_ue and n_windows must be >= 1")
        if self.window_hop < 0:
            raise ValueError("window_hop must be >= 0")

    def hop_for(self, scenario) -> int:
        """Window start spacing; defaults to one full window length."""
        return self.window_hop or (scenario.history_len + scenario.horizon)


def nmse_db(ratios) -> float:
    """10*log10 of the mean ratio; -inf when the mean underflows to ~0."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if ratios.size == 0:
        raise ValueError("empty ratio set")
    mean = float(ratios.mean())
    if mean < _RATIO_FLOOR:
        return -math.inf
    return 10.0 * math.log10(mean)


def _ratio_set(a, b, label):
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim < 2:
        raise ValueError(f"mismatched {label} shapes: {a.shape} vs {b.shape}")
    axes = tuple(range(1, a.ndim))
    err = np.sum(np.abs(b - a) ** 2, axis=axes)
    ref = np.sum(np.abs(b) ** 2, axis=axes)
    if np.any(ref == 0):
        raise ValueError(f"degenerate {label}: zero-norm entry")
    return err / ref


def nmse_t(s_hat_set, s_set) -> float:
    """Table prediction error in dB: per-sample ratio, then mean, then log."""
    return nmse_db(_ratio_set(s_hat_set, s_set, "target set"))


def nmse_v(h_set, h_ref_set) -> float:
    """Selected-port channel error vs the reference, in dB."""
    h = np.asarray(h_set)
    h_ref = np.asarray(h_ref_set)
    if h.shape != h_ref.shape or h.ndim < 2:
        raise ValueError(f"mismatched channel sets: {h.shape} vs {h_ref.shape}")
    axes = tuple(range(1, h.ndim))
    err = np.sum(np.abs(h - h_ref) ** 2, axis=axes)
    ref = np.sum(np.abs(h_ref) ** 2, axis=axes)
    if np.any(ref == 0):
        raise ValueError("degenerate reference: zero-norm entry")
    return nmse_db(err / ref)


def sinr(h_true, h_used, snr_linear: float) -> float:
    """Matched-filter SINR: beamform on h_used, receive through h_true."""
    h_true = np.asarray(h_true).ravel()
    h_used = np.asarray(h_used).ravel()
    norm_sq = float(np.sum(np.abs(h_used) ** 2))
    if norm_sq == 0:
        raise ValueError("zero beamforming channel")
    gain = abs(np.sum(h_true * np.conj(h_used))) ** 2 / norm_sq
    return float(snr_linear) * gain


def spectral_efficiency(sinr_values) -> float:
    """Mean log2(1 + SINR) over snapshots."""
    values = np.asarray(sinr_values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty SINR set")
    return float(np.mean(np.log2(1.0 + values)))


def beam_gain(h_true, h_used) -> float:
    """SINR per unit SNR: |<h_true, h_used>|^2 / ||h_used||^2."""
    return sinr(h_true, h_used, 1.0)


@dataclass
class CellMetrics:
    """Per-baseline arrays for one (speed, array) evaluation cell."""

    ratios_t: dict = field(default_factory=dict)  # baseline -> (n_samples, F)
    ratios_v: dict = field(default_factory=dict)  # baseline -> (n_samples_v, F)
    gains: dict = field(default_factory=dict)  # baseline -> (n_ue, snapshots)
    trace: list = field(default_factory=list)  # port_llm PortIndex rows
    n_snapshots: int = 0


def _forward_batched(model: PortLLM, histories: np.ndarray, chunk: int = 256):
    """Model forwards over a (B, T, N, M) complex batch, chunked."""
    outs = []
    with torch.no_grad():
        for lo in range(0, histories.shape[0], chunk):
            x = torch.from_numpy(histories[lo : lo + chunk].astype(np.complex64))
            outs.append(model(x).numpy())
    return np.concatenate(outs, axis=0)


def check_model_compat(model: PortLLM, scenario: ScenarioConfig):
    cfg = model.cfg
    pairs = [
        ("history_len", cfg.history_len, scenario.history_len),
        ("horizon", cfg.horizon, scenario.horizon),
        ("ports_z", cfg.ports_z, scenario.grid_n),
        ("ports_y", cfg.ports_y, scenario.grid_m),
    ]
    bad = [(n, a, b) for n, a, b in pairs if a != b]
    if bad:
        detail = ", ".join(f"{n}: model {a} vs scenario {b}" for n, a, b in bad)
        raise ValueError(f"model does not fit the scenario ({detail})")


def cell_setup(scenario, eval_cfg, speed_kmh, array):
    """Scenario and BS array for one evaluation cell.

    The cell gets its own seed derived from (eval seed, speed, array) so
    evaluation trajectories never coincide with training ones, every UE
    moves at exactly the sweep speed, and the segment is just long enough
    for n_windows starts spaced hop_for(scenario) apart.
    """
    ny, nz = array
    derived_seed = int(
        rng_for(eval_cfg.seed, "eval", round(speed_kmh * 1000), ny, nz).integers(2**31)
    )
    hop = eval_cfg.hop_for(scenario)
    instants = (
        scenario.history_len + scenario.horizon + (eval_cfg.n_windows - 1) * hop
    )
    cell_scenario = replace(
        scenario,
        ue_count=eval_cfg.n_ue,
        segments_per_ue=1,
        instants_per_segment=instants,
        speed_kmh_min=speed_kmh,
        speed_kmh_max=speed_kmh,
        seed=derived_seed,
    )
    lam = scenario.carrier.wavelength
    bs = BsArray(n_y=ny, n_z=nz, d_ty=lam / 2, d_tz=lam / 2)
    return cell_scenario, bs


def run_cell(
    scenario: ScenarioConfig,
    eval_cfg: EvalConfig,
    speed_kmh: float,
    array: tuple,
    model: PortLLM = None,
) -> CellMetrics:
    """Evaluate every requested baseline on one (speed, BS array) cell."""
    if "port_llm" in eval_cfg.baselines and model is None:
        raise ValueError("port_llm baseline requested but no model given")
    t_len = scenario.history_len
    f_len = scenario.horizon
    hop = eval_cfg.hop_for(scenario)
    cell_scenario, bs = cell_setup(scenario, eval_cfg, speed_kmh, array)
    instants = cell_scenario.instants_per_segment

    wanted = set(eval_cfg.baselines)
    out = CellMetrics()
    acc_t = {b: [] for b in wanted}
    acc_v = {b: [] for b in wanted}
    acc_g = {b: [] for b in wanted}

    for ue in range(eval_cfg.n_ue):
        traj = generate_trajectory(cell_scenario, ue, 0, bs=bs)
        t_grid = np.arange(instants) * traj.t0_slots * cell_scenario.slot_s
        block = channel_block(traj.channel, t_grid)  # (S, n_t, N, M)
        n_t = block.shape[1]

        s_hat_all = None
        if "port_llm" in wanted:
            hists = np.stack(
                [block[k * hop : k * hop + t_len] for k in range(eval_cfg.n_windows)]
            ).swapaxes(1, 2)  # (W, n_t, T, N, M)
            flat = hists.reshape((-1,) + hists.shape[2:])
            preds = _forward_batched(model, flat)
            s_hat_all = preds.reshape(
                (eval_cfg.n_windows, n_t, f_len) + block.shape[2:]
            )

        gains = {b: [] for b in wanted}
        for k in range(eval_cfg.n_windows):
            t_ref = k * hop + t_len - 1
            h_ref = block[t_ref, :, 0, 0]  # (n_t,)
            ref_tables = np.broadcast_to(
                h_ref[:, None, None], (n_t,) + block.shape[2:]
            )
            future = block[t_ref + 1 : t_ref + 1 + f_len]  # (F, n_t, N, M)

            if "no_prediction" in wanted:
                persist = np.broadcast_to(
                    block[t_ref][:, None], (n_t, f_len) + block.shape[2:]
                )
                acc_t["no_prediction"].append(_per_step_ratios(persist, future))
            if "port_llm" in wanted:
                acc_t["port_llm"].append(_per_step_ratios(s_hat_all[k], future))
            if "stationary" in wanted:
                acc_t["stationary"].append(np.zeros((n_t, f_len)))
            if "oracle_ports" in wanted:
                acc_t["oracle_ports"].append(np.zeros((n_t, f_len)))

            row_v = {b: np.empty(f_len) for b in wanted}
            for f in range(f_len):
                true_tables = future[f]  # (n_t, N, M)
                h_11 = true_tables[:, 0, 0]
                if "stationary" in wanted:
                    row_v["stationary"][f] = 0.0
                    gains["stationary"].append(beam_gain(h_ref, h_ref))
                if "no_prediction" in wanted:
                    row_v["no_prediction"][f] = _v_ratio(h_11, h_ref)
                    gains["no_prediction"].append(beam_gain(h_11, h_ref))
                if "port_llm" in wanted:
                    port, d_min = select_port_multi(s_hat_all[k][:, f], ref_tables)
                    h_true = true_tables[:, port.n0, port.m0]
                    row_v["port_llm"][f] = _v_ratio(h_true, h_ref)
                    gains["port_llm"].append(beam_gain(h_true, h_ref))
                    step = (ue * eval_cfg.n_windows + k) * f_len + f
                    out.trace.append((step, port, d_min))
                if "oracle_ports" in wanted:
                    port, _ = select_port_multi(true_tables, ref_tables)
                    h_true = true_tables[:, port.n0, port.m0]
                    row_v["oracle_ports"][f] = _v_ratio(h_true, h_ref)
                    gains["oracle_ports"].append(beam_gain(h_true, h_ref))
            for b in wanted:
                acc_v[b].append(row_v[b])
        for b in wanted:
            acc_g[b].append(np.array(gains[b]))

    for b in wanted:
        out.ratios_t[b] = np.concatenate(acc_t[b], axis=0)  # (W*n_t per ue.., F)
        out.ratios_v[b] = np.stack(acc_v[b])  # (n_ue*W, F)
        out.gains[b] = np.stack(acc_g[b])  # (n_ue, W*F)
    out.n_snapshots = eval_cfg.n_ue * eval_cfg.n_windows * f_len
    return out


def _per_step_ratios(s_hat, s):
    """(n_t, F) ratios with per-step norms over the grid."""
    err = np.sum(np.abs(s.swapaxes(0, 1) - s_hat) ** 2, axis=(2, 3))
    ref = np.sum(np.abs(s.swapaxes(0, 1)) ** 2, axis=(2, 3))
    return err / ref


def _v_ratio(h, h_ref):
    return float(
        np.sum(np.abs(h - h_ref) ** 2) / np.sum(np.abs(h_ref) ** 2)
    )


@dataclass
class EvalRun:
    rows: list  # RESULTS_HEADER tuples
    step_rows: list  # (baseline, speed, ny, nz, step, nmse_t_db, nmse_v_db)
    traces: dict  # (speed, ny, nz) -> port trace rows
    config_hash: str


def evaluate(
    scenario: ScenarioConfig, eval_cfg: EvalConfig, model: PortLLM = None
) -> EvalRun:
    """Full sweep over (baseline, speed, array, SNR); deterministic."""
    needs_model = "port_llm" in eval_cfg.baselines
    if needs_model and model is None:
        raise ValueError("port_llm baseline requested but no model given")
    if model is not None:
        check_model_compat(model, scenario)

    cells = {}
    traces = {}
    for speed in eval_cfg.speeds_kmh:
        for array in eval_cfg.bs_arrays:
            cell = run_cell(scenario, eval_cfg, speed, tuple(array), model)
            cells[(speed, tuple(array))] = cell
            if cell.trace:
                traces[(speed,) + tuple(array)] = cell.trace

    rows = []
    step_rows = []
    f_len = scenario.horizon
    for baseline in eval_cfg.baselines:
        for speed in eval_cfg.speeds_kmh:
            for array in eval_cfg.bs_arrays:
                cell = cells[(speed, tuple(array))]
                t_db = nmse_db(cell.ratios_t[baseline])
                v_db = nmse_db(cell.ratios_v[baseline])
                for snr_point in eval_cfg.snr_db:
                    snr_lin = 10.0 ** (snr_point / 10.0)
                    se = sum(
                        spectral_efficiency(snr_lin * per_ue)
                        for per_ue in cell.gains[baseline]
                    )
                    rows.append(
                        (
                            baseline,
                            speed,
                            array[0],
                            array[1],
                            snr_point,
                            se,
                            t_db,
                            v_db,
                            cell.n_snapshots,
                        )
                    )
                for f in range(f_len):
                    step_rows.append(
                        (
                            baseline,
                            speed,
                            array[0],
                            array[1],
                            f + 1,
                            nmse_db(cell.ratios_t[baseline][:, f]),
                            nmse_db(cell.ratios_v[baseline][:, f]),
                        )
                    )
    return EvalRun(
        rows=rows,
        step_rows=step_rows,
        traces=traces,
        config_hash=config_hash(scenario, eval_cfg),
    )


def config_hash(scenario: ScenarioConfig, eval_cfg: EvalConfig) -> str:
    blob = json.dumps(
        {"scenario": asdict(scenario), "eval": asdict(eval_cfg)}, sort_keys=True
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _fmt_db(x: float) -> str:
    if not math.isfinite(x) or x < DB_SENTINEL:
        return f"{DB_SENTINEL:.10g}"
    return f"{x:.10g}"


def write_results_csv(path, run: EvalRun):
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash={run.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(RESULTS_HEADER)
        for baseline, speed, ny, nz, snr_point, se, t_db, v_db, n in run.rows:
            writer.writerow(
                [
                    baseline,
                    f"{speed:.10g}",
                    ny,
                    nz,
                    f"{snr_point:.10g}",
                    f"{se:.10g}",
                    _fmt_db(t_db),
                    _fmt_db(v_db),
                    n,
                ]
            )


def write_plot_csvs(out_dir, run: EvalRun):
    """Long-format CSVs mirroring the headline figures' axes."""
    import os

    nmse_path = os.path.join(out_dir, "nmse_vs_step.csv")
    with open(nmse_path, "w", newline="") as fh:
        fh.write(f"# config_hash={run.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ("baseline", "speed_kmh", "bs_ny", "bs_nz", "step", "nmse_t_db", "nmse_v_db")
        )
        for baseline, speed, ny, nz, step, t_db, v_db in run.step_rows:
            writer.writerow(
                [baseline, f"{speed:.10g}", ny, nz, step, _fmt_db(t_db), _fmt_db(v_db)]
            )
    se_path = os.path.join(out_dir, "se_vs_snr.csv")
    with open(se_path, "w", newline="") as fh:
        fh.write(f"# config_hash={run.config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ("baseline", "speed_kmh", "bs_ny", "bs_nz", "snr_db", "se_bps_hz")
        )
        for baseline, speed, ny, nz, snr_point, se, _, _, _ in run.rows:
            writer.writerow(
                [baseline, f"{speed:.10g}", ny, nz, f"{snr_point:.10g}", f"{se:.10g}"]
            )
    return nmse_path, se_path


def write_traces(out_dir, run: EvalRun):
    """One port-trace CSV per (speed, array) cell that moved ports."""
    import os

    paths = []
    for (speed, ny, nz), rows in sorted(run.traces.items()):
        path = os.path.join(out_dir, f"ports-v{speed:g}-a{ny}x{nz}.csv")
        write_port_trace(path, rows)
        paths.append(path)
    return paths
