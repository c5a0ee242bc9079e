"""CSV/JSON persistence for bundles, training sets, profiles and tables.

Machine-readable files print floats with 17 significant digits so that they
round-trip exactly; human-readable tables use 4.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path as FsPath

import numpy as np

from .estimator import CONTINUOUS, DISCRETE, SdProfile, TrainingSet
from .simulators import BenchmarkScenario, SimulatedBundle, make_system


def fmt(value) -> str:
    """Machine format: 17 significant digits, empty for missing values."""
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    v = float(value)
    if np.isnan(v):
        return ""
    return f"{v:.17g}"


def fmt_human(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.4g}"


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])


def read_csv(path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    return rows[0], rows[1:]


def write_json(path, data) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not np.isfinite(v) else v
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_text_table(path, header, rows) -> str:
    """Aligned plain-text table; returns the text as well."""
    cells = [list(header)] + [[v if isinstance(v, str) else fmt_human(v) for v in row] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    text = "\n".join(lines) + "\n"
    if path is not None:
        FsPath(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# bundles


def _cols(prefix: str, dim: int) -> list[str]:
    return [f"{prefix}{j}" for j in range(dim)]


def write_bundle(bundle: SimulatedBundle, stem) -> tuple[FsPath, FsPath]:
    """Write ``<stem>.csv`` (one row per sample) and ``<stem>.json`` (metadata).

    Columns: trajectory, index, time, states ``x*``, observations ``y*``,
    intrinsic increments ``n*`` into the next sample (empty on the last
    row), clamp corrections ``c*``, measurement SDs ``e_sd*`` and true
    intrinsic SDs ``g*`` at the state.
    """
    stem = FsPath(stem)
    dim = bundle.system.dim
    header = ["trajectory", "index", "time"]
    for p in ("x", "y", "n", "c", "e_sd", "g"):
        header += _cols(p, dim)
    rows = []
    for ti, t in enumerate(bundle.trajectories):
        sd = bundle.system.true_sd(t.states)
        e_sd = np.sqrt(t.meas_var) if t.meas_var is not None else np.zeros_like(t.states)
        y = t.observations if t.observations is not None else t.states
        m = t.states.shape[0]
        for k in range(m):
            inc = t.increments[k] if k < m - 1 else [None] * dim
            cor = t.corrections[k] if k < m - 1 else [None] * dim
            rows.append([ti, k, k * bundle.dt, *t.states[k], *y[k], *inc, *cor, *e_sd[k], *sd[k]])
    csv_path = stem.with_suffix(".csv")
    write_csv(csv_path, header, rows)
    meta = {
        "system": bundle.system.name,
        "params": bundle.system.params,
        "dim": dim,
        "kind": bundle.kind,
        "dt": bundle.dt,
        "seed": bundle.seed,
        "target_ratio": bundle.target_ratio,
        "realized_ratio": bundle.realized_ratio,
        "ratio_coordinate": bundle.ratio_coordinate,
        "n_trajectories": len(bundle.trajectories),
        "n_samples": len(rows),
        "scenario": bundle.scenario.to_dict() if bundle.scenario is not None else None,
    }
    json_path = stem.with_suffix(".json")
    write_json(json_path, meta)
    return csv_path, json_path


def _parse_float(s: str) -> float:
    return float("nan") if s == "" else float(s)


def load_dataset(path, coordinate: int = 0, dt: float | None = None, kind: str | None = None) -> tuple[TrainingSet, dict]:
    """Read a sample table into a :class:`TrainingSet`.

    Required columns: ``trajectory``, ``index`` and observations ``y0..``
    (states ``x0..`` are used when no observations are present).  Optional:
    measurement SDs ``e_sd0..`` and intrinsic increments ``n0..``.  A JSON
    sidecar with the same stem supplies ``dt``/``kind`` unless they are
    given explicitly.  Returns the training set and the sidecar contents.
    """
    path = FsPath(path)
    header, rows = read_csv(path)
    col = {name: i for i, name in enumerate(header)}
    for req in ("trajectory", "index"):
        if req not in col:
            raise ValueError(f"{path}: missing column {req!r}")
    prefix = "y" if "y0" in col else "x"
    dim = 0
    while f"{prefix}{dim}" in col:
        dim += 1
    if dim == 0:
        raise ValueError(f"{path}: no state columns (y0.. or x0..)")
    if not 0 <= coordinate < dim:
        raise ValueError(f"coordinate {coordinate} out of range for dimension {dim}")

    sidecar_path = path.with_suffix(".json")
    meta = read_json(sidecar_path) if sidecar_path.exists() else {}
    dt = float(dt if dt is not None else meta.get("dt", 1.0))
    kind = kind if kind is not None else meta.get("kind", DISCRETE)
    if kind not in (CONTINUOUS, DISCRETE):
        raise ValueError(f"kind must be {CONTINUOUS!r} or {DISCRETE!r}")

    try:
        data = np.array([[_parse_float(v) for v in r] for r in rows if r], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if data.size == 0:
        raise ValueError(f"{path}: no data rows")
    traj = data[:, col["trajectory"]]
    idx = data[:, col["index"]]
    order = np.lexsort((idx, traj))
    data, traj = data[order], traj[order]
    y = data[:, [col[c] for c in _cols(prefix, dim)]]
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{path}: non-finite state values")
    has_sd = f"e_sd{coordinate}" in col
    has_n = f"n{coordinate}" in col
    sd = data[:, col[f"e_sd{coordinate}"]] if has_sd else np.zeros(len(data))

    inputs, outputs, sig, noise, bounds = [], [], [], [], []
    start = 0
    for t in np.unique(traj):
        sel = np.flatnonzero(traj == t)
        if sel.size < 2:
            raise ValueError(f"{path}: trajectory {int(t)} has fewer than 2 samples")
        bounds.append(start)
        start += sel.size - 1
        inputs.append(y[sel[:-1]])
        outputs.append(y[sel[1:], coordinate])
        sig.append(sd[sel[1:]] ** 2)
        if has_n:
            noise.append(data[sel[:-1], col[f"n{coordinate}"]])
    true_noise = np.concatenate(noise) if has_n else None
    if true_noise is not None and not np.all(np.isfinite(true_noise)):
        true_noise = None
    ts = TrainingSet(
        inputs=np.vstack(inputs),
        outputs=np.concatenate(outputs),
        sigma_e=np.concatenate(sig),
        dt=dt,
        kind=kind,
        boundaries=tuple(bounds),
        coordinate=coordinate,
        true_noise=true_noise,
    )
    return ts, meta


def system_from_sidecar(meta: dict):
    """Rebuild the generating system recorded in a bundle sidecar, if any."""
    name = meta.get("system")
    if not name:
        return None
    scenario = meta.get("scenario")
    params = scenario["params"] if scenario else {}
    return make_system(name, **params)


def load_scenario(path) -> BenchmarkScenario:
    return BenchmarkScenario.from_dict(read_json(path))


# ---------------------------------------------------------------------------
# profiles


def write_profile(profile: SdProfile, stem, extra: dict | None = None) -> tuple[FsPath, FsPath]:
    """``<stem>.csv`` with center coordinates, weight, ``G`` and ``g``; ``<stem>.json`` metadata."""
    stem = FsPath(stem)
    dim = profile.centers.shape[1]
    header = _cols("x", dim) + ["weight", "G", "g"]
    G = profile.values
    g = G * profile.g_scale
    rows = [[*profile.centers[k], profile.weights[k], G[k], g[k]] for k in range(len(G))]
    csv_path = stem.with_suffix(".csv")
    write_csv(csv_path, header, rows)
    meta = {"amplitude": profile.amplitude, "width": profile.width, "dt": profile.dt, "kind": profile.kind}
    meta.update(extra or {})
    json_path = stem.with_suffix(".json")
    write_json(json_path, meta)
    return csv_path, json_path


def read_profile(stem) -> SdProfile:
    stem = FsPath(stem)
    header, rows = read_csv(stem.with_suffix(".csv"))
    meta = read_json(stem.with_suffix(".json"))
    data = np.array([[float(v) for v in r] for r in rows if r])
    dim = sum(1 for h in header if h.startswith("x"))
    return SdProfile(
        weights=data[:, dim],
        centers=data[:, :dim],
        amplitude=meta["amplitude"],
        width=meta["width"],
        dt=meta["dt"],
        kind=meta["kind"],
    )
