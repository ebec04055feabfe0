"""On-disk formats: binary array files, run configs and CSV summaries.

An array file is ``MAGIC``, a little-endian uint64 header length, a JSON
header (sorted keys) and the raw little-endian float64 arrays in header
order.  Nothing time-dependent is written, so identical runs give
identical bytes.
"""

import csv
import json
import os
import struct
from dataclasses import asdict

import numpy as np

from .gibbs import PosteriorDraws, SamplerSettings
from .panel import PanelData
from .priors import ModelSpec, PriorTuning

MAGIC = b"PTOBIT\x00\x01"
DRAWS_FILE = "draws.bin"
PANEL_FILE = "panel.bin"
# execution knobs that cannot change the draws stay out of the files
_RUNTIME_KEYS = ("parallel_units", "n_workers")
_TRACE = "trace_"


class StoreError(IOError):
    pass


def write_arrays(path, arrays, meta):
    names = sorted(arrays)
    entries = []
    for n in names:
        a = np.asarray(arrays[n], dtype="<f8")
        entries.append({"name": n, "shape": list(a.shape)})
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes())


def read_arrays(path):
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise StoreError(f"{path}: not an array file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen))
        arrays = {}
        for e in header["arrays"]:
            shape = tuple(e["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            if len(buf) != 8 * n:
                raise StoreError(f"{path}: truncated array {e['name']}")
            arrays[e["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).astype(float)
    return arrays, header["meta"]


# ---------------------------------------------------------------------------
# draws and panels


def save_draws(out_dir, draws, data):
    os.makedirs(out_dir, exist_ok=True)
    settings = {k: v for k, v in draws.settings.to_dict().items() if k not in _RUNTIME_KEYS}
    meta = {"kind": "draws", "spec": draws.spec.to_dict(), "tuning": asdict(draws.tuning),
            "settings": settings, "unit_ids": list(draws.unit_ids), "T": draws.T}
    arrays = dict(draws.arrays)
    for k in ("accept_sigma", "logjoint"):
        if k in draws.diagnostics:
            arrays[_TRACE + k] = draws.diagnostics[k]
    write_arrays(os.path.join(out_dir, DRAWS_FILE), arrays, meta)
    save_panel(os.path.join(out_dir, PANEL_FILE), data)
    write_summary_csv(os.path.join(out_dir, "posterior_summary.csv"), draws)


def load_draws(in_dir):
    arrays, meta = read_arrays(os.path.join(in_dir, DRAWS_FILE))
    if meta.get("kind") != "draws":
        raise StoreError(f"{in_dir}: not a draws file")
    traces = {k[len(_TRACE):]: arrays.pop(k) for k in list(arrays) if k.startswith(_TRACE)}
    draws = PosteriorDraws(arrays, ModelSpec.from_dict(meta["spec"]),
                           PriorTuning(**meta["tuning"]), SamplerSettings(**meta["settings"]),
                           meta["unit_ids"], traces, meta["T"])
    return draws, load_panel(os.path.join(in_dir, PANEL_FILE))


def save_panel(path, data):
    arrays = {"y": data.y, "x": data.x, "x_mean": data.x_mean, "x_sd": data.x_sd}
    if data.holdout_y is not None:
        arrays["holdout_y"] = data.holdout_y
    if data.x_future is not None:
        arrays["x_future"] = data.x_future
    meta = {"kind": "panel", "unit_ids": list(data.unit_ids), "censored": bool(data.censored)}
    write_arrays(path, arrays, meta)


def load_panel(path):
    a, meta = read_arrays(path)
    if meta.get("kind") != "panel":
        raise StoreError(f"{path}: not a panel file")
    return PanelData(a["y"], a["x"], meta["unit_ids"], a.get("holdout_y"), a["x_mean"],
                     a["x_sd"], a.get("x_future"), meta["censored"])


def _f(v):
    v = float(v)
    return "nan" if not np.isfinite(v) else repr(round(v, 10))


def write_summary_csv(path, draws):
    """Posterior mean, sd and 5/95% quantiles of the common and unit parameters."""
    rows = []

    def add(name, v):
        rows.append([name, _f(v.mean()), _f(v.std()), _f(np.quantile(v, 0.05)),
                     _f(np.quantile(v, 0.95))])

    add("rho", draws["rho"])
    for k in range(draws["beta"].shape[1]):
        add(f"beta{k + 1}", draws["beta"][:, k])
    for i, u in enumerate(draws.unit_ids):
        add(f"lambda[{u}]", draws["lam"][:, i])
        add(f"sigma2[{u}]", draws["sig2"][:, i])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "mean", "sd", "q05", "q95"])
        w.writerows(rows)


# ---------------------------------------------------------------------------
# run configuration


def default_config():
    return {"spec": ModelSpec().to_dict(), "tuning": asdict(PriorTuning()),
            "sampler": SamplerSettings().to_dict()}


def save_config(path, spec, tuning, settings):
    cfg = {"spec": spec.to_dict(), "tuning": asdict(tuning), "sampler": settings.to_dict()}
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_config(path):
    """(spec, tuning, settings) from a JSON config; missing keys take defaults.

    ``tuning`` may also be a preset name.
    """
    with open(path) as fh:
        cfg = json.load(fh)
    return parse_config(cfg)


def parse_config(cfg):
    unknown = set(cfg) - {"spec", "tuning", "sampler"}
    if unknown:
        raise StoreError(f"unknown config sections {sorted(unknown)}")
    spec = ModelSpec.from_dict(cfg.get("spec", {}))
    t = cfg.get("tuning", {})
    tuning = PriorTuning.preset(t) if isinstance(t, str) else PriorTuning(**t)
    settings = SamplerSettings(**cfg.get("sampler", {}))
    return spec, tuning, settings
