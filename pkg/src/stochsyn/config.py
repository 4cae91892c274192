"""Declarative problem descriptions: parsing, validation, serialization.

A config file (TOML or JSON) describes the model (matrices row-major,
spaces as boxes, regions as boxes or vertex lists), the formula, and the
pipeline parameters. Nonlinear dynamics are picked from the registry by
name with their parameters.
"""

from __future__ import annotations

import json
import pathlib

import numpy as np
import tomli

from .geometry import LabeledPartition, Polytope
from .models import LinearModel, make_nonlinear


class ConfigError(ValueError):
    pass


def load_config(path):
    """Parse a TOML or JSON config file into a plain dict."""
    path = pathlib.Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return json.loads(text)
    return tomli.loads(text)


def loads_config(text):
    return tomli.loads(text)


def _fmt_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialize value {v!r}")


def dumps_config(config):
    """Serialize a config dict to TOML (subset: tables, arrays of tables)."""
    lines = []

    def emit_table(prefix, table):
        scalars, subtables, table_arrays = {}, {}, {}
        for k, v in table.items():
            if isinstance(v, dict):
                subtables[k] = v
            elif isinstance(v, list) and v and all(isinstance(x, dict) for x in v):
                table_arrays[k] = v
            else:
                scalars[k] = v
        if prefix:
            lines.append(f"[{prefix}]")
        for k, v in scalars.items():
            lines.append(f"{k} = {_fmt_value(v)}")
        if scalars or prefix:
            lines.append("")
        for k, v in subtables.items():
            emit_table(f"{prefix}.{k}" if prefix else k, v)
        for k, items in table_arrays.items():
            name = f"{prefix}.{k}" if prefix else k
            for item in items:
                lines.append(f"[[{name}]]")
                for kk, vv in item.items():
                    if isinstance(vv, dict):
                        raise ConfigError("nested tables inside array tables "
                                          "are not supported")
                    lines.append(f"{kk} = {_fmt_value(vv)}")
                lines.append("")

    emit_table("", config)
    return "\n".join(lines).rstrip() + "\n"


def save_config(config, path):
    path = pathlib.Path(path)
    if path.suffix == ".json":
        path.write_text(json.dumps(config, indent=2))
    else:
        path.write_text(dumps_config(config))


def _polytope_from(entry, what):
    if "box" in entry:
        box = np.asarray(entry["box"], dtype=float)
        if box.ndim != 2 or box.shape[1] != 2:
            raise ConfigError(f"{what}: box must be a list of [low, high] pairs")
        return Polytope.box(box[:, 0], box[:, 1])
    if "vertices" in entry:
        return Polytope.from_vertices(np.asarray(entry["vertices"], float))
    raise ConfigError(f"{what}: needs 'box' or 'vertices'")


def build_model(config):
    """Instantiate the model described by a config dict."""
    try:
        mc = config["model"]
    except KeyError:
        raise ConfigError("missing [model] section")
    X = _polytope_from(mc["state_space"], "state_space") \
        if "state_space" in mc else None
    U = _polytope_from(mc["input_space"], "input_space") \
        if "input_space" in mc else None
    aps = tuple(config.get("spec", {}).get("aps", ()))
    labeling = None
    if "regions" in mc:
        regions = [(_polytope_from(r, f"region {r.get('ap')}"), r["ap"])
                   for r in mc["regions"]]
        if not aps:
            aps = tuple(dict.fromkeys(ap for _, ap in regions))
        labeling = LabeledPartition(regions, aps)
    kind = mc.get("type", "linear")
    common = dict(X=X, U=U, labeling=labeling)
    if kind == "linear":
        return LinearModel(
            A=np.asarray(mc["A"], float), B=np.asarray(mc["B"], float),
            C=np.asarray(mc["C"], float),
            a=np.asarray(mc["a"], float) if "a" in mc else None,
            B_w=np.asarray(mc["Bw"], float) if "Bw" in mc else None,
            mu=np.asarray(mc["mu"], float) if "mu" in mc else None,
            Sigma=np.asarray(mc["Sigma"], float) if "Sigma" in mc else None,
            **common)
    if kind == "nonlinear":
        return make_nonlinear(
            mc["dynamics"], mc.get("params", {}),
            C=np.asarray(mc["C"], float) if "C" in mc else None,
            B_w=np.asarray(mc["Bw"], float) if "Bw" in mc else None,
            mu=np.asarray(mc["mu"], float) if "mu" in mc else None,
            Sigma=np.asarray(mc["Sigma"], float) if "Sigma" in mc else None,
            **common)
    raise ConfigError(f"unknown model type {kind!r}")


def validate(config):
    """Shape checks beyond what model construction enforces."""
    if "spec" not in config or "formula" not in config["spec"]:
        raise ConfigError("missing [spec] formula")
    if "abstraction" not in config:
        raise ConfigError("missing [abstraction] section")
    ab = config["abstraction"]
    for key in ("l", "lu"):
        if key not in ab:
            raise ConfigError(f"[abstraction] needs '{key}'")
    if "similarity" not in config or "epsilon" not in config["similarity"]:
        raise ConfigError("missing [similarity] epsilon")
    return config
