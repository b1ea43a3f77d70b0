"""SFC1 array container, CSV output and the sectioned run configuration."""

from __future__ import annotations

import configparser
import csv
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

MAGIC = b"SFC1"
VERSION = 1
_DTYPE_CODES = {1: np.dtype("<f8"), 2: np.dtype("<c16")}


class Sfc1Error(ValueError):
    pass


def _dtype_code(a: np.ndarray) -> tuple[int, np.ndarray]:
    if np.iscomplexobj(a):
        return 2, np.array(a, dtype="<c16", order="C")
    if a.dtype.kind in "fiub":
        return 1, np.array(a, dtype="<f8", order="C")
    raise Sfc1Error(f"unsupported dtype {a.dtype}")


def encode_sfc1(arrays: Mapping[str, Any]) -> bytes:
    """Serialize named arrays. Integer and boolean arrays are stored as f64."""
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, value in arrays.items():
        raw = name.encode("utf-8")
        code, a = _dtype_code(np.asarray(value))
        if a.ndim > 255:
            raise Sfc1Error("too many dimensions")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack("<BB", code, a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes(order="C"))
    return b"".join(parts)


def decode_sfc1(buf: bytes) -> dict[str, np.ndarray]:
    view = memoryview(buf)
    pos = 0

    def take(nbytes: int) -> memoryview:
        nonlocal pos
        if pos + nbytes > len(view):
            raise Sfc1Error("truncated SFC1 payload")
        out = view[pos:pos + nbytes]
        pos += nbytes
        return out

    if bytes(take(4)) != MAGIC:
        raise Sfc1Error("bad magic (not an SFC1 container)")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise Sfc1Error(f"unsupported SFC1 version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<I", take(4))
        name = bytes(take(nlen)).decode("utf-8")
        if name in out:
            raise Sfc1Error(f"duplicate array name {name!r}")
        code, ndim = struct.unpack("<BB", take(2))
        if code not in _DTYPE_CODES:
            raise Sfc1Error(f"unknown dtype code {code}")
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        dt = _DTYPE_CODES[code]
        nbytes = dt.itemsize * int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(take(nbytes), dtype=dt).reshape(shape)
        out[name] = data.astype(dt.newbyteorder("="))
    if pos != len(view):
        raise Sfc1Error("trailing bytes after last array")
    return out


def write_sfc1(path: str | Path, arrays: Mapping[str, Any]) -> None:
    Path(path).write_bytes(encode_sfc1(arrays))


def read_sfc1(path: str | Path) -> dict[str, np.ndarray]:
    return decode_sfc1(Path(path).read_bytes())


def fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_metadata(path: str | Path, items: Mapping[str, Any]) -> None:
    with open(path, "w", newline="\n") as fh:
        for k, v in items.items():
            fh.write(f"{k}={fmt(v)}\n")


def read_metadata(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip() and not line.startswith("#"):
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple[Any, Any]]] = {
    "grid": {"n": (int, 64), "L": (float, 1.0), "n_gen": (int, 0)},
    "solver": {
        "scheme": (str, "rk2_cn"), "dt": (float, 1e-3), "nu": (float, 1e-3),
        "drag": (float, 0.0), "formulation": (str, "vs"), "t_end": (float, 1.0),
        "record_every": (int, 100),
    },
    "ic": {
        "kind": (str, "mcwilliams"), "kappa": (int, 1), "alpha": (float, 2.5),
        "tau": (_opt_float, None), "k0": (float, 4.0), "seed": (int, 0),
        "energy": (_opt_float, 1.0),
    },
    "data": {
        "n_train": (int, 8), "n_test": (int, 2), "burn_in": (float, 0.0),
        "ell": (int, 10), "n_t": (int, 10), "snapshot_dt": (float, 0.1),
    },
    "model": {
        "layers": (int, 2), "width": (int, 8), "d_t": (int, 10), "tau_max": (int, 5),
        "k_max": (int, 8), "t_pad": (float, 0.25), "helmholtz": (_bool, False),
        "activation": (str, "gelu"), "layer_norm": (_bool, True), "seed": (int, 0),
    },
    "train": {
        "epochs": (int, 10), "lr": (float, 1e-2), "loss": (str, "l2"),
        "batch": (int, 2), "weight_decay": (float, 0.0),
    },
    "finetune": {
        "iters": (int, 100), "lr": (float, 0.1), "gamma": (int, 2), "loss": (str, "h_neg1"),
        "alpha": (float, 0.0), "mode": (str, "parallel"), "tol": (float, 1e-3),
        "iter_max": (int, 100), "dt": (_opt_float, None), "train_reduction": (_bool, False),
        "collocation": (int, 4), "beta1": (float, 0.7), "beta2": (float, 0.95), "schedule": (_bool, True),
    },
}


@dataclass
class RunConfig:
    values: dict[str, dict[str, Any]] = field(default_factory=dict)

    def __post_init__(self):
        for sec, keys in SCHEMA.items():
            cur = self.values.setdefault(sec, {})
            for k, (_, default) in keys.items():
                cur.setdefault(k, default)

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def to_text(self) -> str:
        lines = []
        for sec in SCHEMA:
            lines.append(f"[{sec}]")
            lines += [f"{k}={'none' if v is None else fmt(v)}" for k, v in self.values[sec].items()]
            lines.append("")
        return "\n".join(lines)


def parse_config(text: str) -> RunConfig:
    """Parse ``[section]`` / ``key=value`` text; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    cp.read_string(text)
    values: dict[str, dict[str, Any]] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ValueError(f"unknown config section [{sec}]")
        values[sec] = {}
        for key, raw in cp.items(sec):
            if key not in SCHEMA[sec]:
                raise ValueError(f"unknown config key {sec}.{key}")
            parser = SCHEMA[sec][key][0]
            try:
                values[sec][key] = parser(raw)
            except ValueError as exc:
                raise ValueError(f"bad value for {sec}.{key}: {raw!r}") from exc
    return RunConfig(values)


def load_config(path: str | Path | None) -> RunConfig:
    return RunConfig() if path is None else parse_config(Path(path).read_text())
