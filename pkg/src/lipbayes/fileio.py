"""Binary and text file formats: feature sets, checkpoints, plans, tables.

FSET1 layout (all integers little-endian):

    offset 0   magic  b"FSET1"      (5 bytes)
    offset 5   format version u16   (currently 1)
    offset 7   n  u32
    offset 11  d  u32
    offset 15  C  u32
    offset 19  n records of { label u32, d float32 }

Features are stored at 32-bit precision for economy; in-memory arithmetic
is 64-bit throughout. A ``.csv`` path switches to a text fallback with
header ``label,f0..f{d-1}`` (the class count is then inferred from the
labels).

Header checkpoints use the same style of container (magic b"LBHC1",
version, JSON metadata, then raw float64 parameter matrices), so a trained
header round-trips bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .header import BayesHeader
from .noiselab import FeatureDataset, NoisePlan, NoisePlanEntry
from .snlayer import VariationalLinear
from .suspicion import SuspicionReport

__all__ = [
    "FeatureFileError",
    "read_checkpoint",
    "read_features",
    "read_noise_plan",
    "read_suspicion_report",
    "write_checkpoint",
    "write_features",
    "write_noise_plan",
    "write_suspicion_report",
    "write_table",
]

FSET_MAGIC = b"FSET1"
FSET_VERSION = 1
FSET_HEADER = struct.Struct("<5sHIII")

CKPT_MAGIC = b"LBHC1"
CKPT_VERSION = 1
CKPT_HEADER = struct.Struct("<5sHI")


class FeatureFileError(ValueError):
    """Malformed feature or checkpoint file; message carries the byte offset."""


def _record_dtype(d: int) -> np.dtype:
    return np.dtype([("label", "<u4"), ("features", "<f4", (d,))])


def write_features(ds: FeatureDataset, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _write_features_csv(ds, path)
        return
    n, d = ds.features.shape
    records = np.empty(n, dtype=_record_dtype(d))
    records["label"] = ds.labels.astype(np.uint32)
    records["features"] = ds.features.astype(np.float32)
    with open(path, "wb") as fh:
        fh.write(FSET_HEADER.pack(FSET_MAGIC, FSET_VERSION, n, d, ds.n_classes))
        fh.write(records.tobytes())


def read_features(path) -> FeatureDataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _read_features_csv(path)
    blob = path.read_bytes()
    if len(blob) < FSET_HEADER.size:
        raise FeatureFileError(
            f"truncated header: {len(blob)} bytes, need {FSET_HEADER.size} (offset 0)"
        )
    magic, version, n, d, n_classes = FSET_HEADER.unpack_from(blob, 0)
    if magic != FSET_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r} (offset 0)")
    if version != FSET_VERSION:
        raise FeatureFileError(f"unsupported format version {version} (offset 5)")
    record_size = 4 + 4 * d
    expected = FSET_HEADER.size + n * record_size
    if len(blob) != expected:
        raise FeatureFileError(
            f"file length {len(blob)} != expected {expected} "
            f"(offset {min(len(blob), expected)})"
        )
    records = np.frombuffer(blob, dtype=_record_dtype(d), count=n, offset=FSET_HEADER.size)
    labels = records["label"].astype(np.int64)
    bad = np.where(labels >= n_classes)[0]
    if bad.size:
        i = int(bad[0])
        raise FeatureFileError(
            f"label {int(labels[i])} >= C={n_classes} in record {i} "
            f"(offset {FSET_HEADER.size + i * record_size})"
        )
    return FeatureDataset(
        features=records["features"].astype(np.float64),
        labels=labels,
        ids=np.arange(n),
        n_classes=int(n_classes),
    )


def _write_features_csv(ds: FeatureDataset, path: Path) -> None:
    d = ds.features.shape[1]
    header = "label," + ",".join(f"f{j}" for j in range(d))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        feats32 = ds.features.astype(np.float32)
        for label, row in zip(ds.labels, feats32):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")


def _read_features_csv(path: Path) -> FeatureDataset:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("label,"):
            raise FeatureFileError(f"bad CSV header {header!r}")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    if not rows:
        raise FeatureFileError("empty CSV feature file")
    labels = np.array([int(r[0]) for r in rows], dtype=np.int64)
    features = np.array(
        [[np.float32(v) for v in r[1:]] for r in rows], dtype=np.float64
    )
    return FeatureDataset.from_arrays(features, labels)


# --------------------------------------------------------------------------
# header checkpoints
# --------------------------------------------------------------------------


def _layer_meta(layer: VariationalLinear) -> dict:
    return {
        "rows": layer.out_dim,
        "cols": layer.in_dim,
        "sn_iters": layer.sn_iters,
        "eps_sn": layer.eps_sn,
        "prior_std": layer.prior_std,
        "stochastic": layer.stochastic,
        "spectral_norm": layer.spectral_norm,
    }


def write_checkpoint(header: BayesHeader, path) -> None:
    meta = {
        "beta": header.beta,
        "mc_samples_train": header.mc_samples_train,
        "mc_samples_infer": header.mc_samples_infer,
        "layers": [_layer_meta(header.layer1), _layer_meta(header.layer2)],
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buffers = []
    for layer in (header.layer1, header.layer2):
        for arr in (layer.mu, layer.rho, layer.u_buffer):
            buffers.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(CKPT_HEADER.pack(CKPT_MAGIC, CKPT_VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        for buf in buffers:
            fh.write(buf)


def read_checkpoint(path) -> BayesHeader:
    blob = Path(path).read_bytes()
    if len(blob) < CKPT_HEADER.size:
        raise FeatureFileError("truncated checkpoint header (offset 0)")
    magic, version, meta_len = CKPT_HEADER.unpack_from(blob, 0)
    if magic != CKPT_MAGIC:
        raise FeatureFileError(f"bad magic {magic!r} (offset 0)")
    if version != CKPT_VERSION:
        raise FeatureFileError(f"unsupported checkpoint version {version} (offset 5)")
    offset = CKPT_HEADER.size
    meta = json.loads(blob[offset : offset + meta_len].decode())
    offset += meta_len
    layers = []
    for lm in meta["layers"]:
        rows, cols = lm["rows"], lm["cols"]
        arrays = []
        for shape in ((rows, cols), (rows, cols), (rows,)):
            count = int(np.prod(shape))
            end = offset + 8 * count
            if end > len(blob):
                raise FeatureFileError(f"truncated checkpoint data (offset {offset})")
            arrays.append(
                np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
                .reshape(shape)
                .copy()
            )
            offset = end
        mu, rho, u = arrays
        layers.append(
            VariationalLinear(
                mu=mu,
                rho=rho,
                u_buffer=u,
                sn_iters=lm["sn_iters"],
                eps_sn=lm["eps_sn"],
                prior_std=lm["prior_std"],
                stochastic=lm["stochastic"],
                spectral_norm=lm["spectral_norm"],
            )
        )
    if offset != len(blob):
        raise FeatureFileError(f"trailing bytes in checkpoint (offset {offset})")
    return BayesHeader(
        layer1=layers[0],
        layer2=layers[1],
        beta=meta["beta"],
        mc_samples_train=meta["mc_samples_train"],
        mc_samples_infer=meta["mc_samples_infer"],
    )


# --------------------------------------------------------------------------
# flat text tables
# --------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (np.floating, float)):
        return repr(float(v))
    if isinstance(v, (np.integer, np.bool_)):
        return str(int(v))
    return str(v)


def write_table(path, columns: list[str], rows, metadata: dict | None = None) -> None:
    """Tab-separated table with optional '#'-prefixed metadata lines."""
    with open(path, "w") as fh:
        for key in sorted(metadata or {}):
            fh.write(f"# {key}={_cell(metadata[key])}\n")
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(_cell(v) for v in row) + "\n")


def _read_table(path) -> tuple[dict, list[str], list[list[str]]]:
    metadata: dict[str, str] = {}
    columns: list[str] = []
    rows: list[list[str]] = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                metadata[key.strip()] = value
            elif not columns:
                columns = line.split("\t")
            else:
                rows.append(line.split("\t"))
    return metadata, columns, rows


def write_noise_plan(plan: NoisePlan, path) -> None:
    write_table(
        path,
        ["id", "original", "corrupted", "mechanism"],
        [(e.sample_id, e.original, e.corrupted, e.mechanism) for e in plan.entries],
        metadata={"target_rate": repr(plan.target_rate)},
    )


def read_noise_plan(path) -> NoisePlan:
    metadata, columns, rows = _read_table(path)
    if columns != ["id", "original", "corrupted", "mechanism"]:
        raise FeatureFileError(f"unexpected noise-plan columns {columns}")
    plan = NoisePlan(target_rate=float(metadata.get("target_rate", 0.0)))
    for r in rows:
        plan.entries.append(NoisePlanEntry(int(r[0]), int(r[1]), int(r[2]), r[3]))
    return plan


def write_suspicion_report(report: SuspicionReport, path) -> None:
    metadata = {
        "w_knn": repr(report.w_knn),
        "w_unc": repr(report.w_unc),
        "b_knn": "" if report.b_knn is None else repr(report.b_knn),
        "b_unc": "" if report.b_unc is None else repr(report.b_unc),
        "expected_rate": repr(report.expected_rate),
        "degenerate": report.degenerate,
    }
    rows = [
        (int(i), repr(float(a)), repr(float(b)), repr(float(c)), int(f))
        for i, a, b, c, f in zip(
            report.ids, report.s_knn, report.s_unc, report.s_fused, report.flagged
        )
    ]
    write_table(path, ["id", "s_knn", "s_unc", "s_fused", "flagged"], rows, metadata)


def read_suspicion_report(path) -> SuspicionReport:
    metadata, columns, rows = _read_table(path)
    if columns != ["id", "s_knn", "s_unc", "s_fused", "flagged"]:
        raise FeatureFileError(f"unexpected suspicion columns {columns}")
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    return SuspicionReport(
        ids=ids,
        s_knn=np.array([float(r[1]) for r in rows]),
        s_unc=np.array([float(r[2]) for r in rows]),
        s_fused=np.array([float(r[3]) for r in rows]),
        flagged=np.array([bool(int(r[4])) for r in rows]),
        w_knn=float(metadata["w_knn"]),
        w_unc=float(metadata["w_unc"]),
        b_knn=float(metadata["b_knn"]) if metadata.get("b_knn") else None,
        b_unc=float(metadata["b_unc"]) if metadata.get("b_unc") else None,
        expected_rate=float(metadata["expected_rate"]),
        degenerate=metadata.get("degenerate") == "True",
    )
