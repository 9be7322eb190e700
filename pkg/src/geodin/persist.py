"""Versioned binary checkpoints, embedding files, and report serialization.

Checkpoint layout (all little-endian), format version 1:

    magic   4 bytes  b"GODN"
    version u32
    payload:
        seed      u64     flags u32 (bit0 trained, bit1 calibrated)
        variant   u32     (0 vanilla, 1 alpha_only, 2 beta_only, 3 alpha_beta)
        d_in      u32     n_hidden u32, then n_hidden u32 widths
        d_feature u32     n_classes u32
        f64 arrays, row-major, in order: per extractor layer W then b;
        head W; alpha_w; alpha_b; beta_w; beta_b
    checksum u64 FNV-1a over the payload bytes

Round trips are identity at byte level.  Report CSV/JSON round-trip at 6
significant digits.
"""

from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from .bench import DetectionReport, ReportRow
from .errors import DomainError, FormatError, IntegrityError, UnsupportedVersionError
from .head import HeadParams, HeadVariant
from .train import ExtractorParams, Model

MAGIC = b"GODN"
FORMAT_VERSION = 1
_VARIANT_CODES = {v: i for i, v in enumerate(HeadVariant)}
_VARIANT_FROM_CODE = {i: v for v, i in _VARIANT_CODES.items()}

REPORT_FIELDS = ("score", "shift_kind", "severity", "auroc", "tnr_at_tpr95", "n_id", "n_ood", "seed")


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = 0xCBF29CE484222325
    for byte in data:
        h = ((h ^ byte) * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def _array_bytes(a: np.ndarray) -> bytes:
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def save_model(model: Model, path) -> None:
    """Write a version-1 checkpoint; bit-exact under load_model."""
    head = model.head
    hidden = [W.shape[0] for W, _ in model.extractor.layers[:-1]]
    payload = bytearray()
    payload += struct.pack("<QII", int(model.meta.get("seed", 0)), _flags(model), _VARIANT_CODES[head.variant])
    payload += struct.pack("<II", model.extractor.d_in, len(hidden))
    payload += struct.pack(f"<{len(hidden)}I", *hidden)
    payload += struct.pack("<II", head.d_feature, head.n_classes)
    for W, b in model.extractor.layers:
        payload += _array_bytes(W)
        payload += _array_bytes(b)
    payload += _array_bytes(head.W)
    payload += _array_bytes(head.alpha_w)
    payload += struct.pack("<d", float(head.alpha_b))
    payload += _array_bytes(head.beta_w)
    payload += struct.pack("<d", float(head.beta_b))
    blob = MAGIC + struct.pack("<I", FORMAT_VERSION) + bytes(payload) + struct.pack("<Q", fnv1a64(bytes(payload)))
    Path(path).write_bytes(blob)


def _flags(model: Model) -> int:
    return (1 if model.meta.get("trained") else 0) | (2 if model.meta.get("calibrated") else 0)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape).astype(np.float64)


def load_model(path) -> Model:
    """Read a checkpoint, verifying version and checksum."""
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 + 8:
        raise FormatError("checkpoint truncated")
    if data[: len(MAGIC)] != MAGIC:
        raise FormatError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", data[len(MAGIC) : len(MAGIC) + 4])
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(
            f"checkpoint format version {version} is not supported (this build reads version {FORMAT_VERSION})"
        )
    payload = data[len(MAGIC) + 4 : -8]
    (stored,) = struct.unpack("<Q", data[-8:])
    if fnv1a64(payload) != stored:
        raise IntegrityError("checkpoint payload fails its checksum")

    r = _Reader(payload)
    seed, flags, variant_code = r.unpack("<QII")
    if variant_code not in _VARIANT_FROM_CODE:
        raise FormatError(f"unknown head variant code {variant_code}")
    d_in, n_hidden = r.unpack("<II")
    hidden = list(r.unpack(f"<{n_hidden}I")) if n_hidden else []
    d_feature, n_classes = r.unpack("<II")

    dims = [d_in, *hidden, d_feature]
    layers = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = r.array((fan_out, fan_in))
        b = r.array((fan_out,))
        layers.append((W, b))
    head = HeadParams(
        W=r.array((n_classes, d_feature)),
        alpha_w=r.array((d_feature,)),
        alpha_b=r.unpack("<d")[0],
        beta_w=r.array((d_feature,)),
        beta_b=r.unpack("<d")[0],
        variant=_VARIANT_FROM_CODE[variant_code],
    )
    if r.pos != len(payload):
        raise FormatError(f"{len(payload) - r.pos} unexpected trailing payload bytes")
    meta = {
        "seed": int(seed),
        "variant": head.variant.value,
        "d_in": int(d_in),
        "hidden": [int(h) for h in hidden],
        "feature_dim": int(d_feature),
        "n_classes": int(n_classes),
        "trained": bool(flags & 1),
    }
    if flags & 2:
        meta["calibrated"] = True
    return Model(ExtractorParams(layers), head, meta)


def parse_embeddings(path) -> dict[str, np.ndarray]:
    """Read a whitespace-separated token/vector text file.

    The dimension is inferred from the first record; ragged or unparsable
    lines raise FormatError with their line number; blank lines are skipped;
    the first occurrence of a duplicate token wins.
    """
    table: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if dim is None:
                if not values:
                    raise FormatError(f"line {lineno}: record has no vector components")
                dim = len(values)
            if len(values) != dim:
                raise FormatError(f"line {lineno}: expected {dim} components, found {len(values)}")
            try:
                vec = np.array([float(v) for v in values])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            if token not in table:
                table[token] = vec
    if not table:
        raise DomainError(f"embedding file {path} contains no records")
    return table


def _format_number(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


def _round6(x: float) -> float:
    return float(f"{float(x):.6g}")


def write_report(report: DetectionReport, path, format: str = "csv") -> None:
    """Write a detection report as CSV (fixed header) or JSON (mirrors fields)."""
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(REPORT_FIELDS)
            for row in report.rows:
                writer.writerow([_format_number(getattr(row, f)) for f in REPORT_FIELDS])
    elif format == "json":
        doc = {
            "rows": [
                {
                    f: (_round6(getattr(r, f)) if f in ("auroc", "tnr_at_tpr95") else getattr(r, f))
                    for f in REPORT_FIELDS
                }
                for r in report.rows
            ]
        }
        if report.config is not None:
            doc["config"] = report.config
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    else:
        raise DomainError(f"unknown report format {format!r}")


def read_report(path) -> DetectionReport:
    """Read back a CSV or JSON detection report."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        rows = [_row_from_dict(d, path) for d in doc.get("rows", [])]
        return DetectionReport(rows=rows, config=doc.get("config"))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(REPORT_FIELDS):
            raise FormatError(f"{path}: unexpected report header {header}")
        rows = [_row_from_dict(dict(zip(REPORT_FIELDS, line)), path) for line in reader if line]
    return DetectionReport(rows=rows)


def _row_from_dict(d: dict, path) -> ReportRow:
    try:
        return ReportRow(
            score=str(d["score"]),
            shift_kind=str(d["shift_kind"]),
            severity=int(d["severity"]),
            auroc=float(d["auroc"]),
            tnr_at_tpr95=float(d["tnr_at_tpr95"]),
            n_id=int(d["n_id"]),
            n_ood=int(d["n_ood"]),
            seed=int(d["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: malformed report row {d!r} ({exc})") from None
