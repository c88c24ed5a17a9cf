"""Non-IID scoring and report rendering.

The protocol's last step compares each client's local CDF with the decrypted
central CDF.  Two scalarizations are emitted side by side: the sup-norm (KS)
distance, the worst single grid point, and the mean absolute (L1) distance.
Coverage captures how much of the federation's support a client owns: for
label runs, the fraction of the global label set present locally; for feature
runs, the fraction of saturated grid points (local CDF already at 1.0) that
the central CDF has also saturated.

All distances are computed on the shared policy grid only; nothing is
interpolated, because the encrypted pipeline only ever transports grid
values.  Report emission is deterministic: identical inputs give identical
bytes.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ecdf import (
    LABEL,
    FEATURE,
    DistributionPolicy,
    Ecdf,
    pdf_from_cdf,
)
from .errors import ContractError, ValidationError

SVG_WIDTH = 800
SVG_HEIGHT = 500
# 10-class color cycle
_PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
]

_SATURATED = 1.0 - 1e-9


@dataclass
class ReportRow:
    client_id: int
    dimension: int
    ks: float
    l1: float
    coverage: float


@dataclass
class NonIidReport:
    rows: list
    metadata: dict


@dataclass
class ReportBundle:
    """Everything needed to render: the CDFs themselves plus the score rows."""

    locals: dict  # client_id -> Ecdf
    central: Ecdf
    report: NonIidReport

    @property
    def policy(self) -> DistributionPolicy:
        return self.central.policy


def _check_same_policy(local: Ecdf, central: Ecdf):
    if local.policy != central.policy:
        raise ContractError("CDFs evaluated on different policies are incomparable")


def ks_distance(local: Ecdf, central: Ecdf, dim: int = 0) -> float:
    """Largest pointwise gap on the shared grid; zero iff equal everywhere."""
    _check_same_policy(local, central)
    return float(np.abs(local.values[dim] - central.values[dim]).max())


def l1_distance(local: Ecdf, central: Ecdf, dim: int = 0) -> float:
    """Mean pointwise gap; never exceeds the KS distance."""
    _check_same_policy(local, central)
    return float(np.abs(local.values[dim] - central.values[dim]).mean())


def label_coverage(local: Ecdf, central: Ecdf) -> float:
    """Share of the global label set with nonzero local mass."""
    _check_same_policy(local, central)
    if local.policy.kind != LABEL:
        raise ContractError("label_coverage applies to label policies only")
    (pdf,) = pdf_from_cdf(local)
    return float((pdf > 1e-12).sum() / len(pdf))


def saturation_coverage(local: Ecdf, central: Ecdf, dim: int = 0) -> float:
    """|{grid points where central is 1.0}| / |{where local is 1.0}|.

    The central CDF saturates only where every client's does, so this lands
    in (0, 1]; small values mean the client's support stops well short of
    the federation's.
    """
    _check_same_policy(local, central)
    local_sat = int((local.values[dim] >= _SATURATED).sum())
    central_sat = int((central.values[dim] >= _SATURATED).sum())
    if local_sat == 0:
        return 1.0  # client never saturates: it spans the whole grid
    return min(1.0, central_sat / local_sat)


def build_report(local_cdfs: dict, central: Ecdf, metadata: dict | None = None) -> NonIidReport:
    """One row per (client, dimension), ordered by client id then dimension."""
    if not local_cdfs:
        raise ValidationError("report needs at least one client CDF")
    rows = []
    for client_id in sorted(local_cdfs):
        local = local_cdfs[client_id]
        for dim in range(central.policy.n_dims):
            if central.policy.kind == LABEL:
                coverage = label_coverage(local, central)
            else:
                coverage = saturation_coverage(local, central, dim)
            rows.append(
                ReportRow(
                    client_id=client_id,
                    dimension=dim,
                    ks=ks_distance(local, central, dim),
                    l1=l1_distance(local, central, dim),
                    coverage=coverage,
                )
            )
    return NonIidReport(rows, dict(metadata or {}))


def build_bundle(local_cdfs: dict, central: Ecdf, metadata: dict | None = None) -> ReportBundle:
    return ReportBundle(dict(local_cdfs), central, build_report(local_cdfs, central, metadata))


# --- rendering ---------------------------------------------------------------

CSV_HEADER = "client_id,dimension,ks,l1,coverage"


def render_csv(report: NonIidReport) -> str:
    out = [CSV_HEADER]
    for r in report.rows:
        out.append(f"{r.client_id},{r.dimension},{r.ks:.6f},{r.l1:.6f},{r.coverage:.6f}")
    return "\n".join(out) + "\n"


def render_text(report: NonIidReport) -> str:
    header = f"{'client':>6}  {'dim':>3}  {'ks':>8}  {'l1':>8}  {'coverage':>8}"
    lines = [header, "-" * len(header)]
    for r in report.rows:
        lines.append(
            f"{r.client_id:>6}  {r.dimension:>3}  {r.ks:8.6f}  {r.l1:8.6f}  {r.coverage:8.6f}"
        )
    return "\n".join(lines) + "\n"


def _x_positions(grid: np.ndarray, x0: float, x1: float) -> np.ndarray:
    lo, hi = float(grid[0]), float(grid[-1])
    if hi == lo:
        return np.full(len(grid), (x0 + x1) / 2)
    return x0 + (np.asarray(grid, dtype=np.float64) - lo) / (hi - lo) * (x1 - x0)


def _y_position(v: float, y0: float, y1: float) -> float:
    return y1 - v * (y1 - y0)


def _step_path(xs, ys) -> str:
    """Right-continuous step path: hold each value until the next grid point."""
    parts = [f"M {xs[0]:.2f} {ys[0]:.2f}"]
    for i in range(1, len(xs)):
        parts.append(f"H {xs[i]:.2f}")
        parts.append(f"V {ys[i]:.2f}")
    return " ".join(parts)


def render_svg(bundle: ReportBundle, dim: int = 0) -> str:
    """One chart per dimension: local step CDFs, central polyline, legend."""
    grid = bundle.policy.grids[dim]
    left, right, top, bottom = 60.0, SVG_WIDTH - 160.0, 30.0, SVG_HEIGHT - 50.0
    xs = _x_positions(grid, left, right)

    out = io.StringIO()
    out.write(
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_WIDTH}" '
        f'height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}">\n'
    )
    out.write(f'<rect x="0" y="0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" fill="white"/>\n')
    out.write(
        f'<text x="{(left + right) / 2:.2f}" y="20" text-anchor="middle" '
        f'font-family="sans-serif" font-size="14">dimension {dim}</text>\n'
    )
    # frame and horizontal gridlines
    out.write(
        f'<rect x="{left:.2f}" y="{top:.2f}" width="{right - left:.2f}" '
        f'height="{bottom - top:.2f}" fill="none" stroke="#333333" stroke-width="1"/>\n'
    )
    for tick in (0.0, 0.25, 0.5, 0.75, 1.0):
        y = _y_position(tick, top, bottom)
        out.write(
            f'<line x1="{left:.2f}" y1="{y:.2f}" x2="{right:.2f}" y2="{y:.2f}" '
            f'stroke="#dddddd" stroke-width="1"/>\n'
        )
        out.write(
            f'<text x="{left - 8:.2f}" y="{y + 4:.2f}" text-anchor="end" '
            f'font-family="sans-serif" font-size="11">{tick:.2f}</text>\n'
        )
    for pos, val in ((left, grid[0]), (right, grid[-1])):
        label = str(int(val)) if bundle.policy.kind == LABEL else f"{float(val):.3g}"
        out.write(
            f'<text x="{pos:.2f}" y="{bottom + 18:.2f}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{label}</text>\n'
        )

    # local step CDFs
    for idx, client_id in enumerate(sorted(bundle.locals)):
        ys = [_y_position(v, top, bottom) for v in bundle.locals[client_id].values[dim]]
        color = _PALETTE[idx % len(_PALETTE)]
        out.write(
            f'<path d="{_step_path(xs, ys)}" fill="none" stroke="{color}" '
            f'stroke-width="1.5"/>\n'
        )
    # central CDF as a polyline
    pts = " ".join(
        f"{x:.2f},{_y_position(v, top, bottom):.2f}"
        for x, v in zip(xs, bundle.central.values[dim])
    )
    out.write(
        f'<polyline points="{pts}" fill="none" stroke="#000000" '
        f'stroke-width="2.5" stroke-dasharray="6 3"/>\n'
    )

    # legend
    lx = right + 12
    ly = top + 10
    for idx, client_id in enumerate(sorted(bundle.locals)):
        color = _PALETTE[idx % len(_PALETTE)]
        out.write(
            f'<line x1="{lx:.2f}" y1="{ly:.2f}" x2="{lx + 22:.2f}" y2="{ly:.2f}" '
            f'stroke="{color}" stroke-width="2"/>\n'
        )
        out.write(
            f'<text x="{lx + 28:.2f}" y="{ly + 4:.2f}" font-family="sans-serif" '
            f'font-size="12">client {client_id}</text>\n'
        )
        ly += 18
    out.write(
        f'<line x1="{lx:.2f}" y1="{ly:.2f}" x2="{lx + 22:.2f}" y2="{ly:.2f}" '
        f'stroke="#000000" stroke-width="2.5" stroke-dasharray="6 3"/>\n'
    )
    out.write(
        f'<text x="{lx + 28:.2f}" y="{ly + 4:.2f}" font-family="sans-serif" '
        f'font-size="12">central</text>\n'
    )
    out.write("</svg>\n")
    return out.getvalue()


def emit_report(bundle: ReportBundle, fmt: str, out_dir) -> list:
    """Write csv/svg files into out_dir, or print the text table to stdout."""
    if fmt == "text":
        print(render_text(bundle.report), end="")
        return []
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        path = out_dir / "report.csv"
        path.write_text(render_csv(bundle.report))
        written.append(path)
    elif fmt == "svg":
        for dim in range(bundle.policy.n_dims):
            path = out_dir / f"cdf_dim{dim}.svg"
            path.write_text(render_svg(bundle, dim))
            written.append(path)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    return written


# --- artifact store ----------------------------------------------------------
# The CDFs behind a run are persisted so reports can be re-rendered without
# re-running the protocol.

POLICY_FILE = "policy.csv"
CENTRAL_FILE = "central_cdf.csv"
META_FILE = "meta.txt"


def _client_file(client_id: int) -> str:
    return f"client_{client_id}_cdf.csv"


def _write_cdf_csv(path, e: Ecdf):
    with open(path, "w", newline="") as fh:
        fh.write("dimension,index,value\n")
        for dim, vals in enumerate(e.values):
            for idx, v in enumerate(vals):
                fh.write(f"{dim},{idx},{float(v)!r}\n")


def _read_cdf_csv(path, policy: DistributionPolicy) -> Ecdf:
    per_dim = [np.zeros(len(g)) for g in policy.grids]
    with open(path, "r", newline="") as fh:
        header = fh.readline().strip()
        if header != "dimension,index,value":
            raise ValidationError(f"{path}: malformed CDF artifact header")
        for line in fh:
            dim_s, idx_s, val_s = line.strip().split(",")
            per_dim[int(dim_s)][int(idx_s)] = float(val_s)
    return Ecdf(policy, tuple(per_dim), sample_count=None)


def _write_policy_csv(path, policy: DistributionPolicy):
    with open(path, "w", newline="") as fh:
        fh.write(f"kind,{policy.kind}\n")
        fh.write("dimension,index,value\n")
        for dim, grid in enumerate(policy.grids):
            for idx, v in enumerate(grid):
                rendered = str(int(v)) if policy.kind == LABEL else repr(float(v))
                fh.write(f"{dim},{idx},{rendered}\n")


def _read_policy_csv(path) -> DistributionPolicy:
    with open(path, "r", newline="") as fh:
        first = fh.readline().strip().split(",")
        if len(first) != 2 or first[0] != "kind" or first[1] not in (LABEL, FEATURE):
            raise ValidationError(f"{path}: malformed policy artifact")
        kind = first[1]
        if fh.readline().strip() != "dimension,index,value":
            raise ValidationError(f"{path}: malformed policy artifact header")
        per_dim: dict[int, list] = {}
        for line in fh:
            dim_s, idx_s, val_s = line.strip().split(",")
            per_dim.setdefault(int(dim_s), []).append(
                int(val_s) if kind == LABEL else float(val_s)
            )
    dtype = np.int64 if kind == LABEL else np.float64
    grids = tuple(np.array(per_dim[d], dtype=dtype) for d in sorted(per_dim))
    return DistributionPolicy(kind, grids)


def save_artifacts(out_dir, bundle: ReportBundle):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_policy_csv(out_dir / POLICY_FILE, bundle.policy)
    _write_cdf_csv(out_dir / CENTRAL_FILE, bundle.central)
    for client_id, local in sorted(bundle.locals.items()):
        _write_cdf_csv(out_dir / _client_file(client_id), local)
    (out_dir / "report.csv").write_text(render_csv(bundle.report))
    with open(out_dir / META_FILE, "w") as fh:
        for key in sorted(bundle.report.metadata):
            fh.write(f"{key}={bundle.report.metadata[key]}\n")


def load_artifacts(in_dir) -> ReportBundle:
    """Rebuild a bundle from stored CDFs; scores are recomputed, not reread."""
    in_dir = Path(in_dir)
    expected = [in_dir / POLICY_FILE, in_dir / CENTRAL_FILE, in_dir / META_FILE]
    client_files = sorted(in_dir.glob("client_*_cdf.csv"))
    missing = [str(p) for p in expected if not p.exists()]
    if not client_files:
        missing.append(str(in_dir / _client_file(0)) + " (no client CDFs at all)")
    if missing:
        raise FileNotFoundError(
            "missing report artifacts: " + ", ".join(missing)
        )
    policy = _read_policy_csv(in_dir / POLICY_FILE)
    central = _read_cdf_csv(in_dir / CENTRAL_FILE, policy)
    locals_ = {}
    for path in client_files:
        client_id = int(path.name.split("_")[1])
        locals_[client_id] = _read_cdf_csv(path, policy)
    metadata = {}
    with open(in_dir / META_FILE) as fh:
        for line in fh:
            line = line.strip()
            if line and "=" in line:
                key, value = line.split("=", 1)
                metadata[key] = value
    return build_bundle(locals_, central, metadata)
