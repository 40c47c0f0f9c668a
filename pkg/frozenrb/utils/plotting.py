"""SVG output: field heat maps and the error-versus-basis-size plot."""
import logging
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from frozenrb.grid import Field  # noqa: E402
from frozenrb.schemas import ErrorRecord, Scheme  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed salt and no date stamp so identical inputs give identical SVG bytes
plt.rcParams["svg.hashsalt"] = "frozenrb"
_SVG_METADATA = {"Date": None}

_STYLE = {
    Scheme.FROZEN: {"label": "FrozenRB", "marker": "o", "color": "tab:blue"},
    Scheme.UNFROZEN: {"label": "RB without freezing", "marker": "s", "color": "tab:red"},
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", bbox_inches="tight", metadata=_SVG_METADATA)
    plt.close(fig)
    return path


def render_field_svg(field: Field, path: Path, title: str = "", vmin: float | None = None, vmax: float | None = None) -> Path:
    """Heat map of a field over the periodic domain."""
    grid = field.grid
    fig, ax = plt.subplots(figsize=(6, 3.2))
    image = ax.imshow(
        field.as_image(),
        origin="lower",
        extent=(0.0, grid.lx, 0.0, grid.ly),
        cmap="viridis",
        vmin=vmin,
        vmax=vmax,
        interpolation="nearest",
    )
    fig.colorbar(image, ax=ax, shrink=0.8)
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    if title:
        ax.set_title(title)
    return _save(fig, path)


def render_field_column(fields: Sequence[Field], titles: Sequence[str], path: Path) -> Path:
    """Stack of heat maps sharing one color scale (one figure column)."""
    vmin = min(float(f.values.min()) for f in fields)
    vmax = max(float(f.values.max()) for f in fields)
    fig, axes = plt.subplots(len(fields), 1, figsize=(6, 3 * len(fields)), squeeze=False)
    for ax, field, title in zip(axes[:, 0], fields, titles):
        grid = field.grid
        image = ax.imshow(field.as_image(), origin="lower", extent=(0.0, grid.lx, 0.0, grid.ly), cmap="viridis", vmin=vmin, vmax=vmax)
        ax.set_title(title)
    fig.colorbar(image, ax=axes[:, 0].tolist(), shrink=0.8)
    return _save(fig, path)


def render_error_plot(records: Iterable[ErrorRecord], path: Path, title: str = "") -> Path:
    """Log-scale maximum error versus basis size, one curve per scheme."""
    records = list(records)
    fig, ax = plt.subplots(figsize=(6, 4))
    for scheme in Scheme:
        rows = sorted((r for r in records if r.scheme == scheme and r.max_error is not None), key=lambda r: r.N)
        if not rows:
            continue
        style = _STYLE[scheme]
        ax.semilogy([r.N for r in rows], [r.max_error for r in rows], marker=style["marker"], color=style["color"], label=style["label"])
    ax.set_xlabel("N (reduced basis size)")
    ax.set_ylabel("max error over test parameters")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    if title:
        ax.set_title(title)
    logger.info(f"Writing error plot to {path}")
    return _save(fig, path)
