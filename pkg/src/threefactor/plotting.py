"""Report figures (PNG, headless)."""

from __future__ import annotations

from contextlib import contextmanager
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import ListedColormap  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "savefig.dpi": 120,
    "savefig.bbox": "tight",
}

PASS, FAIL, EMPTY = "#4c9a5f", "#c0504d", "#d9d9d9"


@contextmanager
def style():
    with plt.rc_context(STYLE):
        yield


def _save(fig, path: Path) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    # no version string in the metadata, so reruns write identical bytes
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def verdict_figure(records: list[dict], path: str | Path) -> Path:
    """One bar per scenario; colour says whether it met its expectation."""
    with style():
        n = max(len(records), 1)
        fig, ax = plt.subplots(figsize=(6.4, 0.28 * n + 1.0))
        ids = [r["id"] for r in records]
        y = np.arange(len(records))
        ax.barh(y, [1] * len(records), color=[PASS if r["passed"] else FAIL for r in records])
        for yi, r in zip(y, records):
            ax.text(0.02, yi, f"{r['scheme']} {r['kind']}: {r['outcome']} (expected {r['expected']})",
                    va="center", fontsize=7, color="white")
        ax.set_yticks(y, ids)
        ax.invert_yaxis()
        ax.set_xticks([])
        ax.set_xlim(0, 1)
        ax.set_title("Scenario verdicts")
        return _save(fig, Path(path))


def matrix_figure(rows: list[tuple[str, dict[str, Optional[bool]]]], schemes: tuple[str, ...],
                  path: str | Path) -> Path:
    """Y/N grid of the feature matrix."""
    code = {True: 2, False: 0, None: 1}
    grid = np.array([[code[cells[s]] for s in schemes] for _, cells in rows]).reshape(len(rows), len(schemes))
    with style():
        fig, ax = plt.subplots(figsize=(1.2 * len(schemes) + 3.2, 0.32 * len(rows) + 0.8))
        ax.imshow(grid, cmap=ListedColormap([FAIL, EMPTY, PASS]), vmin=0, vmax=2, aspect="auto")
        for i, (_, cells) in enumerate(rows):
            for j, s in enumerate(schemes):
                mark = {True: "Y", False: "N", None: "-"}[cells[s]]
                ax.text(j, i, mark, ha="center", va="center", color="white", fontweight="bold")
        ax.set_xticks(range(len(schemes)), schemes)
        ax.set_yticks(range(len(rows)), [label for label, _ in rows])
        ax.tick_params(length=0)
        for side in ("left", "bottom"):
            ax.spines[side].set_visible(False)
        ax.set_title("Security features")
        return _save(fig, Path(path))
