"""PNG rendering of sweep reports (non-interactive Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

X_LABELS = {
    "lte_sweep": "anchor step h",
    "h_sweep": "step size h",
    "cobs_sweep": "step size h",
    "ell_sweep": "number of windows",
    "filter_comparison": "number of windows",
}


def render_report(report, path) -> Path:
    """Log-log plot of every series: seed spread as a band, fit as a dashed line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for s in report.series:
        ok = s.center > 0
        if not ok.any():
            continue
        line = ax.loglog(s.x[ok], s.center[ok], "o-", label=s.name)[0]
        ax.fill_between(s.x[ok], s.lo[ok], s.hi[ok], color=line.get_color(), alpha=0.2, linewidth=0)
        fit = s.fitted()
        if fit is not None:
            ax.loglog(s.x, fit, "--", color=line.get_color(), linewidth=1,
                      label=f"{s.name} slope {s.slope:.2f}")
    ax.set_xlabel(X_LABELS.get(report.kind, "grid value"))
    ax.set_ylabel("metric")
    ax.set_title(f"{report.name} [{report.status}]")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path
