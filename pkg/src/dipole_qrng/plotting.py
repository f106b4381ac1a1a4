"""Figures for run reports.  Uses the non-interactive Agg backend."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .correlate import g2_model  # noqa: E402
from .timetags import atomic_write  # noqa: E402

_RC = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    # fixed metadata so repeated runs give identical files
    "svg.hashsalt": "dipole-qrng",
}


def _save(fig, path) -> None:
    buf = io.BytesIO()
    fmt = str(path).rsplit(".", 1)[-1].lower()
    meta = {
        "png": {"Software": None},
        "svg": {"Date": None, "Creator": None},
        "pdf": {"Creator": None, "Producer": None, "CreationDate": None},
    }.get(fmt)
    fig.savefig(buf, format=fmt, metadata=meta)
    plt.close(fig)
    atomic_write(path, buf.getvalue())


def plot_g2(curve, fit=None, path="g2.png", title=None) -> None:
    """Normalized coincidences with the fitted ``1 - a exp(-|lag|/tau0)``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.2))
        ax.step(curve.lags_ns, curve.normalized, where="mid", lw=0.8, color="0.3", label="data")
        if fit is not None:
            x = np.linspace(curve.lags_ns[0], curve.lags_ns[-1], 801)
            ax.plot(x, g2_model(x, fit.a, fit.tau0_ns), color="C3", lw=1.2,
                    label=f"fit: g2(0)={fit.g2_at_zero:.3f}, tau0={fit.tau0_ns:.3f} ns")
        ax.axhline(0.5, color="0.6", lw=0.6, ls=":")
        ax.set_xlabel("delay (ns)")
        ax.set_ylabel("g2")
        ax.set_ylim(bottom=0)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False, loc="lower right")
        fig.tight_layout()
        _save(fig, path)


def plot_battery(report, path="battery.png", title=None) -> None:
    """Minimum p-value per test on a log axis, dashed line at alpha.

    ``report`` is a :class:`TestReport` or its ``to_dict()`` form.
    """
    if hasattr(report, "to_dict"):
        report = report.to_dict()
    names, pvals, colors = [], [], []
    for r in report["tests"]:
        names.append(r["name"])
        if r["skipped"] is None:
            pvals.append(max(r["min_p_value"], 1e-300))
            colors.append("C2" if r["passed"] else "C3")
        else:
            pvals.append(np.nan)
            colors.append("0.8")
    pvals = np.array(pvals, dtype=float)
    lo = min(1e-4, float(np.nanmin(pvals))) if np.isfinite(pvals).any() else 1e-4
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        y = np.arange(len(names))
        ax.barh(y, np.nan_to_num(pvals, nan=1.0), color=colors, height=0.6)
        ax.axvline(report["alpha"], color="k", ls="--", lw=0.8)
        ax.set_xscale("log")
        ax.set_xlim(lo, 1.0)
        ax.set_yticks(y, names)
        ax.invert_yaxis()
        ax.set_xlabel("minimum p-value (grey: skipped)")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        _save(fig, path)
