"""Static SVG figures with byte-stable output."""
from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {"svg.hashsalt": "decaylab", "svg.fonttype": "path", "font.size": 9}


def decay_figure_svg(fit, title: str = "") -> bytes:
    """Log-log plot of block suprema of |F_q| with the fitted power law."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        ax.loglog(fit.centers, fit.sups, "o", ms=4, color="k", label="block sup")
        qq = np.geomspace(fit.edges[0], fit.edges[-1], 64)
        ax.loglog(qq, np.exp(fit.intercept) * qq ** (-fit.alpha), "-", lw=1, color="C3",
                  label=f"fit, alpha = {fit.alpha:.4f}")
        for e in fit.edges:
            ax.axvline(e, color="0.85", lw=0.5, zorder=0)
        ax.set_xlabel("q")
        ax.set_ylabel("sup |F_q|")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()
