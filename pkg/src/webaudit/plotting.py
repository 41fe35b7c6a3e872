"""SVG figures for the CLI.  Rendering is deterministic: fixed hash salt,
no date metadata, text kept as text."""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from webaudit.errors import WebauditError  # noqa: E402
from webaudit.report import write_atomic  # noqa: E402

STYLE = {
    "svg.hashsalt": "webaudit",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 10,
    "figure.dpi": 100,
}


def _save(fig, path):
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None}, bbox_inches=None)
    plt.close(fig)
    return write_atomic(path, buf.getvalue())


def _probes(ax, probes, **kw):
    """Scatter the probe points as one group with id 'probes' (one marker each)."""
    pts = np.asarray(probes, dtype=float)
    kw.setdefault("s", 10)
    kw.setdefault("c", "k")
    kw.setdefault("marker", "o")
    sc = ax.scatter(pts[:, 0], pts[:, 1], zorder=5, **kw)
    sc.set_gid("probes")
    return sc


def _heat(ax, probes, values, n, label, cmap="viridis"):
    vals = np.array([np.nan if v is None else v for v in values], dtype=float).reshape(n, n)
    pts = np.asarray(probes, dtype=float)
    xs = pts[:n, 0]
    ys = pts[::n, 1]
    mesh = ax.pcolormesh(xs, ys, vals, shading="nearest", cmap=cmap)
    mesh.set_gid("heatmap")
    ax.figure.colorbar(mesh, ax=ax, label=label)


def _grid_values(func, rect, n=41):
    xs = np.linspace(rect.xlo, rect.xhi, n)
    ys = np.linspace(rect.ylo, rect.yhi, n)
    z = np.full((n, n), np.nan)
    for iy, y in enumerate(ys):
        for ix, x in enumerate(xs):
            try:
                z[iy, ix] = func(float(x), float(y))
            except (ArithmeticError, WebauditError):
                pass  # blank cell
    return xs, ys, z


def separability_figure(web, report, path):
    """Level curves of f beside a heat map of K on the probe grid."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
        xs, ys, z = _grid_values(web.f.value, web.domain)
        a1.contour(xs, ys, z, levels=15, colors="0.3", linewidths=0.8)
        a1.set_title("level curves of f")
        a1.set_xlabel(web.f.names[0])
        a1.set_ylabel(web.f.names[1])
        n = int(round(len(report.probes) ** 0.5))
        _heat(a2, report.probes, report.curvature, n, "K")
        _probes(a2, report.probes)
        a2.set_title(f"curvature ({report.verdict})")
        a2.set_xlabel(web.f.names[0])
        fig.tight_layout()
        return _save(fig, path)


def hexagon_figure(hex_report, web, path):
    """Six-segment construction with the closure defect in red."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        lines = hex_report.polylines
        for key in ("level_1", "level_2", "level_3"):
            pts = np.asarray(lines.get(key, []))
            if len(pts):
                ax.plot(pts[:, 0], pts[:, 1], color="tab:blue", lw=1.0)
        for seg in lines.get("verticals", []) + lines.get("horizontals", []):
            s = np.asarray(seg)
            ax.plot(s[:, 0], s[:, 1], color="0.5", lw=0.8, ls="--")
        d = np.asarray(lines.get("defect", []))
        if len(d):
            (ln,) = ax.plot(d[:, 0], d[:, 1], color="red", lw=3.0, solid_capstyle="butt")
            ln.set_gid("defect")
        h = hex_report
        pts = [(h.x0, h.y0), (h.x1, h.y0), (h.x2, h.y0), (h.x0, h.y1), (h.x1, h.y1), (h.x2, h.y1),
               (h.x0, h.y2_closing), (h.x1, h.y2)]
        _probes(ax, pts, s=14)
        ax.set_title(f"hexagon closure, gap = {h.gap:.3e}")
        ax.set_xlabel(web.f.names[0])
        ax.set_ylabel(web.f.names[1])
        fig.tight_layout()
        return _save(fig, path)


def audit_figure(web, report, path, n=31):
    """Two-family web in the (p1, q1) plane and residual heat maps."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 3, figsize=(13, 4))
        d = web.domain

        def p2(x, y):
            return web.induced_map(x, y).p2

        def q2(x, y):
            return web.induced_map(x, y).q2

        xs, ys, zp = _grid_values(p2, d, n)
        _, _, zq = _grid_values(q2, d, n)
        ax = axes[0]
        ax.contour(xs, ys, zp, levels=10, colors="k", linewidths=1.6)
        ax.contour(xs, ys, zq, levels=10, colors="tab:orange", linewidths=0.8)
        ax.set_title("leaves p2 = const (bold), q2 = const")
        ax.set_xlabel("p1")
        ax.set_ylabel("q1")
        k = int(round(len(report.probes) ** 0.5))
        _heat(axes[1], report.probes, report.lagrangian, k, "det + 1", cmap="coolwarm")
        _probes(axes[1], report.probes)
        axes[1].set_title("Lagrangian residual")
        axes[1].set_xlabel("p1")
        _heat(axes[2], report.probes, report.samuelson, k, "(ln|a|)_q1p1", cmap="coolwarm")
        axes[2].set_title("area-condition residual")
        axes[2].set_xlabel("p1")
        fig.tight_layout()
        return _save(fig, path)


def recovery_figure(rep, path):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 4))
        a1.plot(rep.x_grid, rep.u1_table, label="U1")
        a1.plot(rep.y_grid, rep.u2_table, label="U2")
        a1.legend()
        a1.set_title("recovered pieces")
        a2.plot(rep.f_grid, rep.phi_table, color="tab:green")
        a2.set_title("phi")
        a2.set_xlabel("f")
        fig.tight_layout()
        return _save(fig, path)


def rectify_figure(rect, path):
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 4))
        ax.plot(rect.q_grid, rect.F_table, label="F(q1)")
        ax.plot(rect.p_grid, rect.G_table, label="G(p1)")
        ax.legend()
        ax.set_title("rectifying maps")
        fig.tight_layout()
        return _save(fig, path)
