"""Figures and CSV slices for run reports.

Every figure shows the chart plane u2 = u2(base) and has a CSV twin with the
plotted values, so the numbers can be re-plotted elsewhere.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# PNG metadata without the matplotlib version keeps artifacts byte-identical across runs
PNG_METADATA = {"Software": None}


def _plane(grid, arr):
    return np.asarray(arr)[:, :, grid.base_index[2]]


def write_slice_csv(path, grid, columns):
    """Columns (name -> field on the grid) sampled on the base u2 plane, one row per node."""
    u0, u1 = np.meshgrid(grid.axis(0), grid.axis(1), indexing="ij")
    names = ["u0", "u1"] + list(columns)
    data = np.column_stack([u0.ravel(), u1.ravel()] + [_plane(grid, v).ravel() for v in columns.values()])
    np.savetxt(path, data, delimiter=",", header=",".join(names), comments="", fmt="%.17g")


def _heat(ax, grid, values, title, cmap="viridis", box=None, **kw):
    ext = (grid.axis(1)[0], grid.axis(1)[-1], grid.axis(0)[0], grid.axis(0)[-1])
    im = ax.imshow(_plane(grid, values), origin="lower", extent=ext, cmap=cmap, aspect="equal", **kw)
    if box is not None:
        c0, c1 = grid.base_point[0], grid.base_point[1]
        ax.add_patch(matplotlib.patches.Rectangle((c1 - box, c0 - box), 2 * box, 2 * box, fill=False,
                                                  ls="--", lw=0.8, ec="w"))
    ax.set_xlabel("$u_1$")
    ax.set_ylabel("$u_0$")
    ax.set_title(title, fontsize=9)
    plt.colorbar(im, ax=ax, shrink=0.8)


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=PNG_METADATA)
    plt.close(fig)


def figure_net(path, net):
    grid = net.grid
    sph = np.sum(net.h.values ** 2, axis=-1) - 1.0
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.4))
    _heat(axes[0], grid, sph, r"$|h|^2 - 1$", cmap="RdBu_r")
    _heat(axes[1], grid, net.gamma.scalar(), r"support $\gamma$")
    _save(fig, path)


def figure_sbrana(path, bundle, flat):
    grid = bundle.coeffs.grid
    Fn = np.sqrt(sum(np.sum(F ** 2, axis=(-1, -2)) for F in bundle.curvature.values()))
    fig, axes = plt.subplots(1, 2, figsize=(8, 3.4))
    sv = np.maximum(np.asarray(flat.singular_values, dtype=float), 1e-300)
    axes[0].semilogy(range(1, len(sv) + 1), sv, "o-", label="F P stack")
    osv = np.maximum(np.asarray(flat.oracle_singular_values, dtype=float), 1e-300)
    axes[0].semilogy(range(1, len(osv) + 1), osv, "s--", label="holonomy oracle")
    axes[0].axhline(flat.tol, color="k", lw=0.8, ls=":", label="tolerance")
    axes[0].set_xticks([1, 2, 3])
    axes[0].set_xlabel("singular value")
    axes[0].set_title(f"flat rank {flat.rank}, t = {flat.type_t}", fontsize=9)
    axes[0].legend(fontsize=7)
    _heat(axes[1], grid, Fn, r"$|F|$ of the Sbrana connection")
    _save(fig, path)


def figure_section(path, grid, phi, label=""):
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    for i, ax in enumerate(axes):
        _heat(ax, grid, phi[..., i], rf"$\varphi_{i}$ {label}", cmap="coolwarm")
    _save(fig, path)


def figure_extension(path, grid, comparison, deviation_field, phi_i, box=None):
    """Signature map, metric deviation and phi_i + 1; ``box`` outlines where checks apply."""
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.2))
    cmap = matplotlib.colors.ListedColormap(["tab:red", "k", "tab:blue"])
    _heat(axes[0], grid, comparison.signature, "signature (red L, black degenerate, blue R)",
          cmap=cmap, box=box, vmin=-1.5, vmax=1.5)
    _heat(axes[1], grid, np.log10(np.maximum(deviation_field, 1e-300)), r"$\log_{10}|T_G - T_{\tilde G}|$",
          box=box)
    v = _plane(grid, phi_i + 1.0)
    lim = max(float(np.max(np.abs(v))), 1e-300)
    _heat(axes[2], grid, phi_i + 1.0, r"$\varphi_i + 1$", cmap="RdBu_r", box=box,
          norm=matplotlib.colors.TwoSlopeNorm(0.0, -lim, lim))
    _save(fig, path)


def figure_chain(path, chains):
    """Chains drawn in the (phi_0, phi_1) plane; phi_2 = -1 - phi_0 - phi_1."""
    fig, ax = plt.subplots(figsize=(4.6, 4.2))
    pts = np.concatenate([np.array(c.base_values) for c in chains]) if chains else np.zeros((1, 3))
    lo, hi = pts[:, :2].min() - 0.5, pts[:, :2].max() + 0.5
    x = np.linspace(lo, hi, 2)
    ax.axvline(0, color="0.6", lw=0.8)
    ax.axhline(0, color="0.6", lw=0.8)
    ax.plot(x, -1 - x, color="0.6", lw=0.8, label=r"$\varphi_i = 0$")
    for n, c in enumerate(chains):
        v = np.array(c.base_values)
        ax.plot(v[:, 0], v[:, 1], "o-", ms=4, label=f"pair {n} ({c.branch})" if n < 8 else None)
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_xlabel(r"$\varphi_0$")
    ax.set_ylabel(r"$\varphi_1$")
    ax.legend(fontsize=7)
    _save(fig, path)
