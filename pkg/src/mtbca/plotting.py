"""Report figures written next to the CSV/JSON outputs (headless Agg backend)."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "savefig.bbox": "tight",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def _save(fig, path):
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_history(history, path):
    """Loss curves, train accuracy and learned task weights per epoch."""
    ep = history.column("epoch")
    with plt.rc_context(STYLE):
        fig, (a, b, c) = plt.subplots(1, 3, figsize=(11, 3.2))
        a.plot(ep, history.column("L1"), label="L1 (classify)")
        a.plot(ep, history.column("L2"), label="L2 (reconstruct)")
        a.plot(ep, history.column("L_total"), label="total", color="k", lw=1)
        a.set_xlabel("epoch")
        a.set_title("loss")
        a.legend()
        b.plot(ep, history.column("acc"), color="tab:green")
        b.set_ylim(0, 1.02)
        b.set_xlabel("epoch")
        b.set_title("train accuracy")
        c.plot(ep, history.column("rho_cls"), label="rho cls")
        c.plot(ep, history.column("rho_recon"), label="rho recon")
        c.set_xlabel("epoch")
        c.set_title("uncertainty")
        c.legend()
        fig.tight_layout()
        return _save(fig, path)


def plot_confusion(cm, class_names, path, normalize=True):
    cm = np.asarray(cm, dtype=float)
    shown = cm / np.maximum(cm.sum(axis=1, keepdims=True), 1) if normalize else cm
    n = len(class_names)
    side = max(4.0, 0.28 * n + 1.5)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, ax = plt.subplots(figsize=(side + 0.8, side))
        im = ax.imshow(shown, cmap="Blues", vmin=0, vmax=1 if normalize else None)
        ax.set_xticks(range(n), class_names, rotation=90, fontsize=6 if n > 12 else 8)
        ax.set_yticks(range(n), class_names, fontsize=6 if n > 12 else 8)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        if n <= 12:
            for i in range(n):
                for j in range(n):
                    if cm[i, j]:
                        ax.text(j, i, int(cm[i, j]), ha="center", va="center", fontsize=7,
                                color="w" if shown[i, j] > 0.5 else "k")
        return _save(fig, path)


def plot_ablation(rows, path):
    """Grouped bars of accuracy / macro F1 per variant, parameter counts annotated."""
    ok = [r for r in rows if r.get("accuracy") is not None]
    names = [r["variant"] for r in ok]
    x = np.arange(len(ok))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.6 * max(len(ok), 2) + 1.5, 3.4))
        ax.bar(x - 0.18, [r["accuracy"] for r in ok], 0.36, label="accuracy")
        ax.bar(x + 0.18, [r["f1"] for r in ok], 0.36, label="macro F1")
        for xi, r in zip(x, ok):
            ax.text(xi, 1.04, f"{r['params'] / 1e6:.3f}M", ha="center", fontsize=8)
        ax.set_xticks(x, names)
        ax.set_ylim(0, 1.12)
        ax.legend(loc="lower right")
        ax.set_title("model variants")
        return _save(fig, path)
