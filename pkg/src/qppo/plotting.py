"""Learning-curve figures: per-environment mean line, std band, target line."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .runner import TARGET_RETURNS, read_aggregate_csv


def plot_records(record_dirs, out_dir=None) -> list[Path]:
    """One figure per environment overlaying every record's scheme curve.

    Each record dir must contain record.json and aggregate.csv (written by
    `run`).  Returns the written image paths.
    """
    record_dirs = [Path(d) for d in record_dirs]
    if not record_dirs:
        raise ValueError("no run records given")
    by_env: dict[str, list[tuple[dict, list[dict]]]] = {}
    for d in record_dirs:
        record = json.loads((d / "record.json").read_text())
        rows = read_aggregate_csv(d / "aggregate.csv")
        by_env.setdefault(record["env"], []).append((record, rows))

    out_dir = Path(out_dir) if out_dir else record_dirs[0]
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for env, entries in sorted(by_env.items()):
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for record, rows in entries:
            steps = [r["env_steps"] for r in rows]
            mean = [r["return_mean"] for r in rows]
            std = [r["return_std"] for r in rows]
            label = record.get("scheme", record.get("name", "run"))
            (line,) = ax.plot(steps, mean, label=label)
            ax.fill_between(
                steps,
                [m - s for m, s in zip(mean, std)],
                [m + s for m, s in zip(mean, std)],
                alpha=0.25,
                color=line.get_color(),
            )
        target = TARGET_RETURNS.get(env)
        if target is not None:
            ax.axhline(target, color="black", linestyle=":", linewidth=1.2, label="target")
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean episode return")
        ax.set_title(env)
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"learning_curves_{env.replace('-', '_')}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written
