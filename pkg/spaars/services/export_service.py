"""Reformat metrics streams and gate sweeps into tables and plots."""
import json
from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from spaars.schemas.curriculum_schemas import METRICS_COLUMNS  # noqa: E402
from spaars.services.curriculum_service import curriculum_service  # noqa: E402
from spaars.services.env_service import env_service  # noqa: E402
from spaars.utils.errors import ConfigurationError, UsageError  # noqa: E402
from spaars.utils.logger import log_info  # noqa: E402
from spaars.utils.metrics import read_metrics  # noqa: E402

EXPORT_KINDS = ("csv", "svg-lines", "heatmap-csv")

PathLike = Union[str, Path]


class ExportService:
    """Exports never reinterpret values; they only change the layout."""

    def metrics_frame(self, metrics_path: PathLike) -> pd.DataFrame:
        records = read_metrics(metrics_path)
        frame = pd.DataFrame([r.model_dump() for r in records], columns=METRICS_COLUMNS)
        frame["state"] = [json.dumps(v) if v is not None else None for v in frame["state"]]
        return frame

    def export_csv(self, metrics_path: PathLike, out: PathLike) -> Path:
        """One row per metrics record, columns in schema order."""
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        self.metrics_frame(metrics_path).to_csv(out, index=False)
        return out

    def export_svg_lines(self, metrics_paths: Sequence[PathLike], out: PathLike, y: str = "eval_return") -> Path:
        """One polyline per seed of the eval records, x ascending."""
        if y not in METRICS_COLUMNS:
            raise UsageError(f"Unknown metrics column '{y}'")
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        plt.rcParams["svg.hashsalt"] = "spaars"

        fig, ax = plt.subplots(figsize=(6, 4))
        for path in metrics_paths:
            frame = self.metrics_frame(path)
            frame = frame[(frame["kind"] == "eval") & frame[y].notna()]
            for seed, group in frame.groupby("seed", sort=True):
                group = group.sort_values("step")
                ax.plot(group["step"].to_numpy(), group[y].to_numpy(dtype=float), label=f"seed {seed}")
        ax.set_xlabel("environment steps")
        ax.set_ylabel(y)
        if ax.lines:
            ax.legend()
        fig.savefig(out, format="svg", metadata={"Date": None})
        plt.close(fig)
        return out

    def write_heatmap(self, states: np.ndarray, fired: np.ndarray, out: PathLike) -> Path:
        """Rows (x, y, fired) with y = 0 for one-dimensional states."""
        states = np.atleast_2d(states)
        out = Path(out)
        out.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame({
            "x": states[:, 0],
            "y": states[:, 1] if states.shape[1] > 1 else np.zeros(len(states)),
            "fired": np.asarray(fired, dtype=int),
        }).to_csv(out, index=False)
        return out

    def export_heatmap(self, snapshot_path: PathLike, out: PathLike, resolution: int = 4) -> Path:
        """Sweep the gate of a saved policy snapshot over its environment's state grid."""
        snapshot = curriculum_service.load_policy_snapshot(snapshot_path)
        config = snapshot["config"]
        if config.curriculum.variant != "gate":
            raise ConfigurationError("Heatmaps need a gate-variant run")
        states = env_service.sweep_states(env_service.make_env(config.env, **config.env_options), resolution)
        fired = curriculum_service.activation_set(
            states, snapshot["model"], snapshot["latent_actor"], snapshot["raw_actor"], snapshot["critic"],
            config.curriculum.gate,
        )
        return self.write_heatmap(states, fired, out)

    def export(self, kind: str, inputs: Sequence[PathLike], out: PathLike) -> Path:
        """
        Dispatch on the export kind.

        Raises:
            UsageError: On unknown kinds or a wrong number of inputs
        """
        if kind not in EXPORT_KINDS:
            raise UsageError(f"Unknown export kind '{kind}'; expected one of {list(EXPORT_KINDS)}")
        if not inputs:
            raise UsageError("export needs at least one input file")
        if kind == "csv":
            path = self.export_csv(inputs[0], out)
        elif kind == "svg-lines":
            path = self.export_svg_lines(inputs, out)
        else:
            path = self.export_heatmap(inputs[0], out)
        log_info("Exported", kind=kind, out=str(path))
        return path


# Singleton instance
export_service = ExportService()
