"""Metrics, rolling test evaluation, persistence baseline and reports.

MSE and MAE use the per-dimension-averaged convention:
metric = (1/n) * sum_i sum_j err(i,j) / d, i.e. the plain mean over all
elements of the forecast window. Rolling evaluation slides the window at
stride 1 across the test split and averages per-window metrics.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data as dat
from . import model as mdl
from .exceptions import DataError, DimensionError


def mse(y: np.ndarray, yhat: np.ndarray) -> float:
    y, yhat = np.asarray(y), np.asarray(yhat)
    if y.shape != yhat.shape:
        raise DimensionError(f"metric shapes differ: {y.shape} vs {yhat.shape}")
    return float(np.mean((y - yhat) ** 2))


def mae(y: np.ndarray, yhat: np.ndarray) -> float:
    y, yhat = np.asarray(y), np.asarray(yhat)
    if y.shape != yhat.shape:
        raise DimensionError(f"metric shapes differ: {y.shape} vs {yhat.shape}")
    return float(np.mean(np.abs(y - yhat)))


def persistence_baseline(x_enc: np.ndarray, L_y: int) -> np.ndarray:
    """Repeat the last observed row L_y times; sanity floor for forecasts."""
    x_enc = np.asarray(x_enc)
    return np.tile(x_enc[-1], (L_y, 1))


@dataclass
class EvalReport:
    window_starts: list[int]
    mse_per_window: list[float]
    mae_per_window: list[float]
    agg_mse: float
    agg_mae: float
    config_fingerprint: str
    # first window's traces for plotting: (L_y, d) each
    trace_true: np.ndarray = field(repr=False, default=None)
    trace_pred: np.ndarray = field(repr=False, default=None)
    predictions: list[tuple[int, np.ndarray, np.ndarray]] = field(
        repr=False, default_factory=list)  # (start, y_true, y_pred)


def config_fingerprint(cfg_dict: dict) -> str:
    return hashlib.sha256(
        json.dumps(cfg_dict, sort_keys=True, default=str).encode()).hexdigest()[:16]


def rolling_evaluate(params: mdl.FinetuneParams, cfg: mdl.ModelConfig,
                     test_frame: dat.TimeSeriesFrame,
                     keep_predictions: bool = True) -> EvalReport:
    windows = dat.make_windows(test_frame, cfg.L_x, cfg.L_label, cfg.L_y)
    if len(windows) == 0:
        raise DataError("test split yields no evaluation windows")
    starts, mses, maes, preds = [], [], [], []
    first_true = first_pred = None
    for i in range(len(windows)):
        s = windows[i]
        pred = mdl.finetune_forward(s.x_enc, s.enc_marks, s.x_label,
                                    s.label_marks, s.y_marks, params, cfg).data
        starts.append(i)
        mses.append(mse(s.y_true, pred))
        maes.append(mae(s.y_true, pred))
        if i == 0:
            first_true = s.y_true.copy()
            first_pred = np.asarray(pred, dtype=np.float64)
        if keep_predictions:
            preds.append((i, s.y_true.copy(), np.asarray(pred, dtype=np.float64)))
    return EvalReport(
        window_starts=starts, mse_per_window=mses, mae_per_window=maes,
        agg_mse=float(np.mean(mses)), agg_mae=float(np.mean(maes)),
        config_fingerprint=config_fingerprint(
            {k: getattr(cfg, k) for k in ("d_x", "d_y", "L_x", "L_y", "L_label",
                                          "d_model", "n_heads", "d_ff", "enc_layers",
                                          "finetune_dec_layers", "p")}),
        trace_true=first_true, trace_pred=first_pred, predictions=preds)


def _polyline(xs, ys, color: str, width: float = 1.5) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
    return (f'<polyline fill="none" stroke="{color}" '
            f'stroke-width="{width}" points="{pts}"/>')


def render_chart_svg(y_true: np.ndarray, y_pred: np.ndarray, dim: int = 0,
                     title: str = "forecast") -> str:
    """1200x400 chart with exactly two polylines: ground truth and prediction."""
    W, H, M = 1200, 400, 50
    t = np.asarray(y_true, dtype=np.float64)[:, dim]
    p = np.asarray(y_pred, dtype=np.float64)[:, dim]
    lo = min(t.min(), p.min())
    hi = max(t.max(), p.max())
    span = (hi - lo) or 1.0
    n = len(t)
    xs = M + (W - 2 * M) * np.arange(n) / max(n - 1, 1)

    def ys(v):
        return H - M - (H - 2 * M) * (v - lo) / span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}" '
        f'width="{W}" height="{H}">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{M}" y1="{H - M}" x2="{W - M}" y2="{H - M}" stroke="black"/>',
        f'<line x1="{M}" y1="{M}" x2="{M}" y2="{H - M}" stroke="black"/>',
        f'<text x="{W // 2}" y="{H - 10}" text-anchor="middle">step</text>',
        f'<text x="15" y="{H // 2}" transform="rotate(-90 15 {H // 2})" '
        f'text-anchor="middle">value (dim {dim})</text>',
        f'<text x="{W // 2}" y="25" text-anchor="middle">{title}</text>',
        _polyline(xs, ys(t), "#1f77b4"),
        _polyline(xs, ys(p), "#ff7f0e"),
        "</svg>",
    ]
    return "\n".join(parts)


def emit_report(report: EvalReport, out_dir, chart_dim: int = 0) -> dict[str, Path]:
    """Write metrics.csv, predictions.csv and chart.svg into out_dir."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        with open(metrics_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_start", "mse", "mae"])
            for s, m1, m2 in zip(report.window_starts, report.mse_per_window,
                                 report.mae_per_window):
                w.writerow([s, repr(m1), repr(m2)])

        preds_path = out / "predictions.csv"
        with open(preds_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window_start", "step", "dim", "y_true", "y_pred"])
            for start, y_true, y_pred in report.predictions:
                for step in range(y_true.shape[0]):
                    for dim in range(y_true.shape[1]):
                        w.writerow([start, step, dim,
                                    repr(float(y_true[step, dim])),
                                    repr(float(y_pred[step, dim]))])

        chart_path = out / "chart.svg"
        chart_path.write_text(render_chart_svg(report.trace_true, report.trace_pred,
                                               dim=chart_dim))
    except OSError as exc:
        raise DataError(f"cannot write report into {out}: {exc}") from None
    return {"metrics": metrics_path, "predictions": preds_path, "chart": chart_path}
