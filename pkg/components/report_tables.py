import logging
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from models.results import EstimateResult, EvalReport, TimingBreakdown
from utils.file_formats import POSE_COLUMNS, VOTE_COLUMNS

# Setup logging
logger = logging.getLogger(__name__)

# 17 significant digits round-trip every float64
FLOAT_FORMAT = "%.17g"

EVAL_COLUMNS = ["class_id", "n_instances", "adds_auc", "add_s_auc", "add_s_01d", "kp_err_m"]
TIMING_COLUMNS = ["stage", "ms_per_frame"]


def write_table(df: pd.DataFrame, path: Union[str, Path]) -> None:
    """
    Write a table as CSV with full float precision.

    Args:
        df: Table to write
        path: Output file
    """
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(df)} rows to {path}")


def poses_table(results: Iterable[EstimateResult]) -> pd.DataFrame:
    """One row per estimated pose: ids, R row-major, t"""
    data = []
    for result in results:
        for estimate in result.poses:
            row = estimate.pose.as_row()
            data.append([estimate.scene_id, estimate.instance_id, estimate.class_id] + [float(v) for v in row])
    return pd.DataFrame(data, columns=POSE_COLUMNS)


def votes_table(results: Iterable[EstimateResult]) -> pd.DataFrame:
    """Voted edge points of every estimated instance"""
    data = []
    for result in results:
        for estimate in result.poses:
            hyp = estimate.hypothesis
            if hyp is None or not hyp.has_edge_points:
                continue
            for j, point in enumerate(hyp.voted_edge_points):
                support = int(hyp.vote_support[j]) if hyp.vote_support is not None else 0
                data.append([estimate.scene_id, estimate.instance_id, estimate.class_id, j,
                             float(point[0]), float(point[1]), float(point[2]), support])
    return pd.DataFrame(data, columns=VOTE_COLUMNS)


def eval_table(report: EvalReport) -> pd.DataFrame:
    """
    Per-class accuracy table: ADD-S AUC, ADD(S) AUC, ADD(S)-0.1d rate and
    keypoint error, with the ALL row last.
    """
    data = [{
        "class_id": row.class_id,
        "n_instances": row.n_instances,
        "adds_auc": row.adds_auc,
        "add_s_auc": row.add_sym_auc,
        "add_s_01d": row.add01d_rate,
        "kp_err_m": row.kp_err_m,
    } for row in report.rows]
    return pd.DataFrame(data, columns=EVAL_COLUMNS)


def segmentation_table(report: EvalReport) -> pd.DataFrame:
    return pd.DataFrame([{"metric": "miou", "value": report.miou}])


def timing_table(timings: Sequence[TimingBreakdown]) -> pd.DataFrame:
    """
    Per-frame run time by stage, as the median over frames.

    Args:
        timings: One breakdown per frame
    """
    if not timings:
        return pd.DataFrame(columns=TIMING_COLUMNS)
    data = [
        {"stage": "prediction", "ms_per_frame": float(np.median([t.prediction_ms for t in timings]))},
        {"stage": "pose_estimation", "ms_per_frame": float(np.median([t.pose_estimation_ms for t in timings]))},
        {"stage": "total", "ms_per_frame": float(np.median([t.total_ms for t in timings]))},
    ]
    return pd.DataFrame(data, columns=TIMING_COLUMNS)


def loss_history_table(history: Sequence[float]) -> pd.DataFrame:
    return pd.DataFrame({"epoch": np.arange(1, len(history) + 1), "loss": np.asarray(history, dtype=np.float64)})


def keypoints_table(scene_id: int, indices: np.ndarray, points: np.ndarray, pixels: np.ndarray,
                    win_counts: Optional[np.ndarray] = None) -> pd.DataFrame:
    """Selected keypoints with their position and image location"""
    data = {
        "scene_id": np.full(len(indices), scene_id, dtype=np.int64),
        "rank": np.arange(len(indices)),
        "point_index": np.asarray(indices, dtype=np.int64),
        "x": points[:, 0], "y": points[:, 1], "z": points[:, 2],
        "u": pixels[:, 0], "v": pixels[:, 1],
    }
    if win_counts is not None:
        data["win_count"] = np.asarray(win_counts, dtype=np.int64)
    return pd.DataFrame(data)


def records_table(records: List[dict], columns: Optional[List[str]] = None) -> pd.DataFrame:
    """Plain list-of-dicts to table, keeping column order stable"""
    return pd.DataFrame(records, columns=columns)
