"""
Utils for io: paths, configuration and CSV/JSON exchange formats
"""
import json
import logging
import os

import numpy as np
import pandas as pd
import yaml

import hdinfer
from hdinfer.annotations import FilePath, Matrix
from hdinfer.datacl import (
    Dataset,
    DrgmmResult,
    FdrResult,
    FwerResult,
    MamProblem,
    SimultaneousBand,
    SupDraws,
    TStats,
    band_to_df,
    decisions_to_df,
    drgmm_result_to_dict,
    sup_draws_to_df,
)
from hdinfer.linalg_core import DimensionError


# ======
# Logger
# ======
logger = logging.getLogger(__name__)


# =========
# Constants
# =========
FLOAT_FORMAT = "%.10g"
MANIFEST_NAME = "manifest.json"
_DATASET_ARRAYS = ("theta0", "W", "Z", "y", "D", "Y")


# =====
# Paths
# =====
def get_lib_path() -> str:
    """Path to current library"""
    return os.path.join(
        os.path.dirname(hdinfer.__file__),
        "..",
    )


def get_conf_path() -> str:
    """Path to conf folder"""
    return os.path.join(
        get_lib_path(),
        "conf",
    )


def get_conf(filename) -> dict:
    """Get conf/`filename`"""
    filepath = os.path.join(get_conf_path(), filename)
    with open(filepath, "r") as f:
        conf = yaml.safe_load(stream=f)
    return conf


# ========
# Matrices
# ========
def write_matrix_csv(matrix, filepath: FilePath, prefix: str = "c"):
    """Write a matrix, or a vector as one column, with header c0, c1, ..."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix[:, None]
    df = pd.DataFrame(
        matrix, columns=[f"{prefix}{j}" for j in range(matrix.shape[1])]
    )
    df.to_csv(filepath, index=False, float_format=FLOAT_FORMAT)


def read_matrix_csv(filepath: FilePath) -> Matrix:
    """Read a CSV with a header row into an n x k float matrix"""
    df = pd.read_csv(filepath)
    if df.empty:
        raise DimensionError(f"No data rows in {filepath=}")
    return df.to_numpy(dtype=float)


def read_vector_csv(filepath: FilePath) -> np.ndarray:
    """Read a single-column CSV into a vector"""
    matrix = read_matrix_csv(filepath)
    if matrix.shape[1] != 1:
        raise DimensionError(
            f"Expected one column in {filepath=}, got {matrix.shape[1]}"
        )
    return matrix[:, 0]


# ===========
# MAM problem
# ===========
def write_mam_problem(prob: MamProblem, filepath: FilePath):
    """First data row is theta_hat, the next n rows are the influence rows"""
    rows = np.vstack([prob.theta_hat[None, :], prob.influence])
    write_matrix_csv(matrix=rows, filepath=filepath, prefix="theta")


def read_mam_problem(filepath: FilePath) -> MamProblem:
    rows = read_matrix_csv(filepath)
    if rows.shape[0] < 2:
        raise DimensionError(
            f"{filepath=} needs theta_hat and at least one influence row"
        )
    return MamProblem(theta_hat=rows[0], influence=rows[1:])


# =======
# Results
# =======
def write_sup_draws(draws: SupDraws, filepath: FilePath):
    sup_draws_to_df(draws).to_csv(
        filepath, index=False, float_format=FLOAT_FORMAT
    )


def write_band(band: SimultaneousBand, filepath: FilePath):
    band_to_df(band).to_csv(filepath, index=False, float_format=FLOAT_FORMAT)


def write_decisions(
    t: TStats,
    bonferroni: FwerResult,
    holm: FwerResult,
    romano_wolf: FwerResult,
    bh: FdrResult,
    filepath: FilePath,
):
    df = decisions_to_df(
        t=t, bonferroni=bonferroni, holm=holm, romano_wolf=romano_wolf, bh=bh
    )
    df.to_csv(filepath, index=False, float_format=FLOAT_FORMAT)


def write_drgmm_result(result: DrgmmResult, folder: FilePath):
    """drgmm_result.json with the summary and scores.csv with the n x p
    scores"""
    os.makedirs(folder, exist_ok=True)
    with open(os.path.join(folder, "drgmm_result.json"), "w") as f:
        json.dump(drgmm_result_to_dict(result), f, indent=2)
    write_matrix_csv(
        matrix=result.scores,
        filepath=os.path.join(folder, "scores.csv"),
        prefix="score",
    )
    logger.info(f"Wrote DRGMM result to {folder}")


# ========
# Datasets
# ========
def write_dataset(dataset: Dataset, folder: FilePath):
    """One CSV per array and a manifest naming the role of each file

    The MAM problem, when present, goes to problem.csv.
    """
    os.makedirs(folder, exist_ok=True)
    files = {}
    for role in _DATASET_ARRAYS:
        value = getattr(dataset, role)
        if value is None:
            continue
        filename = f"{role}.csv"
        write_matrix_csv(
            matrix=value,
            filepath=os.path.join(folder, filename),
        )
        files[role] = filename
    if dataset.problem is not None:
        write_mam_problem(
            prob=dataset.problem,
            filepath=os.path.join(folder, "problem.csv"),
        )
        files["problem"] = "problem.csv"
    manifest = {
        "variant": dataset.variant,
        "treatment_prob": dataset.treatment_prob,
        "files": files,
    }
    with open(os.path.join(folder, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2)


def read_dataset(folder: FilePath) -> Dataset:
    """Inverse of `write_dataset`; `extras` are not persisted"""
    with open(os.path.join(folder, MANIFEST_NAME), "r") as f:
        manifest = json.load(f)
    kwargs = {}
    for role, filename in manifest["files"].items():
        filepath = os.path.join(folder, filename)
        if role == "problem":
            kwargs[role] = read_mam_problem(filepath)
        elif role in ("theta0", "y", "D"):
            kwargs[role] = read_vector_csv(filepath)
        else:
            kwargs[role] = read_matrix_csv(filepath)
    return Dataset(
        variant=manifest["variant"],
        treatment_prob=manifest.get("treatment_prob"),
        **kwargs,
    )
