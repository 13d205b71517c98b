from .artifact import (
    ModelArtifact,
    ModelSpec,
    fit_forest,
    fit_linear,
    fit_model,
    load_model,
    predict,
    save_model,
)
from .forest import RandomForestRegressor, Tree, build_tree, best_split
from .linear import LinearRegression
from .metrics import Metrics, evaluate
from .predictions import Predictions

__all__ = [
    "LinearRegression",
    "Metrics",
    "ModelArtifact",
    "ModelSpec",
    "Predictions",
    "RandomForestRegressor",
    "Tree",
    "best_split",
    "build_tree",
    "evaluate",
    "fit_forest",
    "fit_linear",
    "fit_model",
    "load_model",
    "predict",
    "save_model",
]
