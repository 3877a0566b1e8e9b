"""Input checks shared by the estimator and the command line."""
from __future__ import annotations

import numpy as np

from .features import FeatureSchema, Instance, InstanceSet, check_instance_set


def check_instances(X, schema: FeatureSchema | None = None) -> InstanceSet:
    """Coerce ``X`` (InstanceSet or sequence of Instance) to a validated InstanceSet."""
    if isinstance(X, InstanceSet):
        if schema is not None and X.schema != schema:
            raise ValueError("instance set was built for a different schema")
        return check_instance_set(X)
    items = list(X)
    if items and not all(isinstance(i, Instance) for i in items):
        raise TypeError("X must be an InstanceSet or a sequence of Instance")
    if schema is None:
        raise ValueError("a schema is needed to interpret a list of instances")
    return check_instance_set(InstanceSet.from_instances(schema, items))


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.shape != (n,):
        raise ValueError(f"y has shape {y.shape}, expected ({n},)")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y.astype(np.int8)
