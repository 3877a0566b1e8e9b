"""scikit-learn compatible wrapper around the networks and the training loop."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .features import InstanceSet
from .metrics import auc
from .model import Network
from .regularization import OccurrenceCounts
from .training import OptimizerConfig, RegularizerConfig, train
from .validation import check_instances, check_labels


class DINClassifier(ClassifierMixin, BaseEstimator):
    """CTR classifier over group-wise sparse instances.

    ``model_kind`` selects logistic regression (``"lr"``), the
    Embedding&MLP base model (``"base"``) or the Deep Interest Network
    (``"din"``).  ``X`` is an :class:`~din_ctr.features.InstanceSet`, or a
    list of :class:`~din_ctr.features.Instance` when ``schema`` is given.
    """

    def __init__(self, model_kind="din", embedding_dim=12, mlp_widths=(200, 80), activation="prelu",
                 unit_hidden=36, optimizer="sgd", learning_rate=1.0, decay_rate=0.1, batch_size=32,
                 epochs=2, regularizer="none", reg_lambda=0.0, dropout_rate=0.5, filter_top_n=None,
                 schema=None, seed=0, dtype="float32"):
        self.model_kind = model_kind
        self.embedding_dim = embedding_dim
        self.mlp_widths = mlp_widths
        self.activation = activation
        self.unit_hidden = unit_hidden
        self.optimizer = optimizer
        self.learning_rate = learning_rate
        self.decay_rate = decay_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.regularizer = regularizer
        self.reg_lambda = reg_lambda
        self.dropout_rate = dropout_rate
        self.filter_top_n = filter_top_n
        self.schema = schema
        self.seed = seed
        self.dtype = dtype

    @classmethod
    def from_config(cls, config: RunConfig, **overrides) -> "DINClassifier":
        v = config.values
        params = dict(
            model_kind=v["model.kind"], embedding_dim=v["embedding.dim"], mlp_widths=v["mlp.widths"],
            activation=v["activation.kind"], unit_hidden=v["unit.hidden_width"],
            optimizer=v["optimizer.kind"], learning_rate=v["optimizer.lr"],
            decay_rate=v["optimizer.decay"], batch_size=v["optimizer.batch_size"],
            epochs=v["optimizer.epochs"], regularizer=v["reg.kind"], reg_lambda=v["reg.lambda"] or 0.0,
            dropout_rate=v["reg.dropout_rate"], filter_top_n=v["reg.filter_top_n"], seed=v["seed"],
        )
        params.update(overrides)
        return cls(**params)

    def _build_network(self, schema) -> Network:
        return Network(schema, self.model_kind, self.embedding_dim, tuple(self.mlp_widths),
                       self.activation, self.unit_hidden, seed=self.seed, dtype=np.dtype(self.dtype))

    def fit(self, X, y=None, eval_set=None, counts: OccurrenceCounts | None = None, metrics_log=None):
        data = check_instances(X, self.schema)
        if y is not None:
            labels = check_labels(y, len(data))
            data = InstanceSet(data.schema, data.indptr, data.indices, labels, data.user_keys)
        if eval_set is not None:
            eval_set = check_instances(eval_set, data.schema)
        opt = OptimizerConfig(self.optimizer, self.learning_rate, self.decay_rate, self.batch_size)
        reg = RegularizerConfig(self.regularizer, self.reg_lambda or 0.0, self.dropout_rate, self.filter_top_n)
        net = self._build_network(data.schema)
        self.network_, self.history_ = train(net, data, eval_set, opt, reg, self.epochs, self.seed,
                                             counts=counts, metrics_log=metrics_log)
        self.schema_ = data.schema
        self.classes_ = np.array([0, 1])
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        data = check_instances(X, self.schema_)
        p = self.network_.predict_proba(data)
        return np.column_stack([1.0 - p, p])

    def decision_function(self, X) -> np.ndarray:
        p = self.predict_proba(X)[:, 1]
        return np.log(p) - np.log1p(-p)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def score(self, X, y=None, sample_weight=None) -> float:
        """ROC AUC of the predicted click probabilities."""
        data = check_instances(X, getattr(self, "schema_", self.schema))
        labels = data.labels if y is None else check_labels(y, len(data))
        return auc(self.predict_proba(data)[:, 1], labels)

    def save(self, path, config: dict | None = None) -> None:
        check_is_fitted(self, "network_")
        save_checkpoint(self.network_, path, config if config is not None else self.get_params_json())

    def get_params_json(self) -> dict:
        params = self.get_params()
        params.pop("schema", None)
        params["mlp_widths"] = list(params["mlp_widths"])
        return params

    @classmethod
    def load(cls, path, expected_schema=None) -> "DINClassifier":
        net, manifest = load_checkpoint(path, expected_schema)
        est = cls(model_kind=net.kind, embedding_dim=net.embedding_dim, mlp_widths=net.mlp_widths,
                  activation=net.activation, unit_hidden=net.unit_hidden)
        est.network_ = net
        est.schema_ = net.schema
        est.history_ = []
        est.classes_ = np.array([0, 1])
        est.manifest_ = manifest
        return est
