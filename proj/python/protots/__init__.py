"""Interpretable prototype forecaster.

Thin wrapper over the native core: configs and results travel as dicts.
"""

import json

from . import _protots
from ._protots import CorruptionError, IoError, ProtoTSError, VersionError

__all__ = ["Model", "synth", "ProtoTSError", "CorruptionError", "VersionError", "IoError"]


def synth(config=None, seed=0):
    """Generate a synthetic regime dataset.

    Returns (csv text, schema dict, list of per-row regime labels).
    """
    csv, schema, regimes = _protots.synth(json.dumps(config or {}), seed)
    return csv, json.loads(schema), list(regimes)


class Model:
    def __init__(self, native):
        self._m = native

    @classmethod
    def train(cls, schema, csv, config=None):
        return cls(_protots.Model.train(json.dumps(schema), csv, json.dumps(config or {})))

    @classmethod
    def load(cls, path):
        return cls(_protots.Model.load(str(path)))

    def save(self, path):
        self._m.save(str(path))

    @property
    def revision(self):
        return self._m.revision

    def tree(self):
        return json.loads(self._m.tree())

    def schema(self):
        return json.loads(self._m.schema())

    def report(self):
        return json.loads(self._m.report())

    def predict(self, csv, split="test"):
        return self._m.predict(csv, split)

    def evaluate(self, csv, split="test"):
        return json.loads(self._m.evaluate(csv, split))

    def explain(self, csv, instance=0, split="test"):
        return json.loads(self._m.explain(csv, split, instance))

    def activations(self, csv, split="test", k=3):
        return json.loads(self._m.activations(csv, split, k))

    def split(self, node, m=2, seed=0):
        return list(self._m.split(node, m, seed))

    def edit_pattern(self, node, pattern, lock=False):
        self._m.edit_pattern(node, [float(v) for v in pattern], lock)
