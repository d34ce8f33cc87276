"""Monte-Carlo predictive inference and the mean-field baseline."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .masks import MaskKind, MaskSpec
from .network import NetworkParams, forward_chunked, sample_network_masks
from .tensor import Rng, Tensor, softmax


@dataclass
class PredictiveBatch:
    mean_probs: Tensor
    std_probs: Tensor
    n_samples: int

    @property
    def n_classes(self) -> int:
        return self.mean_probs.shape[1]

    def to_csv(self, labels=None, header_comment: str | None = None) -> str:
        """One row per example: id, label, n_samples, mean_k..., std_k...

        ``label`` is left empty when unknown.
        """
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        c = self.n_classes
        w.writerow(["id", "label", "n_samples", *(f"mean_{k}" for k in range(c)), *(f"std_{k}" for k in range(c))])
        for i in range(self.mean_probs.shape[0]):
            label = "" if labels is None else int(labels[i])
            w.writerow([i, label, self.n_samples, *map(repr, self.mean_probs[i].tolist()),
                        *map(repr, self.std_probs[i].tolist())])
        return buf.getvalue()


def mc_sample_probs(params: NetworkParams, layers, x, mask_spec: MaskSpec, n: int, rng: Rng,
                    chunk: int = 500):
    """Yield the softmax output of each of ``n`` masked passes.

    Pass ``i`` draws its masks from ``rng.spawn(i)``, so results do not
    depend on how the caller consumes the sequence.
    """
    if n < 1:
        raise ParameterError(f"need at least one MC sample, got {n}")
    for i in range(n):
        masks = sample_network_masks(layers, mask_spec, rng.spawn(i))
        yield softmax(forward_chunked(params, layers, x, masks, chunk))


def predict_mc(params: NetworkParams, layers, x, mask_spec: MaskSpec, n: int, rng: Rng,
               chunk: int = 500) -> PredictiveBatch:
    """Average of softmax probabilities over ``n`` independently masked passes.

    ``std_probs`` is the population (divide-by-n) standard deviation across
    the passes.
    """
    x = np.asarray(x, dtype=np.float64)
    if n < 1:
        raise ParameterError(f"need at least one MC sample, got {n}")
    if mask_spec.kind is MaskKind.MAP:
        # every pass is identical; skip the redundant work
        probs = softmax(forward_chunked(params, layers, x, None, chunk))
        return PredictiveBatch(probs, np.zeros_like(probs), n)
    # Welford updates: identical passes give exactly zero spread
    mean = m2 = None
    for k, probs in enumerate(mc_sample_probs(params, layers, x, mask_spec, n, rng, chunk), start=1):
        if mean is None:
            mean, m2 = probs, np.zeros_like(probs)
            continue
        delta = probs - mean
        mean = mean + delta / k
        m2 += delta * (probs - mean)
    return PredictiveBatch(mean, np.sqrt(m2 / n), n)


def predict_meanfield(params: NetworkParams, layers, x, mask_spec: MaskSpec, chunk: int = 500) -> PredictiveBatch:
    """Single deterministic pass with the mean mask (all ones, so plain ``V``)."""
    probs = softmax(forward_chunked(params, layers, np.asarray(x, dtype=np.float64), None, chunk))
    return PredictiveBatch(probs, np.zeros_like(probs), 1)
