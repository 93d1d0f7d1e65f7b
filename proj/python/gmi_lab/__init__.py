"""Python interface to gmi_lab: GMI estimation, the Wasserstein bound,
transport, mode alignment, probes and the synthetic testbed.

Structured results are returned as plain dicts. Embedding sets are dicts with
keys "data" (N x d array), "labels" ({name: int array}) and "strata".
"""

import json

from . import _core
from ._core import (
    SUBCOMMANDS,
    ConfigError,
    Decoder,
    Error,
    MissingAttributeError,
    PreconditionError,
    derive_seed,
    wasserstein_bound,
)

__all__ = [
    "SUBCOMMANDS",
    "ConfigError",
    "Decoder",
    "Error",
    "MissingAttributeError",
    "PreconditionError",
    "derive_seed",
    "effective_diameter",
    "estimate_gmi",
    "estimate_lipschitz",
    "evaluate_bound",
    "generate_pair",
    "mode_alignment",
    "mutual_information",
    "resolve_config",
    "run",
    "run_probe_protocol",
    "train_decoder",
    "w1_exact",
    "w1_sinkhorn",
    "w1_sliced",
    "wasserstein_bound",
]


def _dumps(obj):
    return json.dumps(obj if obj is not None else {})


def resolve_config(subcommand, config=None, seed=None):
    return json.loads(_core.resolve_config(subcommand, _dumps(config), seed))


def run(subcommand, config=None, out="gmi-lab-out", jobs=1, seed=None):
    """Runs a pipeline subcommand; returns (exit_code, failed units)."""
    return _core.run_subcommand(subcommand, _dumps(config), str(out), jobs, seed)


def generate_pair(synth=None):
    """Returns (modal, text) embedding sets for a synthetic config."""
    return _core.generate_pair(_dumps(synth))


def mutual_information(synth, attribute, law="modal", samples=100000, seed=0):
    """Monte Carlo ground-truth I(Z; attribute | context); returns (value, std)."""
    return _core.mutual_information(_dumps(synth), law, attribute, samples, seed)


def w1_exact(a, b):
    return json.loads(_core.w1_exact(a, b))


def w1_sliced(a, b, projections=None, seed=0):
    if projections is None:
        return json.loads(_core.w1_sliced(a, b, seed=seed))
    return json.loads(_core.w1_sliced(a, b, projections, seed))


def w1_sinkhorn(a, b, epsilon=1e-2, max_iter=2000):
    return json.loads(_core.w1_sinkhorn(a, b, epsilon, max_iter))


def train_decoder(text, seed=0, **options):
    """Fits a decoder on a text-law set; returns (decoder, converged, loss)."""
    return _core.train_decoder(text, seed, _dumps(options))


def estimate_lipschitz(decoder, samples, max_samples=1000, seed=0):
    return json.loads(_core.estimate_lipschitz(decoder, samples, max_samples, seed))


def estimate_gmi(decoder, contexts, z, tokens, groups=None, pool="context"):
    if groups is None:
        groups = contexts
    return json.loads(_core.estimate_gmi(decoder, contexts, z, tokens, groups, pool))


def evaluate_bound(decoder, modal, text, pool="context", w1_method="auto", seed=0):
    return json.loads(_core.evaluate_bound(decoder, modal, text, pool, w1_method, seed))


def effective_diameter(pooled, seed=0):
    return json.loads(_core.effective_diameter(pooled, seed))


def mode_alignment(modal, text, k=0, threshold=0.5):
    return json.loads(_core.mode_alignment(modal, text, k, threshold))


def run_probe_protocol(embedding_set, attribute, seeds=None):
    if seeds is None:
        return json.loads(_core.run_probe_protocol(embedding_set, attribute))
    return json.loads(_core.run_probe_protocol(embedding_set, attribute, list(seeds)))
