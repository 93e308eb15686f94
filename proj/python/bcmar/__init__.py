"""Contingency tables with missing margins under block-conditional MAR."""

import json

from . import _core
from ._core import BcmarError, chi_square_upper_tail

__all__ = [
    "BcmarError",
    "bootstrap",
    "chi_square_upper_tail",
    "expfam_fit",
    "expfam_simulate",
    "fit",
    "load_table",
    "loglik",
    "lrt",
    "report_text",
    "simulate",
]


def _dump(obj):
    return obj if isinstance(obj, str) else json.dumps(obj)


def load_table(path):
    """Read a table JSON file into a dict."""
    with open(path) as f:
        return json.load(f)


def fit(table, model="unrestricted-bcmar", **em):
    """Fit one of unrestricted-bcmar, restricted-bcmar, restricted-mar or reduced.

    EM settings: max_iters, tol_param, tol_loglik, starts, seed.
    """
    return json.loads(_core.fit(_dump(table), model, **em))


def report_text(report):
    return _core.report_text(_dump(report))


def loglik(table, params):
    """Observed-data loglikelihood at the theta and mechanism of a fit report."""
    return _core.loglik(_dump(table), _dump(params))


def lrt(table, full="unrestricted-bcmar", restricted="restricted-bcmar"):
    return json.loads(_core.lrt(_dump(table), full, restricted))


def bootstrap(table, model="unrestricted-bcmar", replicates=1000, seed=0, threads=0):
    return json.loads(_core.bootstrap(_dump(table), model, replicates, seed, threads))


def simulate(n, truth, seed=0):
    """Draw n cases from a fit report or any dict with theta and mechanism."""
    return json.loads(_core.simulate(n, _dump(truth), seed))


def expfam_fit(cases, family="normal", variance=None, J=0, reduced=False, **em):
    """Fit the exponential-family model to (class, outcome) pairs.

    Classes are 1-based; either entry may be None. Outcomes are scalars or sequences.
    """
    norm = [(z1, None if z2 is None else list(z2) if hasattr(z2, "__len__") else [float(z2)]) for z1, z2 in cases]
    return json.loads(_core.expfam_fit(norm, family, variance, J, reduced, **em))


def expfam_simulate(n, truth, seed=0):
    return _core.expfam_simulate(n, _dump(truth), seed)
