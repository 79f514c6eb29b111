"""Random real-time dynamic treatment regimes."""

from __future__ import annotations

import json
import os
from typing import Any, Mapping, Sequence, Union

import numpy as np

from . import _core
from ._core import Cohort, ConfigError, DataError, DiagnosticFailure, DomainError, Posterior

Config = Union[None, str, os.PathLike, Mapping[str, Any]]

__all__ = [
    "Cohort",
    "Posterior",
    "ConfigError",
    "DataError",
    "DiagnosticFailure",
    "DomainError",
    "Service",
    "ServiceError",
    "simulate",
    "fit_theta",
    "optimize",
    "evaluate",
    "run_replicate",
    "report",
]


def _config(config: Config) -> tuple[str, str]:
    """JSON text of a config and the directory its file references resolve against."""
    if config is None:
        return "{}", "."
    if isinstance(config, Mapping):
        return json.dumps(dict(config)), "."
    path = os.fspath(config)
    with open(path) as f:
        text = json.load(f)
    text.pop("serve", None)
    return json.dumps(text), os.path.dirname(os.path.abspath(path))


def simulate(n: int, config: Config = None) -> Cohort:
    """Observational cohort of n units with latent values removed."""
    text, base = _config(config)
    return _core.simulate(text, n, base)


def fit_theta(cohort: Cohort, config: Config = None) -> Posterior:
    """Posterior draws of the observational switching intensity."""
    text, base = _config(config)
    return _core.fit_theta(cohort, text, base)


def optimize(cohort: Cohort, posterior: Posterior, config: Config = None) -> dict:
    """Minimise the posterior predictive loss; returns the estimate record."""
    text, base = _config(config)
    return json.loads(_core.optimize(cohort, posterior, text, base))


def evaluate(eta: Sequence[float], config: Config = None, n_eval: int = 0) -> float:
    """Mean exp(Y) of the policy on fresh simulated units."""
    text, base = _config(config)
    return _core.evaluate(text, [float(v) for v in np.asarray(eta, dtype=float)], n_eval, base)


def run_replicate(n: int, seed: int, config: Config = None, methods: Sequence[str] = ()) -> dict:
    text, base = _config(config)
    return json.loads(_core.run_replicate(text, n, seed, list(methods), base))


def report(records: Sequence[Mapping[str, Any]], format: str = "csv") -> str:
    return _core.report([json.dumps(dict(r)) for r in records], format)


class Service:
    """In-process recommendation service speaking the HTTP API's JSON."""

    def __init__(self, eta: Sequence[float] | None = None, seed: int = 0):
        self._svc = _core.Service(None if eta is None else list(eta), seed)

    def request(self, method: str, path: str, body: Any = None) -> tuple[int, Any]:
        payload = "" if body is None else json.dumps(body)
        status, text = self._svc.handle(method, path, payload)
        return status, json.loads(text)

    def create_session(self, **request: Any) -> dict:
        return self._checked("POST", "/sessions", request)

    def advance(self, session_id: str, dt_steps: int | None = None) -> dict:
        body = {} if dt_steps is None else {"dt_steps": dt_steps}
        return self._checked("POST", f"/sessions/{session_id}/advance", body)

    def dose(self, session_id: str, dose: float, override: bool = False) -> dict:
        return self._checked("POST", f"/sessions/{session_id}/dose", {"dose": dose, "override": override})

    def state(self, session_id: str) -> dict:
        return self._checked("GET", f"/sessions/{session_id}")

    def _checked(self, method: str, path: str, body: Any = None) -> dict:
        status, data = self.request(method, path, body)
        if status >= 400:
            raise ServiceError(status, data)
        return data


class ServiceError(Exception):
    def __init__(self, status: int, body: Mapping[str, Any]):
        super().__init__(f"{status} {body.get('code')}: {body.get('message')}")
        self.status = status
        self.code = body.get("code")
        self.detail = body.get("detail")
