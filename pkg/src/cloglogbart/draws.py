"""Posterior draw containers, persistence, and summaries.

Draws persist as line-delimited JSON: the first line is a manifest (model
kind, resolved config, seed, schema extras), each following line one
retained draw.  Identical config + seed reproduce the file byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


def _round9(x: float) -> float:
    # 9 significant digits: deterministic and compact for bulky records.
    return float(f"{x:.9g}")


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class PosteriorDraws:
    """Per-draw records of model parameters and query-point evaluations."""

    kind: str
    config: dict
    seed: int
    params: dict = field(default_factory=dict)  # name -> (S, ...) arrays
    extras: dict = field(default_factory=dict)
    loglik: np.ndarray | None = None  # (S, n) pointwise log-likelihoods
    forests: dict | None = None  # forest name -> list of per-draw snapshots

    @property
    def n_draws(self) -> int:
        for v in self.params.values():
            return v.shape[0]
        return 0 if self.loglik is None else self.loglik.shape[0]

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "config": self.config,
            "config_hash": config_hash(self.config),
            "extras": self.extras,
            "n_draws": self.n_draws,
        }


def _snapshot_to_json(snap):
    return {
        "offsets": snap["offsets"].tolist(),
        "var": snap["var"].tolist(),
        "threshold": [_round9(v) for v in snap["threshold"].tolist()],
        "leaf_value": [_round9(v) for v in snap["leaf_value"].tolist()],
    }


def _snapshot_from_json(obj):
    return {
        "offsets": np.asarray(obj["offsets"], dtype=np.int64),
        "var": np.asarray(obj["var"], dtype=np.int32),
        "threshold": np.asarray(obj["threshold"], dtype=float),
        "leaf_value": np.asarray(obj["leaf_value"], dtype=float),
    }


def save_draws(draws: PosteriorDraws, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(draws.metadata(), sort_keys=True) + "\n")
        for s in range(draws.n_draws):
            rec = {"params": {k: np.asarray(v[s]).tolist() for k, v in draws.params.items()}}
            if draws.loglik is not None:
                rec["loglik"] = [_round9(v) for v in draws.loglik[s].tolist()]
            if draws.forests is not None:
                rec["forests"] = {
                    name: _snapshot_to_json(snaps[s]) for name, snaps in draws.forests.items()
                }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_draws(path) -> PosteriorDraws:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        params: dict[str, list] = {}
        loglik = []
        forests: dict[str, list] = {}
        for line in fh:
            rec = json.loads(line)
            for k, v in rec["params"].items():
                params.setdefault(k, []).append(np.asarray(v, dtype=float))
            if "loglik" in rec:
                loglik.append(np.asarray(rec["loglik"], dtype=float))
            for name, snap in rec.get("forests", {}).items():
                forests.setdefault(name, []).append(_snapshot_from_json(snap))
    if not params and not loglik:
        raise DataError(f"no draws found in {path}")
    return PosteriorDraws(
        kind=header["kind"],
        config=header["config"],
        seed=header["seed"],
        params={k: np.stack(v) for k, v in params.items()},
        extras=header.get("extras", {}),
        loglik=np.stack(loglik) if loglik else None,
        forests=forests or None,
    )


def _iter_scalar_series(draws: PosteriorDraws):
    for name in sorted(draws.params):
        arr = draws.params[name]
        if arr.ndim == 1:
            yield name, arr
        else:
            flat = arr.reshape(arr.shape[0], -1)
            idx = np.unravel_index(np.arange(flat.shape[1]), arr.shape[1:])
            for col in range(flat.shape[1]):
                label = name + "".join(f"[{int(ix[col])}]" for ix in idx)
                yield label, flat[:, col]


def summarize(draws: PosteriorDraws) -> list[dict]:
    """Posterior mean and 2.5/50/97.5% quantiles per monitored scalar."""
    rows = []
    for label, series in _iter_scalar_series(draws):
        q = np.quantile(series, [0.025, 0.5, 0.975])
        rows.append({
            "quantity": label,
            "mean": float(series.mean()),
            "q2.5": float(q[0]),
            "q50": float(q[1]),
            "q97.5": float(q[2]),
        })
    return rows


def write_summary(rows: list[dict], path) -> None:
    cols = ["quantity", "mean", "q2.5", "q50", "q97.5"]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(cols) + "\n")
        for row in rows:
            fh.write("\t".join(
                row["quantity"] if c == "quantity" else f"{row[c]:.9g}" for c in cols
            ) + "\n")


def split_rhat(chains: list[np.ndarray]) -> float:
    """Split-Rhat over one scalar series per chain."""
    halves = []
    for arr in chains:
        arr = np.asarray(arr, dtype=float)
        m = arr.size // 2
        halves.extend([arr[:m], arr[m : 2 * m]])
    halves = np.stack(halves)
    m, n = halves.shape
    means = halves.mean(axis=1)
    w = halves.var(axis=1, ddof=1).mean()
    b = n * means.var(ddof=1)
    if w <= 0:
        return 1.0
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def combined_rhat_summary(per_chain: list[PosteriorDraws]) -> list[dict]:
    rows = []
    labels = None
    series_by_chain = []
    for draws in per_chain:
        pairs = list(_iter_scalar_series(draws))
        series_by_chain.append(dict(pairs))
        if labels is None:
            labels = [p[0] for p in pairs]
    for label in labels:
        chains = [sc[label] for sc in series_by_chain]
        pooled = np.concatenate(chains)
        q = np.quantile(pooled, [0.025, 0.5, 0.975])
        rows.append({
            "quantity": label,
            "mean": float(pooled.mean()),
            "q2.5": float(q[0]),
            "q50": float(q[1]),
            "q97.5": float(q[2]),
            "rhat": split_rhat(chains),
        })
    return rows
