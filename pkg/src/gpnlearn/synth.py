"""Ground-truth networks, Fourier-basis data generation and CSV ingestion."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dag import Dag, sample_erdos_renyi

N_BASIS = 7  # Fourier indices j = 0..6


class CsvFormatError(ValueError):
    pass


class EmptyCsvError(CsvFormatError):
    pass


class RaggedCsvError(CsvFormatError):
    pass


class NonNumericCsvError(CsvFormatError):
    pass


@dataclass
class Dataset:
    values: np.ndarray
    labels: tuple[str, ...]
    standardized: bool = False
    means: np.ndarray | None = None
    sds: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("dataset values must be a 2-D array")
        self.labels = tuple(self.labels)
        if len(self.labels) != self.values.shape[1]:
            raise ValueError(f"{len(self.labels)} labels for {self.values.shape[1]} columns")

    @property
    def n_obs(self) -> int:
        return self.values.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def standardize(self) -> "Dataset":
        """Copy with zero-mean, unit-variance columns (population sd)."""
        if self.standardized:
            return self
        m = self.values.mean(axis=0)
        s = self.values.std(axis=0)
        if np.any(s == 0):
            raise ValueError("cannot standardize a constant column")
        return Dataset((self.values - m) / s, self.labels, True, m, s)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        h.update(",".join(self.labels).encode())
        return h.hexdigest()[:16]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.labels)
        for row in self.values:
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def load_csv(path, standardize: bool = True) -> Dataset:
    """Read a header-plus-numeric-body CSV; optionally standardize columns."""
    text = Path(path).read_text()
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r and any(c.strip() for c in r)]
    if not rows:
        raise EmptyCsvError(f"{path}: file is empty")
    header = [c.strip() for c in rows[0]]
    if len(rows) < 2:
        raise EmptyCsvError(f"{path}: no data rows below the header")
    values = []
    for r_i, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise RaggedCsvError(f"{path}: row {r_i} has {len(row)} fields, header has {len(header)}")
        out = []
        for c_i, cell in enumerate(row):
            cell = cell.strip()
            if cell == "":
                raise NonNumericCsvError(f"{path}: missing value at row {r_i}, column {header[c_i]!r}")
            try:
                out.append(float(cell))
            except ValueError:
                raise NonNumericCsvError(
                    f"{path}: non-numeric value {cell!r} at row {r_i}, column {header[c_i]!r}"
                ) from None
        values.append(out)
    ds = Dataset(np.array(values), tuple(header))
    return ds.standardize() if standardize else ds


@dataclass(frozen=True)
class SynthConfig:
    n_nodes: int = 10
    edge_prob: float = 0.2
    n_obs: int = 100
    lam: float = 1.0
    beta_range: tuple[float, float] = (0.5, 2.0)
    beta_per_child: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_nodes < 1:
            raise ValueError("n_nodes must be >= 1")
        if not 0 <= self.edge_prob <= 1:
            raise ValueError("edge_prob must lie in [0, 1]")
        if self.n_obs < 1:
            raise ValueError("n_obs must be >= 1")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        lo, hi = self.beta_range
        if not lo < hi:
            raise ValueError("beta_range must satisfy low < high")

    @property
    def linear(self) -> bool:
        return self.lam == 0


@dataclass
class GroundTruth:
    """True DAG with edge coefficients and per-node Fourier weights.

    ``beta[j, i]`` is the coefficient of edge ``i -> j`` (zero off-edge).
    ``v[j]`` and ``w[j]`` are the sine and cosine weights of node ``j``.
    """

    dag: Dag
    beta: np.ndarray
    v: np.ndarray
    w: np.ndarray
    lam: float = 1.0

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "beta": self.beta.tolist(),
            "v": self.v.tolist(),
            "w": self.w.tolist(),
            "dag": self.dag.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GroundTruth":
        return cls(
            Dag.from_json(obj["dag"]),
            np.array(obj["beta"], dtype=float),
            np.array(obj["v"], dtype=float),
            np.array(obj["w"], dtype=float),
            float(obj["lambda"]),
        )


def concentrations(lam: float) -> np.ndarray:
    k = np.arange(N_BASIS)
    return np.exp(-k / lam)


def sample_weights(lam: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Independent Dirichlet sine and cosine weights with concentrations exp(-k / lam)."""
    if not lam > 0:
        raise ValueError("lambda must be > 0; the linear case does not draw weights")
    gam = concentrations(lam)
    return rng.dirichlet(gam), rng.dirichlet(gam)


def linear_weights() -> tuple[np.ndarray, np.ndarray]:
    v = np.zeros(N_BASIS)
    w = np.zeros(N_BASIS)
    w[0] = 1.0
    return v, w


def sample_ground_truth(cfg: SynthConfig, rng: np.random.Generator, dag: Dag | None = None, labels: Sequence[str] = ()) -> GroundTruth:
    n = cfg.n_nodes
    if dag is None:
        dag = sample_erdos_renyi(n, cfg.edge_prob, rng, labels)
    lo, hi = cfg.beta_range
    beta = np.zeros((n, n))
    for j in range(n):
        pa = dag.parent_set(j)
        if not pa:
            continue
        if cfg.beta_per_child:
            beta[j, pa] = rng.uniform(lo, hi)
        else:
            beta[j, pa] = rng.uniform(lo, hi, size=len(pa))
    v = np.zeros((n, N_BASIS))
    w = np.zeros((n, N_BASIS))
    for j in range(n):
        v[j], w[j] = linear_weights() if cfg.linear else sample_weights(cfg.lam, rng)
    return GroundTruth(dag, beta, v, w, cfg.lam)


def fourier_effect(z, beta: float, v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Contribution of one parent column ``z``.

    The j = 0 cosine element is the identity ``z`` (not the constant
    ``cos 0``) so that the lambda -> 0 limit is the linear model.
    """
    z = np.asarray(z, dtype=float)
    out = beta * w[0] * z
    for j in range(1, N_BASIS):
        out = out + beta * (v[j] * np.sin(j * z) + w[j] * np.cos(j * z))
    return out


def node_mean(truth: GroundTruth, node: int, values: np.ndarray) -> np.ndarray:
    """Noise-free part of ``node`` given the (already generated) parent columns."""
    total = np.zeros(values.shape[0])
    for p in truth.dag.parent_set(node):
        total = total + fourier_effect(values[:, p], truth.beta[node, p], truth.v[node], truth.w[node])
    return total


def simulate(truth: GroundTruth, noise: np.ndarray) -> np.ndarray:
    """Propagate a noise matrix through the network in topological order."""
    noise = np.asarray(noise, dtype=float)
    values = np.zeros_like(noise)
    for node in truth.dag.topological_order():
        values[:, node] = node_mean(truth, node, values) + noise[:, node]
    return values


def gen_observations(truth: GroundTruth, cfg: SynthConfig, rng: np.random.Generator, return_noise: bool = False):
    noise = rng.standard_normal((cfg.n_obs, truth.dag.n))
    ds = Dataset(simulate(truth, noise), truth.dag.labels)
    return (ds, noise) if return_noise else ds


def generate(cfg: SynthConfig) -> tuple[GroundTruth, Dataset]:
    """Ground truth and raw dataset from a single seeded stream."""
    rng = np.random.default_rng(cfg.seed)
    truth = sample_ground_truth(cfg, rng)
    return truth, gen_observations(truth, cfg, rng)


def write_truth(truth: GroundTruth, dag_path, sidecar_path) -> None:
    Path(dag_path).write_text(truth.dag.to_text())
    Path(sidecar_path).write_text(json.dumps(truth.to_json(), indent=2))
