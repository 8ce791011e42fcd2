"""Synthetic mixtures with controlled separation and eccentricity, plus CSV I/O.

All randomness comes from a Philox counter-based generator keyed by
SeedSequence([seed, stream]); stream 0 draws the mixture, stream 1 the
samples, stream 2 the k-means++ initialization.
"""

from __future__ import annotations

import logging
import math
import re
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from geogmm.errors import DataFormatError, GenerationError
from geogmm.gmm_objective import Dataset, GmmParams
from geogmm.schemas import DatasetMetadata, GenSpec, GmmModelFile, Standardization
from geogmm.spd_manifold import SpdPoint, symmetrize

logger = logging.getLogger(__name__)

MIXTURE_STREAM = 0
SAMPLE_STREAM = 1
INIT_STREAM = 2

MAX_ATTEMPTS = 1_000_000
REJECTIONS_PER_GROWTH = 100
RADIUS_GROWTH = 1.1
SEPARATION_RULE = "||m_i - m_j|| >= c * sqrt(max_j tr(Sigma_j))"


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, stream])))


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def eccentric_covariance(d: int, e: float, rng: np.random.Generator) -> SpdPoint:
    """Covariance with trace d and eigenvalues log-uniformly spanning ratio e."""
    if e == 1.0:
        return SpdPoint(np.eye(d))
    eig = e ** np.linspace(0.0, 1.0, d)
    eig *= d / eig.sum()
    q = random_rotation(d, rng)
    return SpdPoint(symmetrize((q * eig) @ q.T))


def separation_holds(means: np.ndarray, threshold: float) -> bool:
    return len(means) < 2 or bool(pdist(means).min() >= threshold)


def gen_mixture(spec: GenSpec) -> GmmParams:
    """Draw a mixture whose means are pairwise at least c·√(max tr Σ) apart."""
    rng = make_rng(spec.seed, MIXTURE_STREAM)
    d, k = spec.d, spec.k
    covs = tuple(eccentric_covariance(d, spec.e, rng) for _ in range(k))
    threshold = spec.c * math.sqrt(max(float(np.trace(c.mat)) for c in covs))
    radius = threshold / math.sqrt(2 * d)
    for attempt in range(MAX_ATTEMPTS):
        means = radius * rng.standard_normal((k, d))
        if separation_holds(means, threshold):
            break
        if (attempt + 1) % REJECTIONS_PER_GROWTH == 0:
            radius *= RADIUS_GROWTH
    else:
        raise GenerationError(
            f"No means with separation {threshold:.3g} after {MAX_ATTEMPTS} attempts; "
            "try a smaller c·√d"
        )
    if not separation_holds(means, threshold):
        raise GenerationError("Generated means violate the separation criterion")
    logger.debug("Mixture d=%d K=%d accepted after %d attempts", d, k, attempt + 1)
    return GmmParams(weights=np.full(k, 1.0 / k), means=means, covs=covs)


def sample(params: GmmParams, n: int, seed: int) -> Dataset:
    """Ancestral sampling; the dataset carries the component index of every row."""
    rng = make_rng(seed, SAMPLE_STREAM)
    labels = rng.choice(params.k, size=n, p=params.weights)
    z = rng.standard_normal((n, params.d))
    chols = np.stack([c.chol for c in params.covs])
    x = params.means[labels] + np.einsum("nij,nj->ni", chols[labels], z)
    return Dataset(samples=x, labels=labels)


def generate(spec: GenSpec) -> tuple[GmmParams, Dataset]:
    params = gen_mixture(spec)
    data = sample(params, spec.n_samples, spec.seed)
    logger.info(
        "Generated %d samples: d=%d K=%d c=%g e=%g seed=%d",
        data.n, spec.d, spec.k, spec.c, spec.e, spec.seed,
    )
    return params, data


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path: str | Path) -> Dataset:
    """Read a numeric CSV; a first row that is not numeric is taken as a header."""
    try:
        raw = pd.read_csv(
            path, header=None, dtype=str, keep_default_na=False, skip_blank_lines=True
        )
    except pd.errors.EmptyDataError as exc:
        raise DataFormatError(f"{path} holds no data") from exc
    except pd.errors.ParserError as exc:
        match = re.search(r"line (\d+)", str(exc))
        raise DataFormatError(
            "Row has an unexpected number of fields",
            row=int(match.group(1)) if match else None,
        ) from exc

    header = not all(_is_number(str(v).strip()) for v in raw.iloc[0])
    body = raw.iloc[1:] if header else raw
    if body.empty:
        raise DataFormatError(f"{path} has a header but no data rows")
    for r, (_, row) in enumerate(body.iterrows(), start=2 if header else 1):
        for c, cell in enumerate(row, start=1):
            if pd.isna(cell) or str(cell).strip() == "":
                raise DataFormatError("Missing field", row=r, column=c)
            if not _is_number(str(cell).strip()) or not math.isfinite(float(cell)):
                raise DataFormatError(f"Non-numeric value {cell!r}", row=r, column=c)

    frame = pd.read_csv(
        path,
        header=None,
        skiprows=1 if header else 0,
        dtype=float,
        float_precision="round_trip",
        skip_blank_lines=True,
    )
    return Dataset(samples=frame.to_numpy(dtype=float))


def save_csv(data: Dataset, path: str | Path) -> None:
    """Write samples with 17 significant digits under an x0..x{d-1} header."""
    frame = pd.DataFrame(data.samples, columns=[f"x{i}" for i in range(data.d)])
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")


def save_labels(labels: np.ndarray, path: str | Path) -> None:
    pd.DataFrame({"label": np.asarray(labels, dtype=int)}).to_csv(
        path, index=False, lineterminator="\n"
    )


def metadata_path(data_path: str | Path) -> Path:
    return Path(data_path).with_suffix(".meta.json")


def write_metadata(
    data_path: str | Path, spec: GenSpec, params: GmmParams, n: int
) -> Path:
    meta = DatasetMetadata(
        d=spec.d,
        n=n,
        seed=spec.seed,
        generator=spec,
        separation_rule=SEPARATION_RULE,
        mixture=GmmModelFile.from_params(params),
    )
    out = metadata_path(data_path)
    out.write_text(meta.model_dump_json(by_alias=True, indent=2) + "\n")
    return out


def standardize(data: Dataset) -> tuple[Dataset, Standardization]:
    """Shift every column to zero mean and scale it to unit variance."""
    shift = data.samples.mean(axis=0)
    scale = data.samples.std(axis=0)
    scale[scale == 0] = 1.0
    scaled = Dataset(samples=(data.samples - shift) / scale, labels=data.labels)
    return scaled, Standardization(shift=shift.tolist(), scale=scale.tolist())


def unstandardize_params(params: GmmParams, scaling: Standardization) -> GmmParams:
    """Map a mixture fitted on standardized data back to the input coordinates.

    μ = shift + scale⊙μ′ and Σ = DΣ′D with D = diag(scale); weights are kept.
    """
    shift = np.asarray(scaling.shift, dtype=float)
    scale = np.asarray(scaling.scale, dtype=float)
    outer = np.outer(scale, scale)
    return GmmParams(
        weights=params.weights,
        means=shift + params.means * scale,
        covs=tuple(SpdPoint(cov.mat * outer) for cov in params.covs),
    )


def standardization_log_jacobian(scaling: Standardization) -> float:
    """Per-sample log-density change when leaving standardized coordinates."""
    return -float(np.sum(np.log(scaling.scale)))
