"""Trial data structures, covariate-function specifications and CSV I/O."""

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import SchemaError, SpecError, ValidationError

DEFAULT_SCHEMA = {
    "time": "time",
    "event": "event",
    "treatment": "treatment",
    "region": "region",
    "covariates": None,
}


@dataclass(frozen=True)
class SubjectRecord:
    time_observed: float
    event: int
    treatment: int
    region: int
    covariates: tuple

    def __post_init__(self):
        if not (np.isfinite(self.time_observed) and self.time_observed >= 0):
            raise ValidationError(f"time_observed must be finite and >= 0, got {self.time_observed}")
        if self.event not in (0, 1) or self.treatment not in (0, 1):
            raise ValidationError("event and treatment must be 0/1")


@dataclass(frozen=True, eq=False)
class RegionPanel:
    """All subjects of one region, stored column-wise.

    ``propensity`` defaults to the observed treated fraction.
    """

    region_id: int
    time: np.ndarray
    event: np.ndarray
    treatment: np.ndarray
    covariates: np.ndarray
    propensity: np.ndarray = None
    label: str = None

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        event = np.asarray(self.event, dtype=int)
        treatment = np.asarray(self.treatment, dtype=int)
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = time.shape[0]
        if event.shape != (n,) or treatment.shape != (n,) or X.shape[0] != n:
            raise ValidationError(f"region {self.region_id}: column lengths differ")
        if n < 2:
            raise ValidationError(f"region {self.region_id} has fewer than 2 subjects")
        if not np.all(np.isfinite(time)) or np.any(time < 0):
            raise ValidationError(f"region {self.region_id}: times must be finite and >= 0")
        if not np.all(np.isin(event, (0, 1))) or not np.all(np.isin(treatment, (0, 1))):
            raise ValidationError(f"region {self.region_id}: event/treatment must be 0/1")
        n1 = int(treatment.sum())
        if n1 == 0 or n1 == n:
            raise ValidationError(f"region {self.region_id} has a single treatment arm")
        if not np.all(np.isfinite(X)):
            raise ValidationError(f"region {self.region_id}: covariates must be finite")
        if self.propensity is None:
            prop = np.full(n, n1 / n)
        else:
            prop = np.broadcast_to(np.asarray(self.propensity, dtype=float), (n,)).copy()
        if np.any(prop <= 0) or np.any(prop >= 1):
            raise ValidationError(f"region {self.region_id}: propensity must lie in (0, 1)")
        for name, arr in (("time", time), ("event", event), ("treatment", treatment),
                          ("covariates", X), ("propensity", prop)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.time.shape[0]

    @property
    def p(self):
        return self.covariates.shape[1]

    @property
    def records(self):
        return [
            SubjectRecord(float(t), int(d), int(z), self.region_id, tuple(x))
            for t, d, z, x in zip(self.time, self.event, self.treatment, self.covariates)
        ]

    def with_propensity(self, propensity):
        return RegionPanel(self.region_id, self.time, self.event, self.treatment,
                           self.covariates, propensity, self.label)


@dataclass(frozen=True)
class Dataset:
    panels: tuple
    covariate_names: tuple
    region_labels: dict = field(default_factory=dict)

    def __post_init__(self):
        panels = tuple(self.panels)
        ids = sorted(p.region_id for p in panels)
        if ids != list(range(1, len(panels) + 1)):
            raise ValidationError(f"region ids must cover 1..M, got {ids}")
        p = len(self.covariate_names)
        for panel in panels:
            if panel.p != p:
                raise ValidationError("all regions must have the same covariates")
        object.__setattr__(self, "panels", tuple(sorted(panels, key=lambda q: q.region_id)))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))

    @property
    def M(self):
        return len(self.panels)

    def panel(self, region_id):
        return self.panels[region_id - 1]

    def pooled_covariates(self):
        return np.vstack([p.covariates for p in self.panels])


# --- covariate functions -------------------------------------------------

_TERM_RE = re.compile(
    r"^\s*(?P<a>[A-Za-z_][\w.]*)\s*"
    r"(?:(?P<op>\^|\*|==)\s*(?P<b>[^\s]+))?\s*$"
)


@dataclass(frozen=True)
class GTerm:
    """One covariate function: identity, power, pairwise product or level indicator."""

    kind: str  # "identity" | "power" | "product" | "indicator"
    i: int
    j: int = -1
    power: int = 1
    level: float = 0.0
    name: str = ""

    def evaluate(self, X):
        xi = X[..., self.i]
        if self.kind == "identity":
            return xi
        if self.kind == "power":
            return xi ** self.power
        if self.kind == "product":
            return xi * X[..., self.j]
        return (xi == self.level).astype(float)


@dataclass(frozen=True)
class GSpec:
    terms: tuple
    covariate_names: tuple

    @property
    def names(self):
        return [t.name for t in self.terms]

    def __len__(self):
        return len(self.terms)

    @classmethod
    def parse(cls, entries, covariate_names):
        """Build a spec from strings like ``"age"``, ``"age^2"``, ``"a*b"``, ``"site==2"``."""
        covariate_names = tuple(covariate_names)
        index = {name: k for k, name in enumerate(covariate_names)}

        def lookup(name):
            if name not in index:
                raise SpecError(f"unknown covariate {name!r} in g spec")
            return index[name]

        terms = []
        for entry in entries:
            m = _TERM_RE.match(str(entry))
            if m is None:
                raise SpecError(f"cannot parse g term {entry!r}")
            a, op, b = m.group("a"), m.group("op"), m.group("b")
            i = lookup(a)
            if op is None:
                terms.append(GTerm("identity", i, name=a))
            elif op == "^":
                try:
                    k = int(b)
                except ValueError:
                    raise SpecError(f"bad power in {entry!r}") from None
                if not 1 <= k <= 3:
                    raise SpecError(f"power must be 1..3 in {entry!r}")
                kind = "identity" if k == 1 else "power"
                terms.append(GTerm(kind, i, power=k, name=a if k == 1 else f"{a}^{k}"))
            elif op == "*":
                terms.append(GTerm("product", i, j=lookup(b), name=f"{a}*{b}"))
            else:
                try:
                    level = float(b)
                except ValueError:
                    raise SpecError(f"bad level in {entry!r}") from None
                terms.append(GTerm("indicator", i, level=level, name=f"{a}=={b}"))
        if not terms:
            raise SpecError("g spec must contain at least one term")
        return cls(tuple(terms), covariate_names)

    @classmethod
    def moments(cls, covariate_names, k=2):
        """``[X, X^2, ..., X^k]`` over all covariates."""
        entries = list(covariate_names)
        for power in range(2, k + 1):
            entries += [f"{c}^{power}" for c in covariate_names]
        return cls.parse(entries, covariate_names)

    def to_list(self):
        return self.names

    def drop(self, covariate):
        """Remove every term that touches ``covariate`` (for misspecified models)."""
        k = self.covariate_names.index(covariate)
        kept = tuple(t for t in self.terms if t.i != k and t.j != k)
        if not kept:
            raise SpecError(f"dropping {covariate!r} leaves an empty spec")
        return GSpec(kept, self.covariate_names)


def default_g_spec(dataset):
    """Second moments for continuous covariates, first moments for binary ones."""
    X = dataset.pooled_covariates()
    entries = list(dataset.covariate_names)
    for k, name in enumerate(dataset.covariate_names):
        if not np.all(np.isin(X[:, k], (0.0, 1.0))):
            entries.append(f"{name}^2")
    return GSpec.parse(entries, dataset.covariate_names)


def evaluate_g(g_spec, covariates):
    """Evaluate the covariate functions on one vector or an ``(n, p)`` matrix."""
    X = np.asarray(covariates, dtype=float)
    p = len(g_spec.covariate_names)
    if X.shape[-1] != p:
        raise SpecError(f"covariate vector has length {X.shape[-1]}, spec expects {p}")
    for t in g_spec.terms:
        if t.i >= p or t.j >= p:
            raise SpecError(f"term {t.name!r} indexes past {p} covariates")
    return np.stack([t.evaluate(X) for t in g_spec.terms], axis=-1)


@dataclass(frozen=True)
class CalibrationTarget:
    g_spec: GSpec
    g_tilde: np.ndarray

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.g_tilde, dtype=float))
        if g.shape != (len(self.g_spec),):
            raise SpecError(f"target has {g.shape[0]} moments, spec has {len(self.g_spec)}")
        if not np.all(np.isfinite(g)):
            raise SpecError("target moments must be finite")
        object.__setattr__(self, "g_tilde", g)

    @property
    def g_names(self):
        return self.g_spec.names


def target_from_pooled(dataset, g_spec):
    """Unweighted mean of ``g`` over all enrolled subjects."""
    G = evaluate_g(g_spec, dataset.pooled_covariates())
    return CalibrationTarget(g_spec, G.mean(axis=0))


def target_from_region(dataset, g_spec, region_id):
    G = evaluate_g(g_spec, dataset.panel(region_id).covariates)
    return CalibrationTarget(g_spec, G.mean(axis=0))


# --- CSV I/O ----------------------------------------------------------------

def _resolve_schema(schema, columns):
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    for key in ("time", "event", "treatment", "region"):
        if schema[key] not in columns:
            raise SchemaError(f"missing column {schema[key]!r} (for {key})")
    covs = schema["covariates"]
    if covs is None:
        used = {schema[k] for k in ("time", "event", "treatment", "region")}
        covs = [c for c in columns if c not in used]
    elif isinstance(covs, str):
        covs = [c.strip() for c in covs.split(",") if c.strip()]
    for c in covs:
        if c not in columns:
            raise SchemaError(f"missing column {c!r} (covariate)")
    if not covs:
        raise SchemaError("no covariate columns")
    schema["covariates"] = list(covs)
    return schema


def _binary_column(frame, column):
    values = pd.to_numeric(frame[column], errors="coerce").to_numpy()
    bad = ~np.isin(values, (0, 1))
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1
        raise ValidationError(f"column {column!r}: non-binary value {frame[column].iloc[row - 1]!r} at row {row}")
    return values.astype(int)


def dataset_from_frame(frame, schema=None, propensity=None):
    """Group a data frame into a validated :class:`Dataset`.

    Region labels are mapped to ``1..M`` in order of first appearance;
    the mapping is kept in ``Dataset.region_labels`` (id -> original label).
    """
    schema = _resolve_schema(schema, list(frame.columns))
    mapped = [schema["time"], schema["event"], schema["treatment"], schema["region"], *schema["covariates"]]
    missing = frame[mapped].isna()
    if missing.to_numpy().any():
        r, c = np.argwhere(missing.to_numpy())[0]
        raise ValidationError(f"missing value in column {mapped[c]!r} at row {r + 1}")
    time = pd.to_numeric(frame[schema["time"]], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(time) | (time < 0)
    if bad.any():
        row = int(np.flatnonzero(bad)[0]) + 1
        raise ValidationError(f"column {schema['time']!r}: invalid time at row {row}")
    event = _binary_column(frame, schema["event"])
    treatment = _binary_column(frame, schema["treatment"])
    try:
        X = frame[schema["covariates"]].apply(pd.to_numeric).to_numpy(dtype=float)
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"non-numeric covariate value: {exc}") from None
    raw_regions = frame[schema["region"]].astype(str).to_numpy()
    labels = list(dict.fromkeys(raw_regions))
    panels = []
    for rid, label in enumerate(labels, start=1):
        idx = np.flatnonzero(raw_regions == label)
        if idx.size < 2:
            raise ValidationError(f"region {label!r} has fewer than 2 subjects")
        z = treatment[idx]
        if z.min() == z.max():
            raise ValidationError(f"region {label!r} contains a single treatment arm")
        prop = None if propensity is None else np.asarray(propensity, dtype=float)[idx]
        panels.append(RegionPanel(rid, time[idx], event[idx], z, X[idx], prop, label))
    return Dataset(tuple(panels), tuple(schema["covariates"]),
                   {rid: label for rid, label in enumerate(labels, start=1)})


def load_dataset(path, schema=None):
    """Read a CSV file into a :class:`Dataset`.

    Parameters
    ----------
    path : str or Path
        CSV with a header row.
    schema : dict, optional
        Maps ``time``, ``event``, ``treatment``, ``region`` to column names and
        ``covariates`` to a list of column names (all remaining columns when
        omitted).
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"input file not found: {path}")
    frame = pd.read_csv(path, encoding="utf-8", float_precision="round_trip",
                        dtype={(schema or {}).get("region", "region"): str})
    return dataset_from_frame(frame, schema)


def dataset_to_frame(dataset, schema=None):
    schema = {**DEFAULT_SCHEMA, **(schema or {})}
    covs = schema["covariates"] or list(dataset.covariate_names)
    if isinstance(covs, str):
        covs = [c.strip() for c in covs.split(",")]
    blocks = []
    for panel in dataset.panels:
        block = {
            schema["time"]: panel.time,
            schema["event"]: panel.event,
            schema["treatment"]: panel.treatment,
            schema["region"]: [dataset.region_labels.get(panel.region_id, str(panel.region_id))] * panel.n,
        }
        for k, c in enumerate(covs):
            block[c] = panel.covariates[:, k]
        blocks.append(pd.DataFrame(block))
    return pd.concat(blocks, ignore_index=True)


def write_dataset(dataset, path, schema=None):
    """Write the mapped columns back to CSV (rows grouped by region)."""
    dataset_to_frame(dataset, schema).to_csv(path, index=False, float_format=None)
