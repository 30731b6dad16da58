"""Subject records, model configuration, parameter layout and CSV I/O."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

TRANSITIONS = ("01", "02", "12")
COMPETING_TRANSITIONS = ("01", "02")


class DataError(ValueError):
    """Raised for malformed input files or records violating invariants."""


# --------------------------------------------------------------------------
# model configuration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeTransform:
    """Affine map from age (years) to the longitudinal time scale."""

    offset: float = 65.0
    scale: float = 10.0

    def __call__(self, age):
        return (np.asarray(age, dtype=float) - self.offset) / self.scale

    def inverse(self, t):
        return np.asarray(t, dtype=float) * self.scale + self.offset


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of a joint latent class illness-death model.

    Design terms are small numpy expressions evaluated with ``t`` (transformed
    time) and the covariate columns in scope, e.g. ``"1"``, ``"t"``,
    ``"t**2/10"`` or ``"Educ*t"``.
    """

    n_classes: int = 2
    markovian: bool = True
    competing: bool = False
    n_markers: int = 1
    links: Tuple[str, ...] = ("identity",)
    marker_ranges: Tuple[Tuple[float, float], ...] = ()
    time_transform: TimeTransform = field(default_factory=TimeTransform)
    class_terms: Tuple[str, ...] = ("1", "t")
    common_terms: Tuple[str, ...] = ()
    random_terms: Tuple[str, ...] = ("1", "t")
    marker_terms: Tuple[Tuple[str, ...], ...] = ()
    class_covariates: Tuple[str, ...] = ()
    event_covariates: Mapping[str, Tuple[str, ...]] = field(
        default_factory=lambda: {k: () for k in TRANSITIONS})
    class_specific_gamma: bool = False
    proportional_variance: bool = True
    fixed: Mapping[str, float] = field(default_factory=dict)
    quadrature_nodes: int = 30

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.n_markers < 1:
            raise ValueError("n_markers must be >= 1")
        if self.quadrature_nodes < 2:
            raise ValueError("quadrature_nodes must be >= 2")
        if len(self.links) != self.n_markers:
            raise ValueError("one link per marker required")
        for link in self.links:
            if link not in ("identity", "beta_cdf"):
                raise ValueError(f"unknown link {link!r}")
        if any(k == "beta_cdf" for k in self.links) and len(self.marker_ranges) != self.n_markers:
            raise ValueError("beta_cdf links need marker_ranges for every marker")
        if self.marker_terms and len(self.marker_terms) != self.n_markers:
            raise ValueError("marker_terms must list one tuple per marker")
        overlap = set(self.class_terms) & set(self.common_terms)
        if overlap:
            raise ValueError(f"terms both class-specific and common: {sorted(overlap)}")
        for key in self.event_covariates:
            if key not in TRANSITIONS:
                raise ValueError(f"unknown transition {key!r}")

    @property
    def transitions(self) -> Tuple[str, ...]:
        return COMPETING_TRANSITIONS if self.competing else TRANSITIONS

    def event_terms(self, trans: str) -> Tuple[str, ...]:
        return tuple(self.event_covariates.get(trans, ()))

    @property
    def n_common(self) -> int:
        return len(self.common_terms) + sum(len(m) for m in self.marker_terms)


def table1_spec(n_classes: int = 2, markovian: bool = True, competing: bool = False,
                quadrature_nodes: int = 30) -> ModelSpec:
    """Model structure of the simulation study (one gaussian marker, binary X)."""
    return ModelSpec(
        n_classes=n_classes,
        markovian=markovian,
        competing=competing,
        class_terms=("1", "t"),
        common_terms=("X",),
        random_terms=("1", "t"),
        event_covariates={"01": ("X",), "02": ("X",), "12": ("X",)},
        proportional_variance=False,
        quadrature_nodes=quadrature_nodes,
    )


def paquid_spec(n_classes: int = 4, markovian: bool = True) -> ModelSpec:
    """Quadratic class-specific trend with a Beta-CDF link on a 0-40 score.

    The first class intercept and the random-intercept Cholesky entry are
    fixed (0 and 1) because the link already carries location and scale.
    """
    quad = "t**2/10"
    return ModelSpec(
        n_classes=n_classes,
        markovian=markovian,
        links=("beta_cdf",),
        marker_ranges=((0.0, 40.0),),
        class_terms=("1", "t", quad),
        common_terms=("Educ", "Educ*t", f"Educ*{quad}", "Sex"),
        random_terms=("1", "t", quad),
        event_covariates={k: ("Sex", "Educ") for k in TRANSITIONS},
        fixed={"beta[1|class1]": 0.0, "U[1,1]": 1.0},
    )


def spec_to_dict(spec: ModelSpec) -> dict:
    """Plain JSON-compatible form of a ModelSpec."""
    return {
        "n_classes": spec.n_classes,
        "markovian": spec.markovian,
        "competing": spec.competing,
        "n_markers": spec.n_markers,
        "links": list(spec.links),
        "marker_ranges": [list(r) for r in spec.marker_ranges],
        "time_offset": spec.time_transform.offset,
        "time_scale": spec.time_transform.scale,
        "class_terms": list(spec.class_terms),
        "common_terms": list(spec.common_terms),
        "random_terms": list(spec.random_terms),
        "marker_terms": [list(t) for t in spec.marker_terms],
        "class_covariates": list(spec.class_covariates),
        "event_covariates": {k: list(v) for k, v in spec.event_covariates.items()},
        "class_specific_gamma": spec.class_specific_gamma,
        "proportional_variance": spec.proportional_variance,
        "fixed": dict(spec.fixed),
        "quadrature_nodes": spec.quadrature_nodes,
    }


def spec_from_dict(d: Mapping[str, object]) -> ModelSpec:
    d = dict(d)
    unknown = set(d) - set(spec_to_dict(ModelSpec()))
    if unknown:
        raise ValueError(f"unknown model keys: {sorted(unknown)}")
    tt = TimeTransform(float(d.pop("time_offset", 65.0)), float(d.pop("time_scale", 10.0)))
    tuples = ("links", "class_terms", "common_terms", "random_terms", "class_covariates")
    for key in tuples:
        if key in d:
            d[key] = tuple(d[key])
    if "marker_ranges" in d:
        d["marker_ranges"] = tuple(tuple(float(x) for x in r) for r in d["marker_ranges"])
    if "marker_terms" in d:
        d["marker_terms"] = tuple(tuple(t) for t in d["marker_terms"])
    if "event_covariates" in d:
        d["event_covariates"] = {k: tuple(v) for k, v in d["event_covariates"].items()}
    if "fixed" in d:
        d["fixed"] = {k: float(v) for k, v in d["fixed"].items()}
    return ModelSpec(time_transform=tt, **d)


# --------------------------------------------------------------------------
# subject records
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SubjectRecord:
    """One subject: interval-censored dementia, right-censored death, marker series.

    Ages are in years. ``r`` is ``inf`` when dementia was never diagnosed.
    ``times`` are on the transformed (model) time scale.
    """

    id: str
    t0: float
    l: float
    r: float
    delta_a: int
    t_end: float
    delta_d: int
    covariates: Mapping[str, float] = field(default_factory=dict)
    markers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    x_class: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    x_common: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    z: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n_obs(self) -> int:
        return len(self.values)

    def validate(self, time_transform: Optional[TimeTransform] = None) -> None:
        sid = self.id
        if self.delta_a not in (0, 1) or self.delta_d not in (0, 1):
            raise DataError(f"subject {sid}: indicators must be 0/1")
        for name in ("t0", "l", "t_end"):
            if not math.isfinite(getattr(self, name)):
                raise DataError(f"subject {sid}: {name} must be finite")
        if not self.t0 <= self.l <= self.t_end:
            raise DataError(f"subject {sid}: need t0 <= l <= t "
                            f"(got {self.t0}, {self.l}, {self.t_end})")
        if self.delta_a == 1:
            if not self.l <= self.r <= self.t_end:
                raise DataError(f"subject {sid}: need l <= r <= t when diagnosed")
        elif self.r != math.inf:
            raise DataError(f"subject {sid}: r must be +inf when not diagnosed")
        if time_transform is not None and self.n_obs:
            ages = time_transform.inverse(self.times)
            upper = min(self.r, self.t_end)
            if ages.min() < self.t0 - 1e-9 or ages.max() > upper + 1e-9:
                raise DataError(f"subject {sid}: observation outside [t0, min(r, t)]")


def observation_pattern(rec: SubjectRecord) -> int:
    """Observation pattern 1-6 for dementia and death.

    1/2: diagnosed, dead/alive at t. 3/4: healthy at the last visit (l == t),
    dead/alive. 5/6: unknown status after the last visit, dead/alive.
    """
    dead = rec.delta_d == 1
    if rec.delta_a == 1:
        return 1 if dead else 2
    if rec.l == rec.t_end:
        return 3 if dead else 4
    return 5 if dead else 6


# --------------------------------------------------------------------------
# design matrices
# --------------------------------------------------------------------------


def evaluate_terms(terms: Sequence[str], t: np.ndarray, env: Mapping[str, object]) -> np.ndarray:
    """Evaluate design term expressions into an (n, len(terms)) matrix."""
    t = np.asarray(t, dtype=float)
    ns = {"np": np, "t": t, "log": np.log, "exp": np.exp, "sqrt": np.sqrt}
    ns.update(env)
    cols = []
    for term in terms:
        try:
            val = eval(compile(term, "<term>", "eval"), {"__builtins__": {}}, ns)
        except NameError as exc:
            raise DataError(f"design term {term!r}: {exc}") from None
        cols.append(np.broadcast_to(np.asarray(val, dtype=float), t.shape))
    if not cols:
        return np.zeros((t.size, 0))
    return np.column_stack(cols)


def build_design(spec: ModelSpec, markers: np.ndarray, times: np.ndarray,
                 covariates: Mapping[str, float],
                 obs_covariates: Optional[Mapping[str, np.ndarray]] = None):
    """Class-specific, common and random-effect design rows for one subject."""
    env: Dict[str, object] = dict(covariates)
    if obs_covariates:
        env.update(obs_covariates)
    x_class = evaluate_terms(spec.class_terms, times, env)
    parts = [evaluate_terms(spec.common_terms, times, env)]
    for k, terms in enumerate(spec.marker_terms):
        block = evaluate_terms(terms, times, env)
        parts.append(block * (markers == k)[:, None])
    x_common = np.hstack(parts) if parts else np.zeros((len(times), 0))
    z = evaluate_terms(spec.random_terms, times, env)
    return x_class, x_common, z


def make_record(spec: ModelSpec, id, t0, l, r, delta_a, t_end, delta_d,
                covariates: Optional[Mapping[str, float]] = None,
                markers=(), ages=(), values=(),
                obs_covariates: Optional[Mapping[str, np.ndarray]] = None,
                validate: bool = True) -> SubjectRecord:
    """Build a record from raw ages; applies the time transform and designs."""
    covariates = dict(covariates or {})
    markers = np.asarray(markers, dtype=int)
    times = spec.time_transform(np.asarray(ages, dtype=float))
    values = np.asarray(values, dtype=float)
    x_class, x_common, z = build_design(spec, markers, times, covariates, obs_covariates)
    rec = SubjectRecord(
        id=str(id), t0=float(t0), l=float(l), r=float(r), delta_a=int(delta_a),
        t_end=float(t_end), delta_d=int(delta_d), covariates=covariates,
        markers=markers, times=times, values=values,
        x_class=x_class, x_common=x_common, z=z,
    )
    if validate:
        rec.validate(spec.time_transform)
    return rec


def redesign(records: Iterable[SubjectRecord], spec: ModelSpec) -> List[SubjectRecord]:
    """Rebuild design matrices of existing records under another spec."""
    out = []
    for rec in records:
        x_class, x_common, z = build_design(spec, rec.markers, rec.times, rec.covariates)
        out.append(replace(rec, x_class=x_class, x_common=x_common, z=z))
    return out


# --------------------------------------------------------------------------
# CSV I/O
# --------------------------------------------------------------------------

EVENT_COLUMNS = ("id", "t0", "l", "r", "delta_a", "t", "delta_d")
OBS_COLUMNS = ("id", "marker", "time", "value")


def _float(text: str, what: str, where: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"{where}: cannot parse {what}={text!r}") from None


def load_dataset(events_path, observations_path, spec: ModelSpec) -> List[SubjectRecord]:
    """Read and validate the events and long-format observations CSV files."""
    events_path, observations_path = Path(events_path), Path(observations_path)
    obs: Dict[str, Dict[str, list]] = {}
    with observations_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in OBS_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{observations_path}: missing columns {missing}")
        extra = [c for c in header if c not in OBS_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            where = f"{observations_path}:{lineno}"
            if None in row or any(row[c] is None for c in header):
                raise DataError(f"{where}: wrong number of fields")
            if row["value"].strip() == "":
                continue
            d = obs.setdefault(row["id"], {"marker": [], "age": [], "value": [],
                                           **{c: [] for c in extra}})
            marker = int(_float(row["marker"], "marker", where)) - 1
            if not 0 <= marker < spec.n_markers:
                raise DataError(f"{where}: marker {marker + 1} outside 1..{spec.n_markers}")
            d["marker"].append(marker)
            d["age"].append(_float(row["time"], "time", where))
            d["value"].append(_float(row["value"], "value", where))
            for c in extra:
                d[c].append(_float(row[c], c, where))

    records = []
    seen = set()
    with events_path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in EVENT_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{events_path}: missing columns {missing}")
        extra = [c for c in header if c not in EVENT_COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            where = f"{events_path}:{lineno}"
            if None in row or any(row[c] is None for c in header):
                raise DataError(f"{where}: wrong number of fields")
            sid = row["id"]
            if sid in seen:
                raise DataError(f"{where}: duplicate id {sid}")
            seen.add(sid)
            r_text = row["r"].strip()
            r = math.inf if r_text in ("", "inf", "Inf", "NA") else _float(r_text, "r", where)
            covs = {c: _float(row[c], c, where) for c in extra}
            d = obs.get(sid, {"marker": [], "age": [], "value": []})
            ocovs = {c: np.asarray(v, dtype=float) for c, v in d.items()
                     if c not in ("marker", "age", "value")}
            order = np.argsort(np.asarray(d["age"], dtype=float), kind="stable")
            records.append(make_record(
                spec, sid,
                _float(row["t0"], "t0", where), _float(row["l"], "l", where), r,
                int(_float(row["delta_a"], "delta_a", where)),
                _float(row["t"], "t", where),
                int(_float(row["delta_d"], "delta_d", where)),
                covariates=covs,
                markers=np.asarray(d["marker"], dtype=int)[order],
                ages=np.asarray(d["age"], dtype=float)[order],
                values=np.asarray(d["value"], dtype=float)[order],
                obs_covariates={c: v[order] for c, v in ocovs.items()},
            ))
    unknown = set(obs) - seen
    if unknown:
        raise DataError(f"{observations_path}: observations for unknown ids {sorted(unknown)[:5]}")
    return records


def _fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ""


def write_dataset(records: Sequence[SubjectRecord], events_path, observations_path,
                  spec: ModelSpec) -> None:
    """Write records back to the events/observations CSV formats."""
    cov_names = sorted({k for rec in records for k in rec.covariates})
    with Path(events_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(EVENT_COLUMNS) + cov_names)
        for rec in records:
            w.writerow([rec.id, _fmt(rec.t0), _fmt(rec.l), _fmt(rec.r), rec.delta_a,
                        _fmt(rec.t_end), rec.delta_d]
                       + [_fmt(rec.covariates.get(c, math.nan)) for c in cov_names])
    with Path(observations_path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(OBS_COLUMNS))
        for rec in records:
            ages = spec.time_transform.inverse(rec.times)
            for k, a, y in zip(rec.markers, ages, rec.values):
                w.writerow([rec.id, int(k) + 1, _fmt(a), _fmt(y)])


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParameterSet:
    """Unconstrained parameters of a fitted or true model.

    Positive quantities are held as square roots: Weibull shape/scale
    (``weibull[m, g] = (sqrt shape, sqrt scale)`` for transition m, class g),
    the class variance factors, measurement SDs and the positive link
    parameters. Reference-class values (zeta_G = 0, sigma_G = 1) are implicit.
    """

    zeta: np.ndarray            # (G-1, 1 + n class covariates)
    weibull: np.ndarray         # (n transitions, G, 2)
    gamma: Tuple[np.ndarray, ...]   # per transition: (p,) or (G, p)
    beta_class: np.ndarray      # (G, p class terms)
    beta_common: np.ndarray     # (p common,)
    u_chol: np.ndarray          # (q, q) lower triangular
    sigma_root: np.ndarray      # (G-1,)
    sigma_e_root: np.ndarray    # (K,)
    eta: np.ndarray             # (K, 4); eta1, eta2, eta4 as roots

    @property
    def n_classes(self) -> int:
        return self.weibull.shape[1]

    @property
    def shape(self) -> np.ndarray:
        return self.weibull[..., 0] ** 2

    @property
    def scale(self) -> np.ndarray:
        return self.weibull[..., 1] ** 2

    @property
    def sigma(self) -> np.ndarray:
        """Proportional random-effect SD factor per class (last is 1)."""
        if self.sigma_root.size == 0:
            return np.ones(self.n_classes)
        return np.append(self.sigma_root ** 2, 1.0)

    @property
    def sigma_e(self) -> np.ndarray:
        return self.sigma_e_root ** 2

    @property
    def B(self) -> np.ndarray:
        return self.u_chol @ self.u_chol.T

    def link_params(self, k: int) -> np.ndarray:
        e = self.eta[k]
        return np.array([e[0] ** 2, e[1] ** 2, e[2], e[3] ** 2])

    def gamma_for(self, m: int, g: int) -> np.ndarray:
        gm = self.gamma[m]
        return gm[g] if gm.ndim == 2 else gm


# slot kinds: how a stored value maps to its reported value
_REPORT_SQUARE = "square"
_REPORT_IDENTITY = "identity"


@dataclass(frozen=True)
class Slot:
    label: str
    field: str
    index: tuple
    report: str = _REPORT_IDENTITY
    fixed: Optional[float] = None


class ParameterLayout:
    """Ordering of the free parameter vector for a given ModelSpec."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        G = spec.n_classes
        slots: List[Slot] = []
        zeta_names = ["(Intercept)"] + list(spec.class_covariates)
        for g in range(G - 1):
            for j, name in enumerate(zeta_names):
                lab = f"zeta[{g + 1}]" if j == 0 else f"zeta[{g + 1},{name}]"
                slots.append(Slot(lab, "zeta", (g, j)))
        for m, tr in enumerate(spec.transitions):
            for which, sym in ((0, "lambda1"), (1, "lambda2")):
                for g in range(G):
                    slots.append(Slot(f"{sym}_{tr}[{g + 1}]", "weibull", (m, g, which)))
        for m, tr in enumerate(spec.transitions):
            for j, name in enumerate(spec.event_terms(tr)):
                if spec.class_specific_gamma:
                    for g in range(G):
                        slots.append(Slot(f"gamma_{tr}[{name},{g + 1}]", "gamma", (m, g, j)))
                else:
                    slots.append(Slot(f"gamma_{tr}[{name}]", "gamma", (m, j)))
        for j, term in enumerate(spec.class_terms):
            for g in range(G):
                slots.append(Slot(f"beta[{term}|class{g + 1}]", "beta_class", (g, j)))
        common_names = list(spec.common_terms)
        for k, terms in enumerate(spec.marker_terms):
            common_names += [f"{t}|marker{k + 1}" for t in terms]
        for j, name in enumerate(common_names):
            slots.append(Slot(f"beta[{name}]", "beta_common", (j,)))
        q = len(spec.random_terms)
        for a in range(q):
            for b in range(a + 1):
                slots.append(Slot(f"U[{a + 1},{b + 1}]", "u_chol", (a, b)))
        if spec.proportional_variance:
            for g in range(G - 1):
                slots.append(Slot(f"sigma[{g + 1}]", "sigma_root", (g,), _REPORT_SQUARE))
        for k in range(spec.n_markers):
            slots.append(Slot(f"sigma_e[{k + 1}]", "sigma_e_root", (k,), _REPORT_SQUARE))
        for k, link in enumerate(spec.links):
            if link == "beta_cdf":
                for j, rep in enumerate((_REPORT_SQUARE, _REPORT_SQUARE,
                                         _REPORT_IDENTITY, _REPORT_SQUARE)):
                    slots.append(Slot(f"eta{j + 1}[{k + 1}]", "eta", (k, j), rep))

        known = {s.label for s in slots}
        bad = set(spec.fixed) - known
        if bad:
            raise ValueError(f"fixed parameters not in layout: {sorted(bad)}")
        self.all_slots = [replace(s, fixed=spec.fixed.get(s.label)) for s in slots]
        self.free_slots = [s for s in self.all_slots if s.fixed is None]
        self.labels = [s.label for s in self.free_slots]
        self.p = len(self.free_slots)

    # shapes of the ParameterSet arrays
    def _zeros(self) -> Dict[str, object]:
        spec = self.spec
        G = spec.n_classes
        gam = []
        for tr in spec.transitions:
            p = len(spec.event_terms(tr))
            gam.append(np.zeros((G, p)) if spec.class_specific_gamma else np.zeros(p))
        q = len(spec.random_terms)
        return dict(
            zeta=np.zeros((G - 1, 1 + len(spec.class_covariates))),
            weibull=np.zeros((len(spec.transitions), G, 2)),
            gamma=gam,
            beta_class=np.zeros((G, len(spec.class_terms))),
            beta_common=np.zeros(spec.n_common),
            u_chol=np.zeros((q, q)),
            sigma_root=np.zeros(G - 1 if spec.proportional_variance else 0),
            sigma_e_root=np.ones(spec.n_markers),
            eta=np.zeros((spec.n_markers, 4)),
        )

    @staticmethod
    def _target(arrays, slot: Slot):
        if slot.field == "gamma":
            return arrays["gamma"][slot.index[0]], slot.index[1:]
        return arrays[slot.field], slot.index

    def decode(self, v) -> ParameterSet:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.p,):
            raise ValueError(f"expected {self.p} free parameters, got {v.shape}")
        arrays = self._zeros()
        for slot in self.all_slots:
            arr, idx = self._target(arrays, slot)
            arr[idx] = slot.fixed
        for val, slot in zip(v, self.free_slots):
            arr, idx = self._target(arrays, slot)
            arr[idx] = val
        arrays["gamma"] = tuple(arrays["gamma"])
        return ParameterSet(**arrays)

    def encode(self, theta: ParameterSet) -> np.ndarray:
        arrays = {f: getattr(theta, f) for f in ParameterSet.__dataclass_fields__}
        self._check_shapes(theta)
        out = np.empty(self.p)
        for i, slot in enumerate(self.free_slots):
            arr, idx = self._target(arrays, slot)
            out[i] = arr[idx]
        return out

    def _check_shapes(self, theta: ParameterSet) -> None:
        ref = self._zeros()
        for name, arr in ref.items():
            got = getattr(theta, name)
            if name == "gamma":
                if len(got) != len(arr) or any(np.shape(a) != np.shape(b) for a, b in zip(got, arr)):
                    raise ValueError("gamma shapes do not match the model layout")
            elif np.shape(got) != np.shape(arr):
                raise ValueError(f"{name}: shape {np.shape(got)} != {np.shape(arr)}")

    def report(self, v: np.ndarray) -> np.ndarray:
        """Reported-scale values: roots of variance/link terms are squared back.

        Weibull parameters stay on the root scale, which is the scale
        published simulation tables use.
        """
        v = np.asarray(v, dtype=float)
        sq = np.array([s.report == _REPORT_SQUARE for s in self.free_slots])
        return np.where(sq, v ** 2, v)

    def report_jacobian(self, v: np.ndarray) -> np.ndarray:
        """Diagonal of d report / d v (the map is coordinate-wise)."""
        v = np.asarray(v, dtype=float)
        sq = np.array([s.report == _REPORT_SQUARE for s in self.free_slots])
        return np.where(sq, 2.0 * v, 1.0)

    def index(self, label: str) -> int:
        return self.labels.index(label)


def table1_truth(spec: Optional[ModelSpec] = None) -> ParameterSet:
    """Generating values of the simulation study (2 classes, root-scale Weibull)."""
    spec = spec or table1_spec()
    layout = ParameterLayout(spec)
    G = spec.n_classes
    if G != 2:
        raise ValueError("the simulation truth has two classes")
    arrays = layout._zeros()
    weib = {"01": [(3.20, 0.11), (3.50, 0.10)],
            "02": [(3.50, 0.11), (3.40, 0.10)],
            "12": [(2.78, 0.12), (3.14, 0.11)]}
    gam = {"01": 0.02, "02": 0.67, "12": 0.47}
    for m, tr in enumerate(spec.transitions):
        arrays["weibull"][m] = np.array(weib[tr])
        arrays["gamma"][m][...] = gam[tr]
    arrays["gamma"] = tuple(arrays["gamma"])
    arrays["beta_class"] = np.array([[30.22, -5.76], [32.96, -3.53]])
    arrays["beta_common"] = np.array([0.08])
    arrays["u_chol"] = np.array([[4.93, 0.0], [-1.15, 1.46]])
    arrays["sigma_e_root"] = np.array([math.sqrt(3.47)])
    if spec.proportional_variance:
        arrays["sigma_root"] = np.ones(G - 1)
    return ParameterSet(**arrays)
