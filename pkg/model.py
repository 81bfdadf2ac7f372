"""
Trained expectile model
Kernel expansion over the support points, prediction in raw units and the text model format
"""

import logging
from dataclasses import dataclass
from typing import IO, List, Optional, Union

import numpy as np

from core_types import ModelFormatError, ModelTruncatedError, ModelVersionError, TrainingSet
from dual_state import DualState
from kernel import cross_kernel

logger = logging.getLogger(__name__)

MODEL_FORMAT = "expectile-model"
MODEL_VERSION = 1

# Coefficients smaller than this are dropped when a model is finalized
COEFFICIENT_CUTOFF = 1e-12

HEADER_FIELDS = ('m', 'd', 'tau', 'cost', 'gamma', 'clip_m')


def _fmt(value: float) -> str:
    return format(float(value), '.17g')


@dataclass(frozen=True)
class Scaling:
    """
    Componentwise affine map onto [-1, 1]

    scaled = (raw - offset) / scale for every feature column and for the label.
    Constant columns get scale 1, so they land on 0.
    """
    feature_offset: np.ndarray
    feature_scale: np.ndarray
    label_offset: float = 0.0
    label_scale: float = 1.0

    def __post_init__(self):
        offset = np.asarray(self.feature_offset, dtype=np.float64).reshape(-1)
        scale = np.asarray(self.feature_scale, dtype=np.float64).reshape(-1)
        if offset.shape != scale.shape:
            raise ValueError(f"{offset.shape[0]} offsets but {scale.shape[0]} scales")
        if np.any(scale == 0.0) or self.label_scale == 0.0:
            raise ValueError("scaling factors must be nonzero")
        object.__setattr__(self, 'feature_offset', offset)
        object.__setattr__(self, 'feature_scale', scale)
        object.__setattr__(self, 'label_offset', float(self.label_offset))
        object.__setattr__(self, 'label_scale', float(self.label_scale))

    @classmethod
    def identity(cls, d: int) -> "Scaling":
        return cls(np.zeros(d), np.ones(d))

    @staticmethod
    def _column_params(values: np.ndarray):
        lo, hi = np.min(values, axis=0), np.max(values, axis=0)
        offset = (hi + lo) / 2.0
        scale = (hi - lo) / 2.0
        return offset, np.where(scale > 0.0, scale, 1.0)

    @classmethod
    def fit(cls, features, labels) -> "Scaling":
        """Offsets and scales that map each column's min to -1 and max to +1"""
        x = np.asarray(features, dtype=np.float64)
        y = np.asarray(labels, dtype=np.float64).reshape(-1)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] < 1:
            raise ValueError("cannot fit a scaling on an empty data set")
        offset, scale = cls._column_params(x)
        y_offset, y_scale = cls._column_params(y)
        return cls(offset, scale, float(y_offset), float(y_scale))

    @property
    def d(self) -> int:
        return self.feature_offset.shape[0]

    def apply_features(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[1] != self.d:
            raise ValueError(f"expected {self.d} features, got {x.shape[1]}")
        return (x - self.feature_offset) / self.feature_scale

    def apply_labels(self, labels) -> np.ndarray:
        return (np.asarray(labels, dtype=np.float64) - self.label_offset) / self.label_scale

    def invert_labels(self, scaled):
        values = np.asarray(scaled, dtype=np.float64) * self.label_scale + self.label_offset
        return float(values) if values.ndim == 0 else values

    def apply(self, features, labels) -> TrainingSet:
        return TrainingSet(self.apply_features(features), self.apply_labels(labels))


@dataclass(frozen=True)
class Model:
    """
    f(x) = sum_i u_i k_gamma(x_i, x) over the support points, in scaled space

    Immutable once built; prediction is safe from concurrent threads.
    """
    support_points: np.ndarray
    coefficients: np.ndarray
    gamma: float
    tau: float
    cost: float
    clip_m: float
    scaling: Scaling

    def __post_init__(self):
        points = np.asarray(self.support_points, dtype=np.float64)
        coef = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        if points.ndim == 1:
            points = points.reshape(-1, self.scaling.d)
        if points.shape[0] != coef.shape[0]:
            raise ValueError(f"{points.shape[0]} support points but {coef.shape[0]} coefficients")
        if points.shape[1] != self.scaling.d:
            raise ValueError(f"support points have d={points.shape[1]}, scaling has d={self.scaling.d}")
        points.setflags(write=False)
        coef.setflags(write=False)
        object.__setattr__(self, 'support_points', points)
        object.__setattr__(self, 'coefficients', coef)

    @classmethod
    def from_state(cls, state: DualState, data: TrainingSet,
                   scaling: Optional[Scaling] = None) -> "Model":
        """Keep the training points whose coefficient survives the cutoff"""
        if state.n != data.n:
            raise ValueError(f"state has n={state.n}, data has n={data.n}")
        u = state.coefficients()
        keep = np.abs(u) >= COEFFICIENT_CUTOFF
        params = state.params
        model = cls(support_points=data.features[keep], coefficients=u[keep],
                    gamma=params.gamma, tau=params.tau, cost=params.cost,
                    clip_m=params.clip_m, scaling=scaling or Scaling.identity(data.d))
        logger.debug(f"Model finalized with {model.m} of {data.n} support points")
        return model

    @property
    def m(self) -> int:
        return self.coefficients.shape[0]

    @property
    def d(self) -> int:
        return self.scaling.d

    def _as_rows(self, x) -> np.ndarray:
        rows = np.asarray(x, dtype=np.float64)
        if rows.ndim == 1:
            rows = rows.reshape(1, -1)
        if rows.shape[1] != self.d:
            raise ValueError(f"dimension mismatch: model expects {self.d} features, got {rows.shape[1]}")
        return rows

    def predict_scaled(self, x_scaled, clipped: bool = False) -> np.ndarray:
        """Predictions for already scaled points, in scaled label units"""
        rows = self._as_rows(x_scaled)
        if self.m == 0:
            values = np.zeros(rows.shape[0])
        else:
            values = cross_kernel(rows, self.support_points, self.gamma) @ self.coefficients
        if clipped:
            values = np.clip(values, -self.clip_m, self.clip_m)
        return values

    def predict_batch(self, x_raw, clipped: bool = False) -> np.ndarray:
        """Raw points in, raw label units out"""
        rows = self._as_rows(x_raw)
        return self.scaling.invert_labels(self.predict_scaled(self.scaling.apply_features(rows), clipped))

    def predict(self, x) -> float:
        return float(self.predict_batch(x)[0])

    def predict_clipped(self, x) -> float:
        return float(self.predict_batch(x, clipped=True)[0])

    # ------------------------------------------------------------------
    # Serialization
    # ------------------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"{MODEL_FORMAT} {MODEL_VERSION}",
                 f"m {self.m}",
                 f"d {self.d}",
                 f"tau {_fmt(self.tau)}",
                 f"cost {_fmt(self.cost)}",
                 f"gamma {_fmt(self.gamma)}",
                 f"clip_m {_fmt(self.clip_m)}",
                 "scaling"]
        for offset, scale in zip(self.scaling.feature_offset, self.scaling.feature_scale):
            lines.append(f"{_fmt(offset)} {_fmt(scale)}")
        lines.append(f"{_fmt(self.scaling.label_offset)} {_fmt(self.scaling.label_scale)}")
        lines.append("records")
        for point, coef in zip(self.support_points, self.coefficients):
            lines.append(" ".join(_fmt(v) for v in point) + f" {_fmt(coef)}")
        return "\n".join(lines) + "\n"

    def save(self, destination: Union[str, IO[str]]):
        text = self.dumps()
        if hasattr(destination, 'write'):
            destination.write(text)
            return
        with open(destination, 'w') as f:
            f.write(text)
        logger.info(f"✅ Model saved to {destination} ({self.m} support points)")

    @classmethod
    def loads(cls, text: str) -> "Model":
        return _ModelReader(text.splitlines()).read()

    @classmethod
    def load(cls, source: Union[str, IO[str]]) -> "Model":
        if hasattr(source, 'read'):
            return cls.loads(source.read())
        with open(source) as f:
            return cls.loads(f.read())


class _ModelReader:
    """Line-by-line parser for the model document"""

    def __init__(self, lines: List[str]):
        self.lines = lines
        self.pos = 0

    def _next(self, expecting: str) -> List[str]:
        while self.pos < len(self.lines):
            line = self.lines[self.pos].strip()
            self.pos += 1
            if line:
                return line.split()
        raise ModelTruncatedError(f"document ended while reading {expecting}", line=self.pos)

    def _number(self, token: str, what: str) -> float:
        try:
            value = float(token)
        except ValueError:
            raise ModelFormatError(f"{what}: {token!r} is not a number", line=self.pos)
        if not np.isfinite(value):
            raise ModelFormatError(f"{what}: {token!r} is not finite", line=self.pos)
        return value

    def _keyword(self, name: str):
        fields = self._next(name)
        if fields != [name]:
            raise ModelFormatError(f"expected '{name}', found {' '.join(fields)!r}", line=self.pos)

    def _row(self, width: int, what: str) -> List[float]:
        fields = self._next(what)
        if len(fields) != width:
            raise ModelFormatError(f"{what}: expected {width} fields, found {len(fields)}",
                                   line=self.pos)
        return [self._number(token, what) for token in fields]

    def read(self) -> Model:
        head = self._next("format header")
        if len(head) != 2 or head[0] != MODEL_FORMAT:
            raise ModelFormatError(f"not an {MODEL_FORMAT} document", line=self.pos)
        if head[1] != str(MODEL_VERSION):
            raise ModelVersionError(f"unsupported model version {head[1]!r} "
                                    f"(this build reads version {MODEL_VERSION})", line=self.pos)

        header = {}
        for name in HEADER_FIELDS:
            fields = self._next(name)
            if len(fields) != 2 or fields[0] != name:
                raise ModelFormatError(f"expected '{name} <value>', found {' '.join(fields)!r}",
                                       line=self.pos)
            header[name] = self._number(fields[1], name)
        m, d = header['m'], header['d']
        if m != int(m) or m < 0 or d != int(d) or d < 1:
            raise ModelFormatError(f"invalid counts m={m}, d={d}")
        m, d = int(m), int(d)

        self._keyword("scaling")
        pairs = [self._row(2, f"scaling row {r + 1}") for r in range(d + 1)]
        try:
            scaling = Scaling(feature_offset=[p[0] for p in pairs[:d]],
                              feature_scale=[p[1] for p in pairs[:d]],
                              label_offset=pairs[d][0], label_scale=pairs[d][1])
        except ValueError as e:
            raise ModelFormatError(str(e), line=self.pos)

        self._keyword("records")
        records = np.array([self._row(d + 1, f"record {r + 1}") for r in range(m)],
                           dtype=np.float64).reshape(m, d + 1)
        for extra in self.lines[self.pos:]:
            self.pos += 1
            if extra.strip():
                raise ModelFormatError(f"unexpected content after {m} records", line=self.pos)

        try:
            return Model(support_points=records[:, :d], coefficients=records[:, d],
                         gamma=header['gamma'], tau=header['tau'], cost=header['cost'],
                         clip_m=header['clip_m'], scaling=scaling)
        except ValueError as e:
            raise ModelFormatError(str(e))
