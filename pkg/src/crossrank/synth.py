"""Deterministic synthetic panels with known linear ground truth.

The generator exists to validate algorithms, not to simulate markets: monthly
variable values are i.i.d. standard normal, the target of each stock is the
dot product of a regime coefficient vector with the stock's per-variable
monthly means plus Gaussian noise, cells are masked missing independently, and
a fixed fraction of each period's stocks is flagged as training.

Randomness comes from a counter-based splitmix64 stream so any language can
replicate it bit-exactly:

    state_k = (seed + k * 0x9E3779B97F4A7C15) mod 2^64          for k = 1, 2, ...
    z = state_k
    z = (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2^64)
    z = (z XOR (z >> 27)) * 0x94D049BB133111EB   (mod 2^64)
    out_k = z XOR (z >> 31)

    uniform_k = ((out_k >> 11) + 0.5) * 2^-53                    in (0, 1)
    normals via Box-Muller on consecutive uniform pairs (u1, u2):
        z0 = sqrt(-2 ln u1) * cos(2 pi u2)
        z1 = sqrt(-2 ln u1) * sin(2 pi u2)

Draw order per period: monthly block (stock-major, then variable, then month),
target noise (one per stock), missing-mask uniforms (same layout as the
monthly block), train-flag uniforms (one per stock). An odd normal count still
consumes a full pair of uniforms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError
from .panel import N_MONTHS, Panel, PeriodData, PeriodId, Provenance, next_label, parse_label

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


class SplitMix64:
    """Counter-based splitmix64 stream; see the module docstring for the recurrence."""

    def __init__(self, seed: int):
        self.seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
        self.counter = 0

    def raw(self, n: int) -> np.ndarray:
        ks = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        z = self.seed + ks * _GAMMA
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))

    def uniforms(self, n: int) -> np.ndarray:
        return ((self.raw(n) >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53

    def normals(self, n: int) -> np.ndarray:
        pairs = (n + 1) // 2
        u = self.uniforms(2 * pairs)
        u1, u2 = u[0::2], u[1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * pairs)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n]


@dataclass(frozen=True)
class SynthConfig:
    n_periods: int
    n_stocks: int
    n_variables: int
    coefficients: tuple[tuple[float, ...], ...]   # one vector per regime
    regime_of_period: tuple[int, ...]             # regime index per ordinal 1..n_periods
    noise_sigma: float = 0.0
    missing_rate: float = 0.0
    train_fraction: float = 0.6
    seed: int = 0
    start_label: str = "1996_1"
    final_period_unlabeled: bool = False

    def __post_init__(self):
        if min(self.n_periods, self.n_stocks, self.n_variables) < 1:
            raise InvalidConfigError("n_periods, n_stocks, n_variables must be >= 1")
        if len(self.regime_of_period) != self.n_periods:
            raise InvalidConfigError(
                f"regime_of_period must list {self.n_periods} entries")
        if not self.coefficients:
            raise InvalidConfigError("need at least one regime coefficient vector")
        for r, c in enumerate(self.coefficients):
            if len(c) != self.n_variables:
                raise InvalidConfigError(
                    f"regime {r} coefficient vector has {len(c)} entries, "
                    f"expected {self.n_variables}")
        for t, r in enumerate(self.regime_of_period, start=1):
            if not 0 <= r < len(self.coefficients):
                raise InvalidConfigError(f"period {t} maps to unknown regime {r}")
        if self.noise_sigma < 0:
            raise InvalidConfigError("noise_sigma must be >= 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise InvalidConfigError("missing_rate must be in [0, 1)")
        if not 0.0 < self.train_fraction < 1.0:
            raise InvalidConfigError("train_fraction must be in (0, 1)")
        if self.seed < 0:
            raise InvalidConfigError("seed must be a non-negative integer")
        parse_label(self.start_label)

    @staticmethod
    def single_regime(n_periods: int, n_stocks: int, n_variables: int,
                      coefficients, **kw) -> "SynthConfig":
        return SynthConfig(n_periods=n_periods, n_stocks=n_stocks,
                           n_variables=n_variables,
                           coefficients=(tuple(float(c) for c in coefficients),),
                           regime_of_period=(0,) * n_periods, **kw)

    def to_dict(self) -> dict:
        return {
            "n_periods": self.n_periods,
            "n_stocks": self.n_stocks,
            "n_variables": self.n_variables,
            "coefficients": [list(c) for c in self.coefficients],
            "regime_of_period": list(self.regime_of_period),
            "noise_sigma": self.noise_sigma,
            "missing_rate": self.missing_rate,
            "train_fraction": self.train_fraction,
            "seed": self.seed,
            "start_label": self.start_label,
            "final_period_unlabeled": self.final_period_unlabeled,
        }

    @staticmethod
    def from_dict(d: dict) -> "SynthConfig":
        required = {"n_periods", "n_stocks", "n_variables", "coefficients",
                    "regime_of_period", "seed"}
        optional = {"noise_sigma", "missing_rate", "train_fraction", "start_label",
                    "final_period_unlabeled"}
        unknown = set(d) - required - optional
        if unknown:
            raise InvalidConfigError(f"unknown synth config keys: {sorted(unknown)}")
        missing = required - set(d)
        if missing:
            raise InvalidConfigError(f"missing synth config keys: {sorted(missing)}")
        d = dict(d)
        d["coefficients"] = tuple(tuple(float(x) for x in c) for c in d["coefficients"])
        d["regime_of_period"] = tuple(int(r) for r in d["regime_of_period"])
        return SynthConfig(**d)


@dataclass
class GroundTruth:
    coefficients: list[np.ndarray]
    regime_of_period: dict[int, int]
    labels: dict[int, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "coefficients": [[float(x) for x in c] for c in self.coefficients],
            "regime_of_period": {str(t): r for t, r in self.regime_of_period.items()},
            "labels": {str(t): lab for t, lab in self.labels.items()},
        }


def generate_panel(config: SynthConfig) -> tuple[Panel, GroundTruth]:
    """Deterministic panel + ground truth; same config twice gives bit-identical output.

    Targets are computed from the unmasked values, then cells are masked, so
    imputation is approximate recovery (exact when missing_rate is 0).
    """
    rng = SplitMix64(config.seed)
    n, V = config.n_stocks, config.n_variables
    coeffs = [np.asarray(c, dtype=np.float64) for c in config.coefficients]
    periods = []
    label = config.start_label
    for t in range(1, config.n_periods + 1):
        monthly = rng.normals(n * V * N_MONTHS).reshape(n, V, N_MONTHS)
        noise = rng.normals(n)
        means = monthly.mean(axis=2)
        target = means @ coeffs[config.regime_of_period[t - 1]] + config.noise_sigma * noise
        mask_u = rng.uniforms(n * V * N_MONTHS).reshape(n, V, N_MONTHS)
        train_u = rng.uniforms(n)

        if config.missing_rate > 0.0:
            monthly[mask_u < config.missing_rate] = np.nan
        n_train = int(round(config.train_fraction * n))
        n_train = min(max(n_train, 1), n - 1)
        is_train = np.zeros(n, dtype=bool)
        is_train[np.argsort(train_u, kind="stable")[:n_train]] = True

        final = t == config.n_periods
        if final and config.final_period_unlabeled:
            target = np.full(n, np.nan)
            is_train = np.zeros(n, dtype=bool)

        periods.append(PeriodData(
            pid=PeriodId(ordinal=t, label=label),
            obs_ids=[f"s{i:04d}" for i in range(n)],
            monthly=monthly,
            is_train=is_train,
            target=target,
        ))
        label = next_label(label)

    panel = Panel(periods, Provenance(source="synthgen", imputation="raw",
                                      generator=f"splitmix64(seed={config.seed})"))
    panel.validate()
    truth = GroundTruth(
        coefficients=coeffs,
        regime_of_period={t: config.regime_of_period[t - 1]
                          for t in range(1, config.n_periods + 1)},
        labels={p.pid.ordinal: p.pid.label for p in panel.periods},
    )
    return panel, truth
