"""Replication studies: fixed-length and fixed-regeneration designs, feasibility table.

Replication ``j`` draws everything from ``RandomStream(seed, j)`` and its
substreams, so results do not depend on execution order or worker count.
Preliminary-run constants and reference values use dedicated substreams of
replication 0's key that no replication touches.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import glmm, toy
from .errors import ConfigurationError, InsufficientRegenerationsError
from .regen import TourAccumulator, rs_confidence_interval, tour_arrays

PRELIM_SUB = 5
REFERENCE_SUB = 6
DEFAULT_BUDGET = 100_000_000


class StudyConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: Literal["toy", "glmm"]
    sampler: Literal["mhis", "cwis"]
    model_params: dict = Field(default_factory=dict)
    n: Optional[int] = Field(default=None, ge=1)
    R: Optional[int] = Field(default=None, ge=1)
    replications: int = Field(default=1, ge=1)
    level: float = Field(default=0.95, gt=0, lt=1)
    seed: int = Field(default=0, ge=0)
    workers: int = Field(default=1, ge=1)
    prelim_n: Optional[int] = Field(default=None, ge=2)
    budget: int = Field(default=DEFAULT_BUDGET, ge=1)
    truth: Optional[float] = None
    reference_n: int = Field(default=100_000_000, ge=1000)

    @model_validator(mode="after")
    def _one_design(self):
        if (self.n is None) == (self.R is None):
            raise ValueError("set exactly one of n (fixed length) or R (fixed regenerations)")
        if self.model == "glmm" and self.sampler != "cwis":
            raise ValueError("regeneration is implemented for the glmm cwis sampler only")
        return self

    @property
    def design(self) -> str:
        return "fixed-n" if self.n is not None else "fixed-R"

    @classmethod
    def load(cls, source: Union[str, dict]) -> "StudyConfig":
        try:
            if isinstance(source, dict):
                return cls.model_validate(source)
            with open(source) as fh:
                return cls.model_validate(json.load(fh))
        except (ValidationError, json.JSONDecodeError) as exc:
            raise ConfigurationError(str(exc)) from None
        except OSError as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from None


@dataclass
class StudyRecord:
    replication: int
    estimate: float
    half_width: float
    covered: bool
    tours: int
    chain_length: int  # sum of complete tour lengths
    steps: int  # steps simulated, partial tours included
    mean_tour_length: float
    status: str = "ok"


@dataclass
class StudySummary:
    design: str
    n_or_R: int
    replications: int
    used: int
    excluded: int
    truth: float
    mean_half_width: float
    sd_half_width: float
    coverage: float
    coverage_se: float
    mean_tours: float
    sd_tours: float
    mean_chain_length: float
    sd_chain_length: float
    mean_tour_length: float


@dataclass
class StudyResult:
    config: StudyConfig
    records: list
    summary: StudySummary
    constants: dict

    def header(self) -> dict:
        return {"config": self.config.model_dump(), "constants": self.constants}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            fields = list(StudyRecord.__dataclass_fields__)
            w = csv.writer(fh)
            w.writerow(fields)
            for r in self.records:
                w.writerow([getattr(r, f) for f in fields])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("# " + json.dumps(self.header(), sort_keys=True) + "\n")
            row = asdict(self.summary)
            w = csv.writer(fh)
            w.writerow(list(row))
            w.writerow(list(row.values()))


# -- model set-up -------------------------------------------------------------------

def toy_model_for(sampler: str, params: dict) -> toy.ToyModel:
    """Toy model from config keys; B defaults to (0, inf) for MHIS and (0.01, inf) for CWIS."""
    cfg = {"m": 10, "y_bar": 10.2, "s2": 6.5, "A": (0.0, 100.0)}
    cfg.update({k: v for k, v in params.items() if k in ("m", "y_bar", "s2", "A", "B")})
    cfg.setdefault("B", (0.0, "inf") if sampler == "mhis" else (0.01, "inf"))
    return toy.ToyModel.from_config(cfg)


def _auto(value):
    return value is None or value == "auto"


def toy_constants(model: toy.ToyModel, sampler: str, params: dict, seed: int, prelim_n: Optional[int]) -> dict:
    rng = toy.RandomStream(seed, 0, PRELIM_SUB)
    n = prelim_n or 10_000
    if sampler == "cwis":
        tt = params.get("theta_tilde")
        tt = toy.default_theta_tilde(model, rng, n) if _auto(tt) else float(tt)
        if not model.in_B(tt):
            raise ConfigurationError(f"theta_tilde={tt} is not in B={model.B}")
        return {"theta_tilde": tt}
    c = params.get("c")
    if _auto(c):
        return {"log_c": toy.default_log_c(model, rng, n)}
    if not float(c) > 0:
        raise ConfigurationError("c must be positive")
    return {"log_c": math.log(float(c))}


def glmm_constants(model: glmm.GlmmModel, seed: int, prelim_n: Optional[int]) -> glmm.PreliminaryConstants:
    return glmm.preliminary_constants(model, glmm.RandomStream(seed, 0, PRELIM_SUB), prelim_n or 100_000)


def glmm_reference(model: glmm.GlmmModel, consts: glmm.PreliminaryConstants, n: int, seed: int,
                   level: float = 0.95):
    """Long CWIS run whose regenerative estimate serves as the truth; returns the estimate object."""
    acc = TourAccumulator()
    left = n
    for out in glmm.glmm_chunks(model, "cwis", glmm.RandomStream(seed, 0, REFERENCE_SUB), log_c=consts.log_c,
                                chunk=min(glmm.CHUNK * 4, n)):
        take = min(left, out.g.size)
        acc.feed(out.g[:take], out.delta[:take])
        left -= take
        if left == 0:
            break
    return rs_confidence_interval(acc.arrays(), level)


# -- replications -------------------------------------------------------------------

def _record_from_tours(j, N, S, truth, level, steps, status="ok"):
    if N.size < 2:
        return StudyRecord(j, math.nan, math.nan, False, int(N.size), int(N.sum()), steps, math.nan,
                           "insufficient-regenerations")
    est = rs_confidence_interval((N, S), level)
    return StudyRecord(j, est.g_bar, est.half_width, bool(abs(est.g_bar - truth) <= est.half_width),
                       int(N.size), int(N.sum()), steps, float(N.mean()), status)


def _chunks_for(cfg: StudyConfig, model, consts: dict, j: int, chunk: Optional[int] = None):
    rng = toy.RandomStream(cfg.seed, j)
    if cfg.model == "toy":
        start = tuple(cfg.model_params.get("start", toy.DEFAULT_START))
        return toy.toy_chunks(model, cfg.sampler, rng, start=start, chunk=chunk or toy.CHUNK, **consts)
    return glmm.glmm_chunks(model, "cwis", rng, log_c=consts["log_c"], chunk=chunk or glmm.CHUNK)


def run_replication(cfg: StudyConfig, model, consts: dict, truth: float, j: int) -> StudyRecord:
    if cfg.design == "fixed-n":
        gen = _chunks_for(cfg, model, consts, j, chunk=min(cfg.n, 1 << 16))
        gs, ds, left = [], [], cfg.n
        while left:
            out = next(gen)
            take = min(left, out.g.size)
            gs.append(out.g[:take])
            ds.append(out.delta[:take])
            left -= take
        g, delta = np.concatenate(gs), np.concatenate(ds)
        try:
            N, S = tour_arrays(g, delta)
        except InsufficientRegenerationsError:
            N, S = np.zeros(0, dtype=np.int64), np.zeros(0)
        return _record_from_tours(j, N, S, truth, cfg.level, cfg.n)
    acc = TourAccumulator()
    for out in _chunks_for(cfg, model, consts, j):
        room = cfg.budget - acc.steps
        acc.feed(out.g[:room], out.delta[:room], max_tours=cfg.R)
        if acc.count >= cfg.R:
            break
        if acc.steps >= cfg.budget:
            N, S = acc.arrays()
            rec = _record_from_tours(j, N, S, truth, cfg.level, acc.steps)
            rec.status = "budget-exceeded"
            return rec
    N, S = acc.arrays()
    return _record_from_tours(j, N, S, truth, cfg.level, acc.steps)


def summarize(cfg: StudyConfig, records: list, truth: float) -> StudySummary:
    used = [r for r in records if r.status == "ok"]
    n_or_R = cfg.n if cfg.n is not None else cfg.R
    if not used:
        # failures are recorded per replication; the summary is then undefined, not an error
        nan = math.nan
        return StudySummary(cfg.design, n_or_R, len(records), 0, len(records), truth, nan, nan, nan, nan,
                            nan, nan, nan, nan, nan)
    hw = np.array([r.half_width for r in used])
    cov = np.array([r.covered for r in used], dtype=float)
    tours = np.array([r.tours for r in used], dtype=float)
    lengths = np.array([r.chain_length for r in used], dtype=float)
    p = cov.mean()
    sd = (lambda a: float(a.std(ddof=1)) if a.size > 1 else 0.0)
    return StudySummary(
        design=cfg.design, n_or_R=n_or_R,
        replications=len(records), used=len(used), excluded=len(records) - len(used), truth=truth,
        mean_half_width=float(hw.mean()), sd_half_width=sd(hw),
        coverage=float(p), coverage_se=math.sqrt(p * (1 - p) / len(used)),
        mean_tours=float(tours.mean()), sd_tours=sd(tours),
        mean_chain_length=float(lengths.mean()), sd_chain_length=sd(lengths),
        mean_tour_length=float(lengths.sum() / tours.sum()),
    )


def prepare(cfg: StudyConfig):
    """Model, chain constants, truth and a JSON-able constants record for a study."""
    if cfg.model == "toy":
        model = toy_model_for(cfg.sampler, cfg.model_params)
        consts = toy_constants(model, cfg.sampler, cfg.model_params, cfg.seed, cfg.prelim_n)
        truth = cfg.truth if cfg.truth is not None else toy.oracle_posterior_mean_icv(model)
        info = {"model": model.to_dict(), **consts, "truth": truth, "truth_source":
                "given" if cfg.truth is not None else "quadrature"}
        return model, consts, truth, info
    model = glmm.model_from_config(cfg.model_params)
    pre = glmm_constants(model, cfg.seed, cfg.prelim_n)
    info = {"model": model.to_dict(), "preliminary": pre.to_dict()}
    if cfg.truth is not None:
        truth = cfg.truth
        info.update(truth=truth, truth_source="given")
    else:
        ref = glmm_reference(model, pre, cfg.reference_n, cfg.seed, cfg.level)
        truth = ref.g_bar
        info.update(truth=truth, truth_source=f"reference run of {cfg.reference_n} steps",
                    truth_mcse=ref.mcse, truth_tours=ref.R)
    return model, {"log_c": pre.log_c}, truth, info


def run_study(cfg: Union[StudyConfig, dict, str]) -> StudyResult:
    if not isinstance(cfg, StudyConfig):
        cfg = StudyConfig.load(cfg)
    model, consts, truth, info = prepare(cfg)
    reps = range(cfg.replications)
    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            records = list(pool.map(lambda j: run_replication(cfg, model, consts, truth, j), reps))
    else:
        records = [run_replication(cfg, model, consts, truth, j) for j in reps]
    records.sort(key=lambda r: r.replication)
    return StudyResult(cfg, records, summarize(cfg, records, truth), info)


# -- feasibility --------------------------------------------------------------------

class FeasibilityConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model_params: dict = Field(default_factory=dict)
    n: int = Field(default=1_000_000, ge=1)
    prelim_n: int = Field(default=100_000, ge=2)
    b_multiplier: list = Field(default_factory=lambda: list(glmm.FEASIBILITY_MULTIPLIERS))
    tau2: Union[float, Literal["auto"]] = "auto"
    seed: int = Field(default=0, ge=0)

    @classmethod
    def load(cls, source: Union[str, dict]) -> "FeasibilityConfig":
        try:
            if isinstance(source, dict):
                return cls.model_validate(source)
            with open(source) as fh:
                data = json.load(fh)
        except (json.JSONDecodeError, OSError) as exc:
            raise ConfigurationError(f"cannot read config: {exc}") from None
        # accept a plain model config with the study keys mixed in
        keys = set(cls.model_fields) - {"model_params"}
        if "model_params" not in data:
            data = {**{k: v for k, v in data.items() if k in keys},
                    "model_params": {k: v for k, v in data.items() if k not in keys}}
        try:
            return cls.model_validate(data)
        except ValidationError as exc:
            raise ConfigurationError(str(exc)) from None


@dataclass
class FeasibilityRow:
    b_mult: float
    fraction_nonzero: float
    mean_nonzero_prob: float
    max_factor: float
    expected_regenerations: float  # per n steps, full regeneration probability


@dataclass
class FeasibilityResult:
    config: FeasibilityConfig
    rows: list
    accepted: int
    acceptance_rate: float
    constants: dict

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            header = {"config": self.config.model_dump(), "constants": self.constants,
                      "accepted": self.accepted, "acceptance_rate": self.acceptance_rate}
            fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
            fields = list(FeasibilityRow.__dataclass_fields__)
            w = csv.writer(fh)
            w.writerow(fields)
            for r in self.rows:
                w.writerow([getattr(r, f) for f in fields])


def run_feasibility_study(cfg: Union[FeasibilityConfig, dict, str]) -> FeasibilityResult:
    if not isinstance(cfg, FeasibilityConfig):
        cfg = FeasibilityConfig.load(cfg)
    mults = np.asarray(cfg.b_multiplier, dtype=float)
    if mults.size == 0 or np.any(mults <= 0):
        raise ConfigurationError("b multipliers must be positive")
    model = glmm.model_from_config(cfg.model_params)
    pre = glmm_constants(model, cfg.seed, cfg.prelim_n)
    feas = glmm.run_feasibility(model, pre, cfg.n, glmm.RandomStream(cfg.seed, 0), mults, cfg.tau2)
    rows = [FeasibilityRow(float(b), float(f), float(m), float(math.exp(lm)) if np.isfinite(lm) else 0.0, float(e))
            for b, f, m, lm, e in zip(mults, feas.fraction_inside, feas.mean_nonzero_factor,
                                      feas.log_factor_max, feas.regen_sum)]
    consts = {"model": model.to_dict(), "preliminary": pre.to_dict(), "tau2": glmm.rw_tau2(model, cfg.tau2)}
    return FeasibilityResult(cfg, rows, feas.accepted, feas.accepted / cfg.n, consts)
