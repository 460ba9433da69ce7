"""Synthetic cohort generator.

The real multicenter cohort is private, so benchmarks run on synthetic cases:
marginals are drawn from configurable clinical-range distributions, and the
6-month outcome comes from a latent-outcome model, the rule engine's expected
improvement plus logistic noise, calibrated so that default label prevalence
lands near the published test prevalence (~0.81).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .cohort import CohortError, PatientRecord
from .heuristic import predict_heuristic


@dataclass(frozen=True)
class GeneratorConfig:
    # Rounded, clamped normals for the severity scores and age.
    snot22_mean: float = 50.0
    snot22_sd: float = 20.0
    snot22_clamp: tuple[int, int] = (9, 110)
    ct_mean: float = 12.0
    ct_sd: float = 5.0
    ct_clamp: tuple[int, int] = (0, 24)
    endo_mean: float = 7.0
    endo_sd: float = 4.0
    endo_clamp: tuple[int, int] = (0, 20)
    age_mean: float = 50.0
    age_sd: float = 14.0
    age_clamp: tuple[int, int] = (18, 90)
    # Bernoulli rates for binary history/comorbidity fields.
    rates: dict = field(
        default_factory=lambda: {
            "crs_polyps": 0.35,
            "previous_surgery": 0.30,
            "allergy_testing": 0.40,
            "septal_deviation": 0.30,
            "depression": 0.20,
            "fibromyalgia": 0.08,
            "smoker": 0.15,
            "copd": 0.10,
            "asthma": 0.20,
            "osa": 0.15,
            "diabetes": 0.12,
            "gerd": 0.20,
            "asa_intolerance": 0.05,
        }
    )
    p_male: float = 0.45
    insurance_probs: dict = field(
        default_factory=lambda: {"None": 0.08, "Medicaid": 0.22, "Medicare": 0.25, "Private": 0.45}
    )
    income_probs: dict = field(
        default_factory=lambda: {
            "<25k": 0.15, "25k-50k": 0.25, "50k-75k": 0.25, "75k-100k": 0.20, ">100k": 0.15,
        }
    )
    race_probs: dict = field(
        default_factory=lambda: {"White": 0.70, "Black": 0.15, "Asian": 0.07, "Other": 0.08}
    )
    # Latent outcome: actual reduction = delta + shift + Logistic(0, noise_scale).
    improvement_shift: float = 1.5
    improvement_noise_scale: float = 2.5


def _check_config(params: GeneratorConfig) -> None:
    if not (9 <= params.snot22_clamp[0] <= params.snot22_clamp[1] <= 110):
        raise CohortError(f"snot22_clamp outside [0,110]: {params.snot22_clamp}")
    if not (0 <= params.ct_clamp[0] <= params.ct_clamp[1] <= 24):
        raise CohortError(f"ct_clamp outside [0,24]: {params.ct_clamp}")
    if not (0 <= params.endo_clamp[0] <= params.endo_clamp[1] <= 20):
        raise CohortError(f"endo_clamp outside [0,20]: {params.endo_clamp}")
    if params.age_clamp[0] < 18:
        raise CohortError(f"age_clamp below 18: {params.age_clamp}")
    for name, rate in params.rates.items():
        if not (0.0 <= rate <= 1.0):
            raise CohortError(f"rate for {name} outside [0,1]: {rate}")


def _rounded_clamped_normal(rng, n, mean, sd, clamp):
    lo, hi = clamp
    return np.clip(np.rint(rng.normal(mean, sd, size=n)), lo, hi).astype(int)


def _categorical(rng, n, probs: dict):
    names = list(probs)
    p = np.array([probs[k] for k in names], dtype=float)
    p = p / p.sum()
    return [names[i] for i in rng.choice(len(names), size=n, p=p)]


def generate_synthetic(
    n: int, seed: int, params: GeneratorConfig | None = None
) -> list[PatientRecord]:
    """Generate ``n`` labeled synthetic records, deterministic per seed."""
    if n < 1:
        raise CohortError(f"n must be >= 1, got {n}")
    params = params or GeneratorConfig()
    _check_config(params)
    rng = np.random.default_rng(seed)

    snot = _rounded_clamped_normal(rng, n, params.snot22_mean, params.snot22_sd, params.snot22_clamp)
    ct = _rounded_clamped_normal(rng, n, params.ct_mean, params.ct_sd, params.ct_clamp)
    endo = _rounded_clamped_normal(rng, n, params.endo_mean, params.endo_sd, params.endo_clamp)
    age = _rounded_clamped_normal(rng, n, params.age_mean, params.age_sd, params.age_clamp)
    sex = np.where(rng.random(n) < params.p_male, "Male", "Female")
    flags = {name: rng.random(n) < rate for name, rate in params.rates.items()}
    insurance = _categorical(rng, n, params.insurance_probs)
    income = _categorical(rng, n, params.income_probs)
    race = _categorical(rng, n, params.race_probs)
    noise = rng.logistic(0.0, params.improvement_noise_scale, size=n)

    records = []
    for i in range(n):
        rec = PatientRecord(
            patient_id=f"syn_{seed}_{i:05d}",
            snot22_baseline=int(snot[i]),
            age=int(age[i]),
            sex=str(sex[i]),
            ct_total=int(ct[i]),
            endoscopy_total=int(endo[i]),
            insurance=insurance[i],
            income_bracket=income[i],
            race=race[i],
            **{name: bool(arr[i]) for name, arr in flags.items()},
        )
        delta = predict_heuristic(rec).adjusted_improvement
        reduction = delta + params.improvement_shift + noise[i]
        six_mo = int(np.clip(np.rint(rec.snot22_baseline - reduction), 0, 110))
        records.append(replace(rec, snot22_6mo=six_mo))
    return records
