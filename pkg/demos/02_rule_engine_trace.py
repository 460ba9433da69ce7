"""Walkthrough: the multiplicative rule engine, factor by factor.

Runs the transparent clinical heuristic on two contrasting cases and prints
the full multiplier trace behind each recommendation.

Run:  python3 demos/02_rule_engine_trace.py
"""

from crsbench.cohort import PatientRecord
from crsbench.heuristic import predict_heuristic

COMMON = dict(
    sex="Female", allergy_testing=False, septal_deviation=False,
    fibromyalgia=False, copd=False, osa=False, diabetes=False, gerd=False,
    asa_intolerance=False, insurance="Private", income_bracket="50k-75k", race="White",
)

CASES = {
    "favorable: severe disease, clean history": PatientRecord(
        patient_id="demo-a", snot22_baseline=72, age=38, ct_total=14,
        endoscopy_total=9, crs_polyps=True, previous_surgery=False,
        depression=False, smoker=False, asthma=False, **COMMON,
    ),
    "guarded: mild disease, heavy comorbidity": PatientRecord(
        patient_id="demo-b", snot22_baseline=31, age=68, ct_total=5,
        endoscopy_total=3, crs_polyps=False, previous_surgery=True,
        depression=True, smoker=True, asthma=True, **COMMON,
    ),
}


def main():
    for title, record in CASES.items():
        pred = predict_heuristic(record)
        print(f"\n=== {title} ===")
        print(f"base expected improvement: 0.45 x {record.snot22_baseline} "
              f"= {pred.base_improvement:.2f}")
        for name, mult in pred.factor_trace:
            print(f"  x {mult:<5} ({name})")
        print(f"adjusted improvement: {pred.adjusted_improvement:.3f}")
        print(f"predicted 6-month SNOT-22: {pred.predicted_6mo:.1f}")
        print(f"recommendation: {pred.label}  confidence: {pred.confidence.value}")


if __name__ == "__main__":
    main()
