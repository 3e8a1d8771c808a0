#!/usr/bin/env python3
"""Convert the UCI Statlog German credit file (german.data) into the CSV and
schema JSON consumed by `fairnet`.

Usage: scripts/prepare_german.py data/german/german.data data/german
"""
import csv
import json
import sys

COLUMNS = [
    "status", "duration", "credit_history", "purpose", "credit_amount",
    "savings", "employment", "installment_rate", "personal_status",
    "other_debtors", "residence_since", "property", "age",
    "installment_plans", "housing", "existing_credits", "job",
    "people_liable", "telephone", "foreign_worker", "credit",
]
NUMERIC = {"duration", "credit_amount", "installment_rate", "residence_since",
           "existing_credits", "people_liable", "age"}
SENSITIVE = {"age", "personal_status", "foreign_worker"}


def main(src, out_dir):
    rows = []
    with open(src) as f:
        for line in f:
            parts = line.split()
            if not parts:
                continue
            assert len(parts) == len(COLUMNS), line
            rec = dict(zip(COLUMNS, parts))
            # 1 = good credit risk, 2 = bad credit risk
            rec["credit"] = "1" if rec["credit"] == "1" else "0"
            rows.append(rec)

    features = []
    for name in COLUMNS[:-1]:
        values = [r[name] for r in rows]
        spec = {"name": name, "sensitive": name in SENSITIVE}
        if name in NUMERIC:
            nums = [int(v) for v in values]
            if name == "age":
                spec.update(kind="int", lo=min(nums), hi=max(nums))
            else:
                spec.update(kind="real", lo=min(nums), hi=max(nums))
        else:
            cats = sorted(set(values), key=lambda c: (len(c), c))
            spec.update(kind="categorical", categories=cats)
        features.append(spec)

    with open(f"{out_dir}/schema.json", "w") as f:
        json.dump({"features": features, "label": "credit"}, f, indent=2)
        f.write("\n")
    with open(f"{out_dir}/german.csv", "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
