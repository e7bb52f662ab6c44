#!/usr/bin/env python3
"""Rebuild the a9a binary encoding of the UCI Adult training file.

Continuous attributes are split into quantile bins (two bins, zero / nonzero,
for the capital gain and loss columns); each categorical value becomes one
indicator feature. Missing values (`?`) produce no active feature. The
resulting feature layout has 123 columns in the usual a9a order.

usage: adult_to_a9a.py adult.data out.gz
"""

import gzip
import io
import sys

import numpy as np

CATEGORIES = {
    "workclass": "Private, Self-emp-not-inc, Self-emp-inc, Federal-gov, Local-gov, State-gov, Without-pay, Never-worked",
    "education": "Bachelors, Some-college, 11th, HS-grad, Prof-school, Assoc-acdm, Assoc-voc, 9th, 7th-8th, 12th, Masters, 1st-4th, 10th, Doctorate, 5th-6th, Preschool",
    "marital-status": "Married-civ-spouse, Divorced, Never-married, Separated, Widowed, Married-spouse-absent, Married-AF-spouse",
    "occupation": "Tech-support, Craft-repair, Other-service, Sales, Exec-managerial, Prof-specialty, Handlers-cleaners, Machine-op-inspct, Adm-clerical, Farming-fishing, Transport-moving, Priv-house-serv, Protective-serv, Armed-Forces",
    "relationship": "Wife, Own-child, Husband, Not-in-family, Other-relative, Unmarried",
    "race": "White, Asian-Pac-Islander, Amer-Indian-Eskimo, Other, Black",
    "sex": "Female, Male",
    "native-country": "United-States, Cambodia, England, Puerto-Rico, Canada, Germany, Outlying-US(Guam-USVI-etc), India, Japan, Greece, South, China, Cuba, Iran, Honduras, Philippines, Italy, Poland, Jamaica, Vietnam, Mexico, Portugal, Ireland, France, Dominican-Republic, Laos, Ecuador, Taiwan, Haiti, Columbia, Hungary, Guatemala, Nicaragua, Scotland, Thailand, Yugoslavia, El-Salvador, Trinadad&Tobago, Peru, Hong, Holand-Netherlands",
}

# (column name, kind, width)
LAYOUT = [
    ("age", "quantile", 5),
    ("workclass", "category", 8),
    ("fnlwgt", "quantile", 5),
    ("education", "category", 16),
    ("education-num", "quantile", 5),
    ("marital-status", "category", 7),
    ("occupation", "category", 14),
    ("relationship", "category", 6),
    ("race", "category", 5),
    ("sex", "category", 2),
    ("capital-gain", "nonzero", 2),
    ("capital-loss", "nonzero", 2),
    ("hours-per-week", "quantile", 5),
    ("native-country", "category", 41),
]


def read_rows(path):
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            fields = [f.strip() for f in line.split(",")]
            if len(fields) != 15:
                raise ValueError(f"bad record: {line!r}")
            rows.append(fields)
    return rows


def main():
    src, dst = sys.argv[1], sys.argv[2]
    rows = read_rows(src)
    columns = list(zip(*rows))

    encoders = []
    for col, (name, kind, width) in enumerate(LAYOUT):
        if kind == "category":
            values = [v.strip() for v in CATEGORIES[name].split(",")]
            assert len(values) == width, name
            lookup = {v: i for i, v in enumerate(values)}
            encoders.append(lambda v, lookup=lookup: lookup.get(v))
        elif kind == "nonzero":
            encoders.append(lambda v: 0 if float(v) == 0.0 else 1)
        else:
            data = np.array([float(v) for v in columns[col]])
            cuts = np.quantile(data, [0.2, 0.4, 0.6, 0.8])
            encoders.append(
                lambda v, cuts=cuts: int(np.searchsorted(cuts, float(v), side="right"))
            )

    with open(dst, "wb") as raw_out, gzip.GzipFile(
        filename="", mode="wb", fileobj=raw_out, mtime=0
    ) as gz:
        out = io.TextIOWrapper(gz, encoding="ascii", newline="\n")
        for fields in rows:
            label = "+1" if fields[14].startswith(">50K") else "-1"
            feats = []
            offset = 0
            for col, (_, _, width) in enumerate(LAYOUT):
                raw = fields[col]
                if raw != "?":
                    slot = encoders[col](raw)
                    if slot is not None:
                        feats.append(offset + slot + 1)
                offset += width
            out.write(label + " " + " ".join(f"{i}:1" for i in feats) + " \n")
        out.flush()
        out.detach()
    assert offset == 123


if __name__ == "__main__":
    main()
