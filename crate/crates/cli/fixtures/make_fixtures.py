"""Regenerates the CLI fixtures. numpy.random.default_rng seeds: 4101 (clean), 4102 (contaminated)."""
import json

import numpy as np


def write(path, y, x):
    with open(path, "w") as f:
        f.write("y,x1,x2\n")
        for yi, xi in zip(y, x):
            f.write(f"{float(yi)!r},1,{float(xi)!r}\n")


rng = np.random.default_rng(4101)
x = np.round(rng.uniform(-2, 2, 40), 3)
y = 1.0 + 2.0 * x + rng.normal(0, 1, 40)
write("normal.csv", y, x)
X = np.column_stack([np.ones_like(x), x])
beta, *_ = np.linalg.lstsq(X, y, rcond=None)
phi = float(np.sum((y - X @ beta) ** 2) / len(y))
with open("normal_ols.json", "w") as f:
    json.dump({"beta": [float(b) for b in beta], "phi": phi}, f, indent=2)
    f.write("\n")

# 10% of responses shifted by +15; generating beta = (1, 2), phi = 1
rng = np.random.default_rng(4102)
x = np.round(rng.uniform(-2, 2, 100), 3)
y = 1.0 + 2.0 * x + rng.normal(0, 1, 100)
bad = rng.choice(100, 10, replace=False)
y[bad] += 15.0
write("normal_contaminated.csv", y, x)
