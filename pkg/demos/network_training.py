"""Train a small tanh network on extrapolated lattice data and inspect it.

Run with ``python3 demos/network_training.py``. Takes about half a minute.
"""
import tempfile
from pathlib import Path

import numpy as np

from dlhoqmc import (Architecture, HolomorphyBudget, TrainConfig, TrainingSet, check_holomorphy,
                     clamp_holomorphy, epl_rule, init_xavier, load_model, make_target,
                     save_model, train)
from dlhoqmc.harness import estimate_generalization
from dlhoqmc.lattice import rule_point_sets

d, m = 8, 7
target = make_target("rational", d)

# Training data: the two nested lattices of an EPL rule.
(_, x1), (_, x2) = rule_point_sets(epl_rule(m, d))
data = TrainingSet.epl(x1, target(x1), x2, target(x2))

# Test data: a finer EPL rule stands in for the integral over [0,1]^d.
test_pts = [x for _, x in rule_point_sets(epl_rule(m + 3, d))]
test = TrainingSet(test_pts, [target(x) for x in test_pts], (2.0, -1.0))

net = init_xavier(Architecture.constant_width(d, depth=4, width=12), seed=0)
res = train(net, data, TrainConfig(lr=1e-3, lam=1e-6, epochs=3000))
print("loss every 500 epochs:", " ".join(f"{v:.2e}" for v in res.losses[::500]))
print(f"generalization error {estimate_generalization(res.params, test):.3e}")

# The weight-size conditions that make the network holomorphic in the
# parameters, with the same decay sequence as the target.
budget = HolomorphyBudget.for_activation("tanh", target.beta)
print(check_holomorphy(res.params, budget))
clamped = clamp_holomorphy(res.params, budget)
print("after clamping:", "passes" if check_holomorphy(clamped, budget).passed else "fails")

# Models are stored as JSON and round-trip bit for bit.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "net.json"
    save_model(res.params, path, {"note": "demo"})
    assert load_model(path).equals(res.params)
    print("saved and reloaded", path.name)
