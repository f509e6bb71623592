"""Quick check that the extension loads and agrees with itself."""

import json
import math

import pyqtmlab as q

v = q.ValueProfile([[6.0, 0.0], [3.0, 0.0], [0.0, 1.0], [2.0, 0.5]])
params = q.MechanismParams.half_max(v)
eq = q.solve_equilibrium(v, params)
assert eq.certified(), eq
assert abs(sum(eq.A)) < 1e-12
assert abs(sum(eq.p) - 1.0) < 1e-12

a1, p1 = q.solve_two_alt(10.0, 0.0, 0.5)
assert abs(a1 - 1.019324009266894594) < 1e-12
assert abs(p1 - 0.884795528915436517) < 1e-12

assert abs(q.bound_spread(32.0) - 0.670123022306776435) < 1e-12
assert abs(q.bound_squap(100.0, 1.0) - 0.704054067707757034) < 1e-12

pay = q.settle(eq.votes, params.c, redistribute=True)
assert abs(sum(pay["net"])) < 1e-12

reports = q.certify(eq, v, params)
assert all(r["holds"] for r in reports)

w = q.generate_with_spread(3, 20.0, 4)
eqs = q.solve_all_equilibria(w, q.MechanismParams.half_max(w), starts=4, seed=1)
worst = min(q.ppoa(e.p, sorted(w.aggregates(), reverse=True)) for e in eqs)
assert worst >= 1.0 / 3.0 - 1e-9

u = q.ValueProfile([[1.0, 0.0], [0.0, 0.6], [0.2, 0.1]])
run = json.loads(q.run_squap(u, [0.5, 1.5], json.dumps({"aggregation": "market", "epsilon": 0.01})))
assert run["certified"]
assert math.isclose(sum(run["decision"]), 1.0)

try:
    q.ValueProfile([[1.0, -1.0]])
except ValueError:
    pass
else:
    raise AssertionError("negative values accepted")

print("ok", eq.p, len(reports), "bounds")
