import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cddro.ambiguity import PerturbationConfig, generate_candidates, select_ambiguity  # noqa: E402
from cddro.dro_models import SdConfig, SdProfile  # noqa: E402
from cddro.instance import GeneratorConfig, generate_instance  # noqa: E402


def tiny_case(seed: int):
    """A random instance within the oracle's reach: <= 3 scenarios, <= 3
    origins and destinations, <= 2 doors per side, <= 2 levels, 1-3 members."""
    r = random.Random(seed)
    n_sc, nM, nN = r.randint(1, 3), r.randint(1, 3), r.randint(1, 3)
    nI, nJ = r.randint(1, 2), r.randint(1, 2)
    shape = [(n_sc, nM, nN, nI, nJ, r.randint(1, nM * nN))]
    cfg = GeneratorConfig(levels=(0.6, 1.0)[:r.randint(1, 2)],
                          capacity_slack=r.choice([0.5, 0.8, 1.25]))
    inst = generate_instance(seed, shape, cfg)
    cands = generate_candidates(inst, PerturbationConfig(candidates_per_family=2, seed=seed))
    members = select_ambiguity(cands.members, float("inf"), r.randint(1, 3))
    return inst, members


def sd_profile_for(inst, members, rn, seed: int) -> SdConfig:
    """One profile placed inside the RN optimum's cost range so it tends to bind."""
    r = random.Random(seed)
    c1 = rn.design.cost(inst)
    p = rn.gamma_member
    totals = sorted(c1 + rn.costs[p, s] for s in members[p].scenarios)
    thr = totals[0] + r.uniform(0, 1) * (totals[-1] - totals[0])
    exp = sum(members[p].weights[s] * max(0.0, c1 + rn.costs[p, s] - thr) for s in members[p].scenarios)
    cap = max(totals[-1] - thr, 0.0) * r.uniform(0.5, 1.2)
    return SdConfig([SdProfile(thr, cap, min(cap, exp * r.uniform(0.3, 1.0)))])


@pytest.fixture(scope="session")
def tiny_cases():
    return [tiny_case(s) for s in range(30)]


@pytest.fixture(scope="session")
def rn_optima(tiny_cases):
    """Oracle RN optimum for each tiny case."""
    from cddro.oracle import enumerate_rn
    return [enumerate_rn(inst, members) for inst, members in tiny_cases]
