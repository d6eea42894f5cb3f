"""Regenerate the bundled example CSVs under src/clpbounds/data/."""

from pathlib import Path

import numpy as np

from clpbounds.dataio import write_table
from clpbounds.simulation import LatentNormalDGP, harmful_effect_dgp

OUT = Path(__file__).resolve().parents[1] / "src" / "clpbounds" / "data"


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    dgp = LatentNormalDGP(L=3, rho=0.9)
    data, _, _ = dgp.sample(200, np.random.default_rng(7))
    write_table(OUT / "joint_po_200.csv", data, dgp.true_nuisance(data.x[:, 0]))

    harm = harmful_effect_dgp(L=4)
    data, _, _ = harm.sample(500, np.random.default_rng(11))
    write_table(OUT / "harmful_effect.csv", data, harm.true_nuisance(data.x[:, 0]))


if __name__ == "__main__":
    main()
