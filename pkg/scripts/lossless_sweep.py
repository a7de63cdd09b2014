"""Lossless success probability versus fidelity for direct and feedback heralding.

Writes one table per photon number with columns zeta, gamma, P_DH, P_FH, F_DH, F_FH.
"""

import argparse
from pathlib import Path

from heraldloop.analysis import emit_table
from heraldloop.protocol import HeraldPattern, LoopConfig, sweep_fp, zeta_grid

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("--out", default="results", help="output directory")
parser.add_argument("--grid", default="0.05:0.35:0.01", help="start:stop:step")
parser.add_argument("--convention", default="a", choices=("a", "b"))
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)
zetas = zeta_grid(*map(float, args.grid.split(":")))
cfg = LoopConfig.lossless(float(zetas[0]))

for n in (2, 3, 4):
    dh = sweep_fp(cfg, HeraldPattern.dh(n), zetas, args.convention)
    fh = sweep_fp(cfg, HeraldPattern.fh(n), zetas, args.convention)
    rows = [
        {"zeta": d.zeta, "gamma": d.gamma, "P_DH": d.P, "P_FH": f.P, "F_DH": d.F, "F_FH": f.F}
        for d, f in zip(dh, fh)
    ]
    meta = {"config": cfg.to_dict(), "n": n, "convention": args.convention}
    path = out / f"lossless_n{n}.csv"
    emit_table(rows, path, columns=tuple(rows[0]), meta=meta)
    i = min(range(len(zetas)), key=lambda j: abs(zetas[j] - 0.3))
    print(f"n={n}: P_FH/P_DH at zeta={zetas[i]:.2f} is {fh[i].P / dh[i].P:.3g} -> {path}")
