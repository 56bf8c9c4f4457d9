#!/usr/bin/env python3
"""Regenerates the MATPOWER case text and reference solutions in this directory.

Requires PYPOWER (pip install pypower). The reference values are produced by
PYPOWER's polar Newton-Raphson solver and its own Y-bus builder, so they are
independent of the C++ implementation they check.
"""
import json
import os

import numpy as np
from pypower.api import case14, case118, ppoption, runpf
from pypower.ext2int import ext2int
from pypower.makeYbus import makeYbus

HERE = os.path.dirname(os.path.abspath(__file__))


def fmt_row(row):
    return "\t" + "\t".join(repr(float(v)) if not float(v).is_integer() else str(int(v)) for v in row) + ";"


def write_matpower(name, ppc):
    lines = [f"function mpc = {name}", "%% generated from PYPOWER case data", "mpc.version = '2';", ""]
    lines.append(f"mpc.baseMVA = {ppc['baseMVA']:g};")
    for table in ("bus", "gen", "branch", "gencost"):
        lines.append("")
        lines.append(f"%% {table} data")
        lines.append(f"mpc.{table} = [")
        lines.extend(fmt_row(r) for r in ppc[table])
        lines.append("];")
    with open(os.path.join(HERE, f"{name}.m"), "w") as f:
        f.write("\n".join(lines) + "\n")


def reference(name, ppc):
    opt = ppoption(PF_TOL=1e-12, PF_MAX_IT=50, VERBOSE=0, OUT_ALL=0, ENFORCE_Q_LIMS=0)
    res, ok = runpf(ppc, opt)
    assert ok
    bus = res["bus"]
    out = {
        "case": name,
        "n_bus": int(ppc["bus"].shape[0]),
        "n_gen": int(ppc["gen"].shape[0]),
        "n_branch": int(ppc["branch"].shape[0]),
        "bus_ids": [int(b) for b in bus[:, 0]],
        "vm": [float(v) for v in bus[:, 7]],
        "va_rad": [float(np.deg2rad(a)) for a in bus[:, 8]],
    }
    i2e = ext2int(ppc)
    ybus, _, _ = makeYbus(i2e["baseMVA"], i2e["bus"], i2e["branch"])
    ybus = ybus.tocoo()
    out["ybus"] = sorted(
        [int(r), int(c), float(v.real), float(v.imag)] for r, c, v in zip(ybus.row, ybus.col, ybus.data)
    )
    with open(os.path.join(HERE, f"{name}_reference.json"), "w") as f:
        json.dump(out, f, indent=1)


for name, fn in (("case14", case14), ("case118", case118)):
    ppc = fn()
    write_matpower(name, ppc)
    reference(name, fn())
