"""Matpower case-file ingestion.

Only ``mpc.baseMVA``, ``mpc.bus`` and ``mpc.branch`` are consumed. Columns
are read positionally per the Matpower v2 format:

  bus:    BUS_I TYPE PD QD GS BS AREA VM VA BASE_KV ZONE VMAX VMIN
  branch: F_BUS T_BUS BR_R BR_X BR_B RATE_A RATE_B RATE_C TAP SHIFT STATUS ...

Loads are converted to per-unit on baseMVA; branch impedances are already
per-unit in the file. The slack bus is the (single) bus with TYPE == 3 and
its VM column sets the reference voltage. Out-of-service branches
(STATUS == 0) are dropped.
"""

import re

from .errors import CaseParseError, ModelError
from .grid import Branch, Bus, GridModel, validate_radial

_BUS_COLS = 13
_BRANCH_COLS = 11  # through the STATUS column; angle-limit columns optional


def parse_matpower(text: str) -> GridModel:
    """Parse Matpower case text into a validated radial GridModel."""
    base_mva = _parse_base_mva(text)
    bus_rows = _parse_matrix(text, "bus", min_cols=_BUS_COLS)
    branch_rows = _parse_matrix(text, "branch", min_cols=_BRANCH_COLS)

    buses = []
    slack = None
    v0 = None
    for row, line in bus_rows:
        bus_id = int(row[0])
        bus_type = int(row[1])
        buses.append(
            Bus(
                bus_id=bus_id,
                p_load=row[2] / base_mva,
                q_load=row[3] / base_mva,
                v_min=row[12],
                v_max=row[11],
            )
        )
        if bus_type == 3:
            if slack is not None:
                raise ModelError(f"multiple slack buses: {slack} and {bus_id}")
            slack = bus_id
            v0 = row[7]
    if slack is None:
        raise ModelError("no slack bus (no bus row with type 3)")

    branches = []
    for row, line in branch_rows:
        status = int(row[10])
        if status == 0:
            continue
        branches.append(Branch(from_bus=int(row[0]), to_bus=int(row[1]), r=row[2], x=row[3]))

    model = GridModel(
        buses=tuple(buses),
        branches=tuple(branches),
        slack_bus=slack,
        v0=v0,
        base_mva=base_mva,
    )
    validate_radial(model)
    return model


def serialize_grid(model: GridModel) -> str:
    """Emit the canonical Matpower-style text form of a GridModel.

    parse_matpower(serialize_grid(m)) == m for any accepted model; float
    columns use shortest round-trip representation.
    """
    out = ["function mpc = gridmodel", "mpc.version = '2';"]
    out.append(f"mpc.baseMVA = {model.base_mva!r};")
    out.append("mpc.bus = [")
    for b in model.buses:
        btype = 3 if b.bus_id == model.slack_bus else 1
        vm = model.v0 if b.bus_id == model.slack_bus else 1.0
        pd = b.p_load * model.base_mva
        qd = b.q_load * model.base_mva
        out.append(
            f"\t{b.bus_id}\t{btype}\t{pd!r}\t{qd!r}\t0\t0\t1\t{vm!r}\t0\t0\t1\t{b.v_max!r}\t{b.v_min!r};"
        )
    out.append("];")
    out.append("mpc.branch = [")
    for br in model.branches:
        out.append(f"\t{br.from_bus}\t{br.to_bus}\t{br.r!r}\t{br.x!r}\t0\t0\t0\t0\t0\t0\t1;")
    out.append("];")
    return "\n".join(out) + "\n"


def _strip_comment(line):
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_base_mva(text):
    m = re.search(r"mpc\.baseMVA\s*=\s*([0-9.eE+-]+)\s*;", text)
    if m is None:
        raise CaseParseError("missing mpc.baseMVA assignment")
    base = float(m.group(1))
    if base <= 0:
        raise CaseParseError(f"baseMVA must be positive, got {base}")
    return base


def _parse_matrix(text, name, min_cols):
    """Return [(row values, 1-based line number)] for mpc.<name> = [ ... ];"""
    lines = text.splitlines()
    opener = re.compile(rf"mpc\.{name}\s*=\s*\[")
    start = None
    for ln, raw in enumerate(lines):
        if opener.search(_strip_comment(raw)):
            start = ln
            break
    if start is None:
        raise CaseParseError(f"missing mpc.{name} matrix")

    rows = []
    # matrix body may start on the opener line after '['
    first = _strip_comment(lines[start])
    tail = first[first.index("[") + 1 :]
    pending = [(tail, start + 1)]
    closed = False
    for ln in range(start + 1, len(lines)):
        pending.append((_strip_comment(lines[ln]), ln + 1))
        if "]" in pending[-1][0]:
            break
    for chunk, lineno in pending:
        if "]" in chunk:
            chunk = chunk[: chunk.index("]")]
            closed = True
        for piece in chunk.split(";"):
            piece = piece.strip()
            if not piece:
                continue
            fields = piece.split()
            try:
                row = [float(f) for f in fields]
            except ValueError:
                raise CaseParseError(f"non-numeric entry in mpc.{name} row", line=lineno)
            if len(row) < min_cols:
                raise CaseParseError(
                    f"mpc.{name} row has {len(row)} columns, expected at least {min_cols}",
                    line=lineno,
                )
            rows.append((row, lineno))
        if closed:
            break
    if not closed:
        raise CaseParseError(f"unterminated mpc.{name} matrix")
    if not rows:
        raise CaseParseError(f"mpc.{name} matrix is empty")
    return rows
