"""
Minimal z3 command line on top of the z3 Python bindings

python -m hlcmon.z3_runner FILE.smt2 prints "sat", "unsat" or "unknown" and, for sat, the model
as (define-fun name () Int value) lines, which is what the monitor reads from a z3 executable.
"""

import sys

import z3

from hlcmon.smt_encoder import LOGIC


def _format(value: int) -> str:
    return f"(- {-value})" if value < 0 else str(value)


def solve(text: str) -> str:
    commands = [line for line in text.splitlines() if not line.strip().startswith(("(check-sat", "(get-model", "(set-logic"))]
    solver = z3.SolverFor(LOGIC)
    solver.add(z3.parse_smt2_string("\n".join(commands)))
    verdict = solver.check()
    out = [str(verdict)]
    if verdict == z3.sat:
        model = solver.model()
        out.append("(")
        for decl in sorted(model.decls(), key=lambda d: d.name()):
            out.append(f"  (define-fun {decl.name()} () Int {_format(model[decl].as_long())})")
        out.append(")")
    return "\n".join(out) + "\n"


def main(argv: list[str]) -> int:
    if len(argv) != 1:
        sys.stderr.write("usage: python -m hlcmon.z3_runner FILE.smt2\n")
        return 2
    with open(argv[0], encoding="utf-8") as f:
        text = f.read()
    try:
        sys.stdout.write(solve(text))
    except z3.Z3Exception as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
