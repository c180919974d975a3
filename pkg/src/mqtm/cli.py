"""Command-line front end: ``mqtm <command> ...``.

Exit codes: 0 success or halt, 1 parse error, 2 step limit, 3 runtime error
or failed verification. Every command prints the seed it used. All
randomness derives from that one seed through ``numpy.random.SeedSequence``:
each trial (or each of measurement and ancilla streams of a single run)
gets its own spawned child stream.
"""

from __future__ import annotations

import argparse
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import exec_tree, formats
from .compiler import CompileError, compile_circuit, verify_compiled
from .machine import AncillaPolicy, MachineError, new_run, output_window, run
from .models import ModelError, compile_classical_tm
from .protocols import PROTOCOL_NAMES, ProtocolError, check_protocol
from .quantum_core import EntangledError, ValidationError

EXIT_OK, EXIT_PARSE, EXIT_STEP_LIMIT, EXIT_RUNTIME = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _read(path: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise _Fail(EXIT_PARSE, f"cannot read {path}: {exc.strerror}") from None


def _streams(seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(n)


def _policy(kind: str, ss: np.random.SeedSequence) -> AncillaPolicy:
    return AncillaPolicy(kind, int(ss.generate_state(1, np.uint64)[0]))


def _machine_and_input(args):
    machine = formats.parse_machine(_read(args.machine))
    state = formats.parse_input(args.input)
    return machine, state


def _output_text(rt, width: int) -> str:
    try:
        return formats.format_state(output_window(rt, width))
    except (EntangledError, MachineError) as exc:
        return f"unavailable ({exc})"


def _width(args, state) -> int:
    return args.width if args.width else max(1, state.num_qubits)


def _emit(args, text: str) -> None:
    if getattr(args, "output", None):
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


# commands --------------------------------------------------------------------------------

def cmd_run(args) -> int:
    machine, state = _machine_and_input(args)
    meas, anc = _streams(args.seed, 2)
    rt = new_run(machine, state, 0, _policy(args.policy, anc))
    res = run(rt, np.random.default_rng(meas), args.max_steps)
    lines = [f"seed: {args.seed}", f"machine: {machine.name}", f"input: {formats.format_state(state)}"]
    lines += [formats.format_step(i, r) for i, r in enumerate(res.trace, start=1)]
    lines.append(f"status: {res.status} after {len(res.trace)} steps")
    if res.halted:
        lines.append(f"output: {_output_text(rt, _width(args, state))}")
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if res.halted else EXIT_STEP_LIMIT


def cmd_sample(args) -> int:
    machine, state = _machine_and_input(args)
    lines = [f"seed: {args.seed}", f"machine: {machine.name}", f"trials: {args.trials}"]
    halted = 0
    outputs = defaultdict(int)
    for t, ss in enumerate(_streams(args.seed, args.trials)):
        meas, anc = ss.spawn(2)
        rt = new_run(machine, state, 0, _policy(args.policy, anc))
        res = run(rt, np.random.default_rng(meas), args.max_steps)
        outs = ",".join(formats.format_outcome(r.measurement.outcome) for r in res.trace) or "-"
        out = _output_text(rt, _width(args, state)) if res.halted else "-"
        halted += res.halted
        if res.halted:
            outputs[out] += 1
        lines.append(f"trial {t} {res.status} {len(res.trace)} {outs} {out}")
    lines.append(f"halted: {halted}/{args.trials}")
    for out, count in sorted(outputs.items()):
        lines.append(f"output {out}: {count}")
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if halted == args.trials else EXIT_STEP_LIMIT


def _tree(args, machine, state):
    policy = AncillaPolicy(args.policy)
    return exec_tree.build_tree(machine, state, ancilla_policy=policy, max_depth=args.depth,
                                min_path_probability=args.min_prob)


def _bounds_lines(tree) -> list[str]:
    lo, hi = exec_tree.termination_probability_bounds(tree)
    lines = [f"bounds: {lo:.2f} {hi:.2f}"]
    exact = exec_tree.exact_termination_bounds(tree)
    if exact is not None:
        lines.append(f"exact: {formats.dyadic_text(exact[0])} {formats.dyadic_text(exact[1])}")
        lo, hi = float(exact[0]), float(exact[1])
    lines.append(f"decimal: {lo:.4f} {hi:.4f}")
    return lines


def cmd_tree(args) -> int:
    machine, state = _machine_and_input(args)
    tree = _tree(args, machine, state)
    lines = [f"seed: {args.seed}", f"machine: {machine.name}", f"depth: {args.depth}",
             "# depth state last-outcome path probability status"]
    text = exec_tree.dump_tree(tree)
    lines += text.splitlines()
    lines.append(f"max-children: {exec_tree.max_children(tree)} (limit {2 ** machine.k})")
    lines += _bounds_lines(tree)
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_distribution(args) -> int:
    machine, state = _machine_and_input(args)
    tree = _tree(args, machine, state)
    width = _width(args, state)
    dist = defaultdict(float)
    lines = [f"seed: {args.seed}", f"machine: {machine.name}", f"depth: {args.depth}"]
    for node in tree.walk():
        if node.halted:
            dist[_output_text(node.runtime, width)] += node.path_probability
    for out, p in sorted(dist.items(), key=lambda kv: (-kv[1], kv[0])):
        lines.append(f"{p:.12f} {out}")
    lines += _bounds_lines(tree)
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


def cmd_compile(args) -> int:
    circuit = formats.parse_circuit(_read(args.circuit))
    cc = compile_circuit(circuit)
    _emit(args, formats.dump_machine(cc.machine))
    return EXIT_OK


def cmd_compile_tm(args) -> int:
    tm = formats.parse_tm(_read(args.tm))
    _emit(args, formats.dump_machine(compile_classical_tm(tm)))
    return EXIT_OK


def cmd_verify_circuit(args) -> int:
    circuit = formats.parse_circuit(_read(args.circuit))
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    report = verify_compiled(circuit, args.trials, args.max_steps, rng, policy=AncillaPolicy(args.policy, args.seed))
    lines = [f"seed: {args.seed}", f"gates: {len(circuit)}", f"qubits: {circuit.qubit_count}",
             f"halted: {report.halted}/{report.trials}", f"min-fidelity: {report.min_fidelity:.12f}"]
    lines += [f"failure trial {t} fidelity {f:.12f}" for t, f in report.failures]
    lines.append("PASS" if report.passed else "FAIL")
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if report.passed else EXIT_RUNTIME


def cmd_verify_protocol(args) -> int:
    checks = check_protocol(args.protocol, args.trials, args.seed)
    lines = [f"seed: {args.seed}", f"protocol: {args.protocol}", f"trials: {args.trials}"]
    lines += [str(c) for c in checks]
    ok = all(c.passed for c in checks)
    lines.append("PASS" if ok else "FAIL")
    _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_RUNTIME


# argument parsing ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mqtm", description="Measurement-based quantum Turing machine toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, *, trials=None, steps=10_000):
        sp.add_argument("--seed", type=int, default=0, help="root 64-bit seed (default 0)")
        sp.add_argument("-o", "--output", help="write the report here instead of stdout")
        if steps is not None:
            sp.add_argument("--max-steps", type=int, default=steps)
        if trials is not None:
            sp.add_argument("--trials", type=int, default=trials)

    def machine_args(sp):
        sp.add_argument("machine", help="machine file")
        sp.add_argument("--input", default="", help="basis string (011) or amplitudes (0.6,0.8i)")
        sp.add_argument("--width", type=int, default=0, help="output window width (default: input size)")
        sp.add_argument("--policy", choices=("zero", "haar"), default="zero", help="ancilla policy")

    def tree_args(sp):
        sp.add_argument("--depth", type=int, default=10)
        sp.add_argument("--min-prob", type=float, default=exec_tree.DEFAULT_MIN_PATH_PROBABILITY)

    sp = sub.add_parser("run", help="run a machine once and print its trace")
    machine_args(sp)
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sample", help="run a machine repeatedly")
    machine_args(sp)
    common(sp, trials=100)
    sp.set_defaults(func=cmd_sample)

    sp = sub.add_parser("distribution", help="exact output distribution from the execution tree")
    machine_args(sp)
    tree_args(sp)
    common(sp, steps=None)
    sp.set_defaults(func=cmd_distribution)

    sp = sub.add_parser("tree", help="dump the execution tree and termination bounds")
    machine_args(sp)
    tree_args(sp)
    common(sp, steps=None)
    sp.set_defaults(func=cmd_tree)

    sp = sub.add_parser("compile", help="compile a circuit file to a machine file")
    sp.add_argument("circuit")
    common(sp, steps=None)
    sp.set_defaults(func=cmd_compile)

    sp = sub.add_parser("verify-circuit", help="check a compiled circuit against its unitary")
    sp.add_argument("circuit")
    sp.add_argument("--policy", choices=("zero", "haar"), default="zero", help="ancilla policy")
    common(sp, trials=50, steps=5000)
    sp.set_defaults(func=cmd_verify_circuit)

    sp = sub.add_parser("verify-protocol", help="exhaustive and sampled checks of a protocol")
    sp.add_argument("protocol", choices=PROTOCOL_NAMES)
    common(sp, trials=1000, steps=None)
    sp.set_defaults(func=cmd_verify_protocol)

    sp = sub.add_parser("compile-tm", help="compile a classical TM file to a machine file")
    sp.add_argument("tm")
    common(sp, steps=None)
    sp.set_defaults(func=cmd_compile_tm)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for flag in ("trials", "max_steps", "depth"):
        if getattr(args, flag, 1) is not None and getattr(args, flag, 1) < (0 if flag == "depth" else 1):
            parser.error(f"--{flag.replace('_', '-')} must be positive")
    try:
        return args.func(args)
    except _Fail as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (formats.ParseError, CompileError, ModelError) as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (MachineError, ProtocolError, ValidationError, EntangledError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
