"""Command line driver: compile circuits to stoquastic Hamiltonians, inspect
Hamiltonian files, run gadgets and lattice embeddings.

Exit codes: 0 success, 1 audit failure, 2 usage, parse or dependency error.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import circuit as circ_mod
from . import clock as clock_mod
from . import gadgets as gad
from . import geometry as geo
from . import hamiltonian as ham
from . import pauli
from . import simulate as sim

__all__ = ["STAGES", "PipelineConfig", "PipelineError", "AuditFailure", "compile_pipeline",
           "parse_positions", "format_positions", "build_parser", "main"]

STAGES = ("nn", "sparse", "clock", "subdivide", "planarise", "embed")
CIRCUIT_STAGES = ("nn", "sparse", "clock")


class PipelineError(Exception):
    """Usage, parse, dependency or resource-cap problem (exit code 2)."""


class AuditFailure(Exception):
    """An audit check failed (exit code 1)."""


@dataclass
class PipelineConfig:
    stages: tuple
    variant: str = clock_mod.STOQMA_PLAIN
    delta: float = None
    delta_policy: geo.DeltaPolicy = field(default_factory=geo.DeltaPolicy)
    lattice: str = geo.SQUARE
    tol: float = 1e-12
    seed: int = 0
    max_dense_qubits: int = 12
    out_dir: str = None
    positions: dict = None

    def __post_init__(self):
        stages = tuple(s.strip().lower() for s in self.stages if s.strip())
        for s in stages:
            if s not in STAGES:
                raise PipelineError(f"unknown stage {s!r}; choose from {','.join(STAGES)}")
        if len(set(stages)) != len(stages):
            raise PipelineError("a stage is listed twice")
        order = [STAGES.index(s) for s in stages]
        if order != sorted(order):
            raise PipelineError(f"stages must follow the order {','.join(STAGES)}")
        self.stages = stages
        try:
            self.variant = clock_mod.ClockConfig(self.variant, self.delta).variant
        except clock_mod.ClockError as exc:
            raise PipelineError(str(exc)) from None
        if "subdivide" in stages and ("planarise" in stages or "embed" in stages):
            raise PipelineError("planarise needs a 2-local Hamiltonian; the subdivide stage stops at "
                                "3-local and no 3-to-2 pass is part of the pipeline")


# --------------------------------------------------------------------------
# positions file: "q x y" with integers or fractions

def parse_positions(text):
    pos = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) != 3:
                raise ValueError("expected 'qubit x y'")
            pos[int(parts[0])] = (Fraction(parts[1]), Fraction(parts[2]))
        except (ValueError, ZeroDivisionError) as exc:
            raise PipelineError(f"positions line {lineno}: {exc}") from None
    return pos


def format_positions(pos):
    return "".join(f"{q} {pos[q][0]} {pos[q][1]}\n" for q in sorted(pos))


def default_positions(n):
    # points on a parabola are in convex position, so no vertex sits on a
    # straight edge it does not belong to
    return {q: (Fraction(q), Fraction(q * q)) for q in range(n)}


# --------------------------------------------------------------------------
# audits

def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


class _Audit:
    def __init__(self):
        self.lines = []
        self.failed = []

    def add(self, stage, key, value, ok=True):
        self.lines.append(f"{stage} {key}={_fmt(value)}")
        if not ok:
            self.failed.append(f"{stage} {key}")

    def text(self):
        tail = "result=fail " + ";".join(self.failed) if self.failed else "result=pass"
        return "\n".join(self.lines + [tail]) + "\n"


def _audit_hamiltonian(audit, stage, H, tol):
    ok, witness = ham.is_stoquastic(H, tol=tol, termwise=True)
    audit.add(stage, "qubits", H.num_qubits)
    audit.add(stage, "terms", len(H.terms))
    audit.add(stage, "locality", H.locality)
    audit.add(stage, "stoquastic", ok, ok)
    if not ok:
        audit.add(stage, "witness", str(witness).replace(" ", ""))
    return ok


def _write(out_dir, name, text):
    if out_dir is None:
        return None
    path = os.path.join(out_dir, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


# --------------------------------------------------------------------------
# compile

def _load(text):
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key = line.split()[0]
        if key == "registers":
            return "circuit", circ_mod.parse_circuit(text)
        if key == "qubits":
            return "hamiltonian", ham.parse_hamiltonian(text)
        break
    raise PipelineError("input is neither a circuit ('registers' header) nor a Hamiltonian ('qubits' header)")


def compile_pipeline(config, text):
    """Run the selected stages on a circuit or Hamiltonian text.

    Returns (files {name: text}, audit text, passed). Files are also written
    to config.out_dir when it is set.
    """
    try:
        kind, obj = _load(text)
    except (circ_mod.CircuitError, ham.HamiltonianFormatError) as exc:
        raise PipelineError(f"parse error: {exc}") from None
    stages = config.stages
    files = {}
    audit = _Audit()

    def emit(name, body):
        files[name] = body
        _write(config.out_dir, name, body)

    circuit, H, graph = None, None, None
    if kind == "circuit":
        circuit = obj
        audit.add("input", "gates", circuit.T)
        audit.add("input", "qubits", circuit.num_qubits)
    else:
        H = obj
        bad = [s for s in stages if s in CIRCUIT_STAGES]
        if bad:
            raise PipelineError(f"stage {bad[0]} needs a circuit input")
        _audit_hamiltonian(audit, "input", H, config.tol)

    if "nn" in stages:
        circuit = circ_mod.to_nearest_neighbour(circuit)
        audit.add("nn", "gates", circuit.T)
        audit.add("nn", "nearest_neighbour", circ_mod.is_nearest_neighbour(circuit),
                  circ_mod.is_nearest_neighbour(circuit))
        emit("nn.circ", circ_mod.format_circuit(circuit))

    if "sparse" in stages:
        if not circ_mod.is_nearest_neighbour(circuit):
            raise PipelineError("sparse stage needs a nearest-neighbour circuit; add the nn stage")
        if circuit.sparse is not None:
            raise PipelineError("circuit is already spatially sparse")
        T, M = circuit.T, circuit.num_qubits
        circuit, lay = circ_mod.to_spatially_sparse(circuit)
        audit.add("sparse", "gates", circuit.T, circuit.T == T + M * (T - 1))
        audit.add("sparse", "qubits", circuit.num_qubits, circuit.num_qubits == T * M)
        audit.add("sparse", "steps", lay.num_steps)
        emit("sparse.circ", circ_mod.format_circuit(circuit))

    if "clock" in stages:
        cfg = clock_mod.ClockConfig(config.variant, config.delta)
        if cfg.sparse and circuit.sparse is None:
            raise PipelineError(f"{cfg.variant} needs a spatially sparse circuit; add the sparse stage")
        ch = clock_mod.build(circuit, cfg)
        H = ch.hamiltonian
        audit.add("clock", "variant", cfg.variant)
        audit.add("clock", "clock_qubits", ch.num_clock)
        audit.add("clock", "weight", float(ch.weight))
        _audit_hamiltonian(audit, "clock", H, config.tol)
        emit("clock.ham", ham.format_hamiltonian(H))

    if kind == "circuit" and H is None and any(s in stages for s in ("subdivide", "planarise", "embed")):
        raise PipelineError("Hamiltonian stages need the clock stage for a circuit input")

    if "subdivide" in stages:
        factor = config.delta_policy.factor
        try:
            H, apps = gad.reduce_locality(H, delta_factor=factor)
        except gad.GadgetError as exc:
            raise AuditFailure(f"subdivide: {exc}") from None
        audit.add("subdivide", "rounds", len(apps))
        audit.add("subdivide", "mediators", sum(len(a.mediators) for a in apps))
        _audit_hamiltonian(audit, "subdivide", H, config.tol)
        audit.add("subdivide", "at_most_3_local", H.merged().locality <= 3, H.merged().locality <= 3)
        emit("subdivide.ham", ham.format_hamiltonian(H))

    if "planarise" in stages or "embed" in stages:
        if H.merged().locality > 2:
            raise PipelineError(f"planarise needs a 2-local Hamiltonian, got locality {H.merged().locality}")
        pos = config.positions or default_positions(H.num_qubits)
        try:
            graph = geo.RhoGraph.from_hamiltonian(H, pos, tol=config.tol)
        except geo.GeometryError as exc:
            raise PipelineError(str(exc)) from None
        except ValueError as exc:
            raise AuditFailure(f"rho decomposition: {exc}") from None

    if "planarise" in stages:
        try:
            res = geo.planarise(graph, cap=4, policy=config.delta_policy,
                                certify_limit=config.max_dense_qubits)
        except geo.GeometryError as exc:
            raise AuditFailure(f"planarise: {exc}") from None
        graph = res.graph
        a = res.audit
        audit.add("planarise", "qubits", a["qubits"])
        audit.add("planarise", "rounds", a["rounds"])
        audit.add("planarise", "max_degree", a["max_degree"], a["max_degree"] <= 4)
        audit.add("planarise", "crossings", a["crossings_exact"], a["crossings_exact"] == 0)
        audit.add("planarise", "planar", a["planar"], a["planar"])
        audit.add("planarise", "stoquastic", a["stoquastic"], a["stoquastic"])
        audit.add("planarise", "crossing_history", ",".join(str(c) for c in res.crossing_history))
        if res.certificate is not None:
            audit.add("planarise", "epsilon", res.certificate.epsilon)
            audit.add("planarise", "eta", res.certificate.eta)
        emit("planarise.ham", ham.format_hamiltonian(graph.hamiltonian()))
        emit("planarise.pos", format_positions(graph.pos))

    if "embed" in stages:
        if graph.crossings():
            raise PipelineError("embed needs a crossing-free drawing; add the planarise stage")
        try:
            er = geo.embed_lattice(graph, config.lattice, policy=config.delta_policy)
        except geo.GeometryError as exc:
            raise AuditFailure(f"embed: {exc}") from None
        a = er.audit
        audit.add("embed", "lattice", config.lattice.lower())
        audit.add("embed", "method", a["method"])
        audit.add("embed", "qubits", a["qubits"])
        audit.add("embed", "bound", a["bound"])
        audit.add("embed", "max_path_length", a["max_path_length"])
        audit.add("embed", "problems", len(a["problems"]), not a["problems"])
        audit.add("embed", "non_lattice_edges", a["non_lattice_edges"], a["non_lattice_edges"] == 0)
        audit.add("embed", "distinct_sites", a["distinct_sites"], a["distinct_sites"])
        audit.add("embed", "stoquastic", a["stoquastic"], a["stoquastic"])
        emit("embed.emb", geo.format_embedding(er.embedding))
        emit("embed.ham", ham.format_hamiltonian(er.graph.hamiltonian()))

    report = audit.text()
    emit("audit.txt", report)
    return files, report, not audit.failed


# --------------------------------------------------------------------------
# subcommands

def _read(path):
    try:
        if path == "-":
            return sys.stdin.read()
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        raise PipelineError(f"cannot read {path}: {exc}") from None


def _policy(args):
    return geo.DeltaPolicy(args.delta_mode, args.delta_factor, args.delta_value)


def _load_hamiltonian(path):
    try:
        return ham.parse_hamiltonian(_read(path))
    except ham.HamiltonianFormatError as exc:
        raise PipelineError(f"parse error: {exc}") from None


def _load_circuit(path):
    try:
        return circ_mod.parse_circuit(_read(path))
    except circ_mod.CircuitError as exc:
        raise PipelineError(f"parse error: {exc}") from None


def cmd_compile(args, out):
    if args.out:
        os.makedirs(args.out, exist_ok=True)
    cfg = PipelineConfig(
        stages=tuple(args.stages.split(",")), variant=args.variant, delta=args.delta,
        delta_policy=_policy(args), lattice=args.lattice.upper(), tol=args.tol, seed=args.seed,
        max_dense_qubits=args.max_dense_qubits, out_dir=args.out,
        positions=parse_positions(_read(args.positions)) if args.positions else None)
    _, report, ok = compile_pipeline(cfg, _read(args.file))
    out.write(report)
    return 0 if ok else 1


def cmd_check(args, out):
    H = _load_hamiltonian(args.file)
    ok, witness = ham.is_stoquastic(H, tol=args.tol, termwise=args.termwise)
    out.write(f"stoquastic: {_fmt(ok)}\n")
    out.write(f"classification: {pauli.classify(H, tol=args.tol)}\n")
    out.write(f"locality: {H.locality}\n")
    out.write(f"qubits: {H.num_qubits}\n")
    if not ok:
        out.write(f"witness: {witness}\n")
    return 0 if ok else 1


def cmd_spectrum(args, out):
    H = _load_hamiltonian(args.file)
    if args.mode == "dense" and H.num_qubits > args.max_dense_qubits:
        raise PipelineError(f"{H.num_qubits} qubits exceeds --max-dense-qubits {args.max_dense_qubits}")
    try:
        sp_ = ham.spectrum(H, args.k, args.mode, tol=min(args.tol, 1e-10), seed=args.seed,
                           max_dense_qubits=args.max_dense_qubits)
    except (ValueError, ham.SpectrumError) as exc:
        raise PipelineError(str(exc)) from None
    for e in sp_.eigenvalues:
        out.write(format(float(e), ".17g") + "\n")
    return 0


def cmd_simulate(args, out):
    c = _load_circuit(args.file)
    try:
        if args.proof == "optimal":
            alpha, proof = sim.optimal_proof(c, args.basis, args.max_dense_qubits)
            out.write(f"acceptance: {format(alpha, '.17g')}\n")
            out.write("proof: " + " ".join(format(float(abs(a) ** 2), ".17g") for a in proof) + "\n")
            return 0
        rep = sim.acceptance(c, args.proof, args.basis, args.max_dense_qubits)
    except sim.SimulationError as exc:
        raise PipelineError(str(exc)) from None
    out.write(f"acceptance: {format(rep.probability, '.17g')}\n")
    return 0


def _parse_edge(text):
    parts = text.split(",")
    if len(parts) != 5:
        raise PipelineError(f"--edge wants u,v,mu_u,mu_v,weight, got {text!r}")
    try:
        return gad.RhoEdge(int(parts[0]), int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4]))
    except (ValueError, gad.GadgetError) as exc:
        raise PipelineError(f"bad edge {text!r}: {exc}") from None


def cmd_gadget(args, out):
    edges = [_parse_edge(e) for e in args.edge or []]
    need = {"subdivision": 1, "cross": 2, "fork": 2}[args.kind]
    if len(edges) != need:
        raise PipelineError(f"{args.kind} takes {need} --edge argument(s)")
    n = 1 + max(max(e.qubits) for e in edges)
    try:
        if args.kind == "subdivision":
            sysm, app = gad.geo_subdivision(edges[0], delta=args.delta, num_qubits=n)
        elif args.kind == "cross":
            sysm, app = gad.cross_gadget(edges[0], edges[1], delta=args.delta, num_qubits=n)
        else:
            sysm, app = gad.fork_gadget(edges[0], edges[1], delta=args.delta, num_qubits=n)
        sysm.check()
    except gad.GadgetError as exc:
        raise PipelineError(str(exc)) from None
    text = ham.format_hamiltonian(sysm.hamiltonian())
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        out.write(text)
    target = ham.Hamiltonian(n)
    for e in list(app.target_edges) + list(app.added_edges):
        target.add(e.term(-1.0))
    if sysm.num_qubits > args.max_dense_qubits:
        raise PipelineError(f"{sysm.num_qubits} qubits exceeds --max-dense-qubits {args.max_dense_qubits}")
    cert = gad.certify(target, sysm, 2 ** n)
    out.write(f"mediators={','.join(str(c) for c in app.mediators)}\n")
    out.write(f"eta={format(cert.eta, '.17g')}\n")
    out.write(f"epsilon={format(cert.epsilon, '.17g')}\n")
    out.write(f"delta={format(cert.delta_used, '.17g')}\n")
    return 0


def cmd_embed(args, out):
    H = _load_hamiltonian(args.file)
    pos = parse_positions(_read(args.positions)) if args.positions else None
    cfg = PipelineConfig(stages=("planarise", "embed"), delta_policy=_policy(args),
                         lattice=args.lattice.upper(), tol=args.tol, seed=args.seed,
                         max_dense_qubits=args.max_dense_qubits, positions=pos)
    files, report, ok = compile_pipeline(cfg, ham.format_hamiltonian(H))
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(files["embed.emb"])
    else:
        out.write(files["embed.emb"])
    if args.audit:
        with open(args.audit, "w") as fh:
            fh.write(report)
    return 0 if ok else 1


def subdivision_sweep(deltas, edge=None):
    """(Delta, epsilon, eta) rows for the subdivision gadget on one rho-edge
    (default: the hopping edge rho^2 (x) rho^1 with weight 1)."""
    edge = edge or gad.RhoEdge(0, 1, 2, 1, 1.0)
    n = max(edge.qubits) + 1
    target = ham.Hamiltonian(n, [edge.term(-1.0)])

    def make(d):
        return gad.geo_subdivision(edge, delta=d, num_qubits=n)[0]

    return gad.delta_sweep(make, target, deltas, 2 ** n)


def cmd_report(args, out):
    try:
        deltas = [float(x) for x in args.deltas.split(",")]
    except ValueError:
        raise PipelineError(f"bad --deltas {args.deltas!r}") from None
    edge = _parse_edge(args.edge) if args.edge else None
    rows = subdivision_sweep(deltas, edge)
    lines = ["delta,epsilon,eta"] + [",".join(format(v, ".17g") for v in r) for r in rows]
    csv_text = "\n".join(lines) + "\n"
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(csv_text)
    else:
        out.write(csv_text)
    if args.png:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        d = np.array([r[0] for r in rows])
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        for col, name in ((1, "epsilon"), (2, "eta")):
            y = np.array([r[col] for r in rows])
            keep = y > 0
            ax.loglog(d[keep], y[keep], "o-", label=name)
        ax.set_xlabel("Delta")
        ax.set_ylabel("error")
        ax.legend()
        fig.tight_layout()
        # fixed metadata keeps the PNG byte-identical between runs
        fig.savefig(args.png, dpi=100, metadata={"Software": None})
        plt.close(fig)
    return 0


# --------------------------------------------------------------------------

def _add_policy(p):
    p.add_argument("--delta-mode", choices=("scaled", "fixed"), default="scaled",
                   help="penalty per gadget round: factor*scale^2 or a fixed value")
    p.add_argument("--delta-factor", type=float, default=100.0)
    p.add_argument("--delta-value", type=float, default=1e4)


def build_parser():
    top = argparse.ArgumentParser(prog="stoqlattice", description=__doc__.splitlines()[0])
    top.add_argument("--seed", type=int, default=0)
    top.add_argument("--tol", type=float, default=1e-12)
    top.add_argument("--max-dense-qubits", type=int, default=12)
    # the global flags are also accepted after the subcommand name
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--tol", type=float, default=argparse.SUPPRESS)
    common.add_argument("--max-dense-qubits", type=int, default=argparse.SUPPRESS)
    sub = top.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[common], **kw)

    sub.add_parser = add_parser

    p = sub.add_parser("compile", help="run pipeline stages on a circuit or Hamiltonian file")
    p.add_argument("file")
    p.add_argument("--stages", default="nn,sparse,clock")
    p.add_argument("--variant", default="stoqma-plain")
    p.add_argument("--delta", type=float, default=None, help="output penalty weight (StoqMA variants)")
    p.add_argument("--lattice", default="square", choices=("square", "triangular"))
    p.add_argument("--positions", help="file of 'qubit x y' lines for planarisation")
    p.add_argument("--out", help="directory for per-stage files")
    _add_policy(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("check", help="stoquasticity and locality of a Hamiltonian file")
    p.add_argument("file")
    p.add_argument("--termwise", action="store_true", help="require every term to be stoquastic")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("spectrum", help="lowest eigenvalues of a Hamiltonian file")
    p.add_argument("file")
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--mode", choices=("auto", "dense", "iterative"), default="auto")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("simulate", help="acceptance probability of a circuit")
    p.add_argument("file")
    p.add_argument("--proof", default=None, help="proof bit string or 'optimal'")
    p.add_argument("--basis", choices=("x", "z"), default="x")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gadget", help="build one geometric gadget and certify it")
    p.add_argument("--kind", choices=("subdivision", "cross", "fork"), required=True)
    p.add_argument("--edge", action="append", help="u,v,mu_u,mu_v,weight (repeat for two edges)")
    p.add_argument("--delta", type=float, default=1e6)
    p.add_argument("--out", help="write the simulator Hamiltonian here instead of stdout")
    p.set_defaults(func=cmd_gadget)

    p = sub.add_parser("embed", help="planarise a 2-local Hamiltonian and embed it in a lattice")
    p.add_argument("file")
    p.add_argument("--lattice", default="square", choices=("square", "triangular"))
    p.add_argument("--positions")
    p.add_argument("--out")
    p.add_argument("--audit", help="write the audit report here")
    _add_policy(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("report", help="Delta sweep of the subdivision gadget as CSV (and PNG)")
    p.add_argument("--deltas", default="1e4,1e5,1e6,1e7,1e8")
    p.add_argument("--edge", help="u,v,mu_u,mu_v,weight (default 0,1,2,1,1)")
    p.add_argument("--csv")
    p.add_argument("--png")
    p.set_defaults(func=cmd_report)
    return top


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    np.random.seed(args.seed)
    try:
        return args.func(args, out)
    except PipelineError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except AuditFailure as exc:
        sys.stderr.write(f"audit failure: {exc}\n")
        return 1
    except (geo.GeometryError, clock_mod.ClockError, circ_mod.CircuitError, pauli.PauliError,
            gad.GadgetError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
