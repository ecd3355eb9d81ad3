"""Synthetic source functions and compiler-like variants over a small ISA.

Each source function gets its own instruction "style" (a peaked mnemonic
distribution plus a few recurring idioms), so variants of one source share
most of their normalized tokens while unrelated sources do not.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .cfg import CFG, Dataset, RawInstruction, Vertex, cfg_tokens

REGISTERS = tuple(f"r{i}" for i in range(8))
TRANSFER = ("mov", "movzx", "movsx", "lea", "push", "pop", "xchg", "load", "store", "cmov")
ARITH = ("add", "sub", "inc", "dec", "neg", "mul", "imul", "div", "idiv", "and", "or", "xor",
         "not", "shl", "shr", "sar", "adc", "sbb")
OTHER = ("cmp", "test", "setz", "nop")
BRANCHES = ("jz", "jnz", "jl", "jg", "jle", "jge")
CALL_TARGETS = ("memcpy", "memset", "strlen", "malloc", "free", "printf", "abort", "f_hash",
                "f_cmp", "f_swap", "f_init", "f_read", "f_write", "f_lock", "f_unlock", "f_log")
BODY_MNEMONICS = TRANSFER + ARITH + OTHER[:3] + ("call",)


@dataclass(frozen=True)
class MiniIsaSpec:
    """Mnemonic inventory and the class-preserving substitution classes.

    Every substitution class lists interchangeable templates over a register
    placeholder ``R``; all members share one instruction class.
    """

    registers: tuple[str, ...] = REGISTERS
    transfer: tuple[str, ...] = TRANSFER
    arithmetic: tuple[str, ...] = ARITH
    other: tuple[str, ...] = OTHER + BRANCHES + ("jmp", "je", "ret")
    substitutions: tuple[tuple[tuple[str, tuple[str, ...]], ...], ...] = (
        (("add", ("R", "1")), ("inc", ("R",)), ("sub", ("R", "-1"))),
        (("sub", ("R", "1")), ("dec", ("R",)), ("add", ("R", "-1"))),
        (("shl", ("R", "1")), ("add", ("R", "R")), ("imul", ("R", "2"))),
        (("xor", ("R", "R")), ("sub", ("R", "R")), ("and", ("R", "0"))),
        (("test", ("R", "R")), ("cmp", ("R", "0"))),
        (("jz", ("T",)), ("je", ("T",))),
    )

    def classes(self) -> dict[str, str]:
        out = {m: "transfer" for m in self.transfer}
        out.update({m: "arithmetic" for m in self.arithmetic})
        out.update({m: "other" for m in self.other})
        out["call"] = "call"
        return out


ISA = MiniIsaSpec()


@dataclass(frozen=True)
class VariantConfig:
    substitute: float = 0.3
    rename: float = 0.3
    nop: float = 0.03
    split: float = 0.08
    merge: float = 0.08
    seed: int = 0

    def __post_init__(self):
        for name in ("substitute", "rename", "nop", "split", "merge"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} probability must be in [0, 1], got {v}")


def source_id_for(seed: int) -> str:
    return "src-" + hashlib.sha256(f"synth-source:{int(seed)}".encode()).hexdigest()[:12]


def _pick(rng, items, p=None):
    return items[int(rng.choice(len(items), p=p))]


def _operands(rng, mnemonic: str, regs, reg_p) -> tuple[str, ...]:
    r = lambda: _pick(rng, regs, reg_p)  # noqa: E731
    if mnemonic in ("push", "pop", "inc", "dec", "neg", "not", "setz", "mul", "div", "idiv"):
        return (r(),)
    if mnemonic == "call":
        if rng.random() < 0.2:
            return (hex(int(rng.integers(0x400000, 0x4FFFFF))),)
        return (_pick(rng, CALL_TARGETS),)
    if mnemonic == "nop":
        return ()
    if mnemonic in ("load", "movzx", "movsx") or (mnemonic in ("mov", "lea") and rng.random() < 0.4):
        base = _pick(rng, ("sp", "bp") + tuple(regs))
        return (r(), f"[{base}+{4 * int(rng.integers(0, 16))}]")
    if mnemonic == "store" or (mnemonic == "mov" and rng.random() < 0.25):
        base = _pick(rng, ("sp", "bp"))
        return (f"[{base}+{4 * int(rng.integers(0, 16))}]", r())
    if mnemonic == "mov" and rng.random() < 0.1:
        return (r(), f"[{hex(int(rng.integers(0x600000, 0x6FFFFF)))}]")
    roll = rng.random()
    if roll < 0.45:
        return (r(), r())
    if roll < 0.85:
        return (r(), str(int(_pick(rng, (0, 1, 2, 4, 8, 16, 32, 255)))))
    return (r(), str(int(rng.integers(5001, 100000))))


def gen_function(seed: int, min_vertices: int = 3, max_vertices: int = 40,
                 min_instructions: int = 2, max_instructions: int = 30) -> CFG:
    """A random structured CFG: fall-through chain plus forward/back jumps, out-degree <= 2."""
    rng = np.random.default_rng([int(seed), 0x5EED])
    n = int(min(rng.integers(min_vertices, max_vertices + 1, size=2)))
    alpha = np.full(len(BODY_MNEMONICS), 0.25)
    mn_p = rng.dirichlet(alpha)
    reg_p = rng.dirichlet(np.full(len(REGISTERS), 0.7))
    idioms = [
        RawInstruction(m, _operands(rng, m, REGISTERS, reg_p))
        for m in (_pick(rng, BODY_MNEMONICS, mn_p) for _ in range(4))
    ]

    verts: list[Vertex] = []
    edges: list[tuple[int, int]] = []
    for i in range(n):
        k = int(min(rng.integers(min_instructions, max_instructions + 1, size=2)))
        body: list[RawInstruction] = []
        if i == 0:
            body.append(RawInstruction("xor", ("r0", "r0")))
        while len(body) < k - 1:
            if rng.random() < 0.25:
                body.append(idioms[int(rng.integers(len(idioms)))])
            else:
                m = _pick(rng, BODY_MNEMONICS, mn_p)
                body.append(RawInstruction(m, _operands(rng, m, REGISTERS, reg_p)))
        if i == n - 1:
            body.append(RawInstruction("ret"))
        elif rng.random() < 0.45:
            target = int(rng.integers(0, n))
            if target in (i, i + 1):
                target = n - 1
            body.append(RawInstruction(_pick(rng, BRANCHES), (hex(0x401000 + 16 * target),)))
            edges.append((i, i + 1))
            edges.append((i, target))
        else:
            body.append(RawInstruction(_pick(rng, ("mov", "add", "cmp")), (_pick(rng, REGISTERS, reg_p), "1")))
            edges.append((i, i + 1))
        verts.append(Vertex.of(i, body))
    sid = source_id_for(seed)
    return CFG(id=f"{sid}-base", source_id=sid, compiler="synth-base", arch="SYNTH", opt="O0",
               vertices=tuple(verts), edges=tuple(edges))


# -- variants ---------------------------------------------------------------------


def _match_substitution(ins: RawInstruction):
    for cls in ISA.substitutions:
        for idx, (m, ops) in enumerate(cls):
            if m != ins.mnemonic or len(ops) != len(ins.operands):
                continue
            binding: dict[str, str] = {}
            ok = True
            for pat, op in zip(ops, ins.operands):
                if pat in ("R", "T"):
                    if binding.setdefault(pat, op) != op or (pat == "R" and op not in REGISTERS):
                        ok = False
                        break
                elif pat != op:
                    ok = False
                    break
            if ok:
                return cls, idx, binding
    return None


def substitute(ins: RawInstruction, rng) -> RawInstruction:
    """Swap ``ins`` for a different member of its substitution class, if it has one."""
    hit = _match_substitution(ins)
    if hit is None:
        return ins
    cls, idx, binding = hit
    choices = [j for j in range(len(cls)) if j != idx]
    m, ops = cls[choices[int(rng.integers(len(choices)))]]
    return RawInstruction(m, tuple(binding.get(o, o) for o in ops))


def _rename(ins: RawInstruction, mapping: dict[str, str]) -> RawInstruction:
    def fix(op: str) -> str:
        if op in mapping:
            return mapping[op]
        if op.startswith("[") and "+" in op:
            base, _, rest = op[1:].partition("+")
            return f"[{mapping.get(base, base)}+{rest}"
        return op

    return replace(ins, operands=tuple(fix(o) for o in ins.operands))


def split_blocks(cfg: CFG, p: float, rng) -> CFG:
    verts = list(cfg.vertices)
    edges = list(cfg.edges)
    next_id = max(v.id for v in verts) + 1
    out: list[Vertex] = []
    for v in verts:
        ins = v.real_instructions
        if len(ins) >= 2 and rng.random() < p:
            cut = int(rng.integers(1, len(ins)))
            new_id = next_id
            next_id += 1
            out.append(Vertex.of(v.id, ins[:cut]))
            out.append(Vertex.of(new_id, ins[cut:]))
            edges = [(new_id, b) if a == v.id else (a, b) for a, b in edges]
            edges.append((v.id, new_id))
        else:
            out.append(v)
    return replace(cfg, vertices=tuple(out), edges=tuple(edges))


def merge_blocks(cfg: CFG, p: float, rng) -> CFG:
    """Fold ``v`` into ``u`` when ``u -> v`` is ``u``'s only exit and ``v``'s only entry."""
    verts = {v.id: v for v in cfg.vertices}
    order = [v.id for v in cfg.vertices]
    edges = list(dict.fromkeys(cfg.edges))
    entry = order[0]
    changed = True
    while changed:
        changed = False
        for u in order:
            succ = [b for a, b in edges if a == u]
            if len(succ) != 1:
                continue
            v = succ[0]
            preds = [a for a, b in edges if b == v]
            if v == u or v == entry or preds != [u] or rng.random() >= p:
                continue
            verts[u] = Vertex.of(u, verts[u].real_instructions + verts[v].real_instructions)
            edges = [e for e in edges if e != (u, v)]
            edges = [(u, b) if a == v else (a, b) for a, b in edges]
            del verts[v]
            order.remove(v)
            changed = True
            break
    return replace(cfg, vertices=tuple(verts[i] for i in order), edges=tuple(edges))


def gen_variant(base: CFG, config: VariantConfig, tag: str = "synth-cc") -> CFG:
    """Apply substitutions, register renaming, NOP padding and block split/merge."""
    rng = np.random.default_rng([config.seed, int(hashlib.sha256(base.id.encode()).hexdigest()[:8], 16)])
    mapping: dict[str, str] = {}
    if rng.random() < config.rename:
        a, b = rng.choice(len(REGISTERS), size=2, replace=False)
        mapping = {REGISTERS[a]: REGISTERS[b], REGISTERS[b]: REGISTERS[a]}
    verts = []
    for v in base.vertices:
        body: list[RawInstruction] = []
        for ins in v.real_instructions:
            if config.substitute and rng.random() < config.substitute:
                ins = substitute(ins, rng)
            if mapping:
                ins = _rename(ins, mapping)
            body.append(ins)
            if config.nop and rng.random() < config.nop:
                body.append(RawInstruction("nop"))
        verts.append(Vertex.of(v.id, body))
    out = replace(base, vertices=tuple(verts), compiler=tag)
    if config.split:
        out = split_blocks(out, config.split, rng)
    if config.merge:
        out = merge_blocks(out, config.merge, rng)
    return out


def gen_dataset(n_sources: int, variants_per_source: int, config: VariantConfig | None = None,
                seed: int = 0) -> tuple[Dataset, list[list[str]]]:
    """``n_sources`` groups of ``variants_per_source`` CFGs plus the normalized-token corpus."""
    config = config or VariantConfig(seed=seed)
    cfgs = []
    for s in range(n_sources):
        base = gen_function(seed * 1_000_003 + s)
        for k in range(variants_per_source):
            vc = replace(config, seed=int(config.seed * 7919 + k))
            var = gen_variant(base, vc, tag=f"synth-cc{k % 2}")
            cfgs.append(replace(var, id=f"{base.source_id}-v{k}", opt=f"O{k % 4}"))
    corpus = [cfg_tokens(c) for c in cfgs]
    return Dataset(cfgs), corpus


def instruction_multiset(cfg: CFG, ignore_nops: bool = True) -> Counter:
    return Counter(
        i for v in cfg.vertices for i in v.real_instructions if not (ignore_nops and i.mnemonic == "nop")
    )
