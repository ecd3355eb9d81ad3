"""Control-flow-graph data model, JSONL interchange and instruction normalization."""

from __future__ import annotations

import io
import json
import logging
import re
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import IO, Iterable, Iterator

log = logging.getLogger(__name__)

PAD = "PAD"
IMM = "IMM"
MEM = "MEM"
ARCHS = ("AMD64", "ARM", "SYNTH")
DEFAULT_IMM_THRESHOLD = 5000


@dataclass(frozen=True)
class RawInstruction:
    mnemonic: str
    operands: tuple[str, ...] = ()
    num_consts: int | None = None
    num_strings: int | None = None
    class_tag: str | None = None

    def __post_init__(self):
        if not self.mnemonic:
            raise ValueError("instruction mnemonic must be nonempty")
        if not isinstance(self.operands, tuple):
            object.__setattr__(self, "operands", tuple(self.operands))
        for op in self.operands:
            if "\n" in op or "\r" in op:
                raise ValueError(f"operand contains a newline: {op!r}")
        for name in ("num_consts", "num_strings"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ValueError(f"{name} must be nonnegative, got {v}")

    @property
    def is_pad(self) -> bool:
        return self.mnemonic == PAD and not self.operands


PAD_INSTRUCTION = RawInstruction(PAD)


@dataclass(frozen=True)
class NormalizedInstruction:
    token: str

    def __str__(self) -> str:
        return self.token


@dataclass(frozen=True)
class Vertex:
    id: int
    instructions: tuple[RawInstruction, ...]
    true_len: int

    @classmethod
    def of(cls, id: int, instructions: Iterable[RawInstruction]) -> "Vertex":
        ins = tuple(instructions)
        return cls(id, ins, len(ins))

    @property
    def real_instructions(self) -> tuple[RawInstruction, ...]:
        return self.instructions[: self.true_len]


@dataclass(frozen=True)
class CFG:
    id: str
    source_id: str
    compiler: str
    arch: str
    opt: str
    vertices: tuple[Vertex, ...]
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        if not self.vertices:
            raise CFGError(f"cfg {self.id!r} has no vertices")
        ids = [v.id for v in self.vertices]
        if len(set(ids)) != len(ids):
            raise CFGError(f"cfg {self.id!r} has duplicate vertex ids")
        if self.arch not in ARCHS:
            raise CFGError(f"cfg {self.id!r}: unknown arch {self.arch!r}")
        known = set(ids)
        dangling = [e for e in self.edges if e[0] not in known or e[1] not in known]
        if dangling:
            raise CFGError(f"cfg {self.id!r}: dangling edges {dangling}")

    def successors(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {v.id: [] for v in self.vertices}
        for a, b in self.edges:
            if b not in out[a]:
                out[a].append(b)
        return out

    def neighbors(self) -> dict[int, list[int]]:
        """Union of predecessors and successors of every vertex."""
        nb: dict[int, set[int]] = {v.id: set() for v in self.vertices}
        for a, b in self.edges:
            nb[a].add(b)
            nb[b].add(a)
        return {k: sorted(v) for k, v in nb.items()}


class CFGError(ValueError):
    pass


class Dataset:
    """An ordered collection of CFGs indexed by id and source group."""

    def __init__(self, cfgs: Iterable[CFG] = (), errors: list[str] | None = None, skipped: int = 0):
        self.cfgs: tuple[CFG, ...] = tuple(cfgs)
        self.errors: list[str] = list(errors or [])
        self.skipped = skipped
        self.by_id: dict[str, CFG] = {}
        for c in self.cfgs:
            if c.id in self.by_id:
                raise CFGError(f"duplicate cfg id {c.id!r}")
            self.by_id[c.id] = c
        groups: dict[str, list[CFG]] = OrderedDict()
        for c in self.cfgs:
            groups.setdefault(c.source_id, []).append(c)
        self.groups: dict[str, tuple[CFG, ...]] = {k: tuple(v) for k, v in groups.items()}

    def __len__(self) -> int:
        return len(self.cfgs)

    def __iter__(self) -> Iterator[CFG]:
        return iter(self.cfgs)

    def __eq__(self, other) -> bool:
        return isinstance(other, Dataset) and self.cfgs == other.cfgs

    def subset(self, source_ids: Iterable[str]) -> "Dataset":
        keep = set(source_ids)
        return Dataset(c for c in self.cfgs if c.source_id in keep)

    def __repr__(self) -> str:
        return f"Dataset({len(self.cfgs)} cfgs, {len(self.groups)} groups)"


# -- normalization -----------------------------------------------------------

_NUM_RE = re.compile(r"^#?([+-]?)(0[xX][0-9a-fA-F]+|[0-9a-fA-F]+[hH]|[0-9]+)$")
_IDENT_RE = re.compile(r"^[A-Za-z_.$@][\w.$@]*$")
_BRACKET_RE = re.compile(r"\[([^\[\]]*)\]")
_TERM_RE = re.compile(r"(0[xX][0-9a-fA-F]+|\b[0-9][0-9a-fA-F]*[hH]\b|\b[0-9]+\b)")


def parse_int(text: str) -> tuple[int, bool] | None:
    """Parse an integer literal, returning ``(value, is_hex)`` or None."""
    m = _NUM_RE.match(text.strip())
    if not m:
        return None
    sign, body = m.groups()
    if body[:2].lower() == "0x":
        val, is_hex = int(body, 16), True
    elif body[-1] in "hH":
        if not body[0].isdigit():
            return None
        val, is_hex = int(body[:-1], 16), True
    else:
        val, is_hex = int(body), False
    return (-val if sign == "-" else val), is_hex


@dataclass
class NormalizationStats:
    unrecognized: int = 0
    samples: list[str] = field(default_factory=list)

    def note(self, operand: str) -> None:
        self.unrecognized += 1
        if len(self.samples) < 20:
            self.samples.append(operand)


def _normalize_memory(inner: str, threshold: int) -> str:
    lit = parse_int(inner)
    if lit is not None:
        return MEM
    if not re.search(r"[A-Za-z_]", _TERM_RE.sub("", inner)):
        # only literals and arithmetic: an absolute address expression
        return MEM

    def repl(m: re.Match) -> str:
        v = parse_int(m.group(0))
        if v is not None and abs(v[0]) > threshold:
            return IMM
        return m.group(0)

    return "[" + _TERM_RE.sub(repl, inner) + "]"


def normalize_operand(op: str, threshold: int = DEFAULT_IMM_THRESHOLD, stats: NormalizationStats | None = None) -> str:
    op = op.strip()
    if "[" in op:
        if not _BRACKET_RE.search(op):
            if stats is not None:
                stats.note(op)
            return op

        return _BRACKET_RE.sub(lambda m: _normalize_memory(m.group(1), threshold), op)
    lit = parse_int(op)
    if lit is not None:
        val, is_hex = lit
        if abs(val) <= threshold:
            return op
        # large hex literals outside brackets read as absolute addresses
        return MEM if is_hex else IMM
    if _IDENT_RE.match(op) or op in (MEM, IMM):
        return op
    if stats is not None:
        stats.note(op)
    return op


def normalize_instruction(
    raw: RawInstruction,
    imm_threshold: int = DEFAULT_IMM_THRESHOLD,
    stats: NormalizationStats | None = None,
) -> NormalizedInstruction:
    """Rewrite absolute addresses to ``MEM`` and large immediates to ``IMM``.

    >>> normalize_instruction(RawInstruction("mov", ("EAX", "6000"))).token
    'mov EAX,IMM'
    >>> normalize_instruction(RawInstruction("mov", ("EAX", "[EBP-8]"))).token
    'mov EAX,[EBP-8]'
    """
    if imm_threshold <= 0:
        raise ValueError("imm_threshold must be positive")
    if raw.is_pad:
        return NormalizedInstruction(PAD)
    ops = [normalize_operand(o, imm_threshold, stats) for o in raw.operands]
    token = raw.mnemonic.strip()
    if ops:
        token += " " + ",".join(ops)
    return NormalizedInstruction(token)


def split_operands(text: str) -> list[str]:
    """Split at top-level commas (commas inside brackets are kept)."""
    out, depth, cur = [], 0, []
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail or out:
        out.append(tail)
    return out


def parse_instruction(text: str) -> RawInstruction:
    """Parse assembly text such as ``"mov EAX, [EBP-8]"`` or a normalized token."""
    text = text.strip()
    if not text:
        raise ValueError("empty instruction text")
    head, _, rest = text.partition(" ")
    return RawInstruction(head, tuple(split_operands(rest)) if rest.strip() else ())


def normalize_token(token: str, imm_threshold: int = DEFAULT_IMM_THRESHOLD) -> str:
    return normalize_instruction(parse_instruction(token), imm_threshold).token


def vertex_tokens(vertex: Vertex, imm_threshold: int = DEFAULT_IMM_THRESHOLD) -> list[str]:
    return [normalize_instruction(i, imm_threshold).token for i in vertex.real_instructions]


def cfg_tokens(cfg: CFG, imm_threshold: int = DEFAULT_IMM_THRESHOLD) -> list[str]:
    out: list[str] = []
    for v in cfg.vertices:
        out.extend(vertex_tokens(v, imm_threshold))
    return out


# -- padding / filtering -----------------------------------------------------


def pad_or_truncate(vertex: Vertex, fixed_len: int) -> Vertex:
    if fixed_len < 1:
        raise ValueError("fixed_len must be >= 1")
    real = vertex.real_instructions[:fixed_len]
    padded = real + (PAD_INSTRUCTION,) * (fixed_len - len(real))
    return Vertex(vertex.id, padded, len(real))


def truncate_cfg(cfg: CFG, fixed_len: int) -> CFG:
    """Drop per-vertex instructions beyond ``fixed_len`` (no PAD entries kept)."""
    verts = tuple(Vertex(v.id, v.real_instructions[:fixed_len], min(v.true_len, fixed_len)) for v in cfg.vertices)
    return replace(cfg, vertices=verts)


def filter_by_size(dataset: Dataset, max_vertices: int) -> tuple[Dataset, float]:
    """Keep CFGs with at most ``max_vertices`` vertices; also return the removed fraction."""
    if max_vertices < 1:
        raise ValueError("max_vertices must be positive")
    kept = [c for c in dataset.cfgs if len(c.vertices) <= max_vertices]
    if len(kept) == len(dataset.cfgs):
        return dataset, 0.0
    removed = 1.0 - len(kept) / len(dataset.cfgs)
    log.info("filter_by_size: removed %.2f%% of cfgs above %d vertices", 100 * removed, max_vertices)
    return Dataset(kept, dataset.errors, dataset.skipped), removed


# -- JSONL interchange -------------------------------------------------------


def _instruction_from_json(obj: dict) -> RawInstruction:
    ops = obj.get("operands", [])
    if not isinstance(ops, list) or not all(isinstance(o, str) for o in ops):
        raise CFGError("operands must be a list of strings")
    consts = obj.get("consts")
    strings = obj.get("strings")
    for name, val in (("consts", consts), ("strings", strings)):
        if val is not None and (not isinstance(val, int) or isinstance(val, bool) or val < 0):
            raise CFGError(f"{name} must be a nonnegative int")
    return RawInstruction(str(obj["mnemonic"]), tuple(ops), consts, strings, obj.get("class"))


def cfg_from_json(obj: dict) -> CFG:
    try:
        verts = []
        for v in obj["vertices"]:
            vid = v["id"]
            if not isinstance(vid, int) or isinstance(vid, bool) or vid < 0:
                raise CFGError(f"vertex id must be a nonnegative int, got {vid!r}")
            verts.append(Vertex.of(vid, (_instruction_from_json(i) for i in v.get("instructions", []))))
        edges = []
        for e in obj.get("edges", []):
            if not (isinstance(e, list) and len(e) == 2 and all(isinstance(x, int) for x in e)):
                raise CFGError(f"malformed edge {e!r}")
            edges.append((e[0], e[1]))
        return CFG(
            id=str(obj["id"]),
            source_id=str(obj["source_id"]),
            compiler=str(obj.get("compiler", "")),
            arch=str(obj.get("arch", "SYNTH")).upper(),
            opt=str(obj.get("opt", "")),
            vertices=tuple(verts),
            edges=tuple(edges),
        )
    except KeyError as exc:
        raise CFGError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, CFGError):
            raise
        raise CFGError(str(exc)) from None


def cfg_to_json(cfg: CFG) -> dict:
    def ins(i: RawInstruction) -> dict:
        d: dict = {"mnemonic": i.mnemonic, "operands": list(i.operands)}
        if i.class_tag is not None:
            d["class"] = i.class_tag
        if i.num_consts is not None:
            d["consts"] = i.num_consts
        if i.num_strings is not None:
            d["strings"] = i.num_strings
        return d

    return {
        "id": cfg.id,
        "source_id": cfg.source_id,
        "compiler": cfg.compiler,
        "arch": cfg.arch,
        "opt": cfg.opt,
        "vertices": [{"id": v.id, "instructions": [ins(i) for i in v.real_instructions]} for v in cfg.vertices],
        "edges": [list(e) for e in cfg.edges],
    }


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def parse_dataset(stream: IO | bytes | str | Iterable[str], strict: bool = False) -> Dataset:
    """Read one CFG per JSONL line.

    Bad lines are skipped and described in ``Dataset.errors`` unless
    ``strict`` is set, in which case the first one raises :class:`ParseError`.
    """
    if isinstance(stream, bytes):
        stream = io.StringIO(stream.decode("utf-8"))
    elif isinstance(stream, str):
        stream = io.StringIO(stream)
    cfgs: list[CFG] = []
    seen: set[str] = set()
    errors: list[str] = []
    skipped = 0
    for lineno, line in enumerate(stream, 1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise CFGError("line is not a JSON object")
            cfg = cfg_from_json(obj)
            if cfg.id in seen:
                raise CFGError(f"duplicate cfg id {cfg.id!r}")
        except (json.JSONDecodeError, CFGError) as exc:
            if strict:
                raise ParseError(lineno, str(exc)) from None
            errors.append(f"line {lineno}: {exc}")
            skipped += 1
            continue
        seen.add(cfg.id)
        cfgs.append(cfg)
    if skipped:
        log.warning("parse_dataset: skipped %d malformed line(s)", skipped)
    return Dataset(cfgs, errors, skipped)


def serialize_dataset(dataset: Dataset | Iterable[CFG], out: IO[str]) -> None:
    for cfg in dataset:
        out.write(json.dumps(cfg_to_json(cfg), separators=(",", ":")) + "\n")


def load_dataset(path, strict: bool = False) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh, strict=strict)


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        serialize_dataset(dataset, fh)
