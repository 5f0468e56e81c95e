"""DSL for composed geographic-vision programs.

Programs are flat sequences of keyword-argument call assignments::

    SEG0=GetLandmarkSeg(query='The View')
    SEG1=SegAround(area=SEG0,distance=100)
    ANSWER=GetStructureSeg(query='Red-letter billboard',area=SEG1)

Grammar (EBNF)::

    program := stmt+
    stmt    := TARGET '=' FNNAME '(' [kwarg {',' kwarg}] ')' NEWLINE
    kwarg   := KWNAME '=' (STRING | NUMBER | TARGET)

Targets match ``[A-Z][A-Z0-9_]*``; strings are single-quoted; numbers are
decimal. The executor runs every statement inside a try block: any error
makes the whole program evaluate to None, with a trace explaining where.
"""

from __future__ import annotations

import numbers
import re
import time
from dataclasses import dataclass, field

from .errors import (EngineError, GenerationFailed, InsufficientExamples,
                     KindMismatch, ProgramSyntaxError)
from .grids import DetectionSet, Segment

ANSWER_NAME = "ANSWER"

# value kinds
SEG, DET, NUM, TEXT, BOOL, ANY = "Segment", "DetectionSet", "Number", "Text", "Boolean", "Any"

_COMPARATORS = {
    "GT": lambda a, b: a > b,
    "GE": lambda a, b: a >= b,
    "LT": lambda a, b: a < b,
    "LE": lambda a, b: a <= b,
    "EQ": lambda a, b: a == b,
}

#: kwarg signature and result kind per callable name. ``aliases`` maps
#: accepted alternative kwarg spellings onto the canonical name.
API_SIGNATURES = {
    "GetLandmarkSeg": {"kwargs": {"query": TEXT}, "result": SEG},
    "GetStructureSeg": {"kwargs": {"query": TEXT, "area": SEG}, "result": SEG},
    "SegAround": {"kwargs": {"area": SEG, "distance": NUM}, "result": SEG},
    "SegDirection": {"kwargs": {"seg": SEG, "direction": TEXT}, "result": SEG,
                     "aliases": {"area": "seg"}},
    "SegBetween": {"kwargs": {"seg1": SEG, "seg2": SEG}, "result": SEG},
    "LargestSeg": {"kwargs": {"segs": SEG}, "result": SEG},
    "MeasureDist": {"kwargs": {"from": SEG, "to": SEG}, "result": NUM},
    "MeasureHeight": {"kwargs": {"area": SEG}, "result": NUM},
    "GetObjectSeg": {"kwargs": {"query": TEXT, "area": SEG}, "result": DET},
    # builtins
    "FullSeg": {"kwargs": {}, "result": SEG},
    "Count": {"kwargs": {"dets": DET}, "result": NUM},
    "Exists": {"kwargs": {"seg": SEG}, "result": BOOL},
    "IfElse": {"kwargs": {"cond": BOOL, "a": ANY, "b": ANY}, "result": ANY},
    "YesNo": {"kwargs": {"b": BOOL}, "result": TEXT},
    **{name: {"kwargs": {"a": NUM, "b": NUM}, "result": BOOL}
       for name in _COMPARATORS},
}


# -- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class Literal:
    value: object  # str or float


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Call:
    fn: str
    kwargs: tuple  # of (name, Literal | Ref)


@dataclass(frozen=True)
class Assignment:
    target: str
    call: Call
    line: int


@dataclass(frozen=True)
class ProgramAST:
    statements: tuple
    source_text: str


# -- parser -------------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<string>'[^']*')
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<sym>[=(),])
""", re.VERBOSE)

_TARGET_RE = re.compile(r"[A-Z][A-Z0-9_]*\Z")
_KWNAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")


def _tokenize_line(line, line_no):
    tokens = []
    pos = 0
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if m is None:
            raise ProgramSyntaxError(
                f"unexpected character {line[pos]!r}", line_no, pos + 1)
        if m.lastgroup != "ws":
            tokens.append((m.lastgroup, m.group(), pos + 1))
        pos = m.end()
    return tokens


class _LineParser:
    def __init__(self, tokens, line_no):
        self.tokens = tokens
        self.line_no = line_no
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else None

    def _fail(self, expected):
        tok = self.peek()
        col = tok[2] if tok else (self.tokens[-1][2] + len(self.tokens[-1][1])
                                  if self.tokens else 1)
        found = repr(tok[1]) if tok else "end of line"
        raise ProgramSyntaxError(f"expected {' or '.join(expected)}, found {found}",
                                 self.line_no, col, expected)

    def expect(self, kind, value=None, expected=None):
        tok = self.peek()
        label = expected or [value or kind]
        if tok is None or tok[0] != kind or (value is not None and tok[1] != value):
            self._fail(label)
        self.i += 1
        return tok

    def parse_statement(self):
        kind, text, col = self.expect("ident", expected=["identifier"])
        if not _TARGET_RE.match(text):
            raise ProgramSyntaxError(
                f"target {text!r} must match [A-Z][A-Z0-9_]*", self.line_no, col)
        target = text
        self.expect("sym", "=")
        _, fn, _ = self.expect("ident", expected=["function name"])
        self.expect("sym", "(")
        kwargs = []
        if self.peek() and self.peek()[1] != ")":
            kwargs.append(self.parse_kwarg())
            while self.peek() and self.peek()[1] == ",":
                self.i += 1
                kwargs.append(self.parse_kwarg())
        self.expect("sym", ")", expected=["')'", "','"])
        if self.peek() is not None:
            self._fail(["end of line"])
        return Assignment(target=target, call=Call(fn=fn, kwargs=tuple(kwargs)),
                          line=self.line_no)

    def parse_kwarg(self):
        _, name, col = self.expect("ident", expected=["keyword argument name"])
        self.expect("sym", "=")
        tok = self.peek()
        if tok is None:
            self._fail(["string", "number", "identifier"])
        kind, text, col = tok
        self.i += 1
        if kind == "string":
            return (name, Literal(text[1:-1]))
        if kind == "number":
            return (name, Literal(float(text)))
        if kind == "ident":
            if not _TARGET_RE.match(text):
                raise ProgramSyntaxError(
                    f"value identifier {text!r} must match [A-Z][A-Z0-9_]*",
                    self.line_no, col)
            return (name, Ref(text))
        self._fail(["string", "number", "identifier"])


def parse_program(text: str) -> ProgramAST:
    statements = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        tokens = _tokenize_line(line, line_no)
        statements.append(_LineParser(tokens, line_no).parse_statement())
    if not statements:
        raise ProgramSyntaxError("program has no statements", 1, 1, ["statement"])
    return ProgramAST(statements=tuple(statements), source_text=text)


# -- checker ------------------------------------------------------------------

@dataclass(frozen=True)
class CheckIssue:
    code: str      # UnknownFunction | UnknownKwarg | MissingKwarg | KindMismatch
                   # | UseBeforeDef | Reassignment | MissingAnswer | AnswerNotLast
    message: str
    line: int


@dataclass(frozen=True)
class CheckReport:
    issues: tuple

    @property
    def clean(self):
        return not self.issues

    def __str__(self):
        return "\n".join(f"line {i.line}: [{i.code}] {i.message}"
                         for i in self.issues) or "clean"


def canonical_kwargs(call: Call, api=API_SIGNATURES):
    """Resolve kwarg aliases to canonical names; no validation."""
    sig = api.get(call.fn)
    aliases = sig.get("aliases", {}) if sig else {}
    return tuple((aliases.get(name, name), value) for name, value in call.kwargs)


def check_program(ast: ProgramAST, api=API_SIGNATURES) -> CheckReport:
    issues = []
    defined = {}  # target -> result kind
    for stmt in ast.statements:
        call = stmt.call
        sig = api.get(call.fn)
        if sig is None:
            issues.append(CheckIssue("UnknownFunction",
                                     f"unknown function {call.fn!r}", stmt.line))
            result_kind = ANY
        else:
            expected = sig["kwargs"]
            seen = set()
            for name, value in canonical_kwargs(call, api):
                if name in seen:
                    issues.append(CheckIssue("UnknownKwarg",
                                             f"duplicate kwarg {name!r}", stmt.line))
                    continue
                seen.add(name)
                if name not in expected:
                    issues.append(CheckIssue(
                        "UnknownKwarg",
                        f"{call.fn} has no kwarg {name!r}", stmt.line))
                    continue
                want = expected[name]
                if isinstance(value, Ref):
                    if value.name not in defined:
                        issues.append(CheckIssue(
                            "UseBeforeDef",
                            f"{value.name!r} used before definition", stmt.line))
                    else:
                        got = defined[value.name]
                        if ANY not in (want, got) and got != want:
                            issues.append(CheckIssue(
                                "KindMismatch",
                                f"{call.fn}.{name} wants {want}, got {got}",
                                stmt.line))
                else:
                    got = NUM if isinstance(value.value, numbers.Number) else TEXT
                    if want not in (got, ANY):
                        issues.append(CheckIssue(
                            "KindMismatch",
                            f"{call.fn}.{name} wants {want}, got {got}", stmt.line))
            missing = set(expected) - seen
            for name in sorted(missing):
                issues.append(CheckIssue("MissingKwarg",
                                         f"{call.fn} missing kwarg {name!r}",
                                         stmt.line))
            result_kind = sig["result"]
        if stmt.target in defined:
            issues.append(CheckIssue("Reassignment",
                                     f"{stmt.target!r} assigned twice", stmt.line))
        defined[stmt.target] = result_kind
    if ANSWER_NAME not in defined:
        issues.append(CheckIssue("MissingAnswer", "no ANSWER assignment",
                                 ast.statements[-1].line))
    elif ast.statements[-1].target != ANSWER_NAME:
        issues.append(CheckIssue("AnswerNotLast",
                                 "final statement must assign ANSWER",
                                 ast.statements[-1].line))
    return CheckReport(issues=tuple(issues))


# -- executor -----------------------------------------------------------------

def value_kind(value):
    if value is None:
        return "None"
    if isinstance(value, Segment):
        return SEG
    if isinstance(value, DetectionSet):
        return DET
    if isinstance(value, bool):
        return BOOL
    if isinstance(value, numbers.Number):
        return NUM
    if isinstance(value, str):
        return TEXT
    return type(value).__name__


def eval_builtin(name, kwargs):
    """Pure comparison/counting helpers; raises KindMismatch on bad kinds."""
    def need(key, kinds):
        v = kwargs[key]
        if value_kind(v) not in kinds:
            raise KindMismatch(
                f"{name}.{key} expects {'/'.join(kinds)}, got {value_kind(v)}")
        return v

    if name == "Count":
        return float(len(need("dets", (DET,))))
    if name in _COMPARATORS:
        return bool(_COMPARATORS[name](float(need("a", (NUM,))),
                                       float(need("b", (NUM,)))))
    if name == "Exists":
        from .gvapi import segment_exists
        return segment_exists(need("seg", (SEG,)))
    if name == "IfElse":
        return kwargs["a"] if need("cond", (BOOL,)) else kwargs["b"]
    if name == "YesNo":
        return "yes" if need("b", (BOOL,)) else "no"
    raise KindMismatch(f"unknown builtin {name!r}")


BUILTIN_NAMES = frozenset(
    {"FullSeg", "Count", "Exists", "IfElse", "YesNo"} | set(_COMPARATORS))


@dataclass
class ExecutionTrace:
    steps: list = field(default_factory=list)
    result_kind: str = "None"

    def to_json_dict(self):
        return {"steps": self.steps, "result_kind": self.result_kind}


def execute_program(ast: ProgramAST, engine, timeout_s=60.0,
                    trace_dir=None, api=API_SIGNATURES):
    """Run a checked program; returns (value, trace). Never raises.

    Any statement error, provider failure, or deadline overrun makes the
    program's value None; the trace records per-statement status.
    """
    report = check_program(ast, api)
    trace = ExecutionTrace()
    if not report.clean:
        trace.steps.append({"target": None, "fn": None, "status": "check_failed",
                            "error": str(report)})
        return None, trace

    env = {}
    deadline = time.monotonic() + timeout_s
    answer = None
    failed = False
    for stmt in ast.statements:
        step = {"target": stmt.target, "fn": stmt.call.fn, "status": "pending",
                "value_kind": "None", "artifact_path": None}
        trace.steps.append(step)
        if failed:
            step["status"] = "skipped"
            continue
        if time.monotonic() > deadline:
            step["status"] = "timeout"
            failed = True
            continue
        try:
            kwargs = {}
            for name, value in canonical_kwargs(stmt.call, api):
                kwargs[name] = env[value.name] if isinstance(value, Ref) else value.value
            result = _dispatch(stmt.call.fn, kwargs, engine)
        except Exception as exc:  # noqa: BLE001 -- totality: nothing escapes
            step["status"] = "error"
            step["error"] = f"{type(exc).__name__}: {exc}"
            failed = True
            continue
        env[stmt.target] = result
        step["status"] = "ok"
        step["value_kind"] = value_kind(result)
        if trace_dir is not None and isinstance(result, Segment):
            step["artifact_path"] = _write_thumbnail(result, stmt.target, trace_dir)
        if stmt.target == ANSWER_NAME:
            answer = result
    if failed:
        answer = None
    trace.result_kind = value_kind(answer)
    return answer, trace


def _dispatch(fn, kwargs, engine):
    if fn == "GetLandmarkSeg":
        return engine.get_landmark_seg(kwargs["query"])
    if fn == "GetStructureSeg":
        return engine.get_structure_seg(kwargs["query"], kwargs["area"])
    if fn == "SegAround":
        return engine.seg_around(kwargs["area"], kwargs["distance"])
    if fn == "SegDirection":
        return engine.seg_direction(kwargs["seg"], kwargs["direction"])
    if fn == "SegBetween":
        return engine.seg_between(kwargs["seg1"], kwargs["seg2"])
    if fn == "LargestSeg":
        return engine.largest_seg(kwargs["segs"])
    if fn == "MeasureDist":
        return engine.measure_dist(kwargs["from"], kwargs["to"])
    if fn == "MeasureHeight":
        return engine.measure_height(kwargs["area"])
    if fn == "GetObjectSeg":
        return engine.get_object_seg(kwargs["query"], kwargs["area"])
    if fn == "FullSeg":
        return engine.full_seg()
    return eval_builtin(fn, kwargs)


def _write_thumbnail(segment, target, trace_dir):
    import os
    from .grids import save_mask_png
    path = os.path.join(str(trace_dir), f"{target}.png")
    try:
        save_mask_png(segment, path)
    except OSError:
        return None
    return path


# -- in-context examples and prompting ----------------------------------------

@dataclass
class ICEStore:
    """Query/program example pairs used to prompt the program generator."""

    examples: list  # of {"query": str, "program": str}
    task: str = ""

    def __post_init__(self):
        for ex in self.examples:
            try:
                ast = parse_program(ex["program"])
            except ProgramSyntaxError as exc:
                raise ValueError(
                    f"stored example {ex['query']!r} does not parse: {exc}") from exc
            report = check_program(ast)
            if not report.clean:
                raise ValueError(
                    f"stored example {ex['query']!r} fails checks:\n{report}")

    def __len__(self):
        return len(self.examples)

    @classmethod
    def load(cls, path):
        import json
        with open(path) as f:
            doc = json.load(f)
        return cls(examples=doc["examples"], task=doc.get("task", ""))

    def save(self, path):
        import json
        with open(path, "w") as f:
            json.dump({"task": self.task, "examples": self.examples}, f, indent=2)


INSTRUCTION_BLOCK = ("Think step by step and generate a program that answers "
                     "the question.\nQuery: <QUERY>")


def assemble_prompt(query: str, ices: ICEStore, n: int) -> str:
    if n > len(ices):
        raise InsufficientExamples(f"asked for {n} examples, store has {len(ices)}")
    blocks = []
    for ex in ices.examples[:n]:
        blocks.append(f"Query: {ex['query']}\nProgram:\n{ex['program'].rstrip()}\n")
    blocks.append(INSTRUCTION_BLOCK.replace("<QUERY>", query))
    return "\n".join(blocks)


def generate_program(query: str, generator, ices: ICEStore, n_ice: int,
                     api=API_SIGNATURES) -> ProgramAST:
    """Prompt the generator; one self-repair retry on parse/check failure."""
    prompt = assemble_prompt(query, ices, n_ice)
    last_error = None
    for attempt in range(2):
        text = generator.generate(prompt if attempt == 0
                                  else prompt + f"\n\nPrevious attempt failed: {last_error}")
        try:
            ast = parse_program(text)
        except ProgramSyntaxError as exc:
            last_error = str(exc)
            continue
        report = check_program(ast, api)
        if report.clean:
            return ast
        last_error = str(report)
    raise GenerationFailed(f"no valid program after retry: {last_error}")
