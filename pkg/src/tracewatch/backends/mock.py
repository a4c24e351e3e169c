"""Deterministic scripted backend.

A script is a tree of nodes. Playback follows each node's tokens and then its
``next`` node. When the trace carries an injection, playback switches to the
branch of the node in which the injection happened, keyed by the injected
text (longest matching key prefix wins). ``END_THINK`` injections select the
``"END_THINK"`` branch if present, otherwise the node's (or the script's)
``final_answer_tail``.

Script JSON::

    {
      "root": "n0",
      "final_answer_tail": " \\boxed{B}",
      "nodes": {
        "n0": {"text": "...", "next": "n1",
               "branches": {"the step enters a wall": "n2"},
               "probes": [{"after": "Step 2", "suffix": "</think>",
                           "top_logprobs": [["B", -0.03], ["A", -3.5]]}]},
        "n1": {"tokens": ["a", "b"], "final_answer_tail": " A"}
      }
    }

A node gives either ``tokens`` (explicit token boundaries) or ``text``
(split with :func:`tokenize`). Two containers are accepted too:
``{"samples": [script, ...]}`` picks a script by ``params.seed`` and
``{"routes": [{"prompt_contains": ..., "script": ...}], "default": script}``
picks by prompt.

The session state is derived from the trace alone: every call replays the
trace text against the script. That makes playback independent of how a
consumer chunked earlier streams.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

from tracewatch.backends.base import (
    CapabilityError,
    ConfigurationError,
    GenerationParams,
    ScriptGapError,
    SessionDescriptor,
    TokenEvent,
    TopLogprobs,
)
from tracewatch.trace import END_THINK, Origin, ReasoningTrace

_TOKEN_RE = re.compile(r"\n|[^\S\n]+|\w+|[^\w\s]")
KNOWN_FEEDBACK_PREFIXES = ("Wait, ", "#Thought: ")


def tokenize(text: str) -> list[str]:
    """Heuristic tokenizer: newlines, other whitespace runs, words, single symbols."""
    return _TOKEN_RE.findall(text)


@dataclass
class ProbeEntry:
    offset: int
    suffix: str | None
    top_logprobs: TopLogprobs


@dataclass
class Node:
    id: str
    tokens: list[str]
    logprobs: list[TopLogprobs | None] = field(default_factory=list)
    next: str | None = None
    branches: dict[str, str] = field(default_factory=dict)
    final_answer_tail: str | None = None
    probes: list[ProbeEntry] = field(default_factory=list)

    @property
    def text(self) -> str:
        return "".join(self.tokens)


@dataclass
class MockScript:
    root: str
    nodes: dict[str, Node]
    final_answer_tail: str | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> MockScript:
        if "nodes" not in data:
            # shorthand: a single linear node
            data = {"root": "root", "nodes": {"root": {k: v for k, v in data.items() if k != "final_answer_tail"}},
                    "final_answer_tail": data.get("final_answer_tail")}
        nodes: dict[str, Node] = {}
        for nid, raw in data["nodes"].items():
            if "tokens" in raw:
                toks, lps = [], []
                for t in raw["tokens"]:
                    if isinstance(t, str):
                        toks.append(t)
                        lps.append(None)
                    else:
                        toks.append(t[0])
                        lps.append([(a, float(b)) for a, b in t[1]])
            else:
                toks = tokenize(raw.get("text", ""))
                lps = [None] * len(toks)
            node = Node(nid, toks, lps, raw.get("next"), dict(raw.get("branches", {})), raw.get("final_answer_tail"))
            text = node.text
            for p in raw.get("probes", []):
                if "at" in p:
                    off = int(p["at"])
                elif "after" in p:
                    idx = text.find(p["after"])
                    if idx < 0:
                        raise ConfigurationError(f"probe anchor {p['after']!r} not found in node {nid}")
                    off = idx + len(p["after"])
                else:
                    off = 0
                table = [(a, float(b)) for a, b in p["top_logprobs"]]
                node.probes.append(ProbeEntry(off, p.get("suffix"), table))
            nodes[nid] = node
        root = data.get("root", next(iter(nodes)))
        for node in nodes.values():
            for target in [node.next, *node.branches.values()]:
                if target is not None and target not in nodes:
                    raise ConfigurationError(f"node {node.id} points at unknown node {target!r}")
        if root not in nodes:
            raise ConfigurationError(f"root node {root!r} missing")
        return cls(root, nodes, data.get("final_answer_tail"))

    @property
    def has_probes(self) -> bool:
        return any(n.probes for n in self.nodes.values())

    def default_text(self) -> str:
        """Text of unmonitored playback (the default chain, no tail)."""
        out, nid, seen = [], self.root, set()
        while nid is not None and nid not in seen:
            seen.add(nid)
            out.append(self.nodes[nid].text)
            nid = self.nodes[nid].next
        return "".join(out)


def select_script(data: dict[str, Any], prompt: str, seed: int | None) -> dict[str, Any]:
    """Resolve ``samples`` / ``routes`` containers down to one script dict."""
    while True:
        if "samples" in data:
            samples = data["samples"]
            if not samples:
                raise ConfigurationError("empty samples list")
            data = samples[(seed or 0) % len(samples)]
        elif "routes" in data:
            for route in data["routes"]:
                if route["prompt_contains"] in prompt:
                    data = route["script"]
                    break
            else:
                if "default" not in data:
                    raise ConfigurationError("no route matches the prompt and no default given")
                data = data["default"]
        else:
            return data


def load_script_file(path: str | Path) -> dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"mock script not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


@dataclass
class _Position:
    node: str
    char: int  # offset into node text
    closed: bool = False  # END_THINK tail has been selected
    tail: str | None = None


class MockSession:
    def __init__(self, script: MockScript, prompt: str, params: GenerationParams, *, name: str = "mock") -> None:
        self.script = script
        self.prompt = prompt
        self.params = params
        self.descriptor = SessionDescriptor("mock", params, name)
        self.closed = False

    # -- playback --------------------------------------------------------
    def _branch_for(self, node: Node, injected: str) -> str | None:
        candidates = [injected] + [injected[len(p) :] for p in KNOWN_FEEDBACK_PREFIXES if injected.startswith(p)]
        best: tuple[int, str] | None = None
        for key, target in node.branches.items():
            if key == "END_THINK":
                continue
            if any(c.startswith(key) for c in candidates) and (best is None or len(key) > best[0]):
                best = (len(key), target)
        return best[1] if best else None

    def _tail_for(self, node: Node) -> str:
        tail = node.final_answer_tail if node.final_answer_tail is not None else self.script.final_answer_tail
        if tail is None:
            raise ScriptGapError(f"no final-answer tail for END_THINK at node {node.id}")
        return tail

    def _advance(self, pos: _Position, text: str) -> _Position:
        """Consume model ``text`` starting at ``pos``; it must match the script."""
        i = 0
        while i < len(text):
            if pos.closed:
                rest = pos.tail[pos.char :]
                n = min(len(rest), len(text) - i)
                if rest[:n] != text[i : i + n] or n == 0:
                    raise ScriptGapError("trace text diverges from the scripted answer tail")
                pos = _Position(pos.node, pos.char + n, True, pos.tail)
                i += n
                continue
            node = self.script.nodes[pos.node]
            ntext = node.text
            if pos.char >= len(ntext):
                if node.next is None:
                    raise ScriptGapError(f"trace runs past the end of node {node.id}")
                pos = _Position(node.next, 0)
                continue
            rest = ntext[pos.char :]
            n = min(len(rest), len(text) - i)
            if rest[:n] != text[i : i + n]:
                raise ScriptGapError(f"trace text diverges from script at node {node.id} offset {pos.char}")
            pos = _Position(pos.node, pos.char + n)
            i += n
        return pos

    def _locate(self, trace: ReasoningTrace) -> _Position:
        if trace.prompt != self.prompt:
            raise ValueError("amended trace belongs to a different prompt")
        pos = _Position(self.script.root, 0)
        for seg in trace.segments:
            if seg.origin is Origin.MODEL:
                pos = self._advance(pos, seg.text)
                continue
            if pos.closed:
                raise ScriptGapError("injection after the answer tail")
            # consuming never steps past a node end, so an injection at a
            # boundary belongs to the node just finished
            node = self.script.nodes[pos.node]
            if seg.text.startswith(END_THINK):
                target = node.branches.get("END_THINK")
                if target is not None:
                    pos = _Position(target, 0)
                else:
                    pos = _Position(node.id, 0, True, self._tail_for(node))
            else:
                target = self._branch_for(node, seg.text)
                if target is None:
                    raise ScriptGapError(f"unexpected injection at node {node.id}: {seg.text[:60]!r}")
                pos = _Position(target, 0)
        return pos

    def _emit(self, pos: _Position) -> Iterator[TokenEvent]:
        if pos.closed:
            rest = pos.tail[pos.char :]
            for tok in tokenize(rest):
                yield TokenEvent(tok)
            return
        seen: set[str] = set()
        nid: str | None = pos.node
        start = pos.char
        while nid is not None:
            if nid in seen:
                raise ConfigurationError(f"cycle in default chain at node {nid}")
            seen.add(nid)
            node = self.script.nodes[nid]
            off = 0
            for tok, lps in zip(node.tokens, node.logprobs):
                end = off + len(tok)
                if end > start:
                    piece = tok[max(0, start - off) :]
                    yield TokenEvent(piece, tuple(lps) if lps and piece == tok else None)
                off = end
            nid, start = node.next, 0

    # -- public API -------------------------------------------------------
    def stream(self) -> Iterator[TokenEvent]:
        return self._emit(_Position(self.script.root, 0))

    def continue_from(self, trace: ReasoningTrace) -> Iterator[TokenEvent]:
        return self._emit(self._locate(trace))

    def probe_next_distribution(self, trace: ReasoningTrace, forced_suffix: str) -> TopLogprobs:
        if not self.script.has_probes:
            raise CapabilityError("mock script carries no probe tables")
        pos = self._locate(trace)
        if pos.closed:
            return []
        node = self.script.nodes[pos.node]
        local = pos.char
        best: ProbeEntry | None = None
        for entry in node.probes:
            if entry.offset > local:
                continue
            if entry.suffix is not None and entry.suffix.strip() != forced_suffix.strip():
                continue
            if best is None or entry.offset >= best.offset:
                best = entry
        return list(best.top_logprobs) if best else []

    def close(self) -> None:
        self.closed = True


class FunctionSession:
    """Session whose whole completion comes from ``fn(prompt, seed)``.

    Used for judges, proposers and other single-shot calls in tests.
    """

    def __init__(self, fn, prompt: str, params: GenerationParams) -> None:
        self.fn = fn
        self.prompt = prompt
        self.params = params
        self.descriptor = SessionDescriptor("function", params)

    def stream(self) -> Iterator[TokenEvent]:
        for tok in tokenize(self.fn(self.prompt, self.params.seed)):
            yield TokenEvent(tok)

    def continue_from(self, trace: ReasoningTrace) -> Iterator[TokenEvent]:
        full = self.fn(self.prompt, self.params.seed)
        done = trace.text
        if not full.startswith(done):
            raise ScriptGapError("function backend cannot continue an amended trace")
        for tok in tokenize(full[len(done) :]):
            yield TokenEvent(tok)

    def probe_next_distribution(self, trace: ReasoningTrace, forced_suffix: str) -> TopLogprobs:
        raise CapabilityError("function backend has no logprobs")

    def close(self) -> None:
        pass


class RechunkedSession:
    """Wraps a session and re-slices its stream into pieces of the given sizes.

    Sizes are used cyclically. Logprobs are dropped since pieces no longer
    line up with tokens. Used to check that results do not depend on how the
    stream is chunked.
    """

    def __init__(self, inner, sizes: list[int]) -> None:
        if not sizes or any(s < 1 for s in sizes):
            raise ValueError("chunk sizes must be positive")
        self.inner = inner
        self.sizes = list(sizes)
        self.prompt = inner.prompt
        self.descriptor = inner.descriptor

    def _slice(self, events: Iterator[TokenEvent]) -> Iterator[TokenEvent]:
        buf, i = "", 0
        for ev in events:
            buf += ev.text
            while len(buf) >= self.sizes[i % len(self.sizes)]:
                n = self.sizes[i % len(self.sizes)]
                yield TokenEvent(buf[:n])
                buf, i = buf[n:], i + 1
        if buf:
            yield TokenEvent(buf)

    def stream(self) -> Iterator[TokenEvent]:
        return self._slice(self.inner.stream())

    def continue_from(self, trace: ReasoningTrace) -> Iterator[TokenEvent]:
        return self._slice(self.inner.continue_from(trace))

    def probe_next_distribution(self, trace: ReasoningTrace, forced_suffix: str) -> TopLogprobs:
        return self.inner.probe_next_distribution(trace, forced_suffix)

    def close(self) -> None:
        self.inner.close()
