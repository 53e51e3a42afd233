"""Minimal TOML-subset documents used for manifests, checkpoints and configs.

Supports exactly what this package writes: top-level `key = value` pairs,
`[section]` tables, repeated `[[section]]` array-of-tables, and values that
are strings, booleans, ints, floats, or flat lists thereof.  Floats round-trip
exactly via repr.
"""

from __future__ import annotations

from typing import Any, Dict, List

from .errors import FormatError


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        escaped = v.replace("\\", "\\\\").replace('"', '\\"')
        return f'"{escaped}"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt_value(x) for x in v) + "]"
    raise FormatError(f"cannot serialize value of type {type(v).__name__}")


def dumps(doc: Dict[str, Any]) -> str:
    """Serialize {key: scalar/list, section: dict, section: [dict, ...]}."""
    lines: List[str] = []
    tables = []
    for k, v in doc.items():
        if isinstance(v, dict):
            tables.append((k, [v], False))
        elif isinstance(v, list) and v and all(isinstance(x, dict) for x in v):
            tables.append((k, v, True))
        else:
            lines.append(f"{k} = {_fmt_value(v)}")
    for name, entries, is_array in tables:
        for entry in entries:
            lines.append("")
            lines.append(f"[[{name}]]" if is_array else f"[{name}]")
            for k, v in entry.items():
                lines.append(f"{k} = {_fmt_value(v)}")
    return "\n".join(lines) + "\n"


def _parse_scalar(tok: str):
    tok = tok.strip()
    if tok.startswith('"'):
        if not tok.endswith('"') or len(tok) < 2:
            raise FormatError(f"unterminated string: {tok}")
        body = tok[1:-1]
        out, i = [], 0
        while i < len(body):
            ch = body[i]
            if ch == "\\" and i + 1 < len(body):
                out.append(body[i + 1])
                i += 2
            else:
                out.append(ch)
                i += 1
        return "".join(out)
    if tok == "true":
        return True
    if tok == "false":
        return False
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError as e:
        raise FormatError(f"cannot parse value: {tok!r}") from e


def _split_list(body: str) -> List[str]:
    items, depth, cur, in_str = [], 0, [], False
    for ch in body:
        if ch == '"' and (not cur or cur[-1] != "\\"):
            in_str = not in_str
        if not in_str:
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
            elif ch == "," and depth == 0:
                items.append("".join(cur))
                cur = []
                continue
        cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        items.append(tail)
    return items


def _parse_value(tok: str):
    tok = tok.strip()
    if tok.startswith("["):
        if not tok.endswith("]"):
            raise FormatError(f"unterminated list: {tok}")
        body = tok[1:-1].strip()
        if not body:
            return []
        return [_parse_value(item) for item in _split_list(body)]
    return _parse_scalar(tok)


def loads(text: str) -> Dict[str, Any]:
    doc: Dict[str, Any] = {}
    target = doc
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[["):
            if not line.endswith("]]"):
                raise FormatError(f"bad table header: {line}")
            name = line[2:-2].strip()
            doc.setdefault(name, [])
            if not isinstance(doc[name], list):
                raise FormatError(f"{name} is both scalar and table array")
            entry: Dict[str, Any] = {}
            doc[name].append(entry)
            target = entry
        elif line.startswith("["):
            if not line.endswith("]"):
                raise FormatError(f"bad table header: {line}")
            name = line[1:-1].strip()
            entry = {}
            if name in doc:
                raise FormatError(f"duplicate table {name}")
            doc[name] = entry
            target = entry
        else:
            if "=" not in line:
                raise FormatError(f"expected key = value, got: {line}")
            key, _, val = line.partition("=")
            key = key.strip()
            if not key:
                raise FormatError(f"empty key in line: {line}")
            target[key] = _parse_value(val)
    return doc


def load(path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as f:
        return loads(f.read())


def dump(doc: Dict[str, Any], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(dumps(doc))
