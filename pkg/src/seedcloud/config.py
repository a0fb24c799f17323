"""Flat-sectioned key-value config files, TOML-style syntax.

Supported grammar, line oriented:

    # comment
    [section]
    name = "string"          # double quotes, \\ " n t escapes
    count = 3                # integer
    rate = 1e-4              # float
    flag = true              # boolean
    grid = [[4, 4], [8, 8]]  # list, possibly nested, single line

Parsing returns {section: {key: value}}. Keys outside any section live in
the "" section. Values must fit on one line. The writer round-trips every
value the parser accepts; floats are written with repr so a parse of the
written text recovers bit-identical numbers.
"""

from .errors import ConfigError

_KEY_CHARS = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-")

_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "t": "\t"}
_UNESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\t": "\\t"}


class _Cursor:
    """Single-line scanner: value parsing shares it across nesting levels."""

    def __init__(self, text, lineno):
        self.text = text
        self.pos = 0
        self.lineno = lineno

    def error(self, msg):
        return ConfigError(f"line {self.lineno}: {msg}")

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def rest_is_blank(self):
        tail = self.text[self.pos :].strip()
        return not tail or tail.startswith("#")


def _parse_string(cur):
    assert cur.peek() == '"'
    cur.pos += 1
    out = []
    while True:
        if cur.pos >= len(cur.text):
            raise cur.error("unterminated string")
        ch = cur.text[cur.pos]
        cur.pos += 1
        if ch == '"':
            return "".join(out)
        if ch == "\\":
            if cur.pos >= len(cur.text) or cur.text[cur.pos] not in _ESCAPES:
                raise cur.error("bad string escape")
            out.append(_ESCAPES[cur.text[cur.pos]])
            cur.pos += 1
        else:
            out.append(ch)


def _parse_list(cur):
    assert cur.peek() == "["
    cur.pos += 1
    items = []
    while True:
        cur.skip_ws()
        if cur.peek() == "]":
            cur.pos += 1
            return items
        if items:
            if cur.peek() != ",":
                raise cur.error("expected ',' or ']' in list")
            cur.pos += 1
            cur.skip_ws()
            if cur.peek() == "]":  # tolerate a trailing comma
                cur.pos += 1
                return items
        items.append(_parse_value(cur))


def _parse_scalar(cur):
    start = cur.pos
    while cur.pos < len(cur.text) and cur.text[cur.pos] not in ",]# \t":
        cur.pos += 1
    token = cur.text[start : cur.pos]
    if not token:
        raise cur.error("missing value")
    if token == "true":
        return True
    if token == "false":
        return False
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        raise cur.error(f"cannot parse value '{token}'") from None


def _parse_value(cur):
    cur.skip_ws()
    ch = cur.peek()
    if ch == '"':
        return _parse_string(cur)
    if ch == "[":
        return _parse_list(cur)
    return _parse_scalar(cur)


def parse_config(text):
    """Parse config text into {section: {key: value}}."""
    tree = {}
    section = tree.setdefault("", {})
    section_name = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"line {lineno}: unclosed section header")
            name = line[1:-1].strip()
            if not name or not set(name) <= _KEY_CHARS:
                raise ConfigError(f"line {lineno}: bad section name '{name}'")
            if name in tree:
                raise ConfigError(f"line {lineno}: duplicate section [{name}]")
            section = tree.setdefault(name, {})
            section_name = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, rhs = raw.partition("=")
        key = key.strip()
        if not key or not set(key) <= _KEY_CHARS:
            raise ConfigError(f"line {lineno}: bad key '{key}'")
        if key in section:
            where = f"[{section_name}]" if section_name else "top level"
            raise ConfigError(f"line {lineno}: duplicate key '{key}' in {where}")
        cur = _Cursor(rhs, lineno)
        value = _parse_value(cur)
        cur.skip_ws()
        if not cur.rest_is_blank():
            raise ConfigError(
                f"line {lineno}: trailing text after value: '{cur.text[cur.pos:].strip()}'"
            )
        section[key] = value
    if not tree[""]:
        del tree[""]
    return tree


def _format_value(value):
    if isinstance(value, bool):  # before int: bool is an int subclass
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, str):
        out = "".join(_UNESCAPES.get(ch, ch) for ch in value)
        return f'"{out}"'
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"cannot format config value of type {type(value).__name__}")


def format_config(tree):
    """Inverse of parse_config: {section: {key: value}} -> text."""
    chunks = []
    for section, mapping in tree.items():
        lines = []
        if section:
            lines.append(f"[{section}]")
        for key, value in mapping.items():
            lines.append(f"{key} = {_format_value(value)}")
        chunks.append("\n".join(lines))
    return "\n\n".join(chunks) + "\n"


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def save_config(path, tree):
    with open(path, "w") as fh:
        fh.write(format_config(tree))


def apply_overrides(tree, overrides):
    """Apply `section.key=value` (or bare `key=value`) strings in place.

    Values use the same grammar as file values, so `--set train.lr=5e-5` and
    `--set train.resolutions=[[2,2],[4,4]]` both work.
    """
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        path, _, rhs = item.partition("=")
        path = path.strip()
        parts = path.split(".")
        if len(parts) == 1:
            section, key = "", parts[0]
        elif len(parts) == 2:
            section, key = parts
        else:
            raise ConfigError(f"override key '{path}' has too many dots")
        if not key or not set(key) <= _KEY_CHARS:
            raise ConfigError(f"override '{item}' has a bad key")
        if section and not set(section) <= _KEY_CHARS:
            raise ConfigError(f"override '{item}' has a bad section name")
        cur = _Cursor(rhs, 0)
        value = _parse_value(cur)
        cur.skip_ws()
        if not cur.rest_is_blank():
            raise ConfigError(f"override '{item}' has trailing text after the value")
        tree.setdefault(section, {})[key] = value
    return tree
